import numpy as np

from linecounter.errors import NonFiniteError
from linecounter.tensor import Activation, Parameter, activation, batchNorm, conv2d, cumsumY, getDtype, heUniform


class Module:
    """
    Container that discovers its Parameters, buffers and child Modules from its attributes.

    Names are dotted attribute paths in definition order, so they are stable
    across runs and unique within a model.
    """

    def __init__(self):
        self.training = True
        self._buffers = {}

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}{i}", item

    def namedParameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self.children():
            yield from child.namedParameters(f"{prefix}{name}.")

    def namedBuffers(self, prefix=""):
        for name, value in self._buffers.items():
            yield prefix + name, value
        for name, child in self.children():
            yield from child.namedBuffers(f"{prefix}{name}.")

    def parameters(self):
        return [param for _, param in self.namedParameters()]

    def train(self, mode=True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def checkFinite(self, name, tensor):
        if not np.all(np.isfinite(tensor.data)):
            raise NonFiniteError(f"Non-finite activation after layer {name}", where=name)
        return tensor


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, bias=True):
        super().__init__()
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(heUniform(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None
        self.stride = stride

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.99, eps=1e-3):
        super().__init__()
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))
        self._buffers["running_mean"] = np.zeros(channels, dtype=getDtype())
        self._buffers["running_var"] = np.ones(channels, dtype=getDtype())
        self.momentum = momentum
        self.eps = eps

    def forward(self, x):
        return batchNorm(
            x,
            self.gamma,
            self.beta,
            self._buffers["running_mean"],
            self._buffers["running_var"],
            self.training,
            self.momentum,
            self.eps,
        )


class ConvBlock(Module):
    """
    Conv2D followed either by BatchNorm + activation, or by a non-negative
    activation and the height-wise cumulative sum.

    A BatchNorm block carries no conv bias since the norm's beta absorbs it.
    """

    def __init__(self, in_channels, out_channels, rng, kernel_size=3, stride=1, act=Activation.RELU,
                 norm=True, cumsum=False, bn_momentum=0.99, bn_eps=1e-3):
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, kernel_size, rng, stride=stride, bias=not norm)
        self.bn = BatchNorm2d(out_channels, bn_momentum, bn_eps) if norm else None
        self.act = Activation(act)
        self.cumsum = cumsum

    def forward(self, x):
        x = self.conv(x)
        if self.bn is not None:
            x = self.bn(x)
        x = activation(x, self.act)
        if self.cumsum:
            x = cumsumY(x)
        return x
