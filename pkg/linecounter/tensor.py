import threading
from contextlib import contextmanager
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from linecounter.errors import ShapeError

# Precision and grad-mode are process wide; graphs themselves are single-writer.
_DTYPE = np.float32
_GRAD_ENABLED = True
_MODE_LOCK = threading.Lock()

HARD_SIGMOID_SLOPE = 0.2
HARD_SIGMOID_KINK = 2.5


class Activation(str, Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    HARD_SIGMOID = "hard_sigmoid"
    ABS_TANH = "abs_tanh"


def getDtype():
    return _DTYPE


def setPrecision(bits):
    """
    Select the float width used for every new Tensor.

    Args:
        bits (int): 32 for training, 64 for gradient checks.
    """
    global _DTYPE
    if bits not in (32, 64):
        raise ValueError(f"Unsupported precision: {bits} bits")
    with _MODE_LOCK:
        _DTYPE = np.float64 if bits == 64 else np.float32


@contextmanager
def precision(bits):
    previous = 64 if _DTYPE == np.float64 else 32
    setPrecision(bits)
    try:
        yield
    finally:
        setPrecision(previous)


@contextmanager
def noGrad():
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    """
    Dense float array that records the operations producing it.

    Attributes:
        data (ndarray): Values, float32 by default, float64 under precision(64).
        requires_grad (bool): Whether backward() should populate grad.
        grad (ndarray): Same-shape gradient buffer, None until a backward pass.
        op (str): Name of the operation that produced this tensor ("" for leaves).
    """

    def __init__(self, data, requires_grad=False):
        self.data = np.ascontiguousarray(data, dtype=_DTYPE)
        self.requires_grad = requires_grad
        self.grad = None
        self.op = ""
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zeroGrad(self):
        self.grad = None

    def accumulateGrad(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True).reshape(self.shape)
        else:
            self.grad += grad

    def backward(self, grad=None):
        """
        Reverse-mode pass from this tensor through every recorded operation.

        Args:
            grad (ndarray): Upstream gradient; may be omitted for single-element tensors.
        """
        if grad is None:
            if self.size != 1:
                raise ShapeError(f"backward() without a gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)

        order = topologicalOrder(self)
        self.accumulateGrad(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        for node in order:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.data)

    # ---------------------------- Arithmetic ---------------------------- #

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getItem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduceSum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def abs(self):
        return absolute(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


class Parameter(Tensor):
    """
    Trainable tensor with its Adam moment buffers.

    Attributes:
        name (str): Dotted path, unique within a model (e.g. "counter.gru_h.fwd.w_z").
        adam_m (ndarray): First-moment estimate, shaped like data.
        adam_v (ndarray): Second-moment estimate, shaped like data.
    """

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)

    @property
    def tensor(self):
        return self

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def topologicalOrder(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def graphOps(root):
    """Names of every operation reachable from root, in topological order."""
    return [node.op for node in topologicalOrder(root) if node.op]


def asTensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _result(data, parents, backward, op):
    requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=requires_grad)
    out.op = op
    if requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcastShape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------- Elementwise & reductions ---------------------------- #


def add(a, b):
    a, b = asTensor(a), asTensor(b)
    _broadcastShape(a, b, "add")

    def _backward(grad):
        if a.requires_grad:
            a.accumulateGrad(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulateGrad(_unbroadcast(grad, b.shape))

    return _result(a.data + b.data, (a, b), _backward, "add")


def sub(a, b):
    a, b = asTensor(a), asTensor(b)
    _broadcastShape(a, b, "sub")

    def _backward(grad):
        if a.requires_grad:
            a.accumulateGrad(_unbroadcast(grad, a.shape))
        if b.requires_grad:
            b.accumulateGrad(_unbroadcast(-grad, b.shape))

    return _result(a.data - b.data, (a, b), _backward, "sub")


def mul(a, b):
    a, b = asTensor(a), asTensor(b)
    _broadcastShape(a, b, "mul")

    def _backward(grad):
        if a.requires_grad:
            a.accumulateGrad(_unbroadcast(grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulateGrad(_unbroadcast(grad * a.data, b.shape))

    return _result(a.data * b.data, (a, b), _backward, "mul")


def matmul(a, b):
    a, b = asTensor(a), asTensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def _backward(grad):
        if a.requires_grad:
            a.accumulateGrad(grad @ b.data.T)
        if b.requires_grad:
            b.accumulateGrad(a.data.T @ grad)

    return _result(a.data @ b.data, (a, b), _backward, "matmul")


def reduceSum(x, axis=None, keepdims=False):
    def _backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        x.accumulateGrad(np.broadcast_to(grad, x.shape))

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), _backward, "sum")


def mean(x, axis=None, keepdims=False):
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def _backward(grad):
        if axis is not None and not keepdims:
            grad = np.expand_dims(grad, axis)
        x.accumulateGrad(np.broadcast_to(grad / count, x.shape))

    return _result(x.data.mean(axis=axis, keepdims=keepdims), (x,), _backward, "mean")


def absolute(x):
    def _backward(grad):
        x.accumulateGrad(grad * np.sign(x.data))

    return _result(np.abs(x.data), (x,), _backward, "abs")


def maskedSelect(x, mask):
    """Gather the entries of x where mask is True into a 1-D tensor."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"maskedSelect: mask shape {mask.shape} does not match {x.shape}")

    def _backward(grad):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[mask] += grad

    return _result(x.data[mask], (x,), _backward, "masked_select")


# ---------------------------- Shape plumbing ---------------------------- #


def reshape(x, shape):
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None

    def _backward(grad):
        x.accumulateGrad(grad.reshape(x.shape))

    return _result(data, (x,), _backward, "reshape")


def transpose(x, axes):
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def _backward(grad):
        x.accumulateGrad(grad.transpose(inverse))

    return _result(x.data.transpose(axes), (x,), _backward, "transpose")


def getItem(x, index):
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, slice)) or p is Ellipsis or p is None for p in parts)

    def _backward(grad):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        if basic:
            x.grad[index] += grad
        else:
            np.add.at(x.grad, index, grad)

    return _result(x.data[index], (x,), _backward, "getitem")


def concat(tensors, axis):
    tensors = [asTensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None

    def _backward(grad):
        for t, piece in zip(tensors, np.split(grad, np.cumsum(sizes)[:-1], axis=axis)):
            if t.requires_grad:
                t.accumulateGrad(piece)

    return _result(data, tensors, _backward, "concat")


def stack(tensors, axis):
    tensors = [asTensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"stack: {e}") from None

    def _backward(grad):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulateGrad(np.take(grad, i, axis=axis))

    return _result(data, tensors, _backward, "stack")


# ---------------------------- Activations ---------------------------- #


def activation(x, kind):
    """
    Elementwise nonlinearity.

    hard_sigmoid is clamp(0.2 * x + 0.5, 0, 1); abs_tanh is |tanh(x)|.
    relu, sigmoid, hard_sigmoid and abs_tanh never return negative values.
    """
    kind = Activation(kind)
    d = x.data

    if kind == Activation.RELU:
        out = np.maximum(d, 0)
        local = (d > 0).astype(d.dtype)
    elif kind == Activation.TANH:
        out = np.tanh(d)
        local = 1 - out * out
    elif kind == Activation.SIGMOID:
        out = expit(d)
        local = out * (1 - out)
    elif kind == Activation.HARD_SIGMOID:
        out = np.clip(HARD_SIGMOID_SLOPE * d + 0.5, 0, 1)
        local = np.where(np.abs(d) < HARD_SIGMOID_KINK, HARD_SIGMOID_SLOPE, 0).astype(d.dtype)
    else:  # abs_tanh
        t = np.tanh(d)
        out = np.abs(t)
        local = np.sign(t) * (1 - t * t)

    def _backward(grad):
        x.accumulateGrad(grad * local)

    return _result(out.astype(d.dtype, copy=False), (x,), _backward, kind.value)


# ---------------------------- Image ops ---------------------------- #


def cumsumY(x):
    """
    Cumulative sum down the height axis of a [B, C, H, W] tensor.

    A non-negative input gives an output that never decreases along height.
    """
    if x.ndim != 4:
        raise ShapeError(f"cumsum_y expects [B, C, H, W], got {x.shape}")

    def _backward(grad):
        # each row feeds every row at or below it
        x.accumulateGrad(np.flip(np.cumsum(np.flip(grad, 2), axis=2), 2))

    return _result(np.cumsum(x.data, axis=2), (x,), _backward, "cumsum_y")


def upsample2x(x):
    """Nearest-neighbour upsampling: every cell becomes a 2x2 block."""
    if x.ndim != 4:
        raise ShapeError(f"upsample2x expects [B, C, H, W], got {x.shape}")
    b, c, h, w = x.shape

    def _backward(grad):
        x.accumulateGrad(grad.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)))

    return _result(x.data.repeat(2, axis=2).repeat(2, axis=3), (x,), _backward, "upsample2x")


def avgPool2x(x):
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgPool2x needs even height and width, got {x.shape}")

    def _backward(grad):
        x.accumulateGrad(grad.repeat(2, axis=2).repeat(2, axis=3) / 4)

    data = x.data.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))
    return _result(data, (x,), _backward, "avg_pool2x")


def conv2d(x, weight, bias=None, stride=1):
    """
    Zero-padded ("same") 2-D convolution.

    Args:
        x (Tensor): Input of shape [B, Cin, H, W].
        weight (Tensor): Kernel of shape [Cout, Cin, k, k] with k odd.
        bias (Tensor): Optional [Cout] offsets.
        stride (int): 1 or 2; H and W must be divisible by it.

    Returns:
        Tensor: Output of shape [B, Cout, H / stride, W / stride].
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    b, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv2d: input has {cin} channels but weight expects {wcin}")
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: stride must be 1 or 2, got {stride}")
    if h % stride or w % stride:
        raise ShapeError(f"conv2d: {h}x{w} is not divisible by stride {stride}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match {cout} output channels")

    pad = (k - 1) // 2
    ho, wo = h // stride, w // stride
    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    # [B, Cin, Ho, Wo, k, k]
    windows = sliding_window_view(padded, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def _backward(grad):
        if weight.requires_grad:
            weight.accumulateGrad(np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3])))
        if bias is not None and bias.requires_grad:
            bias.accumulateGrad(grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            grad_padded = np.zeros_like(padded)
            for i in range(k):
                for j in range(k):
                    contribution = np.tensordot(grad, weight.data[:, :, i, j], axes=([1], [0]))
                    grad_padded[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contribution.transpose(0, 3, 1, 2)
            x.accumulateGrad(grad_padded[:, :, pad:pad + h, pad:pad + w])

    return _result(np.ascontiguousarray(out), parents, _backward, "conv2d")


def batchNorm(x, gamma, beta, running_mean, running_var, training, momentum=0.99, eps=1e-3):
    """
    Per-channel normalization of a [B, C, H, W] tensor.

    In training mode the batch statistics over (B, H, W) are used and the running
    statistics (plain ndarrays, updated in place) move towards them with the given
    momentum. In inference mode the running statistics are used as-is; freshly
    initialized ones (mean 0, var 1) are valid.
    """
    if eps <= 0:
        raise ValueError(f"batchNorm eps must be positive, got {eps}")
    if x.ndim != 4 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batchNorm: input {x.shape} does not match gamma {gamma.shape} / beta {beta.shape}")

    axes = (0, 2, 3)
    d = x.data
    if training:
        batch_mean = d.mean(axis=axes)
        batch_var = d.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * batch_mean
        running_var *= momentum
        running_var += (1 - momentum) * batch_var
    else:
        batch_mean = running_mean.astype(d.dtype, copy=False)
        batch_var = running_var.astype(d.dtype, copy=False)

    inv_std = (1 / np.sqrt(batch_var + eps)).astype(d.dtype)[None, :, None, None]
    x_hat = (d - batch_mean[None, :, None, None]) * inv_std
    out = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]
    count = d.shape[0] * d.shape[2] * d.shape[3]

    def _backward(grad):
        if gamma.requires_grad:
            gamma.accumulateGrad((grad * x_hat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulateGrad(grad.sum(axis=axes))
        if x.requires_grad:
            g_hat = grad * gamma.data[None, :, None, None]
            if training:
                g_sum = g_hat.sum(axis=axes, keepdims=True)
                g_dot = (g_hat * x_hat).sum(axis=axes, keepdims=True)
                x.accumulateGrad(inv_std / count * (count * g_hat - g_sum - x_hat * g_dot))
            else:
                x.accumulateGrad(g_hat * inv_std)

    return _result(out, (x, gamma, beta), _backward, "batchnorm")


# ---------------------------- Initialization ---------------------------- #


def heUniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def fanInUniform(rng, shape, fan_in):
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)
