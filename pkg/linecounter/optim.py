import logging

import numpy as np

from linecounter.errors import NonFiniteError

logger = logging.getLogger(__name__)


def adamStep(params, lr, beta1=0.9, beta2=0.999, eps=1e-8, t=1, grads=None):
    """
    Apply one bias-corrected Adam update in place.

    Every gradient is checked before any parameter is touched, so a non-finite
    gradient aborts the whole step.

    Args:
        params (list[Parameter]): Parameters to update; their adam_m / adam_v are updated too.
        lr (float): Learning rate.
        t (int): 1-based step index used for bias correction.
        grads (list[ndarray]): Gradients to use instead of each parameter's .grad.
    """
    if t < 1:
        raise ValueError(f"Adam step index must be >= 1, got {t}")
    if grads is None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    for param, grad in zip(params, grads):
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Non-finite gradient in parameter {param.name}", where=param.name)

    correction1 = 1 - beta1**t
    correction2 = 1 - beta2**t
    for param, grad in zip(params, grads):
        param.adam_m *= beta1
        param.adam_m += (1 - beta1) * grad
        param.adam_v *= beta2
        param.adam_v += (1 - beta2) * grad * grad
        m_hat = param.adam_m / correction1
        v_hat = param.adam_v / correction2
        param.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.data.dtype)


class Adam:
    """
    Adam optimizer holding the step counter for a fixed parameter list.

    Attributes:
        params (list[Parameter]): Parameters being optimized.
        lr (float): Current learning rate, lowered by PlateauScheduler.
        t (int): Number of completed steps.
    """

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0

    def zeroGrad(self):
        for param in self.params:
            param.zeroGrad()

    def step(self):
        adamStep(self.params, self.lr, self.beta1, self.beta2, self.eps, t=self.t + 1)
        self.t += 1


class PlateauScheduler:
    """
    Halves the optimizer's learning rate when the tracked metric stops improving.

    A metric value counts as an improvement only if it is strictly greater than
    the best seen so far. After `patience` consecutive non-improving epochs the
    rate is multiplied by `factor` and the counter restarts.
    """

    def __init__(self, optimizer, patience=20, factor=0.5):
        self.optimizer = optimizer
        self.PATIENCE = patience
        self.FACTOR = factor
        self.best = -np.inf
        self.bad_epochs = 0

    def step(self, metric):
        if metric > self.best:
            self.best = metric
            self.bad_epochs = 0
            return False

        self.bad_epochs += 1
        if self.bad_epochs >= self.PATIENCE:
            self.optimizer.lr *= self.FACTOR
            self.bad_epochs = 0
            logger.info(f"No improvement for {self.PATIENCE} epochs. Learning rate lowered to {self.optimizer.lr:.3g}")
            return True
        return False

    def getState(self):
        return {"best": float(self.best), "bad_epochs": self.bad_epochs}

    def loadState(self, state):
        self.best = state["best"]
        self.bad_epochs = state["bad_epochs"]
