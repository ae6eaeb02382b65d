import numpy as np

from linecounter.tensor import Tensor, noGrad, precision


def gradientCheck(fn, inputs, epsilon=1e-4, params=(), max_entries=None, seed=0, floor=1e-8):
    """
    Compare reverse-mode gradients against central finite differences.

    Runs in 64-bit mode. A non-scalar output is reduced with a fixed random
    projection so every output entry contributes to the checked gradient.

    Args:
        fn (callable): Maps Tensors built from `inputs` to an output Tensor.
        inputs (list[ndarray]): Input values; each becomes a requires_grad Tensor.
        epsilon (float): Central-difference step.
        params (list[Parameter]): Extra leaves to check (must already be float64).
        max_entries (int): If set, check at most this many entries per tensor.
        seed (int): Seed for the projection and the entry sample.
        floor (float): Lower bound of the denominator; gradients smaller than this are
            compared in absolute terms.

    Returns:
        float: max |analytic - numeric| / max(|analytic|, |numeric|, floor).
    """
    rng = np.random.default_rng(seed)
    with precision(64):
        tensors = [Tensor(np.array(value, dtype=np.float64), requires_grad=True) for value in inputs]
        for param in params:
            param.zeroGrad()

        out = fn(*tensors)
        projection = rng.uniform(-1.0, 1.0, size=out.shape) if out.size > 1 else np.ones(out.shape)
        (out * projection).sum().backward()

        def evaluate():
            with noGrad():
                return float((fn(*tensors).data * projection).sum())

        worst = 0.0
        for leaf in list(tensors) + list(params):
            analytic = leaf.grad.reshape(-1).copy()
            flat = leaf.data.reshape(-1)
            indices = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))

            for i in indices:
                original = flat[i]
                flat[i] = original + epsilon
                plus = evaluate()
                flat[i] = original - epsilon
                minus = evaluate()
                flat[i] = original

                numeric = (plus - minus) / (2 * epsilon)
                scale = max(abs(analytic[i]), abs(numeric), floor)
                worst = max(worst, abs(analytic[i] - numeric) / scale)

    return worst
