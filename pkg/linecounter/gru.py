from dataclasses import dataclass
from enum import Enum

import numpy as np

from linecounter.errors import ConfigError, ShapeError
from linecounter.layers import Module
from linecounter.tensor import Activation, Parameter, Tensor, activation, concat, fanInUniform, matmul, stack, transpose


class Axis(str, Enum):
    HORIZONTAL = "horizontal"
    VERTICAL = "vertical"


@dataclass
class SpatialGruConfig:
    axis: Axis
    bidirectional: bool
    hidden_channels: int
    merge: str = "concat"

    def __post_init__(self):
        self.axis = Axis(self.axis)
        if self.hidden_channels <= 0:
            raise ConfigError(f"hidden_channels must be positive, got {self.hidden_channels}")
        if self.merge != "concat":
            raise ConfigError(f"Only concat merging is supported, got {self.merge!r}")

    @property
    def out_channels(self):
        return 2 * self.hidden_channels if self.bidirectional else self.hidden_channels


class GruCellParams(Module):
    """
    Weights of one GRU direction.

    w_* are [hidden x in], u_* are [hidden x hidden], b_* are [hidden]; every
    matrix is drawn uniformly from +-1/sqrt(fan_in).
    """

    def __init__(self, in_channels, hidden_channels, rng):
        super().__init__()
        self.in_channels = in_channels
        self.hidden_channels = hidden_channels
        self.w_z = Parameter(fanInUniform(rng, (hidden_channels, in_channels), in_channels))
        self.w_r = Parameter(fanInUniform(rng, (hidden_channels, in_channels), in_channels))
        self.w_h = Parameter(fanInUniform(rng, (hidden_channels, in_channels), in_channels))
        self.u_z = Parameter(fanInUniform(rng, (hidden_channels, hidden_channels), hidden_channels))
        self.u_r = Parameter(fanInUniform(rng, (hidden_channels, hidden_channels), hidden_channels))
        self.u_h = Parameter(fanInUniform(rng, (hidden_channels, hidden_channels), hidden_channels))
        self.b_z = Parameter(fanInUniform(rng, (hidden_channels,), hidden_channels))
        self.b_r = Parameter(fanInUniform(rng, (hidden_channels,), hidden_channels))
        self.b_h = Parameter(fanInUniform(rng, (hidden_channels,), hidden_channels))


def gruCellStep(x_t, h_prev, params):
    """
    One GRU step with hard_sigmoid gates and a tanh candidate.

        z = hard_sigmoid(W_z x + U_z h + b_z)
        r = hard_sigmoid(W_r x + U_r h + b_r)
        h_cand = tanh(W_h x + U_h (r * h) + b_h)
        h_t = z * h_prev + (1 - z) * h_cand

    Args:
        x_t (Tensor): [N, in] inputs for this step.
        h_prev (Tensor): [N, hidden] previous state.
        params (GruCellParams): Weights of this direction.

    Returns:
        Tensor: [N, hidden] new state.
    """
    if x_t.ndim != 2 or x_t.shape[1] != params.in_channels:
        raise ShapeError(f"GRU step expects [N, {params.in_channels}] input, got {x_t.shape}")
    if h_prev.shape != (x_t.shape[0], params.hidden_channels):
        raise ShapeError(f"GRU step expects [{x_t.shape[0]}, {params.hidden_channels}] state, got {h_prev.shape}")

    z = activation(
        matmul(x_t, params.w_z.transpose()) + matmul(h_prev, params.u_z.transpose()) + params.b_z,
        Activation.HARD_SIGMOID,
    )
    r = activation(
        matmul(x_t, params.w_r.transpose()) + matmul(h_prev, params.u_r.transpose()) + params.b_r,
        Activation.HARD_SIGMOID,
    )
    h_cand = activation(
        matmul(x_t, params.w_h.transpose()) + matmul(r * h_prev, params.u_h.transpose()) + params.b_h,
        Activation.TANH,
    )
    return z * h_prev + (1.0 - z) * h_cand


def runSequence(sequence, params, reverse=False):
    """
    Unroll a GRU over [N, T, C] from a zero state; outputs stay in input order.
    """
    n, steps, _ = sequence.shape
    h = _zeros((n, params.hidden_channels), sequence)
    outputs = [None] * steps
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        h = gruCellStep(sequence[:, t, :], h, params)
        outputs[t] = h
    return stack(outputs, axis=1)


def spatialGru(x, config, params):
    """
    Run a GRU across one spatial axis of a [B, C, H, W] feature.

    Horizontal: width is time and every image row (B * H of them) is a batch entry.
    Vertical: height is time and every column (B * W) is a batch entry.

    Args:
        x (Tensor): [B, C, H, W] feature.
        config (SpatialGruConfig): Axis, direction and width of the recurrence.
        params (GruCellParams | tuple): Forward weights, or (forward, backward) when bidirectional.

    Returns:
        Tensor: [B, C', H, W] with C' = hidden or 2 * hidden (forward then backward).
    """
    if x.ndim != 4:
        raise ShapeError(f"spatialGru expects [B, C, H, W], got {x.shape}")
    b, c, h, w = x.shape
    forward_params, backward_params = params if config.bidirectional else (params, None)

    if config.axis == Axis.HORIZONTAL:
        sequence = transpose(x, (0, 2, 3, 1)).reshape(b * h, w, c)
    else:
        sequence = transpose(x, (0, 3, 2, 1)).reshape(b * w, h, c)

    out = runSequence(sequence, forward_params)
    if config.bidirectional:
        out = concat([out, runSequence(sequence, backward_params, reverse=True)], axis=2)

    channels = out.shape[2]
    if config.axis == Axis.HORIZONTAL:
        return transpose(out.reshape(b, h, w, channels), (0, 3, 1, 2))
    return transpose(out.reshape(b, w, h, channels), (0, 3, 2, 1))


class SpatialGru(Module):
    def __init__(self, in_channels, config, rng):
        super().__init__()
        self.config = config
        self.fwd = GruCellParams(in_channels, config.hidden_channels, rng)
        self.bwd = GruCellParams(in_channels, config.hidden_channels, rng) if config.bidirectional else None

    def forward(self, x):
        params = (self.fwd, self.bwd) if self.config.bidirectional else self.fwd
        return spatialGru(x, self.config, params)


def _zeros(shape, like):
    return Tensor(np.zeros(shape, dtype=like.data.dtype))
