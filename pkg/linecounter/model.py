import logging
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np

from linecounter.errors import ConfigError, ShapeError
from linecounter.gru import Axis, SpatialGru, SpatialGruConfig
from linecounter.layers import ConvBlock, Conv2d, Module
from linecounter.tensor import Activation, Tensor, activation, asTensor, cumsumY, maskedSelect, upsample2x

logger = logging.getLogger(__name__)


class CounterOrder(str, Enum):
    HORIZONTAL_FIRST = "horizontal_first"
    VERTICAL_FIRST = "vertical_first"


class MonotonePlacement(str, Enum):
    BEFORE_DECODER = "before_decoder"
    AFTER_DECODER = "after_decoder"
    NONE = "none"


MONOTONE_PREACTIVATIONS = (Activation.RELU, Activation.ABS_TANH, Activation.SIGMOID, Activation.HARD_SIGMOID)


@dataclass
class ModelConfig:
    """
    Shape and topology of a LineCounter network.

    The defaults are the best-performing setup: horizontal GRU first, both GRUs
    bidirectional, hard_sigmoid + cumsum at the end of the Counter.
    """

    encoder_channels: tuple = (16, 32, 64)
    counter_hidden: int = 64
    counter_order: CounterOrder = CounterOrder.HORIZONTAL_FIRST
    counter_bidirectional: tuple = (True, True)
    monotone_placement: MonotonePlacement = MonotonePlacement.BEFORE_DECODER
    monotone_preactivation: Activation = Activation.HARD_SIGMOID
    input_size: tuple = (192, 128)
    kernel_size: int = 3
    bn_momentum: float = 0.99
    bn_eps: float = 1e-3

    def __post_init__(self):
        self.encoder_channels = tuple(int(c) for c in self.encoder_channels)
        self.counter_bidirectional = tuple(bool(b) for b in self.counter_bidirectional)
        self.input_size = tuple(int(s) for s in self.input_size)
        try:
            self.counter_order = CounterOrder(self.counter_order)
            self.monotone_placement = MonotonePlacement(self.monotone_placement)
            self.monotone_preactivation = Activation(self.monotone_preactivation)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def validate(self):
        if not self.encoder_channels or any(c <= 0 for c in self.encoder_channels):
            raise ConfigError(f"encoder_channels must be positive, got {list(self.encoder_channels)}")
        if self.counter_hidden <= 0:
            raise ConfigError(f"counter_hidden must be positive, got {self.counter_hidden}")
        if len(self.counter_bidirectional) != 2:
            raise ConfigError(f"counter_bidirectional needs one flag per GRU, got {self.counter_bidirectional}")
        if self.monotone_preactivation not in MONOTONE_PREACTIVATIONS:
            raise ConfigError(f"monotone_preactivation must be non-negative, got {self.monotone_preactivation.value}")
        if self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        factor = 2 ** len(self.encoder_channels)
        height, width = self.input_size
        if height % factor or width % factor:
            raise ConfigError(
                f"input size {height}x{width} is not divisible by {factor} "
                f"({len(self.encoder_channels)} encoder stages)"
            )
        return self

    @classmethod
    def fromDict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown model config keys: {sorted(unknown)}")
        return cls(**values)

    def toDict(self):
        values = asdict(self)
        for key, value in values.items():
            if isinstance(value, Enum):
                values[key] = value.value
            elif isinstance(value, tuple):
                values[key] = list(value)
        return values


class Encoder(Module):
    """Per stage: Conv2D+BatchNorm+ReLU, then a stride-2 Conv2D+BatchNorm+ReLU."""

    def __init__(self, config, rng):
        super().__init__()
        self.stage = []
        in_channels = 1
        for channels in config.encoder_channels:
            self.stage.append(_Stage(in_channels, channels, config, rng))
            in_channels = channels

    def forward(self, x):
        for i, stage in enumerate(self.stage):
            x = self.checkFinite(f"encoder.stage{i}", stage(x))
        return x


class _Stage(Module):
    def __init__(self, in_channels, channels, config, rng):
        super().__init__()
        self.conv = _block(in_channels, channels, config, rng)
        self.down = _block(channels, channels, config, rng, stride=2)

    def forward(self, x):
        return self.down(self.conv(x))


class Counter(Module):
    """
    Conv2D -> GRU(axis A) -> Conv2D -> GRU(axis B) -> Conv2D at the deepest resolution.

    With before_decoder placement the last Conv2D is followed by the monotone
    pre-activation and cumsum instead of BatchNorm+ReLU.
    """

    def __init__(self, config, rng):
        super().__init__()
        channels = config.encoder_channels[-1]
        hidden = config.counter_hidden
        axes = (Axis.HORIZONTAL, Axis.VERTICAL)
        if config.counter_order == CounterOrder.VERTICAL_FIRST:
            axes = (Axis.VERTICAL, Axis.HORIZONTAL)
        first = SpatialGruConfig(axes[0], config.counter_bidirectional[0], hidden)
        second = SpatialGruConfig(axes[1], config.counter_bidirectional[1], hidden)
        self.order = axes

        self.conv_in = _block(channels, hidden, config, rng)
        gru_first = SpatialGru(hidden, first, rng)
        self.conv_mid = _block(first.out_channels, hidden, config, rng, kernel_size=1)
        gru_second = SpatialGru(hidden, second, rng)
        if axes[0] == Axis.HORIZONTAL:
            self.gru_h, self.gru_v = gru_first, gru_second
        else:
            self.gru_h, self.gru_v = gru_second, gru_first

        monotone = config.monotone_placement == MonotonePlacement.BEFORE_DECODER
        self.conv_out = _block(second.out_channels, channels, config, rng, kernel_size=1, monotone=monotone)

    def gru(self, axis):
        return self.gru_h if axis == Axis.HORIZONTAL else self.gru_v

    def forward(self, x):
        x = self.checkFinite("counter.conv_in", self.conv_in(x))
        x = self.checkFinite(f"counter.gru_{self.order[0].value[0]}", self.gru(self.order[0])(x))
        x = self.checkFinite("counter.conv_mid", self.conv_mid(x))
        x = self.checkFinite(f"counter.gru_{self.order[1].value[0]}", self.gru(self.order[1])(x))
        return self.checkFinite("counter.conv_out", self.conv_out(x))


class Decoder(Module):
    """Mirror of the Encoder: upsample2x then Conv2D+BatchNorm+ReLU per stage, then a 1-channel head."""

    def __init__(self, config, rng):
        super().__init__()
        self.stage = []
        in_channels = config.encoder_channels[-1]
        for channels in reversed(config.encoder_channels):
            self.stage.append(_block(in_channels, channels, config, rng))
            in_channels = channels
        self.head = Conv2d(in_channels, 1, config.kernel_size, rng, bias=True)
        self.monotone_head = config.monotone_placement == MonotonePlacement.AFTER_DECODER
        self.preactivation = config.monotone_preactivation

    def forward(self, x):
        for i, block in enumerate(self.stage):
            x = self.checkFinite(f"decoder.stage{i}", block(upsample2x(x)))
        x = self.head(x)
        if self.monotone_head:
            x = cumsumY(activation(x, self.preactivation))
        return self.checkFinite("decoder.head", x)


class LineCounterModel(Module):
    """
    Encoder -> Counter -> Decoder network predicting a per-pixel line count.

    Input is a [B, 1, H, W] page in [0, 1] with white = 1; the network sees ink
    intensity (1 - page). Output is the [B, 1, H, W] line counting map.
    """

    def __init__(self, config, seed=0):
        super().__init__()
        self.config = config.validate()
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(config, rng)
        self.counter = Counter(config, rng)
        self.decoder = Decoder(config, rng)
        for name, param in self.namedParameters():
            param.name = name

    def forward(self, batch, return_counter=False):
        batch = asTensor(batch)
        expected = (1, *self.config.input_size)
        if batch.ndim != 4 or batch.shape[1:] != expected:
            raise ShapeError(f"Model expects [B, {expected[0]}, {expected[1]}, {expected[2]}] input, got {batch.shape}")
        x = 1.0 - batch
        counter_out = self.counter(self.encoder(x))
        out = self.decoder(counter_out)
        if return_counter:
            return out, counter_out
        return out

    def parameterCount(self):
        return int(sum(param.size for param in self.parameters()))


def build(config, seed=0):
    """
    Build a LineCounterModel with deterministic initialization.

    Args:
        config (ModelConfig): Network topology; validated here.
        seed (int): Initialization seed; equal seeds give bit-identical parameters.

    Returns:
        LineCounterModel: Model in training mode.
    """
    model = LineCounterModel(config, seed)
    logger.debug(f"Built LineCounter with {model.parameterCount()} parameters (seed {seed})")
    return model


def lossMaskedL1(prediction, gt, text_mask):
    """
    Mean absolute error over text pixels only.

    Args:
        prediction (Tensor): Predicted counting map, any shape.
        gt (ndarray): Target counts, same shape; only text pixels are read.
        text_mask (ndarray): Boolean text-pixel mask, same shape.

    Returns:
        Tensor: Scalar loss. With an empty mask the loss is 0 with zero gradient
        and its `empty_mask` attribute is True.
    """
    text_mask = np.asarray(text_mask, dtype=bool)
    gt = np.asarray(gt)
    if gt.shape != prediction.shape or text_mask.shape != prediction.shape:
        raise ShapeError(
            f"lossMaskedL1: prediction {prediction.shape}, target {gt.shape} and mask {text_mask.shape} differ"
        )

    if not text_mask.any():
        logger.warning("Empty text mask: sample contributes no loss")
        loss = (prediction * 0.0).sum()
        loss.empty_mask = True
        return loss

    selected = maskedSelect(prediction, text_mask)
    target = Tensor(gt[text_mask])
    loss = (selected - target).abs().mean()
    loss.empty_mask = False
    return loss


def _block(in_channels, out_channels, config, rng, kernel_size=None, stride=1, monotone=False):
    kernel_size = kernel_size or config.kernel_size
    if monotone:
        return ConvBlock(in_channels, out_channels, rng, kernel_size, stride,
                         act=config.monotone_preactivation, norm=False, cumsum=True)
    return ConvBlock(in_channels, out_channels, rng, kernel_size, stride,
                     bn_momentum=config.bn_momentum, bn_eps=config.bn_eps)
