from dataclasses import asdict, dataclass

import numpy as np
from PIL import Image

from linecounter.errors import ShapeError
from linecounter.linemap import LABEL_DTYPE, checkPair


@dataclass(frozen=True)
class ScaleRecord:
    """
    How a page was fitted into the model input, kept for the inverse mapping.

    Attributes:
        scale (float): min(target_h / h, target_w / w).
        original (tuple): (h, w) before resizing.
        resized (tuple): (h, w) of the scaled content, before padding.
        target (tuple): (h, w) after padding.
    """

    scale: float
    original: tuple
    resized: tuple
    target: tuple

    @property
    def padding(self):
        return self.target[0] - self.resized[0], self.target[1] - self.resized[1]

    def toDict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


def resizePad(image, linemap=None, target=(192, 128)):
    """
    Aspect-preserving resize followed by bottom/right padding to exactly `target`.

    The image is resampled bilinearly and padded with white (1); the line map is
    resampled with nearest neighbour and padded with 0.

    Args:
        image (ndarray): [H, W] page in [0, 1].
        linemap (ndarray): Optional [H, W] labels.
        target (tuple): (H, W) of the output.

    Returns:
        tuple: (image, linemap or None, ScaleRecord).
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ShapeError(f"resizePad expects a 2-D page, got shape {image.shape}")
    if linemap is not None:
        checkPair(image, linemap)

    height, width = image.shape
    target_h, target_w = int(target[0]), int(target[1])
    scale = min(target_h / height, target_w / width)
    resized = (
        min(target_h, max(1, int(round(height * scale)))),
        min(target_w, max(1, int(round(width * scale)))),
    )
    record = ScaleRecord(scale=scale, original=(height, width), resized=resized, target=(target_h, target_w))

    out_image = np.ones((target_h, target_w), dtype=np.float32)
    out_image[:resized[0], :resized[1]] = np.clip(_resample(image, resized, Image.Resampling.BILINEAR), 0.0, 1.0)

    out_labels = None
    if linemap is not None:
        out_labels = np.zeros((target_h, target_w), dtype=LABEL_DTYPE)
        out_labels[:resized[0], :resized[1]] = _resample(linemap, resized, Image.Resampling.NEAREST)
    return out_image, out_labels, record


def inverseResize(grid, record, resample=Image.Resampling.NEAREST):
    """Crop the padding off a target-sized grid and scale it back to the original page size."""
    grid = np.asarray(grid)
    if grid.shape != record.target:
        raise ShapeError(f"Expected a grid of shape {record.target}, got {grid.shape}")
    content = grid[:record.resized[0], :record.resized[1]]
    return _resample(content, record.original, resample)


def _resample(array, size, resample):
    if array.shape == tuple(size):
        return array.copy()
    is_label = np.issubdtype(array.dtype, np.integer)
    source = array.astype(np.int32 if is_label else np.float32)
    resized = Image.fromarray(source).resize((size[1], size[0]), resample=resample)
    return np.asarray(resized).astype(LABEL_DTYPE if is_label else np.float32)
