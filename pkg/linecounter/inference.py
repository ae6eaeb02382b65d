"""
Page -> line map inference and color-coded visualization.

Visualization palette (label k is drawn with PALETTE[k % 12]; label 0 is white):

    0 (230, 25, 75)    1 (60, 180, 75)    2 (255, 225, 25)   3 (0, 130, 200)
    4 (245, 130, 48)   5 (145, 30, 180)   6 (70, 240, 240)   7 (240, 50, 230)
    8 (210, 245, 60)   9 (0, 128, 128)   10 (170, 110, 40)  11 (128, 0, 0)
"""
import logging
from enum import Enum

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.filters import threshold_otsu

from linecounter.linemap import LABEL_DTYPE, lineMapFromCountMap
from linecounter.pgm import writePpm
from linecounter.resize import inverseResize, resizePad
from linecounter.tensor import noGrad

logger = logging.getLogger(__name__)

PALETTE = np.array(
    [
        (230, 25, 75),
        (60, 180, 75),
        (255, 225, 25),
        (0, 130, 200),
        (245, 130, 48),
        (145, 30, 180),
        (70, 240, 240),
        (240, 50, 230),
        (210, 245, 60),
        (0, 128, 128),
        (170, 110, 40),
        (128, 0, 0),
    ],
    dtype=np.uint8,
)
BACKGROUND = np.array((255, 255, 255), dtype=np.uint8)
CCL_DOMINANCE = 0.8


class ForegroundMethod(str, Enum):
    THRESHOLD = "threshold"
    OTSU = "otsu"


class Postprocess(str, Enum):
    NONE = "none"
    CCL = "ccl"


def foregroundMask(image, fg_threshold=0.5, method=ForegroundMethod.THRESHOLD):
    """Text pixels are those darker than the threshold (fixed, or Otsu's on the page itself)."""
    image = np.asarray(image, dtype=np.float32)
    if ForegroundMethod(method) == ForegroundMethod.OTSU:
        if image.size == 0 or np.all(image == image.flat[0]):
            return np.zeros(image.shape, dtype=bool)
        fg_threshold = threshold_otsu(image)
    return image < fg_threshold


def predictCounts(model, images):
    """
    Run the model in inference mode on a stack of model-sized pages.

    Args:
        model (LineCounterModel): Network; switched to eval mode.
        images (ndarray): [B, H, W] pages already at the model input size.

    Returns:
        ndarray: [B, H, W] line counting maps.
    """
    model.eval()
    with noGrad():
        out = model(np.asarray(images, dtype=np.float32)[:, None])
    return out.data[:, 0]


def lineMapFromCounts(counts, image, record, fg_threshold=0.5, fg_method=ForegroundMethod.THRESHOLD):
    """
    Turn a model-resolution counting map into a line map at the page's own resolution.

    The counts are mapped back with nearest-neighbour inverse scaling, rounded,
    and kept only on the page's foreground pixels; labels below 1 become 0.
    """
    counts = inverseResize(np.asarray(counts, dtype=np.float32), record)
    mask = foregroundMask(image, fg_threshold, fg_method)
    return lineMapFromCountMap(counts, mask)


def predictLineMap(model, image, fg_threshold=0.5, fg_method=ForegroundMethod.THRESHOLD, postprocess=Postprocess.NONE):
    """
    Segment one page of any size into text lines.

    Args:
        model (LineCounterModel): Trained network.
        image (ndarray): [H, W] page in [0, 1] with white = 1.
        fg_threshold (float): Intensity below which a pixel is text.
        fg_method (ForegroundMethod): Fixed threshold or Otsu.
        postprocess (Postprocess): Optional connected-component relabelling.

    Returns:
        ndarray: [H, W] int32 line map.
    """
    padded, _, record = resizePad(image, target=model.config.input_size)
    counts = predictCounts(model, padded[None])[0]
    labels = lineMapFromCounts(counts, image, record, fg_threshold, fg_method)
    if Postprocess(postprocess) == Postprocess.CCL:
        labels = relabelComponents(labels)
    return labels


def relabelComponents(labels):
    """
    Give a whole 4-connected text component its dominant label when that label
    covers more than 80% of the component.
    """
    labels = np.asarray(labels, dtype=LABEL_DTYPE).copy()
    components, count = ndimage.label(labels > 0)
    relabelled = 0
    for component in range(1, count + 1):
        pixels = components == component
        votes = np.bincount(labels[pixels])
        dominant = int(np.argmax(votes))
        if votes[dominant] > CCL_DOMINANCE * pixels.sum():
            labels[pixels] = dominant
            relabelled += 1
    logger.debug(f"Relabelled {relabelled} of {count} connected components")
    return labels


def colorize(linemap):
    linemap = np.asarray(linemap)
    rgb = PALETTE[linemap % len(PALETTE)]
    rgb[linemap == 0] = BACKGROUND
    return rgb


def writeVisualization(path, linemap, png=False):
    """Write the color-coded line map as a PPM, or as a PNG through Pillow."""
    rgb = colorize(linemap)
    if png:
        Image.fromarray(rgb).save(path, format="PNG")
    else:
        writePpm(path, rgb)
