"""
Line-map data model.

A page is a float32 [H, W] array in [0, 1] with white = 1. Its line map is an
integer [H, W] array: 0 for non-text, k >= 1 for a pixel of the k-th text line
counting from the top, with the used labels always exactly 1..K.
"""
from dataclasses import dataclass

import numpy as np

from linecounter.errors import ShapeError

LABEL_DTYPE = np.int32


@dataclass
class LineCountMap:
    """Target counting map: values are meaningful only where mask is True."""

    values: np.ndarray
    mask: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def renumberLabels(linemap):
    """
    Map the used positive labels onto 1..K, keeping their order. Idempotent.
    """
    linemap = np.asarray(linemap)
    used = np.unique(linemap[linemap > 0])
    if used.size == 0:
        return np.zeros(linemap.shape, dtype=LABEL_DTYPE)
    if used[0] == 1 and used[-1] == used.size:
        return linemap.astype(LABEL_DTYPE, copy=True)
    lookup = np.zeros(int(used[-1]) + 1, dtype=LABEL_DTYPE)
    lookup[used] = np.arange(1, used.size + 1, dtype=LABEL_DTYPE)
    return lookup[linemap]


def lineCount(linemap):
    return int(np.max(linemap, initial=0))


def countMapFromLineMap(linemap):
    """C_GT equals the line label on text pixels; elsewhere it is undefined (stored as 0)."""
    linemap = np.asarray(linemap)
    return LineCountMap(values=linemap.astype(np.float32), mask=linemap > 0)


def lineMapFromCountMap(counts, mask):
    """Round counts to the nearest integer on masked pixels; labels below 1 become non-text."""
    labels = np.rint(np.asarray(counts, dtype=np.float64)).astype(LABEL_DTYPE)
    labels[labels < 1] = 0
    labels[~np.asarray(mask, dtype=bool)] = 0
    return labels


def checkPair(image, linemap, source=""):
    if image.shape != linemap.shape:
        where = f" in {source}" if source else ""
        raise ShapeError(f"Image {image.shape} and line map {linemap.shape} differ in size{where}")


def lineMeanHeights(linemap):
    """Mean row index of each line's pixels, indexed by label - 1."""
    linemap = np.asarray(linemap)
    rows = np.nonzero(linemap)[0]
    labels = linemap[linemap > 0]
    k = lineCount(linemap)
    sums = np.bincount(labels, weights=rows, minlength=k + 1)[1:]
    counts = np.bincount(labels, minlength=k + 1)[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts
