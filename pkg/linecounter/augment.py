import logging
from dataclasses import asdict, dataclass, field, fields
from enum import Enum

import numpy as np
from scipy.ndimage import map_coordinates

from linecounter.errors import ConfigError
from linecounter.linemap import LABEL_DTYPE, renumberLabels

logger = logging.getLogger(__name__)

MAX_JITTER_ATTEMPTS = 100


class AugmentKind(str, Enum):
    PERSPECTIVE = "perspective"
    THIN_PLATE_SPLINE = "thin_plate_spline"
    DROP_LINE = "drop_line"


@dataclass
class AugmentConfig:
    """
    Per-sample augmentation policy used by the training loader.

    Each kind is applied independently with its probability, in the order
    drop_line, perspective, thin_plate_spline.
    """

    enabled: bool = True
    probabilities: dict = field(default_factory=lambda: {"perspective": 0.3, "thin_plate_spline": 0.3, "drop_line": 0.1})
    perspective_magnitude: float = 0.04
    tps_magnitude: float = 0.02
    tps_grid: int = 3

    @classmethod
    def fromDict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown augment config keys: {sorted(unknown)}")
        config = cls(**values)
        for kind in config.probabilities:
            AugmentKind(kind)
        return config

    def toDict(self):
        return asdict(self)


def augment(image, linemap, kind, magnitude, seed, tps_grid=3):
    """
    Warp a page and its line map with one random geometric transform.

    The image is resampled bilinearly with white fill; the line map is resampled
    with nearest neighbour and zero fill through the same transform, then
    renumbered so that lines warped fully off the page leave no gaps.

    Args:
        image (ndarray): [H, W] page in [0, 1].
        linemap (ndarray): [H, W] labels.
        kind (AugmentKind): perspective, thin_plate_spline or drop_line.
        magnitude (float): Perspective corner jitter as a fraction of min(H, W), or
            the TPS control-point jitter standard deviation as the same fraction.
            Ignored by drop_line.
        seed (int): Seed of this sample's transform.
        tps_grid (int): Control points per side of the TPS grid.

    Returns:
        tuple: (image, linemap).
    """
    kind = AugmentKind(kind)
    rng = np.random.default_rng(seed)
    if kind == AugmentKind.DROP_LINE:
        return dropLine(image, linemap, rng)
    if magnitude == 0:
        return image.copy(), renumberLabels(linemap)

    height, width = image.shape
    if kind == AugmentKind.PERSPECTIVE:
        rows, cols = _perspectiveCoordinates(height, width, magnitude, rng)
    else:
        rows, cols = _tpsCoordinates(height, width, magnitude, tps_grid, rng)
    return remap(image, linemap, rows, cols)


def remap(image, linemap, rows, cols):
    """Sample image and line map at the given source coordinates."""
    coords = np.stack([rows, cols])
    warped_image = map_coordinates(image.astype(np.float64), coords, order=1, mode="constant", cval=1.0)
    warped_labels = map_coordinates(linemap.astype(np.float64), coords, order=0, mode="constant", cval=0.0)
    warped_image = np.clip(warped_image, 0.0, 1.0).astype(np.float32)
    return warped_image, renumberLabels(np.rint(warped_labels).astype(LABEL_DTYPE))


def dropLine(image, linemap, rng):
    """Erase every pixel of one randomly chosen line."""
    count = int(linemap.max(initial=0))
    if count <= 1:
        return image.copy(), renumberLabels(linemap)
    victim = int(rng.integers(1, count + 1))
    image = image.copy()
    labels = linemap.copy()
    image[labels == victim] = 1.0
    labels[labels == victim] = 0
    return image, renumberLabels(labels)


# ---------------------------- Perspective ---------------------------- #


def _perspectiveCoordinates(height, width, magnitude, rng):
    corners = np.array([[0, 0], [width - 1, 0], [width - 1, height - 1], [0, height - 1]], dtype=np.float64)
    limit = magnitude * min(height, width)
    for _ in range(MAX_JITTER_ATTEMPTS):
        moved = corners + rng.uniform(-limit, limit, size=corners.shape)
        if _isConvexQuad(moved):
            break
        logger.debug("Degenerate perspective quadrilateral, resampling jitter")
    else:
        moved = corners

    # backward map: output pixel (on the moved quad) -> source pixel (on the original corners)
    homography = _homography(moved, corners)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    points = np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    mapped = homography @ points
    src_x = (mapped[0] / mapped[2]).reshape(height, width)
    src_y = (mapped[1] / mapped[2]).reshape(height, width)
    return src_y, src_x


def _homography(src, dst):
    a = []
    b = []
    for (x, y), (u, v) in zip(src, dst):
        a.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        a.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        b.extend([u, v])
    h = np.linalg.solve(np.array(a), np.array(b))
    return np.append(h, 1.0).reshape(3, 3)


def _isConvexQuad(points):
    signs = []
    for i in range(4):
        p0, p1, p2 = points[i], points[(i + 1) % 4], points[(i + 2) % 4]
        cross = (p1[0] - p0[0]) * (p2[1] - p1[1]) - (p1[1] - p0[1]) * (p2[0] - p1[0])
        signs.append(np.sign(cross))
    return all(s == signs[0] and s != 0 for s in signs)


# ---------------------------- Thin plate spline ---------------------------- #


def _tpsKernel(r2):
    # U(r) = r^2 log r, written on r^2 to avoid the square root; U(0) = 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = 0.5 * r2 * np.log(r2)
    return np.nan_to_num(u, nan=0.0, posinf=0.0, neginf=0.0)


def tpsDisplacement(control, displacement, query):
    """
    Interpolate control-point displacements with a thin plate spline.

    Args:
        control (ndarray): [n, 2] control points (x, y).
        displacement (ndarray): [n, 2] displacement at each control point.
        query (ndarray): [m, 2] points to evaluate.

    Returns:
        ndarray: [m, 2] interpolated displacement. Zero displacements give exactly zero.
    """
    n = control.shape[0]
    k = _tpsKernel(np.sum((control[:, None, :] - control[None, :, :]) ** 2, axis=-1))
    p = np.hstack([np.ones((n, 1)), control])
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = k
    system[:n, n:] = p
    system[n:, :n] = p.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = displacement
    coefficients = np.linalg.solve(system, rhs)

    u = _tpsKernel(np.sum((query[:, None, :] - control[None, :, :]) ** 2, axis=-1))
    q = np.hstack([np.ones((query.shape[0], 1)), query])
    return u @ coefficients[:n] + q @ coefficients[n:]


def _tpsCoordinates(height, width, magnitude, grid, rng):
    gx, gy = np.meshgrid(np.linspace(0, width - 1, grid), np.linspace(0, height - 1, grid))
    control = np.stack([gx.ravel(), gy.ravel()], axis=1)
    displacement = rng.normal(0.0, magnitude * min(height, width), size=control.shape)

    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    query = np.stack([xs.ravel(), ys.ravel()], axis=1)
    shift = tpsDisplacement(control, displacement, query)
    return ys + shift[:, 1].reshape(height, width), xs + shift[:, 0].reshape(height, width)
