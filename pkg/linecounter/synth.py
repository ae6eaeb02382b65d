import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from numba import njit

from linecounter.errors import ConfigError, GenerationError
from linecounter.linemap import LABEL_DTYPE, lineMeanHeights, renumberLabels

MAX_LAYOUT_ATTEMPTS = 50


@dataclass
class SynthSpec:
    """
    Ranges a synthetic page is drawn from. Every range is an inclusive (low, high) pair.

    A negative line_gap lets neighbouring lines touch or overlap.
    """

    page_size: tuple = (192, 128)
    line_count: tuple = (3, 8)
    glyph_height: tuple = (5, 9)
    line_gap: tuple = (-1, 6)
    skew_degrees: tuple = (-3.0, 3.0)
    curvature: tuple = (0.0, 2.5)
    stroke_radius: tuple = (0, 1)
    margin: int = 4
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, list):
                setattr(self, f.name, tuple(value))

    def validate(self):
        for name in ("page_size", "line_count", "glyph_height", "line_gap", "skew_degrees", "curvature", "stroke_radius"):
            low, high = getattr(self, name)
            if name != "page_size" and low > high:
                raise ConfigError(f"SynthSpec.{name} is empty: ({low}, {high})")
        if self.line_count[0] < 1 or self.glyph_height[0] < 1:
            raise ConfigError("SynthSpec needs at least one line and a glyph height of at least 1 pixel")
        return self

    @classmethod
    def fromDict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"Unknown synth config keys: {sorted(unknown)}")
        return cls(**values)

    def toDict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@njit(nogil=True)
def _rasterizePolyline(labels, xs, ys, label, radius):
    height, width = labels.shape
    for s in range(xs.shape[0] - 1):
        x0, y0, x1, y1 = xs[s], ys[s], xs[s + 1], ys[s + 1]
        steps = int(max(abs(x1 - x0), abs(y1 - y0)) * 2.0) + 1
        for i in range(steps + 1):
            t = i / steps
            cx = int(math.floor(x0 + (x1 - x0) * t + 0.5))
            cy = int(math.floor(y0 + (y1 - y0) * t + 0.5))
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    if dx * dx + dy * dy > radius * radius:
                        continue
                    px, py = cx + dx, cy + dy
                    if 0 <= px < width and 0 <= py < height:
                        labels[py, px] = label


def synthPage(spec, seed=None):
    """
    Generate a binary page of procedural handwriting-like strokes and its line map.

    Lines are laid out top-down so that the vertical distance between two
    neighbouring center curves is, at every column, at least half of both glyph
    heights plus the sampled gap. Words are clusters of short random polylines
    and arcs that follow the skewed, sine-curved center line.

    Args:
        spec (SynthSpec): Ranges to draw from.
        seed (int): Overrides spec.seed.

    Returns:
        tuple: (image float32 [H, W] with ink 0 and background 1, line map int32 [H, W]).
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    height, width = spec.page_size

    layout = _layoutLines(spec, rng)
    labels = np.zeros((height, width), dtype=LABEL_DTYPE)
    for k, line in enumerate(layout, start=1):
        _drawLine(labels, line, k, spec, rng)

    # ink order top-down; equals baseline order for every layout _layoutLines accepts
    labels = renumberLabels(labels)
    means = lineMeanHeights(labels)
    if means.size and np.any(np.diff(means) <= 0):
        order = np.argsort(means, kind="stable")
        lookup = np.zeros(means.size + 1, dtype=LABEL_DTYPE)
        lookup[order + 1] = np.arange(1, means.size + 1, dtype=LABEL_DTYPE)
        labels = lookup[labels]

    image = np.where(labels > 0, 0.0, 1.0).astype(np.float32)
    return image, labels


def _layoutLines(spec, rng):
    height, width = spec.page_size
    min_lines, max_lines = spec.line_count
    usable = height - 2 * spec.margin
    if min_lines * spec.glyph_height[0] + (min_lines - 1) * spec.line_gap[0] > usable:
        raise GenerationError(
            f"{min_lines} lines of height {spec.glyph_height[0]} cannot fit on a {height}x{width} page"
        )

    xs = np.arange(width, dtype=np.float64)
    for _ in range(MAX_LAYOUT_ATTEMPTS):
        count = int(rng.integers(min_lines, max_lines + 1))
        lines = []
        for _ in range(count):
            skew = math.tan(math.radians(rng.uniform(*spec.skew_degrees)))
            amplitude = rng.uniform(*spec.curvature)
            period = rng.uniform(0.6, 1.6) * width
            phase = rng.uniform(0, 2 * math.pi)
            shape = skew * (xs - width / 2) + amplitude * np.sin(2 * math.pi * xs / period + phase)
            lines.append({
                "glyph": float(rng.uniform(*spec.glyph_height)),
                "gap": float(rng.uniform(*spec.line_gap)),
                "shape": shape,
            })

        first = lines[0]
        offset = spec.margin + first["glyph"] / 2 - first["shape"].min()
        for previous, line in zip([None] + lines[:-1], lines):
            if previous is not None:
                clearance = np.max(previous["shape"] - line["shape"])
                offset = previous["offset"] + clearance + (previous["glyph"] + line["glyph"]) / 2 + previous["gap"]
            line["offset"] = offset
            line["center"] = offset + line["shape"]

        last = lines[-1]
        bottom = np.max(last["center"]) + last["glyph"] / 2
        if bottom <= height - spec.margin:
            slack = (height - spec.margin) - bottom
            shift = rng.uniform(0, slack)
            for line in lines:
                line["center"] = line["center"] + shift
            return lines

    raise GenerationError(
        f"Could not fit {min_lines}..{max_lines} lines on a {height}x{width} page in {MAX_LAYOUT_ATTEMPTS} attempts"
    )


def _drawLine(labels, line, label, spec, rng):
    width = labels.shape[1]
    center, glyph = line["center"], line["glyph"]
    x = spec.margin + rng.uniform(0, 6)
    right = width - spec.margin - rng.uniform(0, width * 0.25)
    while x < right - 4:
        word_end = min(x + rng.uniform(8, 28), right)
        while x < word_end:
            glyph_width = rng.uniform(2.5, 5.0)
            xs, ys = _glyphStroke(x, glyph_width, glyph, center, rng)
            radius = int(rng.integers(spec.stroke_radius[0], spec.stroke_radius[1] + 1))
            _rasterizePolyline(labels, xs, ys, label, radius)
            x += glyph_width * rng.uniform(0.7, 1.1)
        x += rng.uniform(3, 8)


def _glyphStroke(x, glyph_width, glyph_height, center, rng):
    col = int(min(max(x, 0), center.size - 1))
    mid = center[col]
    half = glyph_height / 2
    if rng.random() < 0.35:
        # arc
        start = rng.uniform(0, math.pi)
        sweep = rng.uniform(math.pi, 2 * math.pi)
        angles = np.linspace(start, start + sweep, 8)
        xs = x + glyph_width / 2 * (1 + np.cos(angles))
        ys = mid + half * 0.8 * np.sin(angles)
    else:
        points = int(rng.integers(3, 6))
        xs = x + np.sort(rng.uniform(0, glyph_width, points))
        ys = mid + rng.uniform(-half, half, points)
    return xs.astype(np.float64), ys.astype(np.float64)
