"""
One-to-one region matching and the DR / RA / FM protocol.

The match score of a ground-truth line G and a detected line R is the pixel
IoU |G & R| / |G | R|. A pair is a one-to-one match when its score is strictly
greater than the threshold (0.9 by default) and neither line is used by another
pair. Corpus scores are micro-averaged: DR = sum(o2o) / sum(N), RA = sum(o2o) / sum(M).

Report JSON schema:

    {
      "threshold": float,
      "corpus": {"n": int, "m": int, "o2o": int, "dr": float, "ra": float, "fm": float},
      "pages": [{"name": str, "n": int, "m": int, "o2o": int,
                 "dr": float, "ra": float, "fm": float, "flags": [str]}],
      "seconds": float | null
    }
"""
import json
from dataclasses import dataclass, field

import numpy as np

from linecounter.errors import ManifestError, ShapeError

DEFAULT_THRESHOLD = 0.9


@dataclass
class MatchResult:
    pairs: list
    n: int
    m: int
    dr: float
    ra: float
    fm: float
    flags: list = field(default_factory=list)
    name: str = ""

    @property
    def o2o(self):
        return len(self.pairs)


@dataclass
class EvalReport:
    threshold: float
    pages: list
    n: int
    m: int
    o2o: int
    dr: float
    ra: float
    fm: float
    seconds: float = None

    def toDict(self):
        return {
            "threshold": self.threshold,
            "corpus": {"n": self.n, "m": self.m, "o2o": self.o2o, "dr": self.dr, "ra": self.ra, "fm": self.fm},
            "pages": [
                {"name": p.name, "n": p.n, "m": p.m, "o2o": p.o2o, "dr": p.dr, "ra": p.ra, "fm": p.fm, "flags": p.flags}
                for p in self.pages
            ],
            "seconds": self.seconds,
        }

    def toJson(self):
        return json.dumps(self.toDict(), indent=2)

    def toTable(self):
        header = f"{'page':<24} {'N':>4} {'M':>4} {'o2o':>4} {'DR':>7} {'RA':>7} {'FM':>7}"
        rows = [header, "-" * len(header)]
        for p in self.pages:
            rows.append(f"{p.name[-24:]:<24} {p.n:>4} {p.m:>4} {p.o2o:>4} {p.dr:>7.4f} {p.ra:>7.4f} {p.fm:>7.4f}")
        rows.append("-" * len(header))
        rows.append(f"{'corpus':<24} {self.n:>4} {self.m:>4} {self.o2o:>4} {self.dr:>7.4f} {self.ra:>7.4f} {self.fm:>7.4f}")
        if self.seconds:
            rows.append(f"{len(self.pages) / self.seconds:.2f} pages/s")
        return "\n".join(rows)


def fMeasure(dr, ra):
    return 2 * dr * ra / (dr + ra) if dr + ra > 0 else 0.0


def matchScore(gt_region, det_region):
    """
    IoU of two regions, given as boolean masks of equal shape or as sets of pixel coordinates.
    Two empty regions score 0.
    """
    if isinstance(gt_region, (set, frozenset)):
        union = len(gt_region | det_region)
        return len(gt_region & det_region) / union if union else 0.0
    gt_region = np.asarray(gt_region, dtype=bool)
    det_region = np.asarray(det_region, dtype=bool)
    union = np.count_nonzero(gt_region | det_region)
    return np.count_nonzero(gt_region & det_region) / union if union else 0.0


def scoreMatrix(gt, det):
    """
    IoU of every (gt line, detected line) pair from one joint histogram.

    Returns:
        tuple: (scores [N, M], gt ids, det ids).
    """
    gt = np.asarray(gt)
    det = np.asarray(det)
    if gt.shape != det.shape:
        raise ShapeError(f"Ground truth {gt.shape} and detection {det.shape} differ in size")
    gt_ids = np.unique(gt[gt > 0])
    det_ids = np.unique(det[det > 0])
    if gt_ids.size == 0 or det_ids.size == 0:
        return np.zeros((gt_ids.size, det_ids.size)), gt_ids, det_ids

    gt_index = np.searchsorted(gt_ids, gt.ravel())
    det_index = np.searchsorted(det_ids, det.ravel())
    gt_text = gt.ravel() > 0
    det_text = det.ravel() > 0
    both = gt_text & det_text
    joint = np.bincount(
        gt_index[both] * det_ids.size + det_index[both], minlength=gt_ids.size * det_ids.size
    ).reshape(gt_ids.size, det_ids.size)
    gt_sizes = np.bincount(gt_index[gt_text], minlength=gt_ids.size)
    det_sizes = np.bincount(det_index[det_text], minlength=det_ids.size)
    union = gt_sizes[:, None] + det_sizes[None, :] - joint
    return joint / union, gt_ids, det_ids


def greedyMatch(scores, gt_ids, det_ids, threshold=DEFAULT_THRESHOLD):
    """
    Pick pairs by descending score, ties broken by lower gt id then lower det id.
    Only scores strictly above the threshold qualify; each id is used at most once.
    """
    candidates = [
        (-scores[i, j], int(gt_ids[i]), int(det_ids[j]))
        for i, j in zip(*np.nonzero(scores > threshold))
    ]
    used_gt, used_det, pairs = set(), set(), []
    for _, g, d in sorted(candidates):
        if g in used_gt or d in used_det:
            continue
        used_gt.add(g)
        used_det.add(d)
        pairs.append((g, d))
    return pairs


def oneToOne(gt, det, threshold=DEFAULT_THRESHOLD, name=""):
    """
    Match the lines of one page and compute its DR / RA / FM.

    Args:
        gt (ndarray): Ground-truth line map.
        det (ndarray): Detected line map of the same shape.
        threshold (float): Match-score threshold, compared strictly.

    Returns:
        MatchResult: Matched (gt_id, det_id) pairs and the page scores. A page with
        no ground-truth lines or no detections gets DR or RA 0 and a flag.
    """
    scores, gt_ids, det_ids = scoreMatrix(gt, det)
    pairs = greedyMatch(scores, gt_ids, det_ids, threshold)
    n, m = int(gt_ids.size), int(det_ids.size)
    flags = []
    if n == 0:
        flags.append("no_gt_lines")
    if m == 0:
        flags.append("no_detections")
    dr = len(pairs) / n if n else 0.0
    ra = len(pairs) / m if m else 0.0
    return MatchResult(pairs=pairs, n=n, m=m, dr=dr, ra=ra, fm=fMeasure(dr, ra), flags=flags, name=name)


def evaluateCorpus(pairs, threshold=DEFAULT_THRESHOLD, source="corpus", names=None, seconds=None):
    """
    Evaluate every (gt, det) page pair and micro-average the counts.

    Args:
        pairs (list[tuple]): (gt line map, detected line map) per page.
        threshold (float): One-to-one match threshold.
        source (str): Manifest path, named in the error for an empty corpus.
        names (list[str]): Optional page names for the report.
        seconds (float): Optional wall-clock inference time, reported as pages/s.

    Returns:
        EvalReport: Per-page and corpus results.
    """
    pairs = list(pairs)
    if not pairs:
        raise ManifestError(f"{source}: no pages to evaluate")
    names = names or [f"page_{i:04d}" for i in range(len(pairs))]

    pages = [oneToOne(gt, det, threshold, name) for (gt, det), name in zip(pairs, names)]
    n = sum(p.n for p in pages)
    m = sum(p.m for p in pages)
    o2o = sum(p.o2o for p in pages)
    dr = o2o / n if n else 0.0
    ra = o2o / m if m else 0.0
    return EvalReport(threshold=threshold, pages=pages, n=n, m=m, o2o=o2o, dr=dr, ra=ra, fm=fMeasure(dr, ra), seconds=seconds)


def monotonicityViolations(counts):
    """Count vertically adjacent pixel pairs where the value decreases going down."""
    counts = np.asarray(counts)
    return int(np.count_nonzero(np.diff(counts, axis=-2) < 0))
