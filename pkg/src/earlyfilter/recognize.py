"""Single-frame place recognition and precision-recall evaluation.

Distances to every reference are mapped affinely onto [0.001, 0.999] (best
match 0.999) and log-transformed. A match's quality is the ratio of the
runner-up log score, taken outside a window around the best match, to the best
log score. Both logs are negative and the runner-up is the more negative, so
quality is >= 1 and grows with distinctiveness.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .descriptor import cosine_distance_matrix
from .fileio import atomic_write, write_rows

SCORE_LO = 0.001
SCORE_HI = 0.999
DEFAULT_WINDOW = 10
# distance spreads below this are rounding noise, not a ranking
DEGENERATE_SPREAD = 1e-12


class DegenerateQueryError(ValueError):
    """All reference distances are equal, so no match can be singled out."""


def _log_scores(d: np.ndarray) -> np.ndarray:
    dmin, dmax = d.min(), d.max()
    if dmax - dmin <= DEGENERATE_SPREAD:
        raise DegenerateQueryError("all reference distances are equal")
    s = SCORE_LO + (SCORE_HI - SCORE_LO) * (dmax - d) / (dmax - dmin)
    return np.log(s)


def score_vector(query_desc, ref_descs) -> np.ndarray:
    """Log of the normalised match score of ``query_desc`` against each reference."""
    ref_descs = np.asarray(ref_descs)
    if len(ref_descs) < 2:
        raise ValueError("need at least two references")
    d = cosine_distance_matrix(np.asarray(query_desc)[None], ref_descs)[0]
    return _log_scores(d)


def quality(scores, best: int, window_halfwidth: int = DEFAULT_WINDOW) -> float:
    """Runner-up log score outside ``|i - best| <= window_halfwidth`` over the best log score."""
    scores = np.asarray(scores, dtype=np.float64)
    idx = np.arange(len(scores))
    outside = np.abs(idx - best) > window_halfwidth
    if not outside.any():
        raise ValueError(f"window of half-width {window_halfwidth} around {best} covers all {len(scores)} references")
    runner_up = scores[outside].max()
    return float(runner_up / scores[best])


@dataclass(frozen=True)
class MatchReport:
    query: int
    best: int
    quality: float
    correct: bool
    degenerate: bool = False


@dataclass(frozen=True)
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray

    @property
    def max_f1(self) -> float:
        return float(self.f1.max()) if len(self.f1) else 0.0

    def rows(self):
        return zip(self.thresholds, self.precision, self.recall, self.f1)

    def write_csv(self, path) -> None:
        write_rows(path, [["threshold", "precision", "recall", "f1"]]
                   + [[repr(float(v)) for v in row] for row in self.rows()])


def f1_score(precision, recall):
    precision = np.asarray(precision, dtype=np.float64)
    recall = np.asarray(recall, dtype=np.float64)
    total = precision + recall
    with np.errstate(invalid="ignore", divide="ignore"):
        f1 = np.where(total > 0, 2 * precision * recall / total, 0.0)
    return f1


def pr_curve(reports: list[MatchReport]) -> PRCurve:
    """Sweep the acceptance threshold over every observed quality value (accept if q >= t)."""
    n = len(reports)
    usable = [r for r in reports if not r.degenerate]
    q = np.array([r.quality for r in usable], dtype=np.float64)
    ok = np.array([r.correct for r in usable], dtype=bool)
    thresholds = np.unique(q)
    order = np.argsort(-q, kind="stable")
    q_sorted, ok_sorted = q[order], ok[order]
    cum_ok = np.concatenate([[0], np.cumsum(ok_sorted)])
    # queries with quality >= t are a prefix of the descending order
    accepted = len(q) - np.searchsorted(np.sort(q), thresholds, side="left")
    correct = cum_ok[accepted]
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(accepted > 0, correct / np.maximum(accepted, 1), 1.0)
    recall = correct / n if n else np.zeros(len(thresholds))
    return PRCurve(thresholds, precision.astype(np.float64), np.asarray(recall, dtype=np.float64),
                   f1_score(precision, recall))


def match(query_descs, ref_descs, gt_tolerance: int, window_halfwidth: int = DEFAULT_WINDOW) -> list[MatchReport]:
    """Best reference and quality per query, against index-aligned ground truth."""
    query_descs = np.asarray(query_descs)
    ref_descs = np.asarray(ref_descs)
    if len(query_descs) != len(ref_descs):
        raise ValueError(f"traverse length mismatch: {len(query_descs)} queries vs {len(ref_descs)} references")
    dist = cosine_distance_matrix(query_descs, ref_descs)
    reports = []
    for i, d in enumerate(dist):
        try:
            s = _log_scores(d)
        except DegenerateQueryError:
            reports.append(MatchReport(i, -1, 1.0, False, degenerate=True))
            continue
        best = int(np.argmax(s))
        reports.append(MatchReport(i, best, quality(s, best, window_halfwidth), abs(best - i) <= gt_tolerance))
    return reports


def evaluate(query_descs, ref_descs, gt_tolerance: int,
             window_halfwidth: int = DEFAULT_WINDOW) -> tuple[list[MatchReport], PRCurve]:
    reports = match(query_descs, ref_descs, gt_tolerance, window_halfwidth)
    return reports, pr_curve(reports)


def write_matches_csv(reports: list[MatchReport], path) -> None:
    write_rows(path, [["query", "best", "quality", "correct", "degenerate"]]
               + [[r.query, r.best, repr(r.quality), int(r.correct), int(r.degenerate)] for r in reports])


def activation_heatmap(t) -> np.ndarray:
    """Count, per spatial cell ``(row, col)``, how many channels peak there.

    Ties go to the lowest row, then the lowest column.
    """
    t = np.asarray(t)
    c, h, w = t.shape
    peaks = np.argmax(t.reshape(c, h * w), axis=1)
    return np.bincount(peaks, minlength=h * w).reshape(h, w)


def write_pgm(grid, path) -> None:
    """Plain (P2) PGM, counts scaled to 0..255 by the grid maximum."""
    grid = np.asarray(grid)
    h, w = grid.shape
    top = grid.max()
    scaled = np.zeros_like(grid, dtype=np.int64) if top <= 0 else np.round(grid * 255.0 / top).astype(np.int64)
    lines = ["P2", f"{w} {h}", "255"] + [" ".join(str(v) for v in row) for row in scaled]
    atomic_write(path, "\n".join(lines) + "\n")


def write_grid_csv(grid, path) -> None:
    write_rows(path, np.asarray(grid).tolist())
