"""Translate a model-error bound e* into a predictive-std flag threshold.

A record is a *positive* when its absolute error exceeds ``e_star`` and is
*flagged* when its predictive std exceeds ``epsilon``. The translator picks
the epsilon that maximizes flagging accuracy. Accuracy is piecewise constant
in epsilon with jumps at the observed std values, so midpoints of the sorted
distinct stds (plus one value below the smallest and one above the largest)
cover every attainable outcome. Ties go to higher recall, then smaller
epsilon.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import gp
from .errors import ValidationError
from .gp import Dataset, GpPosterior


@dataclass(frozen=True)
class ErrorRecords:
    """Column-oriented (mu, sigma, y) records."""

    mu: np.ndarray
    sigma: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), dtype=float).reshape(-1) for k in ("mu", "sigma", "y")]
        if not (arrs[0].shape == arrs[1].shape == arrs[2].shape):
            raise ValidationError("record arrays must have equal lengths")
        if arrs[0].size == 0:
            raise ValidationError("no error records")
        if not all(np.all(np.isfinite(a)) for a in arrs):
            raise ValidationError("error records must be finite")
        if np.any(arrs[1] < 0):
            raise ValidationError("sigma must be >= 0")
        for k, a in zip(("mu", "sigma", "y"), arrs):
            object.__setattr__(self, k, a)

    def __len__(self):
        return self.mu.shape[0]

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.y - self.mu)


@dataclass(frozen=True)
class TranslationResult:
    e_star: float
    epsilon: float
    accuracy: float
    precision: float
    recall: float
    tp: int
    fp: int
    tn: int
    fn: int
    no_positive_events: bool = False
    flag_objective: int = 0  # tp - fp among flagged records

    def to_json(self) -> str:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not math.isfinite(v):
                d[k] = None
        return json.dumps(d)


def collect_error_records(post: GpPosterior, history: Dataset) -> ErrorRecords:
    mean, var = gp.predict_batch(post, history.inputs)
    return ErrorRecords(mean, np.sqrt(var), history.targets)


def _result(e_star, epsilon, tp, fp, tn, fn) -> TranslationResult:
    n = tp + fp + tn + fn
    precision = tp / (tp + fp) if tp + fp > 0 else float("nan")
    no_pos = tp + fn == 0
    recall = 1.0 if no_pos else tp / (tp + fn)
    return TranslationResult(float(e_star), float(epsilon), (tp + tn) / n, precision, recall,
                             int(tp), int(fp), int(tn), int(fn), no_pos, int(tp - fp))


def flag_metrics(records: ErrorRecords, e_star: float, epsilon: float) -> TranslationResult:
    if not e_star > 0:
        raise ValidationError(f"e_star must be positive, got {e_star}")
    positive = records.abs_error > e_star
    flagged = records.sigma > epsilon
    tp = int(np.sum(positive & flagged))
    fp = int(np.sum(~positive & flagged))
    fn = int(np.sum(positive & ~flagged))
    tn = int(np.sum(~positive & ~flagged))
    return _result(e_star, epsilon, tp, fp, tn, fn)


def candidate_thresholds(sigma: np.ndarray) -> np.ndarray:
    s = np.unique(sigma)
    mids = 0.5 * (s[:-1] + s[1:])
    below = [s[0] / 2.0] if s[0] > 0 else []
    return np.concatenate([below, mids, [s[-1] + 1.0]])


def translate_threshold(records: ErrorRecords, e_star: float) -> TranslationResult:
    if not e_star > 0:
        raise ValidationError(f"e_star must be positive, got {e_star}")
    cands = candidate_thresholds(records.sigma)
    positive = records.abs_error > e_star
    order = np.argsort(records.sigma, kind="stable")
    s_sorted = records.sigma[order]
    pos_sorted = positive[order]
    # records with sigma <= eps are unflagged: count via searchsorted
    n_unflagged = np.searchsorted(s_sorted, cands, side="right")
    cum_pos = np.concatenate([[0], np.cumsum(pos_sorted)])
    total_pos = int(cum_pos[-1])
    n = len(records)
    fn = cum_pos[n_unflagged]
    tn = n_unflagged - fn
    tp = total_pos - fn
    fp = (n - n_unflagged) - tp
    correct = tp + tn
    # integer keys: max accuracy, then max recall (tp), then min epsilon
    best = np.lexsort((cands, -tp, -correct))[0]
    return _result(e_star, cands[best], int(tp[best]), int(fp[best]), int(tn[best]), int(fn[best]))


def sweep(records: ErrorRecords, e_stars=(0.5, 1.0, 1.5, 2.0, 2.5, 3.0)) -> list[TranslationResult]:
    return [translate_threshold(records, e) for e in e_stars]
