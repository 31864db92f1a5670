"""Multi-label evaluation metrics (higher is better for all four).

Samples or labels on which a metric is undefined are skipped; if nothing is
left the metric is NaN, which reports serialise as ``null``.
"""
import math

import numpy as np

from tacvi import kernels

METRICS = ("ap", "one_minus_hl", "one_minus_rl", "auc")


def _prep(scores, Y):
    S = np.ascontiguousarray(scores, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if S.shape != Y.shape or S.ndim != 2:
        raise ValueError(f"scores {S.shape} and labels {Y.shape} must be equal 2-D shapes")
    return S, Y


def _nanmean(vals):
    vals = vals[~np.isnan(vals)]
    return float(vals.mean()) if vals.size else math.nan


def average_precision(scores, Y):
    """Sample-wise AP; rank of label j is #{k : s_k >= s_j}."""
    return _nanmean(kernels.ap_rows(*_prep(scores, Y)))


def one_minus_hamming(scores, Y, threshold=0.5):
    S, Y = _prep(scores, Y)
    return 1.0 - float(np.mean((S >= threshold) != (Y > 0.5)))


def one_minus_ranking(scores, Y):
    return 1.0 - _nanmean(kernels.rank_loss_rows(*_prep(scores, Y)))


def auc_macro(scores, Y):
    return _nanmean(kernels.auc_cols(*_prep(scores, Y)))


def evaluate(scores, Y):
    S, Y = _prep(scores, Y)
    return {
        "ap": average_precision(S, Y),
        "one_minus_hl": one_minus_hamming(S, Y),
        "one_minus_rl": one_minus_ranking(S, Y),
        "auc": auc_macro(S, Y),
    }


def summarize(runs):
    """``[{metric: value}, ...]`` -> ``{metric: {mean, std, runs}}`` (population std)."""
    report = {}
    for key in METRICS:
        vals = [r[key] for r in runs]
        arr = np.array([v for v in vals if not math.isnan(v)])
        if arr.size:
            mu = float(arr.sum() / arr.size)
            sd = float(math.sqrt(((arr - mu) ** 2).sum() / arr.size))
        else:
            mu = sd = math.nan
        report[key] = {"mean": mu, "std": sd, "runs": list(vals)}
    return report
