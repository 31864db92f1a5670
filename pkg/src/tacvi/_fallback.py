"""Numpy implementations of the hot kernels (used when the extension is absent)."""
import numpy as np
from scipy.stats import rankdata

_CHUNK = 256


def masked_bce(P, Y, W, eps):
    n, c = P.shape
    inside = (P >= eps) & (P <= 1.0 - eps)
    p = np.clip(P, eps, 1.0 - eps)
    terms = (Y * np.log(p) + (1.0 - Y) * np.log1p(-p)) * W
    val = -terms.sum() / (n * c)
    grad = -(Y / p - (1.0 - Y) / (1.0 - p)) * W * inside / (n * c)
    return float(val), grad


def compression(P, Q, w):
    n, d = P.shape
    q2 = Q * Q
    norm = 1.0 / (2.0 * n * d)
    val = ((q2 - np.log(q2) + P * P - 1.0) * w[:, None]).sum() * norm
    gp = 2.0 * P * w[:, None] * norm
    gq = (2.0 * Q - 2.0 / Q) * w[:, None] * norm
    return float(val), gp, gq


def row_sq_error(A, B, w):
    diff = A - B
    val = ((diff * diff).sum(axis=1) * w).sum()
    ga = 2.0 * diff * w[:, None]
    return float(val), ga, -ga


def ap_rows(S, Y):
    """Per-row average precision; NaN for rows without a positive label."""
    n = S.shape[0]
    out = np.full(n, np.nan)
    pos = Y > 0.5
    for lo in range(0, n, _CHUNK):
        s = S[lo:lo + _CHUNK]
        y = pos[lo:lo + _CHUNK]
        ge = s[:, None, :] >= s[:, :, None]          # ge[i, j, k] = s_k >= s_j
        rank = ge.sum(axis=2)
        hits = (ge & y[:, None, :]).sum(axis=2)
        npos = y.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            prec = np.where(y, hits / rank, 0.0).sum(axis=1) / npos
        out[lo:lo + _CHUNK] = np.where(npos > 0, prec, np.nan)
    return out


def rank_loss_rows(S, Y):
    """Per-row fraction of misordered (pos, neg) pairs, ties 0.5; NaN if undefined."""
    n = S.shape[0]
    out = np.full(n, np.nan)
    pos = Y > 0.5
    for lo in range(0, n, _CHUNK):
        s = S[lo:lo + _CHUNK]
        y = pos[lo:lo + _CHUNK]
        lt = s[:, :, None] < s[:, None, :]           # s_j < s_k
        eq = s[:, :, None] == s[:, None, :]
        pairs = y[:, :, None] & ~y[:, None, :]
        bad = ((lt + 0.5 * eq) * pairs).sum(axis=(1, 2))
        npos = y.sum(axis=1)
        denom = npos * (y.shape[1] - npos)
        with np.errstate(invalid="ignore", divide="ignore"):
            out[lo:lo + _CHUNK] = np.where(denom > 0, bad / denom, np.nan)
    return out


def auc_cols(S, Y):
    """Per-column Mann-Whitney AUC with ties 0.5; NaN if a class is absent."""
    pos = Y > 0.5
    ranks = rankdata(S, axis=0)
    npos = pos.sum(axis=0)
    nneg = S.shape[0] - npos
    rsum = (ranks * pos).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        auc = (rsum - npos * (npos + 1) / 2.0) / (npos * nneg)
    return np.where((npos > 0) & (nneg > 0), auc, np.nan)
