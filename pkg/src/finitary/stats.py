"""Small statistical helpers shared by the verifiers and tests."""

from __future__ import annotations

import math

import numpy as np
from scipy import stats


def z_value(confidence: float, two_sided: bool = True) -> float:
    a = 1.0 - confidence
    return float(stats.norm.ppf(1.0 - (a / 2 if two_sided else a)))


def pairwise_sum(x: np.ndarray) -> float:
    # numpy's add.reduce is pairwise for contiguous float arrays
    return float(np.add.reduce(np.ascontiguousarray(x, dtype=float).reshape(-1)))


def mean_ci(x, confidence: float = 0.95) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    m = pairwise_sum(x) / n
    if n < 2:
        return m, m, m
    se = float(np.std(x, ddof=1)) / math.sqrt(n)
    z = z_value(confidence)
    return m, m - z * se, m + z * se


def variance_ci(x, confidence: float = 0.95) -> tuple[float, float, float]:
    """Sample variance with a normal interval built from Var(s^2).

    Var(s^2) = (m4 - (n-3)/(n-1) s^4) / n keeps the 1/n term that survives
    when the fourth-moment term vanishes (two-point laws).
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    n = x.size
    if n < 2:
        raise ValueError("need at least two samples")
    c = x - pairwise_sum(x) / n
    v = pairwise_sum(c * c) / (n - 1)
    m4 = pairwise_sum(c**4) / n
    se = math.sqrt(max(m4 - (n - 3) / (n - 1) * v * v, 0.0) / n)
    z = z_value(confidence)
    return v, v - z * se, v + z * se


def wilson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float, float]:
    if n == 0:
        return float("nan"), 0.0, 1.0
    z = z_value(confidence)
    p = k / n
    den = 1 + z * z / n
    mid = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return p, max(0.0, mid - half), min(1.0, mid + half)


def clopper_pearson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float, float]:
    a = 1 - confidence
    lo = 0.0 if k == 0 else float(stats.beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - a / 2, k + 1, n - k))
    return k / n, lo, hi


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.abs(p - q).sum())


def empirical_law(values, k: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64).reshape(-1)
    return np.bincount(v, minlength=k)[:k] / v.size


def chi2_gof(counts, probs, min_expected: float = 5.0) -> tuple[float, float, int]:
    """Chi-square goodness of fit; trailing cells are pooled until expected >= min_expected.

    Returns (statistic, p-value, degrees of freedom).
    """
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    n = counts.sum()
    exp = probs * n
    obs_c, exp_c = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(counts, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            obs_c.append(acc_o)
            exp_c.append(acc_e)
            acc_o = acc_e = 0.0
    # leftover mass, including anything beyond the listed cells
    tail_e = n - sum(exp_c)
    tail_o = n - sum(obs_c)
    if tail_e > 1e-9 or tail_o > 0:
        if tail_e < min_expected and exp_c:
            exp_c[-1] += tail_e
            obs_c[-1] += tail_o
        else:
            exp_c.append(tail_e)
            obs_c.append(tail_o)
    obs_c = np.asarray(obs_c)
    exp_c = np.asarray(exp_c)
    stat = float(((obs_c - exp_c) ** 2 / exp_c).sum())
    dof = len(obs_c) - 1
    return stat, float(stats.chi2.sf(stat, dof)), dof


def stationary_distribution(P) -> np.ndarray:
    """Solve pi P = pi, sum(pi) = 1 by least squares on the stacked system."""
    P = np.asarray(P, dtype=float)
    k = P.shape[0]
    A = np.vstack([P.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def linear_fit(x, y, w=None, confidence: float = 0.95):
    """Weighted least squares y ~ a + b x; returns (slope, intercept, slope_lo, slope_hi)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=float)
    if x.size < 3:
        raise ValueError("need at least three points for a fit with an interval")
    W = w.sum()
    xm = (w * x).sum() / W
    ym = (w * y).sum() / W
    sxx = (w * (x - xm) ** 2).sum()
    b = (w * (x - xm) * (y - ym)).sum() / sxx
    a = ym - b * xm
    resid = y - a - b * x
    dof = x.size - 2
    s2 = (w * resid**2).sum() / dof
    se = math.sqrt(s2 / sxx)
    tq = float(stats.t.ppf(0.5 + confidence / 2, dof))
    return b, a, b - tq * se, b + tq * se
