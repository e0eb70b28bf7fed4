"""Spearman's rho and Kendall's tau-b monotonicity statistics.

Implemented in their definitional forms (Pearson of average ranks;
O(n^2) pair enumeration) rather than via scipy: the series scored here
are short, and the definitional forms match brute-force oracles
bit-for-bit, which the acceptance gate requires.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError, UndefinedCorrelationError


def average_ranks(xs) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    a = _check_series(xs, "xs")
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a))
    sorted_vals = a[order]
    i = 0
    while i < len(a):
        j = i
        while j + 1 < len(a) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1  # average of positions i..j, 1-based
        i = j + 1
    return ranks


def spearman_rho(xs, ys) -> float:
    """Pearson correlation of average ranks; in [-1, 1]."""
    rx = average_ranks(xs)
    ry = average_ranks(ys)
    _check_pair(rx, ry)
    dx = rx - rx.sum() / len(rx)
    dy = ry - ry.sum() / len(ry)
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("rank correlation undefined for a constant series")
    return float(dx @ dy) / math.sqrt(sxx * syy)


def kendall_tau(xs, ys) -> float:
    """Kendall's tau-b with tie correction; in [-1, 1]."""
    a = _check_series(xs, "xs")
    b = _check_series(ys, "ys")
    _check_pair(a, b)
    sx = np.sign(a[:, None] - a[None, :])
    sy = np.sign(b[:, None] - b[None, :])
    iu = np.triu_indices(len(a), k=1)
    sx, sy = sx[iu], sy[iu]
    concordant_minus_discordant = int(np.sum(sx * sy))
    n0 = len(sx)
    n1 = int(np.sum(sx == 0))
    n2 = int(np.sum(sy == 0))
    denom2 = (n0 - n1) * (n0 - n2)
    if denom2 == 0:
        raise UndefinedCorrelationError("tau-b undefined for a constant series")
    return concordant_minus_discordant / math.sqrt(denom2)


def permutation_pvalue(
    xs,
    ys,
    n_permutations: int = 10_000,
    seed: int = 0,
    statistic=spearman_rho,
) -> float:
    """Two-sided permutation p-value for a rank statistic (seeded)."""
    a = _check_series(xs, "xs")
    b = _check_series(ys, "ys")
    _check_pair(a, b)
    observed = abs(statistic(a, b))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_permutations):
        if abs(statistic(a, rng.permutation(b))) >= observed:
            hits += 1
    return (1 + hits) / (1 + n_permutations)


def _check_series(xs, name: str) -> np.ndarray:
    a = np.asarray(xs, dtype=np.float64)
    if a.ndim != 1:
        raise InputError(f"{name} must be 1-D, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise InputError(f"{name} contains non-finite values")
    return a


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if len(a) != len(b):
        raise InputError(f"series lengths differ: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise InputError("correlation needs at least 2 observations")
