"""Independent brute-force oracles used to freeze expected values.

Everything here is deliberately written against the library: scalar
Python loops, Fraction arithmetic, and direct transcription of the
defining formulas. Keep these implementations free of gmmd imports.
"""

from __future__ import annotations

import math
from fractions import Fraction


def gram_oracle(columns) -> list[list[float]]:
    """(1/n) * F F^T by scalar triple loop; columns is a list of n
    length-d feature vectors."""
    n = len(columns)
    d = len(columns[0])
    out = [[0.0] * d for _ in range(d)]
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for p in range(n):
                acc += columns[p][i] * columns[p][j]
            out[i][j] = acc / n
    return out


def rbf_oracle(x, y, gamma: float) -> float:
    sq = 0.0
    for a, b in zip(x, y):
        sq += (a - b) * (a - b)
    return math.exp(-gamma * sq)


def poly_oracle(x, y) -> float:
    d = len(x)
    dot = 0.0
    for a, b in zip(x, y):
        dot += a * b
    return (dot / d + 1.0) ** 3


def mmd2_unbiased_oracle(anchor, eval_, kind: str, gamma: float | None) -> float:
    """Direct transcription of the three-term unbiased estimator."""
    if kind == "rbf":
        k = lambda x, y: rbf_oracle(x, y, gamma)  # noqa: E731
    else:
        k = poly_oracle
    n, m = len(anchor), len(eval_)
    t1 = 0.0
    for i in range(n):
        for i2 in range(n):
            if i != i2:
                t1 += k(anchor[i], anchor[i2])
    t2 = 0.0
    for j in range(m):
        for j2 in range(m):
            if j != j2:
                t2 += k(eval_[j], eval_[j2])
    t3 = 0.0
    for i in range(n):
        for j in range(m):
            t3 += k(anchor[i], eval_[j])
    return t1 / (n * (n - 1)) + t2 / (m * (m - 1)) - 2.0 * t3 / (n * m)


def ranks_oracle(xs) -> list[Fraction]:
    """Average ranks by pair counting (no sorting)."""
    n = len(xs)
    out = []
    for i in range(n):
        smaller = sum(1 for v in xs if v < xs[i])
        equal = sum(1 for v in xs if v == xs[i])
        # positions smaller+1 .. smaller+equal share the rank
        out.append(Fraction(2 * smaller + equal + 1, 2))
    return out


def spearman_oracle(xs, ys) -> float:
    """Pearson of average ranks, exact sums, one final division."""
    rx = ranks_oracle(xs)
    ry = ranks_oracle(ys)
    n = len(rx)
    mx = sum(rx, Fraction(0)) / n
    my = sum(ry, Fraction(0)) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    return float(sxy) / math.sqrt(float(sxx * syy))


def kendall_oracle(xs, ys) -> float:
    """tau-b by explicit pair enumeration."""
    n = len(xs)
    concordant_minus_discordant = 0
    tie_x = 0
    tie_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = (xs[i] > xs[j]) - (xs[i] < xs[j])
            dy = (ys[i] > ys[j]) - (ys[i] < ys[j])
            concordant_minus_discordant += dx * dy
            tie_x += dx == 0
            tie_y += dy == 0
    n0 = n * (n - 1) // 2
    return concordant_minus_discordant / math.sqrt((n0 - tie_x) * (n0 - tie_y))


def spearman_no_ties_oracle(xs, ys) -> float:
    """1 - 6 sum(d^2) / (n(n^2-1)), valid only without ties."""
    rx = ranks_oracle(xs)
    ry = ranks_oracle(ys)
    d2 = sum((a - b) ** 2 for a, b in zip(rx, ry))
    n = len(xs)
    return float(1 - Fraction(6) * d2 / (n * (n * n - 1)))
