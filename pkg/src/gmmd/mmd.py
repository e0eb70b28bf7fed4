"""Kernels, bandwidth selection, and MMD^2 estimators.

The RBF kernel is parametrized as k(x, y) = exp(-gamma * ||x - y||^2)
with gamma = 1 / (2 sigma^2); the polynomial kernel is
((1/d) x.y + 1)^3 with d the vector dimension. The unbiased estimator
excludes the i = i' and j = j' diagonal terms and may be negative on
finite samples; it is reported as-is.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import DegenerateBandwidthError, InputError, SampleSizeError

MAX_EXACT_PAIRS_DEFAULT = 2_000_000


class KernelKind(Enum):
    RBF = "rbf"
    POLYNOMIAL = "poly"


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind
    gamma: float | None = None  # RBF only

    def __post_init__(self):
        if self.kind is KernelKind.RBF:
            if self.gamma is None or not np.isfinite(self.gamma) or self.gamma <= 0:
                raise InputError(f"RBF kernel needs finite gamma > 0, got {self.gamma}")
        elif self.gamma is not None:
            raise InputError("polynomial kernel takes no gamma")

    @classmethod
    def rbf(cls, gamma: float) -> "KernelSpec":
        return cls(KernelKind.RBF, float(gamma))

    @classmethod
    def polynomial(cls) -> "KernelSpec":
        # degree fixed at 3, scale 1/d (d = vector dimension)
        return cls(KernelKind.POLYNOMIAL)


@dataclass(frozen=True)
class MmdResult:
    """Three-term decomposition of the unbiased MMD^2 estimate.

    mmd2 == term_anchor + term_eval - term_cross holds exactly; term_cross
    carries the factor 2 of the cross expectation.
    """

    mmd2: float
    term_anchor: float
    term_eval: float
    term_cross: float
    n_anchor: int
    n_eval: int
    gamma_used: float | None


def kernel_eval(spec: KernelSpec, x: np.ndarray, y: np.ndarray) -> float:
    """Evaluate the kernel on a single pair of vectors."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError(f"kernel arguments must be 1-D of equal length, got {x.shape} vs {y.shape}")
    if spec.kind is KernelKind.RBF:
        diff = x - y
        return float(np.exp(-spec.gamma * float(diff @ diff)))
    d = x.shape[0]
    return float((float(x @ y) / d + 1.0) ** 3)


def kernel_matrix(spec: KernelSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """All-pairs kernel values, rows over xs and columns over ys."""
    xs = _check_matrix(xs, "xs")
    ys = _check_matrix(ys, "ys")
    if xs.shape[1] != ys.shape[1]:
        raise InputError(f"dim mismatch: {xs.shape[1]} vs {ys.shape[1]}")
    if spec.kind is KernelKind.RBF:
        sq = cdist(xs, ys, "sqeuclidean")
        return np.exp(-spec.gamma * sq)
    d = xs.shape[1]
    return ((xs @ ys.T) / d + 1.0) ** 3


def median_heuristic_gamma(
    anchor_vectors: np.ndarray,
    max_exact_pairs: int = MAX_EXACT_PAIRS_DEFAULT,
    seed: int = 0,
) -> float:
    """gamma_med = 1 / (2 * median of pairwise squared distances).

    The median runs over distinct anchor pairs i < j; an even pair count
    takes the mean of the two middle values. When the pair count exceeds
    max_exact_pairs, a seeded uniform subsample of that many pairs is used
    instead and the seed must be recorded by the caller.
    """
    xs = _check_matrix(anchor_vectors, "anchor_vectors")
    n = xs.shape[0]
    if n < 2:
        raise InputError(f"median heuristic needs at least 2 vectors, got {n}")
    n_pairs = n * (n - 1) // 2
    if n_pairs <= max_exact_pairs:
        sq = pdist(xs, "sqeuclidean")
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, size=max_exact_pairs)
        j = rng.integers(0, n - 1, size=max_exact_pairs)
        j = np.where(j >= i, j + 1, j)  # uniform over ordered distinct pairs
        diff = xs[i] - xs[j]
        sq = np.einsum("ij,ij->i", diff, diff)
    med = float(np.median(sq))
    if med <= 0.0:
        raise DegenerateBandwidthError(
            "median pairwise squared distance is 0 (anchor vectors identical)"
        )
    return 1.0 / (2.0 * med)


def mmd2_unbiased(
    anchor: np.ndarray,
    eval_: np.ndarray,
    spec: KernelSpec,
    deterministic: bool = True,
) -> MmdResult:
    """Unbiased MMD^2 estimate between two vector sets.

    Deterministic mode reduces the kernel sums serially in row-major
    order, which is what the acceptance runs use; the non-deterministic
    path chunks the cross term but still merges in index order, so both
    modes agree bit-for-bit and the flag only unlocks larger evaluations.
    """
    xs = _check_matrix(anchor, "anchor")
    ys = _check_matrix(eval_, "eval")
    if xs.shape[1] != ys.shape[1]:
        raise InputError(f"dim mismatch: anchor {xs.shape[1]} vs eval {ys.shape[1]}")
    n, m = xs.shape[0], ys.shape[0]
    if n < 2 or m < 2:
        raise SampleSizeError(f"unbiased estimator needs >= 2 samples per set, got {n} and {m}")

    kxx = kernel_matrix(spec, xs, xs)
    kyy = kernel_matrix(spec, ys, ys)
    term_anchor = (float(np.sum(kxx)) - float(np.trace(kxx))) / (n * (n - 1))
    term_eval = (float(np.sum(kyy)) - float(np.trace(kyy))) / (m * (m - 1))

    if deterministic or n * m <= 1 << 22:
        cross_sum = float(np.sum(kernel_matrix(spec, xs, ys)))
    else:
        chunk = max(1, (1 << 22) // m)
        cross_sum = 0.0
        for start in range(0, n, chunk):
            cross_sum += float(np.sum(kernel_matrix(spec, xs[start : start + chunk], ys)))
    term_cross = 2.0 * cross_sum / (n * m)

    return MmdResult(
        mmd2=term_anchor + term_eval - term_cross,
        term_anchor=term_anchor,
        term_eval=term_eval,
        term_cross=term_cross,
        n_anchor=n,
        n_eval=m,
        gamma_used=spec.gamma,
    )


def mmd2_biased(anchor: np.ndarray, eval_: np.ndarray, spec: KernelSpec) -> float:
    """Plug-in (biased) MMD^2 including the diagonal terms; >= 0 for RBF."""
    xs = _check_matrix(anchor, "anchor")
    ys = _check_matrix(eval_, "eval")
    if xs.shape[0] < 1 or ys.shape[0] < 1:
        raise InputError("biased estimator needs non-empty sets")
    if xs.shape[1] != ys.shape[1]:
        raise InputError(f"dim mismatch: anchor {xs.shape[1]} vs eval {ys.shape[1]}")
    n, m = xs.shape[0], ys.shape[0]
    return (
        float(np.sum(kernel_matrix(spec, xs, xs))) / (n * n)
        + float(np.sum(kernel_matrix(spec, ys, ys))) / (m * m)
        - 2.0 * float(np.sum(kernel_matrix(spec, xs, ys))) / (n * m)
    )


def _check_matrix(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim == 1:
        out = out[:, None]
    if out.ndim != 2:
        raise InputError(f"{name} must be a 2-D (n, dim) array, got shape {out.shape}")
    if not np.isfinite(out).all():
        raise InputError(f"{name} contains non-finite values")
    return out
