"""Gram statistics of activation tensors.

Each image is summarized by the channel-by-channel second-moment (Gram)
matrix of its features, averaged over spatial positions or tokens, then
flattened to the upper triangle and standardized against an anchor set.
The Gram vector length depends only on the channel count, never on the
spatial resolution or token count, so images of different sizes land in
one shared embedding space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import FitError, InputError


class Layout(Enum):
    CNN = "cnn"
    TOKENS = "tokens"


@dataclass(frozen=True)
class ActivationTensor:
    """Per-image intermediate features.

    CNN layout stores channel maps with shape (d, H, W); token layout
    stores token rows with shape (N, d). In both cases d is the channel
    or embedding dimension.
    """

    layout: Layout
    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != (3 if self.layout is Layout.CNN else 2):
            raise InputError(
                f"{self.layout.value} activations need "
                f"{'(d, H, W)' if self.layout is Layout.CNN else '(N, d)'} values, got shape {v.shape}"
            )
        if min(v.shape) < 1:
            raise InputError(f"all activation dimensions must be >= 1, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise InputError("activation values must be finite")

    @classmethod
    def cnn(cls, values) -> "ActivationTensor":
        return cls(Layout.CNN, np.asarray(values))

    @classmethod
    def tokens(cls, values) -> "ActivationTensor":
        return cls(Layout.TOKENS, np.asarray(values))

    @property
    def channels(self) -> int:
        """The channel/embedding dimension d."""
        return self.values.shape[0] if self.layout is Layout.CNN else self.values.shape[1]


@dataclass(frozen=True)
class GramMatrix:
    """Symmetric d x d second-moment matrix of one image's features."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise InputError(f"Gram matrix must be square, got shape {v.shape}")
        if not np.array_equal(v, v.T):
            raise InputError("Gram matrix must be exactly symmetric")

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class GramVector:
    """Row-major upper triangle (diagonal included) of a Gram matrix.

    Length is d(d+1)/2 where d is the source channel count.
    """

    values: np.ndarray
    source_dim: int

    def __post_init__(self):
        m = self.source_dim * (self.source_dim + 1) // 2
        if self.values.ndim != 1 or self.values.shape[0] != m:
            raise InputError(
                f"Gram vector for d={self.source_dim} must have length {m}, got {self.values.shape}"
            )

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Standardizer:
    """Per-component affine normalizer fitted on the anchor set only."""

    mean: np.ndarray
    std: np.ndarray
    epsilon_floor: float = 1e-8

    def __post_init__(self):
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise InputError("standardizer mean/std must be 1-D and the same length")
        if np.any(self.std < self.epsilon_floor):
            raise InputError("standardizer std components must be floored to epsilon_floor")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def _pair_sums(rows: np.ndarray) -> np.ndarray:
    # Correctly-rounded per-entry sums (math.fsum) make the result exactly
    # invariant to any permutation of positions; plain dot products are not.
    d, _ = rows.shape
    out = np.empty((d, d))
    for i in range(d):
        ri = rows[i]
        for j in range(i, d):
            s = math.fsum(ri * rows[j])
            out[i, j] = s
            out[j, i] = s
    return out


def gram_from_cnn(act: ActivationTensor) -> GramMatrix:
    """Average outer product of per-position feature columns, (1/(H*W)) F F^T."""
    if act.layout is not Layout.CNN:
        raise InputError("gram_from_cnn requires CNN-layout activations")
    d, h, w = act.values.shape
    flat = act.values.reshape(d, h * w).astype(np.float64)
    return GramMatrix(_pair_sums(flat) / (h * w))


def gram_from_tokens(act: ActivationTensor) -> GramMatrix:
    """Average outer product of token columns, (1/N) P P^T.

    Special tokens (CLS, registers) must already be removed; every row of
    the input counts as a patch token.
    """
    if act.layout is not Layout.TOKENS:
        raise InputError("gram_from_tokens requires token-layout activations")
    n, d = act.values.shape
    if n == 0:
        raise InputError("token activations need at least one token")
    cols = act.values.T.astype(np.float64)
    return GramMatrix(_pair_sums(cols) / n)


def gram_matrix(act: ActivationTensor) -> GramMatrix:
    """Dispatch on layout."""
    return gram_from_cnn(act) if act.layout is Layout.CNN else gram_from_tokens(act)


def vectorize_upper_tri(g: GramMatrix) -> GramVector:
    """Flatten the upper triangle row-major: entries (i, j) with j >= i."""
    d = g.dim
    iu = np.triu_indices(d)
    return GramVector(values=g.values[iu].copy(), source_dim=d)


def gram_vector(act: ActivationTensor) -> GramVector:
    """Full per-image pipeline: Gram matrix then upper-triangle vector."""
    return vectorize_upper_tri(gram_matrix(act))


def symmetric_from_upper_tri(v: GramVector) -> GramMatrix:
    """Inverse of vectorize_upper_tri on symmetric matrices."""
    d = v.source_dim
    out = np.zeros((d, d))
    iu = np.triu_indices(d)
    out[iu] = v.values
    out.T[iu] = v.values
    return GramMatrix(out)


def fit_standardizer(anchor_vectors: list[GramVector] | np.ndarray, epsilon_floor: float = 1e-8) -> Standardizer:
    """Fit per-component mean and population std from anchor vectors.

    Components whose std falls below epsilon_floor are floored to it so
    constant components stay divisible. Fitting from fewer than two
    vectors is refused.
    """
    mat = _as_matrix(anchor_vectors)
    if mat.shape[0] < 2:
        raise FitError(f"standardizer needs at least 2 anchor vectors, got {mat.shape[0]}")
    mean = mat.mean(axis=0)
    std = mat.std(axis=0)  # population std: anchor defines the distribution
    std = np.maximum(std, epsilon_floor)
    return Standardizer(mean=mean, std=std, epsilon_floor=epsilon_floor)


def apply_standardizer(s: Standardizer, v: GramVector | np.ndarray) -> np.ndarray:
    """Componentwise (v - mean) / std."""
    vals = v.values if isinstance(v, GramVector) else np.asarray(v, dtype=np.float64)
    if vals.shape[-1] != s.dim:
        raise InputError(f"vector dim {vals.shape[-1]} does not match standardizer dim {s.dim}")
    return (vals - s.mean) / s.std


def _as_matrix(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        if vectors.ndim != 2:
            raise InputError(f"expected a 2-D vector matrix, got shape {vectors.shape}")
        return vectors.astype(np.float64)
    dims = {len(v) for v in vectors}
    if len(dims) > 1:
        raise InputError(f"anchor vectors have mixed lengths: {sorted(dims)}")
    return np.stack([v.values for v in vectors]).astype(np.float64)
