"""Meta-metric protocol: score controlled degradations, check that the
scores rise monotonically with severity, and grid-search metric
configurations by average rank correlation.

A configuration is (backbone, layer, kernel, gamma policy, anchor
mode). For each degradation type t and level s the set of degraded
references forms an evaluation distribution whose distance to the
anchor is d_{t,s}; a well-behaved metric gives d_{t,1} < ... < d_{t,10},
quantified per type by Spearman's rho and Kendall's tau and averaged
over types.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .anchor import AnchorModel, fit_anchor
from .degradations import LEVELS, TYPE_IDS, build_degradation_matrix
from .errors import GmmdError, InputError, UndefinedCorrelationError
from .mmd import KernelKind, KernelSpec, mmd2_unbiased
from .rankstats import kendall_tau, spearman_rho

logger = logging.getLogger(__name__)

# the published search space: gamma_med and nine multiples of it
PAPER_GAMMA_FACTORS = (0.01, 0.03, 0.1, 0.3, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0)
# backbone families with their exported layer counts
PAPER_BACKBONE_LAYERS = (
    ("sd-vae", 17),
    ("dc-ae", 16),
    ("dinov2", 14),
    ("vgg19", 18),
    ("lpips-vgg", 13),
)

ANCHOR_MODES = ("reference", "independent")


@dataclass(frozen=True)
class GammaPolicy:
    """RBF bandwidth policy: a multiple of gamma_med or an absolute value."""

    kind: str  # "median_multiple" | "absolute"
    value: float

    def __post_init__(self):
        if self.kind not in ("median_multiple", "absolute"):
            raise InputError(f"unknown gamma policy '{self.kind}'")
        if not np.isfinite(self.value) or self.value <= 0:
            raise InputError(f"gamma policy value must be finite and > 0, got {self.value}")

    @classmethod
    def median_multiple(cls, factor: float) -> "GammaPolicy":
        return cls("median_multiple", float(factor))

    @classmethod
    def absolute(cls, gamma: float) -> "GammaPolicy":
        return cls("absolute", float(gamma))

    def resolve(self, gamma_med: float | None) -> float:
        if self.kind == "absolute":
            return self.value
        if gamma_med is None:
            raise InputError("median_multiple policy needs a fitted gamma_med")
        return self.value * gamma_med

    def label(self) -> str:
        return f"{self.value:g}x" if self.kind == "median_multiple" else f"abs:{self.value:g}"


@dataclass(frozen=True)
class MetricConfig:
    backbone_id: str
    layer_index: int
    kernel: KernelKind = KernelKind.RBF
    gamma_policy: GammaPolicy | None = field(default_factory=lambda: GammaPolicy.median_multiple(1.0))
    anchor_mode: str = "reference"

    def __post_init__(self):
        if self.anchor_mode not in ANCHOR_MODES:
            raise InputError(f"anchor_mode must be one of {ANCHOR_MODES}, got '{self.anchor_mode}'")
        if self.kernel is KernelKind.RBF and self.gamma_policy is None:
            raise InputError("RBF configurations need a gamma policy")

    def sort_key(self):
        gp = self.gamma_policy
        return (self.backbone_id, self.layer_index, gp.kind if gp else "", gp.value if gp else 0.0)


@dataclass(frozen=True)
class TypeScores:
    type_id: int
    scores: tuple[float, ...]  # d_{t,s} by level, ascending
    rho: float | None
    tau: float | None


@dataclass(frozen=True)
class MetaResult:
    config: MetricConfig
    gamma_med: float | None
    gamma_used: float | None
    per_type: dict[int, TypeScores]
    avg_rho: float
    avg_tau: float
    failed_types: tuple[int, ...] = ()


def score_cell(eval_vectors: np.ndarray, anchor_model: AnchorModel, kernel: KernelSpec) -> float:
    """GMMD^2 of one evaluation set against the anchor.

    Eval vectors are standardized with the anchor's standardizer here, so
    callers pass raw Gram vectors.
    """
    standardized = anchor_model.standardize(np.asarray(eval_vectors, dtype=np.float64))
    return mmd2_unbiased(anchor_model.anchor_vectors, standardized, kernel).mmd2


def _kernel_for(config: MetricConfig, gamma_med: float | None) -> tuple[KernelSpec, float | None]:
    if config.kernel is KernelKind.POLYNOMIAL:
        return KernelSpec.polynomial(), None
    gamma = config.gamma_policy.resolve(gamma_med)
    return KernelSpec.rbf(gamma), gamma


def _check_anchor_mode(config: MetricConfig, ref_ids, anchor_ids) -> None:
    if ref_ids is None or anchor_ids is None:
        return
    overlap = set(ref_ids) & set(anchor_ids)
    if config.anchor_mode == "independent" and overlap:
        raise InputError(
            f"independent anchor mode requires disjoint image ids; {len(overlap)} shared"
        )
    if config.anchor_mode == "reference" and set(ref_ids) != set(anchor_ids):
        raise InputError("reference anchor mode requires anchor ids == reference ids")


def _correlate(levels, scores) -> tuple[float | None, float | None]:
    try:
        return spearman_rho(levels, scores), kendall_tau(levels, scores)
    except UndefinedCorrelationError:
        return None, None


def evaluate_config_from_vectors(
    config: MetricConfig,
    anchor_fit: tuple,
    cell_vectors: dict[tuple[int, int], np.ndarray],
    type_ids,
    levels,
) -> MetaResult:
    """Score every cell and correlate against severity, from cached vectors."""
    standardizer, standardized_anchor, gamma_med = anchor_fit
    kernel, gamma_used = _kernel_for(config, gamma_med)
    anchor_model = AnchorModel(
        backbone_id=config.backbone_id,
        layer_index=config.layer_index,
        standardizer=standardizer,
        gamma_med=gamma_med,
        anchor_vectors=standardized_anchor,
        provenance={},
    )
    per_type: dict[int, TypeScores] = {}
    failed: list[int] = []
    for t in type_ids:
        scores = tuple(score_cell(cell_vectors[(t, s)], anchor_model, kernel) for s in levels)
        rho, tau = _correlate(list(levels), list(scores))
        if rho is None:
            warnings.warn(
                f"type {t}: correlation undefined (constant scores); excluded from averages",
                stacklevel=2,
            )
            failed.append(t)
        per_type[t] = TypeScores(type_id=t, scores=scores, rho=rho, tau=tau)
    evaluated = [ts for ts in per_type.values() if ts.rho is not None]
    if not evaluated:
        raise GmmdError("every degradation type produced undefined correlations")
    return MetaResult(
        config=config,
        gamma_med=gamma_med,
        gamma_used=gamma_used,
        per_type=per_type,
        avg_rho=float(np.mean([ts.rho for ts in evaluated])),
        avg_tau=float(np.mean([ts.tau for ts in evaluated])),
        failed_types=tuple(failed),
    )


def run_meta_protocol(
    refs: list[np.ndarray],
    anchor_images: list[np.ndarray] | None,
    config: MetricConfig,
    feature_provider,
    seed: int = 0,
    type_ids=TYPE_IDS,
    levels=LEVELS,
    ref_ids: list[str] | None = None,
    anchor_ids: list[str] | None = None,
    epsilon_floor: float = 1e-8,
    threads: int = 1,
) -> MetaResult:
    """Degrade the references, score every (type, level) cell, correlate.

    In reference anchor mode the clean references themselves form the
    anchor; in independent mode a disjoint anchor set must be supplied.
    """
    if anchor_images is None:
        if config.anchor_mode != "reference":
            raise InputError("independent anchor mode needs an explicit anchor set")
        anchor_images = refs
        anchor_ids = ref_ids
    _check_anchor_mode(config, ref_ids, anchor_ids)

    matrix = build_degradation_matrix(
        refs, seed=seed, type_ids=tuple(type_ids), levels=tuple(levels), threads=threads
    )
    anchor_fit = fit_anchor(feature_provider(anchor_images, anchor_ids), epsilon_floor=epsilon_floor, seed=seed)
    cell_vectors = {}
    for (t, s), images in matrix.items():
        try:
            cell_vectors[(t, s)] = feature_provider(images)
        except Exception as exc:
            raise type(exc)(f"feature extraction failed at cell (type={t}, level={s}): {exc}") from exc
    return evaluate_config_from_vectors(config, anchor_fit, cell_vectors, type_ids, levels)


@dataclass(frozen=True)
class GridFailure:
    config: MetricConfig
    error: str


def grid_search(
    backbones: list[tuple[str, int]],
    gamma_factors: list[float],
    refs: list[np.ndarray],
    anchor_images: list[np.ndarray] | None,
    provider_factory,
    seed: int = 0,
    anchor_mode: str = "reference",
    type_ids=TYPE_IDS,
    levels=LEVELS,
    ref_ids=None,
    anchor_ids=None,
    epsilon_floor: float = 1e-8,
    threads: int = 1,
) -> tuple[list[MetaResult], list[GridFailure]]:
    """Evaluate (backbone, layer, gamma factor) configurations and rank them.

    Gram vectors are computed once per (backbone, layer) and shared by all
    gamma factors; gamma_med is fitted per (backbone, layer, anchor mode).
    Ranking is by avg rho, then avg tau, then config key, descending on the
    correlations; failed configurations are reported separately.
    """
    if anchor_images is None:
        if anchor_mode != "reference":
            raise InputError("independent anchor mode needs an explicit anchor set")
        anchor_images = refs
        anchor_ids = ref_ids

    matrix = build_degradation_matrix(
        refs, seed=seed, type_ids=tuple(type_ids), levels=tuple(levels), threads=threads
    )
    results: list[MetaResult] = []
    failures: list[GridFailure] = []
    for backbone_id, layer_count in backbones:
        for layer_index in range(layer_count):
            try:
                provider = provider_factory(backbone_id, layer_index)
                anchor_fit = fit_anchor(
                    provider(anchor_images, anchor_ids), epsilon_floor=epsilon_floor, seed=seed
                )
                cell_vectors = {
                    cell: provider(images) for cell, images in matrix.items()
                }
            except GmmdError as exc:
                msg = f"feature/anchor stage failed: {exc}"
                logger.warning("grid: %s layer %d: %s", backbone_id, layer_index, msg)
                for factor in gamma_factors:
                    failures.append(GridFailure(_grid_config(backbone_id, layer_index, factor, anchor_mode), msg))
                continue
            for factor in gamma_factors:
                config = _grid_config(backbone_id, layer_index, factor, anchor_mode)
                try:
                    results.append(
                        evaluate_config_from_vectors(config, anchor_fit, cell_vectors, type_ids, levels)
                    )
                except GmmdError as exc:
                    logger.warning("grid: config %s failed: %s", config, exc)
                    failures.append(GridFailure(config, str(exc)))
    ranked = sorted(results, key=lambda r: (-r.avg_rho, -r.avg_tau) + r.config.sort_key())
    return ranked, failures


def _grid_config(backbone_id: str, layer_index: int, factor: float, anchor_mode: str) -> MetricConfig:
    return MetricConfig(
        backbone_id=backbone_id,
        layer_index=layer_index,
        kernel=KernelKind.RBF,
        gamma_policy=GammaPolicy.median_multiple(factor),
        anchor_mode=anchor_mode,
    )


def top_k_table(results: list[MetaResult], k: int = 20) -> list[dict]:
    """Rank / backbone / layer / gamma factor / rho / tau rows."""
    rows = []
    for rank, r in enumerate(results[:k], start=1):
        rows.append(
            {
                "rank": rank,
                "backbone": r.config.backbone_id,
                "layer": r.config.layer_index,
                "gamma_factor": r.config.gamma_policy.label() if r.config.gamma_policy else "",
                "avg_rho": r.avg_rho,
                "avg_tau": r.avg_tau,
            }
        )
    return rows
