"""Experiment harnesses: opinion-score-ranked groups, the real-vs-
synthetic inversion check, and the raw-embedding MMD baseline.

Dataset manifests are CSV inputs (image id + opinion score); the
toolkit never downloads datasets. Group ordering is ascending opinion
score with a stable image-id tiebreak; callers can invert it, and every
report records which ordering was used.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .anchor import AnchorModel
from .errors import InputError
from .mmd import KernelSpec, median_heuristic_gamma, mmd2_unbiased
from .protocol import score_cell
from .rankstats import kendall_tau, permutation_pvalue, spearman_rho

CMMD_GAMMA = 0.005  # the prescribed CLIP-embedding MMD bandwidth


@dataclass(frozen=True)
class Group:
    rank: int
    image_ids: tuple[str, ...]
    mean_opinion_score: float


@dataclass(frozen=True)
class GroupedDataset:
    groups: tuple[Group, ...]
    group_size: int
    ordering_key: str  # "dmos" | "mos"
    ascending: bool = True


@dataclass(frozen=True)
class GroupExperimentResult:
    scores: tuple[float, ...]  # one GMMD^2 per group, by rank
    rho: float
    tau: float
    slope: float
    intercept: float
    p_value: float


@dataclass(frozen=True)
class InversionResult:
    score_synthetic: float
    score_real: float

    @property
    def ratio(self) -> float:
        if self.score_real == 0.0:
            return float("inf") if self.score_synthetic > 0 else float("nan")
        return self.score_synthetic / self.score_real

    @property
    def inverted(self) -> bool:
        return self.ratio < 1.0


def build_ranked_groups(
    scores: list[tuple[str, float]],
    group_size: int,
    ordering_key: str = "mos",
    ascending: bool = True,
) -> GroupedDataset:
    """Sort by opinion score (image-id tiebreak) and chunk sequentially.

    Group 0 holds the lowest scores when ascending. The entry count must
    divide evenly into groups.
    """
    if group_size < 1:
        raise InputError(f"group size must be >= 1, got {group_size}")
    if not scores or len(scores) % group_size != 0:
        raise InputError(
            f"{len(scores)} entries do not divide into groups of {group_size}"
        )
    ids = [s[0] for s in scores]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate image ids in score manifest")
    ordered = sorted(scores, key=lambda kv: (kv[1], kv[0]))
    if not ascending:
        ordered.reverse()
    groups = []
    for rank, start in enumerate(range(0, len(ordered), group_size)):
        chunk = ordered[start : start + group_size]
        groups.append(
            Group(
                rank=rank,
                image_ids=tuple(img_id for img_id, _ in chunk),
                mean_opinion_score=float(np.mean([v for _, v in chunk])),
            )
        )
    return GroupedDataset(
        groups=tuple(groups), group_size=group_size,
        ordering_key=ordering_key, ascending=ascending,
    )


def run_group_experiment(
    groups: GroupedDataset,
    anchor_model: AnchorModel,
    kernel: KernelSpec,
    feature_provider,
    image_loader,
    n_permutations: int = 10_000,
    permutation_seed: int = 0,
) -> GroupExperimentResult:
    """Score each group against the anchor and correlate with opinion score.

    image_loader maps an image id to an (H, W, 3) array; missing ids are
    reported per group. The regression line and the two-sided permutation
    p-value refer to score vs group mean opinion score.
    """
    scores = []
    for group in groups.groups:
        images, missing = [], []
        for img_id in group.image_ids:
            try:
                images.append(image_loader(img_id))
            except (InputError, FileNotFoundError, OSError):
                missing.append(img_id)
        if missing:
            raise InputError(f"group {group.rank}: missing images {missing}")
        vectors = feature_provider(images, list(group.image_ids))
        scores.append(score_cell(vectors, anchor_model, kernel))
    mos = [g.mean_opinion_score for g in groups.groups]
    rho = spearman_rho(mos, scores)
    tau = kendall_tau(mos, scores)
    slope, intercept = np.polyfit(mos, scores, 1)
    p = permutation_pvalue(mos, scores, n_permutations=n_permutations, seed=permutation_seed)
    return GroupExperimentResult(
        scores=tuple(scores), rho=rho, tau=tau,
        slope=float(slope), intercept=float(intercept), p_value=p,
    )


def run_inversion_experiment(
    anchor_model: AnchorModel,
    synthetic_images: list[np.ndarray],
    real_images: list[np.ndarray],
    kernel: KernelSpec,
    feature_provider,
) -> InversionResult:
    """Score a synthetic and a real evaluation set against the same anchor.

    A ratio below 1 means the metric called the synthetic set closer to
    the real anchor than the real set: an inversion.
    """
    if len(synthetic_images) < 2 or len(real_images) < 2:
        raise InputError("inversion experiment needs >= 2 images per evaluation set")
    synth_vectors = feature_provider(synthetic_images)
    real_vectors = feature_provider(real_images)
    return InversionResult(
        score_synthetic=score_cell(synth_vectors, anchor_model, kernel),
        score_real=score_cell(real_vectors, anchor_model, kernel),
    )


def inversion_gamma_sweep(
    anchor_model: AnchorModel,
    synthetic_images: list[np.ndarray],
    real_images: list[np.ndarray],
    gamma_factors: list[float],
    feature_provider,
) -> list[tuple[float, InversionResult]]:
    """Repeat the inversion check across multiples of the anchor's gamma_med."""
    synth_vectors = feature_provider(synthetic_images)
    real_vectors = feature_provider(real_images)
    out = []
    for factor in gamma_factors:
        kernel = KernelSpec.rbf(factor * anchor_model.gamma_med)
        out.append(
            (
                factor,
                InversionResult(
                    score_synthetic=score_cell(synth_vectors, anchor_model, kernel),
                    score_real=score_cell(real_vectors, anchor_model, kernel),
                ),
            )
        )
    return out


def embedding_mmd_baseline(
    anchor_embeddings: np.ndarray,
    eval_embeddings: np.ndarray,
    gamma: float | None = CMMD_GAMMA,
    median_heuristic_seed: int = 0,
) -> float:
    """MMD^2 on raw embedding vectors: no Gram step, no standardization.

    gamma=None switches to the median heuristic fitted on the anchor
    embeddings; the default is the prescribed CLIP-MMD constant.
    """
    anchor = np.asarray(anchor_embeddings, dtype=np.float64)
    if gamma is None:
        gamma = median_heuristic_gamma(anchor, seed=median_heuristic_seed)
    return mmd2_unbiased(anchor, np.asarray(eval_embeddings, dtype=np.float64),
                         KernelSpec.rbf(gamma)).mmd2


# --- manifest I/O ------------------------------------------------------------

def read_score_manifest(path: str | Path, score_column: str) -> list[tuple[str, float]]:
    """CSV with header (image_id, <score_column>[, ...]) -> (id, score) pairs."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"manifest not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.DictReader(row for row in fh if not row.startswith("#"))
        if reader.fieldnames is None or "image_id" not in reader.fieldnames:
            raise InputError(f"{path}: expected a CSV header with an image_id column")
        if score_column not in reader.fieldnames:
            raise InputError(f"{path}: no '{score_column}' column; found {reader.fieldnames}")
        out = []
        for i, row in enumerate(reader):
            try:
                out.append((row["image_id"], float(row[score_column])))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path} line {i + 2}: bad {score_column} value") from exc
    if not out:
        raise InputError(f"{path}: manifest is empty")
    return out
