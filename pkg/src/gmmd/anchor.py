"""Anchor models: fitted standardizer, median-heuristic bandwidth, and
the standardized anchor Gram vectors, persisted as a single .gmmd file.

The file is a zip holding a JSON header (version, gamma_med, provenance)
and NPY arrays (mean, std, standardized anchor vectors). Arrays are
stored in float64, so a round trip is bit-exact, and recomputing the
median heuristic on the stored vectors reproduces gamma_med exactly.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import InputError
from .gram import Standardizer, apply_standardizer, fit_standardizer
from .mmd import MAX_EXACT_PAIRS_DEFAULT, median_heuristic_gamma

_FORMAT_VERSION = 1
# fixed zip timestamp keeps anchor files byte-identical across runs
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class AnchorModel:
    backbone_id: str
    layer_index: int
    standardizer: Standardizer
    gamma_med: float
    anchor_vectors: np.ndarray  # (N_A, m), already standardized
    provenance: dict

    @property
    def dim(self) -> int:
        return self.anchor_vectors.shape[1]

    def standardize(self, vectors: np.ndarray) -> np.ndarray:
        return apply_standardizer(self.standardizer, np.asarray(vectors, dtype=np.float64))


def fit_anchor(
    raw_vectors: np.ndarray,
    epsilon_floor: float = 1e-8,
    max_exact_pairs: int = MAX_EXACT_PAIRS_DEFAULT,
    seed: int = 0,
) -> tuple[Standardizer, np.ndarray, float]:
    """Standardizer + standardized vectors + gamma_med from raw anchor vectors."""
    standardizer = fit_standardizer(np.asarray(raw_vectors, dtype=np.float64), epsilon_floor)
    standardized = apply_standardizer(standardizer, np.asarray(raw_vectors, dtype=np.float64))
    gamma_med = median_heuristic_gamma(standardized, max_exact_pairs=max_exact_pairs, seed=seed)
    return standardizer, standardized, gamma_med


def build_anchor_model(
    spec,
    layer_index: int,
    anchor_images: list[np.ndarray],
    image_ids: list[str] | None = None,
    epsilon_floor: float = 1e-8,
    max_exact_pairs: int = MAX_EXACT_PAIRS_DEFAULT,
    seed: int = 0,
) -> AnchorModel:
    """Extract -> Gram -> vectorize -> standardize -> gamma_med, with provenance."""
    from .backbones import compute_gram_vectors  # local import to avoid cycle

    if len(anchor_images) < 2:
        raise InputError(f"anchor needs at least 2 images, got {len(anchor_images)}")
    ids = image_ids or [f"anchor[{i}]" for i in range(len(anchor_images))]
    raw = compute_gram_vectors(spec, layer_index, anchor_images, ids)
    standardizer, standardized, gamma_med = fit_anchor(
        raw, epsilon_floor=epsilon_floor, max_exact_pairs=max_exact_pairs, seed=seed
    )
    return AnchorModel(
        backbone_id=spec.backbone_id,
        layer_index=layer_index,
        standardizer=standardizer,
        gamma_med=gamma_med,
        anchor_vectors=standardized,
        provenance={
            "image_ids": list(ids),
            "seed": seed,
            "preprocessing_hash": spec.preprocessing.hash(),
            "model_file": str(spec.model_file) if spec.model_file else None,
            "epsilon_floor": epsilon_floor,
            "max_exact_pairs": max_exact_pairs,
            "toolkit_version": __version__,
        },
    )


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def save_anchor_model(model: AnchorModel, path: str | Path) -> None:
    header = {
        "format_version": _FORMAT_VERSION,
        "toolkit_version": __version__,
        "backbone_id": model.backbone_id,
        "layer_index": model.layer_index,
        "gamma_med": model.gamma_med,
        "epsilon_floor": model.standardizer.epsilon_floor,
        "n_anchor": int(model.anchor_vectors.shape[0]),
        "dim": int(model.anchor_vectors.shape[1]),
        "provenance": model.provenance,
    }
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, blob in (
            ("header.json", json.dumps(header, indent=1, sort_keys=True).encode()),
            ("mean.npy", _npy_bytes(model.standardizer.mean)),
            ("std.npy", _npy_bytes(model.standardizer.std)),
            ("vectors.npy", _npy_bytes(model.anchor_vectors)),
        ):
            info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
            zf.writestr(info, blob)


def load_anchor_model(path: str | Path) -> AnchorModel:
    path = Path(path)
    if not path.exists():
        raise InputError(f"anchor model not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            mean = np.load(io.BytesIO(zf.read("mean.npy")))
            std = np.load(io.BytesIO(zf.read("std.npy")))
            vectors = np.load(io.BytesIO(zf.read("vectors.npy")))
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError) as exc:
        raise InputError(f"{path} is not a valid anchor model: {exc}") from exc
    if header.get("format_version") != _FORMAT_VERSION:
        raise InputError(
            f"{path}: unsupported anchor format version {header.get('format_version')}"
        )
    return AnchorModel(
        backbone_id=header["backbone_id"],
        layer_index=header["layer_index"],
        standardizer=Standardizer(mean=mean, std=std, epsilon_floor=header["epsilon_floor"]),
        gamma_med=header["gamma_med"],
        anchor_vectors=vectors,
        provenance=header["provenance"],
    )
