"""Gram vector cache: one directory per (backbone, layer) holding
vectors.npy plus a manifest.json with ids, shapes, and per-row hashes.

The cache stores Gram vectors rather than raw activations; vectors are
the only thing downstream consumers need and they are small. Reads
verify the recorded content hash and raise on mismatch.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

from . import __version__
from .errors import CacheCorruptionError, InputError

_MANIFEST = "manifest.json"
_VECTORS = "vectors.npy"


def default_cache_root() -> Path:
    return Path(os.environ.get("GMMD_CACHE_DIR", "cache"))


def _row_hash(vector: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(vector, dtype=np.float64).tobytes()).hexdigest()[:16]


class GramCache:
    """Content-addressed store keyed by (backbone, layer, image id, prep hash)."""

    def __init__(self, root: str | Path | None = None):
        self.root = Path(root) if root is not None else default_cache_root()

    def _dir(self, backbone_id: str, layer_index: int) -> Path:
        return self.root / backbone_id / str(layer_index)

    def _load(self, backbone_id: str, layer_index: int):
        d = self._dir(backbone_id, layer_index)
        mpath, vpath = d / _MANIFEST, d / _VECTORS
        if not mpath.exists() or not vpath.exists():
            return None, None
        manifest = json.loads(mpath.read_text())
        vectors = np.load(vpath)
        if len(manifest["ids"]) != vectors.shape[0]:
            raise CacheCorruptionError(
                f"{d}: manifest lists {len(manifest['ids'])} ids but "
                f"vectors.npy holds {vectors.shape[0]} rows"
            )
        return manifest, vectors

    def put_many(
        self,
        backbone_id: str,
        layer_index: int,
        preprocessing_hash: str,
        ids: list[str],
        vectors: np.ndarray,
    ) -> None:
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise InputError(
                f"expected ({len(ids)}, m) vector matrix, got shape {vectors.shape}"
            )
        manifest, stored = self._load(backbone_id, layer_index)
        if manifest is None:
            manifest = {
                "version": __version__,
                "backbone_id": backbone_id,
                "layer_index": layer_index,
                "preprocessing_hash": preprocessing_hash,
                "dim": int(vectors.shape[1]),
                "ids": [],
                "hashes": [],
            }
            stored = np.empty((0, vectors.shape[1]))
        if manifest["preprocessing_hash"] != preprocessing_hash:
            raise InputError(
                f"cache for {backbone_id}/{layer_index} was built with preprocessing "
                f"{manifest['preprocessing_hash']}, refusing to mix in {preprocessing_hash}"
            )
        if manifest["dim"] != vectors.shape[1]:
            raise InputError(
                f"cache dim {manifest['dim']} != new vector dim {vectors.shape[1]}"
            )
        index = {img_id: i for i, img_id in enumerate(manifest["ids"])}
        rows = list(stored)
        for img_id, vec in zip(ids, vectors):
            if img_id in index:
                rows[index[img_id]] = vec
                manifest["hashes"][index[img_id]] = _row_hash(vec)
            else:
                index[img_id] = len(rows)
                rows.append(vec)
                manifest["ids"].append(img_id)
                manifest["hashes"].append(_row_hash(vec))
        d = self._dir(backbone_id, layer_index)
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / _VECTORS, np.stack(rows))
        (d / _MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True))

    def put(self, backbone_id, layer_index, preprocessing_hash, image_id, vector) -> None:
        self.put_many(backbone_id, layer_index, preprocessing_hash, [image_id],
                      np.asarray(vector, dtype=np.float64)[None])

    def get(self, backbone_id, layer_index, preprocessing_hash, image_id) -> np.ndarray | None:
        """The stored vector, or None when the key is absent."""
        manifest, vectors = self._load(backbone_id, layer_index)
        if manifest is None or manifest["preprocessing_hash"] != preprocessing_hash:
            return None
        try:
            row = manifest["ids"].index(image_id)
        except ValueError:
            return None
        vec = vectors[row]
        if _row_hash(vec) != manifest["hashes"][row]:
            raise CacheCorruptionError(
                f"cache row for {backbone_id}/{layer_index}/{image_id} fails its hash check"
            )
        return vec

    def get_many(self, backbone_id, layer_index, preprocessing_hash, ids) -> np.ndarray | None:
        """All requested rows in order, or None if any is missing."""
        out = []
        for img_id in ids:
            vec = self.get(backbone_id, layer_index, preprocessing_hash, img_id)
            if vec is None:
                return None
            out.append(vec)
        return np.stack(out)


def read_vector_dir(path: str | Path) -> tuple[list[str], np.ndarray, dict]:
    """Read a vectors.npy + manifest.json directory (cache cell or dump).

    Returns (ids, vectors, manifest); verifies row hashes when present.
    """
    d = Path(path)
    mpath, vpath = d / _MANIFEST, d / _VECTORS
    if not mpath.exists() or not vpath.exists():
        raise InputError(f"{d} does not contain {_VECTORS} + {_MANIFEST}")
    manifest = json.loads(mpath.read_text())
    vectors = np.load(vpath)
    ids = manifest.get("ids")
    if ids is None or vectors.ndim != 2 or len(ids) != vectors.shape[0]:
        raise InputError(f"{d}: manifest ids do not match vector rows")
    hashes = manifest.get("hashes")
    if hashes:
        for i, (img_id, expect) in enumerate(zip(ids, hashes)):
            if _row_hash(vectors[i]) != expect:
                raise CacheCorruptionError(f"{d}: row {img_id} fails its hash check")
    return list(ids), np.asarray(vectors, dtype=np.float64), manifest
