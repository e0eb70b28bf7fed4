"""Backbone feature extraction: builtin toy backbone and ONNX models.

A backbone is either the builtin "toy" pixel-patch extractor (average
pooling of the RGB image itself, d = 3, no model file) or an ONNX file
with one named output per exported layer plus a JSON preprocessing
sidecar living next to it. The toy backbone makes the whole pipeline
runnable with zero external model files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InferenceError, InputError
from .gram import ActivationTensor, Layout, gram_vector
from .onnxio import OnnxSession

TOY_BACKBONE_ID = "toy"
# layer index k -> 2^k px average pooling; the default layer is the 8x8 pool
TOY_POOL_SIZES = {0: 1, 1: 2, 2: 4, 3: 8}
TOY_DEFAULT_LAYER = 3

SIDECAR_NAME = "sidecar.json"


@dataclass(frozen=True)
class Preprocessing:
    """Resize + normalization applied before inference.

    resize: "none", "short_side" (then optional center crop), "exact",
    or "multiple_of" (round H and W down to a multiple of `size`).
    mean/std are per-channel on the [0, 1] RGB scale.
    """

    resize: str = "none"
    size: int | None = None
    crop: int | None = None
    mean: tuple[float, ...] | None = None
    std: tuple[float, ...] | None = None

    def to_dict(self) -> dict:
        return {
            "resize": self.resize,
            "size": self.size,
            "crop": self.crop,
            "mean": list(self.mean) if self.mean is not None else None,
            "std": list(self.std) if self.std is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessing":
        return cls(
            resize=d.get("resize", "none"),
            size=d.get("size"),
            crop=d.get("crop"),
            mean=tuple(d["mean"]) if d.get("mean") else None,
            std=tuple(d["std"]) if d.get("std") else None,
        )

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class BackboneSpec:
    backbone_id: str
    family: Layout
    model_file: Path | None  # None for the builtin toy backbone
    layer_outputs: dict[int, str]
    preprocessing: Preprocessing = field(default_factory=Preprocessing)
    num_prefix_tokens: int = 0  # CLS/register rows dropped for token models

    def layer_name(self, layer_index: int) -> str:
        if layer_index not in self.layer_outputs:
            raise InputError(
                f"backbone '{self.backbone_id}' has no layer {layer_index}; "
                f"available: {sorted(self.layer_outputs)}"
            )
        return self.layer_outputs[layer_index]


def toy_backbone_spec() -> BackboneSpec:
    return BackboneSpec(
        backbone_id=TOY_BACKBONE_ID,
        family=Layout.CNN,
        model_file=None,
        layer_outputs={k: f"pool{v}" for k, v in TOY_POOL_SIZES.items()},
    )


def load_backbone(ref: str | Path) -> BackboneSpec:
    """Resolve "toy" or a path to an ONNX model with its sidecar."""
    if str(ref) == TOY_BACKBONE_ID:
        return toy_backbone_spec()
    model_path = Path(ref)
    if model_path.is_dir():
        model_path = model_path / "model.onnx"
    if not model_path.exists():
        raise InputError(f"backbone model file not found: {model_path}")
    sidecar_path = model_path.with_name(SIDECAR_NAME)
    if not sidecar_path.exists():
        sidecar_path = model_path.with_suffix(".json")
    if not sidecar_path.exists():
        raise InputError(f"no preprocessing sidecar next to {model_path}")
    try:
        sidecar = json.loads(sidecar_path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"sidecar {sidecar_path} is not valid JSON: {exc}") from exc
    for key in ("backbone_id", "family", "layers"):
        if key not in sidecar:
            raise InputError(f"sidecar {sidecar_path} missing required key '{key}'")
    family = Layout(sidecar["family"])
    layers = {int(e["index"]): e["output"] for e in sidecar["layers"]}
    if len(layers) != len(sidecar["layers"]):
        raise InputError(f"sidecar {sidecar_path}: duplicate layer indices")
    return BackboneSpec(
        backbone_id=sidecar["backbone_id"],
        family=family,
        model_file=model_path,
        layer_outputs=layers,
        preprocessing=Preprocessing.from_dict(sidecar.get("preprocessing", {})),
        num_prefix_tokens=int(sidecar.get("num_prefix_tokens", 0)),
    )


# --- preprocessing -----------------------------------------------------------

def load_image(path: str | Path) -> np.ndarray:
    """Read PNG/JPEG into an (H, W, 3) float array in [0, 1]."""
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            return np.asarray(rgb, dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read image {path}: {exc}") from exc


def save_image(img: np.ndarray, path: str | Path) -> None:
    u8 = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(u8).save(path)


def _resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    pil = Image.fromarray(np.rint(np.clip(img, 0, 1) * 255.0).astype(np.uint8))
    return np.asarray(pil.resize((width, height), Image.BILINEAR), dtype=np.float64) / 255.0


def preprocess(img: np.ndarray, prep: Preprocessing) -> np.ndarray:
    """Apply resize/crop/normalization; returns (3, H, W) float64."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InputError(f"expected (H, W, 3) image, got shape {a.shape}")
    h, w = a.shape[:2]
    if prep.resize == "none":
        pass
    elif prep.resize == "exact":
        a = _resize(a, prep.size, prep.size)
    elif prep.resize == "short_side":
        scale = prep.size / min(h, w)
        a = _resize(a, max(1, round(h * scale)), max(1, round(w * scale)))
    elif prep.resize == "multiple_of":
        nh, nw = max(prep.size, h - h % prep.size), max(prep.size, w - w % prep.size)
        if (nh, nw) != (h, w):
            a = _resize(a, nh, nw)
    else:
        raise InputError(f"unknown resize policy '{prep.resize}'")
    if prep.crop is not None:
        ch, cw = a.shape[:2]
        if ch < prep.crop or cw < prep.crop:
            raise InputError(f"image {ch}x{cw} smaller than center crop {prep.crop}")
        y0, x0 = (ch - prep.crop) // 2, (cw - prep.crop) // 2
        a = a[y0 : y0 + prep.crop, x0 : x0 + prep.crop]
    chw = a.transpose(2, 0, 1)
    if prep.mean is not None:
        chw = chw - np.asarray(prep.mean)[:, None, None]
    if prep.std is not None:
        chw = chw / np.asarray(prep.std)[:, None, None]
    return chw


# --- extraction --------------------------------------------------------------

def _toy_activation(img: np.ndarray, layer_index: int) -> ActivationTensor:
    if layer_index not in TOY_POOL_SIZES:
        raise InputError(f"toy backbone has layers {sorted(TOY_POOL_SIZES)}, got {layer_index}")
    p = TOY_POOL_SIZES[layer_index]
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InputError(f"expected (H, W, 3) image, got shape {a.shape}")
    h, w = a.shape[:2]
    if h < p or w < p:
        raise InputError(f"toy layer {layer_index} needs images >= {p} px per side, got {h}x{w}")
    hb, wb = h // p, w // p
    pooled = a[: hb * p, : wb * p].reshape(hb, p, wb, p, 3).mean(axis=(1, 3))
    return ActivationTensor.cnn(pooled.transpose(2, 0, 1))


_SESSIONS: dict[Path, OnnxSession] = {}


def _session(model_file: Path) -> OnnxSession:
    key = model_file.resolve()
    if key not in _SESSIONS:
        _SESSIONS[key] = OnnxSession(key)
    return _SESSIONS[key]


def extract_activations(
    spec: BackboneSpec,
    layer_index: int,
    images: list[np.ndarray],
    image_ids: list[str] | None = None,
) -> list[ActivationTensor]:
    """One activation tensor per image at the named layer output."""
    ids = image_ids or [f"image[{i}]" for i in range(len(images))]
    if spec.model_file is None:
        return [_toy_activation(img, layer_index) for img in images]

    output_name = spec.layer_name(layer_index)
    session = _session(spec.model_file)
    if len(session.input_names) != 1:
        raise InferenceError(
            f"backbone '{spec.backbone_id}' must have exactly one input, "
            f"got {session.input_names}"
        )
    feed_name = session.input_names[0]
    acts = []
    for img, img_id in zip(images, ids):
        x = preprocess(img, spec.preprocessing)[None].astype(np.float32)
        try:
            (raw,) = session.run([output_name], {feed_name: x})
        except InferenceError as exc:
            raise InferenceError(
                f"backbone '{spec.backbone_id}' layer {layer_index} ({output_name}) "
                f"failed on {img_id}: {exc}"
            ) from exc
        acts.append(_to_activation(raw, spec, layer_index, img_id))
    return acts


def _to_activation(raw: np.ndarray, spec: BackboneSpec, layer_index: int, img_id: str) -> ActivationTensor:
    arr = np.asarray(raw)
    if arr.ndim == 4 and arr.shape[0] == 1:
        arr = arr[0]
    if spec.family is Layout.CNN:
        if arr.ndim != 3:
            raise InferenceError(
                f"layer {layer_index} of '{spec.backbone_id}' returned shape "
                f"{raw.shape} for {img_id}; expected (1, C, H, W)"
            )
        return ActivationTensor.cnn(arr)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise InferenceError(
            f"layer {layer_index} of '{spec.backbone_id}' returned shape "
            f"{raw.shape} for {img_id}; expected (1, N, d)"
        )
    return ActivationTensor.tokens(arr[spec.num_prefix_tokens :])


def compute_gram_vectors(
    spec: BackboneSpec,
    layer_index: int,
    images: list[np.ndarray],
    image_ids: list[str] | None = None,
) -> np.ndarray:
    """Stacked Gram vectors, shape (n_images, d(d+1)/2)."""
    acts = extract_activations(spec, layer_index, images, image_ids)
    return np.stack([gram_vector(a).values for a in acts])


def make_feature_provider(spec: BackboneSpec, layer_index: int):
    """Bind (backbone, layer) into an images -> Gram-vector-matrix callable."""

    def provider(images: list[np.ndarray], image_ids: list[str] | None = None) -> np.ndarray:
        return compute_gram_vectors(spec, layer_index, images, image_ids)

    provider.backbone_id = spec.backbone_id
    provider.layer_index = layer_index
    provider.preprocessing_hash = spec.preprocessing.hash()
    return provider
