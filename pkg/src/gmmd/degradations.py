"""Synthetic distortion suite: 20 types x 10 severity levels.

Images are float arrays of shape (H, W, 3) with sRGB values in [0, 1];
every operator clamps back into [0, 1] and preserves the input size.
Stochastic operators (noise, jitter, patches, sparse sampling) are
deterministic given their seed.

Operator semantics the parameter table does not pin down are fixed here:

- brighten/darken are gamma curves out = in**g (g < 1 brightens);
- jitter displaces each pixel by an independent uniform offset up to
  amp px (nearest-neighbor resample, clamped at borders);
- patches copies n random ps x ps blocks from random source positions
  to random destinations within the same image;
- fog blends alpha * white + (1 - alpha) * img;
- color cast cool shifts the blue channel up and red down by s;
- chromatic aberration shifts R right and B left by the same pixel count
  (edge replicate);
- sparse sampling drops a fraction frac of pixels and inpaints each with
  its nearest kept pixel;
- JPEG uses a baseline-DCT encoder (Pillow) at the tabulated quality with
  4:2:0 subsampling;
- lens blur convolves with a normalized disk of radius r, motion blur
  with a normalized horizontal box of length L;
- tilt-stretch rescales horizontally by s_x then pads back to size with
  edge replicate;
- vignette multiplies by 1 - strength * (r / r_corner)^2;
- contrast compression is out = alpha * (in - 0.5) + 0.5;
- non-uniform blur ramps the Gaussian sigma linearly from sigma_lo at the
  left edge to sigma_hi at the right (evaluated by blending a small stack
  of uniformly blurred planes).
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import InputError

# (type_id, kadid_tag, name, param spec). Values transcribed from the
# published 20x10 severity table; level 1 is mildest.
_ROWS = (
    (1, "T1", "gaussian_noise", ("sigma",), [
        (0.002,), (0.004,), (0.006,), (0.009,), (0.011,),
        (0.013,), (0.015,), (0.018,), (0.020,), (0.022,)]),
    (2, "T3", "multiplicative_noise", ("sigma",), [
        (0.002,), (0.005,), (0.008,), (0.011,), (0.014,),
        (0.018,), (0.021,), (0.024,), (0.027,), (0.030,)]),
    (3, "T5", "brighten", ("gamma",), [
        (0.960,), (0.958,), (0.957,), (0.955,), (0.953,),
        (0.952,), (0.950,), (0.948,), (0.947,), (0.945,)]),
    (4, "T6", "darken", ("gamma",), [
        (1.100,), (1.103,), (1.107,), (1.110,), (1.113,),
        (1.117,), (1.120,), (1.123,), (1.127,), (1.130,)]),
    (5, "T8", "jitter", ("amp",), [
        (1.0,), (1.4,), (1.9,), (2.3,), (2.8,),
        (3.2,), (3.7,), (4.1,), (4.6,), (5.0,)]),
    (6, "T9", "patches", ("ps", "n"), [
        (4, 1), (5, 2), (5, 2), (6, 3), (7, 3),
        (7, 4), (8, 4), (9, 5), (9, 5), (10, 6)]),
    (7, "T10", "pixelate", ("factor",), [
        (2,), (2,), (2,), (2,), (2,), (3,), (3,), (3,), (3,), (3,)]),
    (8, "T11", "quantization", ("bits",), [
        (8,), (8,), (7,), (7,), (7,), (6,), (6,), (6,), (5,), (5,)]),
    (9, "T12", "fog", ("alpha",), [
        (0.020,), (0.030,), (0.040,), (0.050,), (0.060,),
        (0.070,), (0.080,), (0.090,), (0.100,), (0.110,)]),
    (10, "T13", "color_cast_cool", ("s",), [
        (0.020,), (0.027,), (0.033,), (0.040,), (0.047,),
        (0.053,), (0.060,), (0.067,), (0.073,), (0.080,)]),
    (11, "T15", "chromatic_aberration", ("shift",), [
        (1,), (1,), (1,), (2,), (2,), (2,), (2,), (3,), (3,), (3,)]),
    (12, "T16", "sparse_sampling", ("frac",), [
        (0.010,), (0.018,), (0.026,), (0.033,), (0.041,),
        (0.049,), (0.057,), (0.064,), (0.072,), (0.080,)]),
    (13, "T17", "jpeg", ("quality",), [
        (95,), (92,), (90,), (87,), (85,), (82,), (80,), (77,), (75,), (72,)]),
    (14, "T18", "gaussian_blur", ("sigma",), [
        (0.200,), (0.222,), (0.244,), (0.267,), (0.289,),
        (0.311,), (0.333,), (0.356,), (0.378,), (0.400,)]),
    (15, "T19", "lens_blur", ("radius",), [
        (1,), (1,), (1,), (1,), (1,), (2,), (2,), (2,), (2,), (2,)]),
    (16, "T20", "motion_blur", ("length",), [
        (3,), (3,), (3,), (3,), (3,), (4,), (4,), (4,), (4,), (4,)]),
    (17, "T22", "tilt_stretch", ("s_x",), [
        (0.970,), (0.968,), (0.966,), (0.963,), (0.961,),
        (0.959,), (0.957,), (0.954,), (0.952,), (0.950,)]),
    (18, "T23", "vignette", ("strength",), [
        (0.080,), (0.091,), (0.102,), (0.113,), (0.124,),
        (0.136,), (0.147,), (0.158,), (0.169,), (0.180,)]),
    (19, "T24", "contrast_compression", ("alpha",), [
        (0.940,), (0.933,), (0.927,), (0.920,), (0.913,),
        (0.907,), (0.900,), (0.893,), (0.887,), (0.880,)]),
    (20, "T25", "nonuniform_blur", ("sigma_lo", "sigma_hi"), [
        (0.2, 0.4), (0.3, 0.6), (0.3, 0.9), (0.4, 1.1), (0.5, 1.3),
        (0.5, 1.6), (0.6, 1.8), (0.7, 2.0), (0.7, 2.3), (0.8, 2.5)]),
)

TYPE_IDS = tuple(row[0] for row in _ROWS)
LEVELS = tuple(range(1, 11))
_BY_ID = {row[0]: row for row in _ROWS}


@dataclass(frozen=True)
class DegradationSpec:
    """One (type, severity) cell with its resolved parameters."""

    type_id: int
    kadid_tag: str
    name: str
    level: int
    params: dict

    @classmethod
    def resolve(cls, type_id: int, level: int) -> "DegradationSpec":
        params = severity_params(type_id, level)
        _, tag, name, _, _ = _BY_ID[type_id]
        return cls(type_id=type_id, kadid_tag=tag, name=name, level=level, params=params)


def kadid_tag(type_id: int) -> str:
    if type_id not in _BY_ID:
        raise InputError(f"degradation type must be 1..20, got {type_id}")
    return _BY_ID[type_id][1]


def type_name(type_id: int) -> str:
    if type_id not in _BY_ID:
        raise InputError(f"degradation type must be 1..20, got {type_id}")
    return _BY_ID[type_id][2]


def severity_params(type_id: int, level: int) -> dict:
    """The tabulated parameter values for one (type, level) cell."""
    if type_id not in _BY_ID:
        raise InputError(f"degradation type must be 1..20, got {type_id}")
    if level not in LEVELS:
        raise InputError(f"severity level must be 1..10, got {level}")
    _, _, _, names, levels = _BY_ID[type_id]
    return dict(zip(names, levels[level - 1]))


def parameter_table() -> list[dict]:
    """All 200 cells as flat rows, for CSV audit export."""
    rows = []
    for type_id, tag, name, pnames, _ in _ROWS:
        for level in LEVELS:
            row = {"type_id": type_id, "kadid_tag": tag, "name": name, "level": level}
            for k, v in severity_params(type_id, level).items():
                row[f"param_{k}"] = v
            rows.append(row)
    return rows


# --- operators -------------------------------------------------------------

def _check_image(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise InputError(f"image must have shape (H, W, 3), got {a.shape}")
    if not np.isfinite(a).all() or a.min() < 0.0 or a.max() > 1.0:
        raise InputError("image values must be finite and within [0, 1]")
    return a


def _require_size(img: np.ndarray, min_hw: int, what: str) -> None:
    h, w = img.shape[:2]
    if min(h, w) < min_hw:
        raise InputError(f"{what} needs images at least {min_hw} px per side, got {h}x{w}")


def _clip(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def _op_gaussian_noise(img, p, rng):
    return img + rng.normal(0.0, p["sigma"], img.shape)


def _op_multiplicative_noise(img, p, rng):
    return img * (1.0 + rng.normal(0.0, p["sigma"], img.shape))


def _op_gamma(img, p, rng):
    return np.power(img, p["gamma"])


def _op_jitter(img, p, rng):
    h, w = img.shape[:2]
    amp = p["amp"]
    dy = rng.uniform(-amp, amp, (h, w))
    dx = rng.uniform(-amp, amp, (h, w))
    yy, xx = np.mgrid[0:h, 0:w]
    sy = np.clip(np.rint(yy + dy).astype(np.intp), 0, h - 1)
    sx = np.clip(np.rint(xx + dx).astype(np.intp), 0, w - 1)
    return img[sy, sx]


def _op_patches(img, p, rng):
    ps, n = int(p["ps"]), int(p["n"])
    _require_size(img, ps, "patches")
    h, w = img.shape[:2]
    out = img.copy()
    for _ in range(n):
        sy, sx = int(rng.integers(0, h - ps + 1)), int(rng.integers(0, w - ps + 1))
        dy, dx = int(rng.integers(0, h - ps + 1)), int(rng.integers(0, w - ps + 1))
        out[dy : dy + ps, dx : dx + ps] = img[sy : sy + ps, sx : sx + ps]
    return out


def _op_pixelate(img, p, rng):
    f = int(p["factor"])
    _require_size(img, f, "pixelate")
    h, w = img.shape[:2]
    ph, pw = (-h) % f, (-w) % f
    padded = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    hb, wb = padded.shape[0] // f, padded.shape[1] // f
    blocks = padded.reshape(hb, f, wb, f, 3).mean(axis=(1, 3))
    return np.repeat(np.repeat(blocks, f, axis=0), f, axis=1)[:h, :w]


def _op_quantization(img, p, rng):
    levels = (1 << int(p["bits"])) - 1
    return np.rint(img * levels) / levels


def _op_fog(img, p, rng):
    a = p["alpha"]
    return a + (1.0 - a) * img


def _op_color_cast_cool(img, p, rng):
    out = img.copy()
    out[..., 2] += p["s"]
    out[..., 0] -= p["s"]
    return out


def _shift_columns(plane: np.ndarray, shift: int) -> np.ndarray:
    # positive shift moves content right; border columns replicate
    w = plane.shape[1]
    src = np.clip(np.arange(w) - shift, 0, w - 1)
    return plane[:, src]


def _op_chromatic_aberration(img, p, rng):
    s = int(p["shift"])
    _require_size(img, s + 1, "chromatic aberration")
    out = img.copy()
    out[..., 0] = _shift_columns(img[..., 0], s)
    out[..., 2] = _shift_columns(img[..., 2], -s)
    return out


def _op_sparse_sampling(img, p, rng):
    h, w = img.shape[:2]
    dropped = rng.random((h, w)) < p["frac"]
    if not dropped.any():
        return img
    if dropped.all():
        raise InputError("sparse sampling dropped every pixel")
    _, (iy, ix) = ndimage.distance_transform_edt(dropped, return_indices=True)
    out = img.copy()
    out[dropped] = img[iy[dropped], ix[dropped]]
    return out


def _op_jpeg(img, p, rng):
    u8 = np.rint(img * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="JPEG", quality=int(p["quality"]), subsampling=2)
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"), dtype=np.float64) / 255.0


def jpeg_encoded_size(img, quality: int) -> int:
    """Encoded byte count at the pinned settings; used by monotonicity tests."""
    a = _check_image(img)
    u8 = np.rint(a * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="JPEG", quality=int(quality), subsampling=2)
    return buf.getbuffer().nbytes


def _op_gaussian_blur(img, p, rng):
    return ndimage.gaussian_filter(img, sigma=(p["sigma"], p["sigma"], 0.0), mode="reflect")


def _disk_kernel(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    k = (yy * yy + xx * xx <= r * r).astype(np.float64)
    return k / k.sum()


def _convolve_channels(img: np.ndarray, kernel2d: np.ndarray) -> np.ndarray:
    return ndimage.convolve(img, kernel2d[:, :, None], mode="reflect")


def _op_lens_blur(img, p, rng):
    r = int(p["radius"])
    _require_size(img, 2 * r + 1, "lens blur")
    return _convolve_channels(img, _disk_kernel(r))


def _op_motion_blur(img, p, rng):
    length = int(p["length"])
    _require_size(img, length, "motion blur")
    kernel = np.full((1, length), 1.0 / length)
    return _convolve_channels(img, kernel)


def _op_tilt_stretch(img, p, rng):
    h, w = img.shape[:2]
    new_w = max(1, int(round(w * p["s_x"])))
    pos = np.linspace(0.0, w - 1.0, new_w)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, w - 1)
    frac = (pos - lo)[None, :, None]
    squeezed = img[:, lo] * (1.0 - frac) + img[:, hi] * frac
    left = (w - new_w) // 2
    return np.pad(squeezed, ((0, 0), (left, w - new_w - left), (0, 0)), mode="edge")


def _op_vignette(img, p, rng):
    _require_size(img, 2, "vignette")
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    r2 = (yy - cy) ** 2 + (xx - cx) ** 2
    mask = 1.0 - p["strength"] * r2 / (cy * cy + cx * cx)
    return img * mask[:, :, None]


def _op_contrast_compression(img, p, rng):
    return p["alpha"] * (img - 0.5) + 0.5


def _op_nonuniform_blur(img, p, rng):
    lo, hi = p["sigma_lo"], p["sigma_hi"]
    w = img.shape[1]
    stops = np.linspace(lo, hi, 6)
    planes = [ndimage.gaussian_filter(img, sigma=(s, s, 0.0), mode="reflect") for s in stops]
    sigma_col = lo + (hi - lo) * (np.arange(w) / max(w - 1, 1))
    t = (sigma_col - lo) / (hi - lo) * (len(stops) - 1)
    idx = np.minimum(t.astype(np.intp), len(stops) - 2)
    frac = (t - idx)[None, :, None]
    stacked = np.stack(planes)  # (stops, H, W, 3)
    cols = np.arange(w)
    return stacked[idx, :, cols].transpose(1, 0, 2) * (1.0 - frac) + \
        stacked[idx + 1, :, cols].transpose(1, 0, 2) * frac


_OPERATORS = {
    1: _op_gaussian_noise,
    2: _op_multiplicative_noise,
    3: _op_gamma,
    4: _op_gamma,
    5: _op_jitter,
    6: _op_patches,
    7: _op_pixelate,
    8: _op_quantization,
    9: _op_fog,
    10: _op_color_cast_cool,
    11: _op_chromatic_aberration,
    12: _op_sparse_sampling,
    13: _op_jpeg,
    14: _op_gaussian_blur,
    15: _op_lens_blur,
    16: _op_motion_blur,
    17: _op_tilt_stretch,
    18: _op_vignette,
    19: _op_contrast_compression,
    20: _op_nonuniform_blur,
}


def degrade(img, spec: DegradationSpec, seed: int) -> np.ndarray:
    """Apply one degradation cell; deterministic given (img, spec, seed)."""
    a = _check_image(img)
    rng = np.random.default_rng(seed)
    out = _OPERATORS[spec.type_id](a, spec.params, rng)
    if out.shape != a.shape:
        raise InputError(
            f"{spec.name} changed image shape {a.shape} -> {out.shape}"
        )
    return _clip(out)


def derive_cell_seed(seed: int, type_id: int, level: int, image_index: int) -> int:
    """Stable per-image seed: blake2 hash of (seed, type, level, index)."""
    key = f"gmmd-degrade:{seed}:{type_id}:{level}:{image_index}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


def _build_cell(refs, t: int, s: int, seed: int) -> list[np.ndarray]:
    spec = DegradationSpec.resolve(t, s)
    cell = []
    for i, ref in enumerate(refs):
        try:
            cell.append(degrade(ref, spec, derive_cell_seed(seed, t, s, i)))
        except Exception as exc:
            raise type(exc)(
                f"degradation cell (type={t}, level={s}, image={i}): {exc}"
            ) from exc
    return cell


def build_degradation_matrix(
    refs: list[np.ndarray],
    seed: int,
    type_ids: tuple[int, ...] = TYPE_IDS,
    levels: tuple[int, ...] = LEVELS,
    threads: int = 1,
) -> dict[tuple[int, int], list[np.ndarray]]:
    """Degrade every reference at every (type, level) cell.

    Returns |type_ids| x |levels| cells, each holding len(refs) images in
    reference order. Cells may build on a thread pool; results are merged
    in cell order either way, and per-image seeds depend only on
    (seed, type, level, index), so the output is identical at any thread
    count. Operator errors are re-raised with the failing cell
    coordinates attached.
    """
    if not refs:
        raise InputError("degradation matrix needs at least one reference image")
    cells = [(t, s) for t in type_ids for s in levels]
    if threads <= 1:
        return {(t, s): _build_cell(refs, t, s, seed) for t, s in cells}
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = {(t, s): pool.submit(_build_cell, refs, t, s, seed) for t, s in cells}
        return {cell: futures[cell].result() for cell in cells}
