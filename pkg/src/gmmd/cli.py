"""gmmd command-line interface.

Subcommands cover the whole pipeline: degrade, anchor, features, score,
meta, grid, kadid, raise, inversion, report. Every subcommand accepts a
JSON run-spec (--spec) whose fields explicit flags override; the
resolved parameters are hashed and that hash, plus the toolkit version,
is embedded in every output artifact. All randomness is seeded from the
resolved spec, so identical specs give byte-identical CSVs. --dry-run
validates inputs and prints the resolved plan without computing.

Exit codes: 0 success, 2 usage or input-schema errors, 1 runtime
failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .anchor import build_anchor_model, load_anchor_model, save_anchor_model
from .backbones import (
    TOY_BACKBONE_ID,
    TOY_DEFAULT_LAYER,
    load_backbone,
    load_image,
    make_feature_provider,
    save_image,
)
from .degradations import (
    LEVELS,
    TYPE_IDS,
    build_degradation_matrix,
    kadid_tag,
    parameter_table,
)
from .errors import GmmdError, InputError
from .experiments import (
    CMMD_GAMMA,
    build_ranked_groups,
    inversion_gamma_sweep,
    read_score_manifest,
    run_group_experiment,
)
from .mmd import KernelKind, KernelSpec, mmd2_unbiased
from .protocol import (
    GammaPolicy,
    MetricConfig,
    grid_search,
    run_meta_protocol,
    top_k_table,
)
from .store import GramCache, default_cache_root, read_vector_dir

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


# --- run-spec plumbing -------------------------------------------------------

def _load_spec_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise InputError(f"run-spec file not found: {p}")
    try:
        spec = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{p}: invalid JSON run-spec: {exc}") from exc
    if not isinstance(spec, dict):
        raise InputError(f"{p}: run-spec must be a JSON object")
    return spec


def _resolve(args, spec: dict, key: str, default=None):
    """Flag value if given, else run-spec field, else default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    return spec.get(key, default)


def _spec_hash(resolved: dict) -> str:
    blob = json.dumps(resolved, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (np.floating,)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict], spec_hash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# gmmd_version={__version__}", f"# spec_hash={spec_hash}", ",".join(fieldnames)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(name)) for name in fieldnames))
    path.write_text("\n".join(lines) + "\n")


def _write_json(path: Path, payload: dict, spec_hash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"gmmd_version": __version__, "spec_hash": spec_hash, **payload}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def read_csv_rows(path: str | Path) -> list[dict]:
    """Read a toolkit CSV back, skipping the embedded # metadata lines."""
    import csv as _csv

    with Path(path).open(newline="") as fh:
        return list(_csv.DictReader(row for row in fh if not row.startswith("#")))


def _load_image_dir(path: str | Path) -> tuple[list[str], list[np.ndarray]]:
    d = Path(path)
    if not d.is_dir():
        raise InputError(f"image directory not found: {d}")
    files = sorted(p for p in d.rglob("*") if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise InputError(f"no PNG/JPEG images under {d}")
    ids = [str(p.relative_to(d)) for p in files]
    return ids, [load_image(p) for p in files]


def _list_image_dir(path: str | Path) -> list[str]:
    d = Path(path)
    if not d.is_dir():
        raise InputError(f"image directory not found: {d}")
    files = sorted(p for p in d.rglob("*") if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise InputError(f"no PNG/JPEG images under {d}")
    return [str(p.relative_to(d)) for p in files]


def _backbone_and_layer(backbone_ref: str | None, layer, anchor=None):
    """Resolve the backbone spec + layer, falling back to anchor provenance."""
    if backbone_ref is None and anchor is not None:
        if anchor.backbone_id == TOY_BACKBONE_ID:
            backbone_ref = TOY_BACKBONE_ID
        else:
            backbone_ref = (anchor.provenance or {}).get("model_file")
            if backbone_ref is None:
                raise InputError(
                    "anchor provenance has no model file; pass --backbone explicitly"
                )
    if backbone_ref is None:
        raise InputError("no backbone given (use --backbone or a run-spec field)")
    spec = load_backbone(backbone_ref)
    if layer is None:
        if anchor is not None:
            layer = anchor.layer_index
        elif spec.backbone_id == TOY_BACKBONE_ID:
            layer = TOY_DEFAULT_LAYER
        else:
            raise InputError("no layer given (use --layer or a run-spec field)")
    return spec, int(layer)


def _kernel_from(resolved: dict, gamma_med: float | None) -> tuple[KernelSpec, float | None]:
    kind = resolved.get("kernel", "rbf")
    if kind == "poly":
        return KernelSpec.polynomial(), None
    if kind != "rbf":
        raise InputError(f"kernel must be 'rbf' or 'poly', got '{kind}'")
    gamma = resolved.get("gamma")
    factor = resolved.get("gamma_factor")
    if gamma is not None and factor is not None:
        raise InputError("give either gamma or gamma_factor, not both")
    if gamma is not None:
        return KernelSpec.rbf(float(gamma)), float(gamma)
    factor = 1.0 if factor is None else float(factor)
    if gamma_med is None:
        raise InputError("gamma_factor needs an anchor model with gamma_med")
    g = factor * gamma_med
    return KernelSpec.rbf(g), g


def _parse_int_list(text) -> list[int] | None:
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v != ""]


def _dry_run_exit(plan: dict) -> int:
    print(json.dumps({"dry_run": True, **plan}, indent=1, sort_keys=True, default=str))
    return 0


def _log_safe(value: float) -> float:
    # log-scale bar charts cannot show non-positive scores
    return value if value > 0 else float("nan")


# --- subcommands -------------------------------------------------------------

def cmd_degrade(args) -> int:
    spec = _load_spec_file(args.spec)
    refs_dir = _resolve(args, spec, "refs")
    if refs_dir is None:
        raise InputError("degrade needs --refs")
    resolved = {
        "command": "degrade",
        "refs": str(refs_dir),
        "out": str(_resolve(args, spec, "out", "deg")),
        "seed": int(_resolve(args, spec, "seed", 0)),
        "types": _parse_int_list(_resolve(args, spec, "types")) or list(TYPE_IDS),
        "levels": _parse_int_list(_resolve(args, spec, "levels")) or list(LEVELS),
        "threads": int(_resolve(args, spec, "threads", 1)),
    }
    spec_hash = _spec_hash(resolved)
    ref_ids = _list_image_dir(refs_dir)
    if args.dry_run:
        return _dry_run_exit({**resolved, "spec_hash": spec_hash, "n_refs": len(ref_ids)})

    ids, refs = _load_image_dir(refs_dir)
    matrix = build_degradation_matrix(
        refs, seed=resolved["seed"], type_ids=tuple(resolved["types"]),
        levels=tuple(resolved["levels"]), threads=resolved["threads"],
    )
    out_root = Path(resolved["out"])
    for (t, s), images in matrix.items():
        cell_dir = out_root / f"{t}_{kadid_tag(t)}" / str(s)
        cell_dir.mkdir(parents=True, exist_ok=True)
        for img_id, img in zip(ids, images):
            save_image(img, cell_dir / (Path(img_id).stem + ".png"))
    table = parameter_table()
    fields = sorted({k for row in table for k in row}, key=lambda k: (k.startswith("param_"), k))
    _write_csv(out_root / "degradation_params.csv", fields, table, spec_hash)
    _write_json(out_root / "run.json", {"resolved": resolved, "n_refs": len(ids)}, spec_hash)
    print(f"wrote {len(matrix)} cells x {len(ids)} images under {out_root}")
    return 0


def cmd_anchor(args) -> int:
    spec = _load_spec_file(args.spec)
    images_dir = _resolve(args, spec, "images")
    if images_dir is None:
        raise InputError("anchor needs --images")
    backbone_spec, layer = _backbone_and_layer(
        _resolve(args, spec, "backbone"), _resolve(args, spec, "layer")
    )
    resolved = {
        "command": "anchor",
        "images": str(images_dir),
        "backbone": backbone_spec.backbone_id,
        "layer": layer,
        "out": str(_resolve(args, spec, "out", "anchor.gmmd")),
        "epsilon_floor": float(_resolve(args, spec, "epsilon_floor", 1e-8)),
        "seed": int(_resolve(args, spec, "seed", 0)),
        "max_exact_pairs": int(_resolve(args, spec, "max_exact_pairs", 2_000_000)),
    }
    spec_hash = _spec_hash(resolved)
    ids = _list_image_dir(images_dir)
    if args.dry_run:
        return _dry_run_exit({**resolved, "spec_hash": spec_hash, "n_images": len(ids)})

    ids, images = _load_image_dir(images_dir)
    model = build_anchor_model(
        backbone_spec, layer, images, image_ids=ids,
        epsilon_floor=resolved["epsilon_floor"],
        max_exact_pairs=resolved["max_exact_pairs"], seed=resolved["seed"],
    )
    model.provenance["spec_hash"] = spec_hash
    save_anchor_model(model, resolved["out"])
    print(f"anchor: {len(ids)} images, dim {model.dim}, gamma_med {model.gamma_med!r} -> {resolved['out']}")
    return 0


def cmd_features(args) -> int:
    spec = _load_spec_file(args.spec)
    images_dir = _resolve(args, spec, "images")
    if images_dir is None:
        raise InputError("features needs --images")
    backbone_spec, layer = _backbone_and_layer(
        _resolve(args, spec, "backbone"), _resolve(args, spec, "layer")
    )
    resolved = {
        "command": "features",
        "images": str(images_dir),
        "backbone": backbone_spec.backbone_id,
        "layer": layer,
        "cache": str(_resolve(args, spec, "cache", default_cache_root())),
    }
    spec_hash = _spec_hash(resolved)
    ids = _list_image_dir(images_dir)
    if args.dry_run:
        return _dry_run_exit({**resolved, "spec_hash": spec_hash, "n_images": len(ids)})

    ids, images = _load_image_dir(images_dir)
    provider = make_feature_provider(backbone_spec, layer)
    vectors = provider(images, ids)
    cache = GramCache(resolved["cache"])
    cache.put_many(backbone_spec.backbone_id, layer, provider.preprocessing_hash, ids, vectors)
    print(f"cached {len(ids)} Gram vectors (dim {vectors.shape[1]}) under {resolved['cache']}")
    return 0


def cmd_score(args) -> int:
    spec = _load_spec_file(args.spec)
    anchor_path = _resolve(args, spec, "anchor")
    if anchor_path is None:
        raise InputError("score needs --anchor")
    eval_dir = _resolve(args, spec, "eval")
    eval_vectors_dir = _resolve(args, spec, "eval_vectors")
    if (eval_dir is None) == (eval_vectors_dir is None):
        raise InputError("score needs exactly one of --eval (images) or --eval-vectors")
    anchor = load_anchor_model(anchor_path)
    resolved = {
        "command": "score",
        "anchor": str(anchor_path),
        "eval": str(eval_dir) if eval_dir else None,
        "eval_vectors": str(eval_vectors_dir) if eval_vectors_dir else None,
        "kernel": _resolve(args, spec, "kernel", "rbf"),
        "gamma": _resolve(args, spec, "gamma"),
        "gamma_factor": _resolve(args, spec, "gamma_factor"),
        "clamp_zero": bool(_resolve(args, spec, "clamp_zero", False)),
        "out": str(_resolve(args, spec, "out", "scores.csv")),
    }
    spec_hash = _spec_hash(resolved)
    kernel, gamma_used = _kernel_from(resolved, anchor.gamma_med)
    if args.dry_run:
        return _dry_run_exit({**resolved, "spec_hash": spec_hash,
                              "gamma_used": gamma_used, "n_anchor": anchor.anchor_vectors.shape[0]})

    if eval_dir is not None:
        backbone_spec, layer = _backbone_and_layer(
            _resolve(args, spec, "backbone"), _resolve(args, spec, "layer"), anchor
        )
        ids, images = _load_image_dir(eval_dir)
        provider = make_feature_provider(backbone_spec, layer)
        raw = provider(images, ids)
        source = str(eval_dir)
    else:
        ids, raw, manifest = read_vector_dir(eval_vectors_dir)
        if raw.shape[1] != anchor.dim:
            raise InputError(
                f"eval vectors dim {raw.shape[1]} != anchor dim {anchor.dim} "
                f"(backbone '{manifest.get('backbone_id')}', layer {manifest.get('layer_index')})"
            )
        source = str(eval_vectors_dir)
    standardized = anchor.standardize(raw)
    result = mmd2_unbiased(anchor.anchor_vectors, standardized, kernel)
    value = max(result.mmd2, 0.0) if resolved["clamp_zero"] else result.mmd2
    row = {
        "eval": source,
        "n_anchor": result.n_anchor,
        "n_eval": result.n_eval,
        "kernel": resolved["kernel"],
        "gamma": gamma_used,
        "mmd2": value,
        "term_anchor": result.term_anchor,
        "term_eval": result.term_eval,
        "term_cross": result.term_cross,
    }
    _write_csv(Path(resolved["out"]), list(row), [row], spec_hash)
    print(f"MMD^2 = {value!r}  (n_anchor={result.n_anchor}, n_eval={result.n_eval}, gamma={gamma_used!r})")
    return 0


def _meta_common(args, spec: dict):
    refs_dir = _resolve(args, spec, "refs")
    if refs_dir is None:
        raise InputError("this command needs a refs image directory")
    anchor_dir = _resolve(args, spec, "anchor_images")
    anchor_mode = _resolve(args, spec, "anchor_mode", "reference")
    types = _parse_int_list(_resolve(args, spec, "types")) or list(TYPE_IDS)
    seed = int(_resolve(args, spec, "seed", 0))
    threads = int(_resolve(args, spec, "threads", 1))
    return refs_dir, anchor_dir, anchor_mode, types, seed, threads


def cmd_meta(args) -> int:
    spec = _load_spec_file(args.spec)
    refs_dir, anchor_dir, anchor_mode, types, seed, threads = _meta_common(args, spec)
    backbone_spec, layer = _backbone_and_layer(
        _resolve(args, spec, "backbone"), _resolve(args, spec, "layer")
    )
    gamma = _resolve(args, spec, "gamma")
    gamma_factor = _resolve(args, spec, "gamma_factor")
    kernel_kind = _resolve(args, spec, "kernel", "rbf")
    resolved = {
        "command": "meta",
        "refs": str(refs_dir),
        "anchor_images": str(anchor_dir) if anchor_dir else None,
        "anchor_mode": anchor_mode,
        "backbone": backbone_spec.backbone_id,
        "layer": layer,
        "kernel": kernel_kind,
        "gamma": gamma,
        "gamma_factor": gamma_factor if gamma is None else None,
        "types": types,
        "seed": seed,
        "threads": threads,
        "out": str(_resolve(args, spec, "out", "meta_out")),
    }
    spec_hash = _spec_hash(resolved)
    ref_ids = _list_image_dir(refs_dir)
    if args.dry_run:
        return _dry_run_exit({**resolved, "spec_hash": spec_hash, "n_refs": len(ref_ids),
                              "n_cells": len(types) * len(LEVELS)})

    if kernel_kind == "poly":
        policy = None
        kind = KernelKind.POLYNOMIAL
    else:
        kind = KernelKind.RBF
        policy = (GammaPolicy.absolute(float(gamma)) if gamma is not None
                  else GammaPolicy.median_multiple(float(gamma_factor if gamma_factor is not None else 1.0)))
    config = MetricConfig(
        backbone_id=backbone_spec.backbone_id, layer_index=layer,
        kernel=kind, gamma_policy=policy, anchor_mode=anchor_mode,
    )
    ref_ids, refs = _load_image_dir(refs_dir)
    anchor_ids = anchor_images = None
    if anchor_dir:
        anchor_ids, anchor_images = _load_image_dir(anchor_dir)
    provider = make_feature_provider(backbone_spec, layer)
    result = run_meta_protocol(
        refs, anchor_images, config, provider, seed=seed, type_ids=types,
        ref_ids=ref_ids, anchor_ids=anchor_ids, threads=threads,
    )
    out_dir = Path(resolved["out"])
    _write_meta_results(out_dir / "meta_results.csv", [result], types, spec_hash)
    score_rows = [
        {"type_id": t, "kadid_tag": kadid_tag(t), "level": lvl, "score": sc}
        for t in types
        for lvl, sc in zip(LEVELS, result.per_type[t].scores)
    ]
    _write_csv(out_dir / "meta_scores.csv", ["type_id", "kadid_tag", "level", "score"],
               score_rows, spec_hash)
    _write_json(out_dir / "meta_summary.json", {
        "resolved": resolved,
        "avg_rho": result.avg_rho,
        "avg_tau": result.avg_tau,
        "gamma_med": result.gamma_med,
        "gamma_used": result.gamma_used,
        "failed_types": list(result.failed_types),
    }, spec_hash)
    from .plots import save_meta_per_type_plot

    save_meta_per_type_plot(out_dir / "meta_scores.svg",
                            {t: result.per_type[t].scores for t in types},
                            f"{backbone_spec.backbone_id} L{layer}")
    print(f"avg rho {result.avg_rho:.4f}, avg tau {result.avg_tau:.4f} -> {out_dir}")
    return 0


def _write_meta_results(path: Path, results, types, spec_hash: str) -> None:
    fields = ["rank", "backbone", "layer", "kernel", "gamma_policy", "gamma_med", "gamma_used",
              "anchor_mode", "avg_rho", "avg_tau", "failed_types"]
    for t in types:
        fields += [f"rho_t{t}", f"tau_t{t}"]
    rows = []
    for rank, r in enumerate(results, start=1):
        row = {
            "rank": rank,
            "backbone": r.config.backbone_id,
            "layer": r.config.layer_index,
            "kernel": r.config.kernel.value,
            "gamma_policy": r.config.gamma_policy.label() if r.config.gamma_policy else "",
            "gamma_med": r.gamma_med,
            "gamma_used": r.gamma_used,
            "anchor_mode": r.config.anchor_mode,
            "avg_rho": r.avg_rho,
            "avg_tau": r.avg_tau,
            "failed_types": ";".join(str(t) for t in r.failed_types),
        }
        for t in types:
            ts = r.per_type.get(t)
            row[f"rho_t{t}"] = None if ts is None else ts.rho
            row[f"tau_t{t}"] = None if ts is None else ts.tau
        rows.append(row)
    _write_csv(path, fields, rows, spec_hash)


def cmd_grid(args) -> int:
    spec = _load_spec_file(args.spec)
    if not spec and args.spec is None:
        raise InputError("grid needs --spec grid.json")
    refs_dir, anchor_dir, anchor_mode, types, seed, threads = _meta_common(args, spec)
    backbone_entries = spec.get("backbones")
    if not backbone_entries:
        raise InputError("grid run-spec needs a 'backbones' list")
    gamma_factors = [float(f) for f in spec.get("gamma_factors", [])]
    if not gamma_factors:
        raise InputError("grid run-spec needs a non-empty 'gamma_factors' list")
    resolved = {
        "command": "grid",
        "refs": str(refs_dir),
        "anchor_images": str(anchor_dir) if anchor_dir else None,
        "anchor_mode": anchor_mode,
        "backbones": [
            {"id": e.get("id"), "path": e.get("path"), "layers": e.get("layers")}
            for e in backbone_entries
        ],
        "gamma_factors": gamma_factors,
        "types": types,
        "seed": seed,
        "threads": threads,
        "top_k": int(spec.get("top_k", 20)),
        "out": str(_resolve(args, spec, "out", "grid_out")),
    }
    spec_hash = _spec_hash(resolved)

    specs = {}
    pairs = []
    for entry in backbone_entries:
        ref = entry.get("path") or entry.get("id")
        bspec = load_backbone(ref)
        layers = entry.get("layers")
        if layers is None:
            layers = len(bspec.layer_outputs)
        specs[bspec.backbone_id] = bspec
        pairs.append((bspec.backbone_id, int(layers)))
    n_configs = sum(layers for _, layers in pairs) * len(gamma_factors)
    ref_ids = _list_image_dir(refs_dir)
    if args.dry_run:
        return _dry_run_exit({**resolved, "spec_hash": spec_hash,
                              "n_refs": len(ref_ids), "n_configs": n_configs})

    ref_ids, refs = _load_image_dir(refs_dir)
    anchor_ids = anchor_images = None
    if anchor_dir:
        anchor_ids, anchor_images = _load_image_dir(anchor_dir)

    def provider_factory(backbone_id: str, layer_index: int):
        return make_feature_provider(specs[backbone_id], layer_index)

    ranked, failures = grid_search(
        pairs, gamma_factors, refs, anchor_images, provider_factory,
        seed=seed, anchor_mode=anchor_mode, type_ids=types,
        ref_ids=ref_ids, anchor_ids=anchor_ids, threads=threads,
    )
    out_dir = Path(resolved["out"])
    _write_meta_results(out_dir / "meta_results.csv", ranked, types, spec_hash)
    _write_csv(out_dir / "topk.csv",
               ["rank", "backbone", "layer", "gamma_factor", "avg_rho", "avg_tau"],
               top_k_table(ranked, resolved["top_k"]), spec_hash)
    if failures:
        _write_csv(out_dir / "failures.csv", ["backbone", "layer", "gamma_policy", "error"],
                   [{"backbone": f.config.backbone_id, "layer": f.config.layer_index,
                     "gamma_policy": f.config.gamma_policy.label() if f.config.gamma_policy else "",
                     "error": f.error} for f in failures], spec_hash)
    _write_json(out_dir / "grid_summary.json", {
        "resolved": resolved,
        "n_configs": n_configs,
        "n_ranked": len(ranked),
        "n_failed": len(failures),
        "best": top_k_table(ranked, 1),
    }, spec_hash)
    print(f"{len(ranked)} configurations ranked ({len(failures)} failed) -> {out_dir}")
    return 0


def _cmd_grouped(args, score_column: str, default_group_size: int, ordering_key: str) -> int:
    spec = _load_spec_file(args.spec)
    manifest_path = _resolve(args, spec, "manifest")
    images_dir = _resolve(args, spec, "images")
    anchor_path = _resolve(args, spec, "anchor")
    for name, val in (("manifest", manifest_path), ("images", images_dir), ("anchor", anchor_path)):
        if val is None:
            raise InputError(f"{ordering_key} experiment needs --{name}")
    anchor = load_anchor_model(anchor_path)
    resolved = {
        "command": ordering_key,
        "manifest": str(manifest_path),
        "images": str(images_dir),
        "anchor": str(anchor_path),
        "group_size": int(_resolve(args, spec, "group_size", default_group_size)),
        "invert_order": bool(_resolve(args, spec, "invert_order", False)),
        "kernel": _resolve(args, spec, "kernel", "rbf"),
        "gamma": _resolve(args, spec, "gamma"),
        "gamma_factor": _resolve(args, spec, "gamma_factor"),
        "permutations": int(_resolve(args, spec, "permutations", 10_000)),
        "seed": int(_resolve(args, spec, "seed", 0)),
        "out": str(_resolve(args, spec, "out", f"{ordering_key}_out")),
    }
    spec_hash = _spec_hash(resolved)
    entries = read_score_manifest(manifest_path, score_column)
    kernel, gamma_used = _kernel_from(resolved, anchor.gamma_med)
    groups = build_ranked_groups(entries, resolved["group_size"], ordering_key=ordering_key,
                                 ascending=not resolved["invert_order"])
    if args.dry_run:
        return _dry_run_exit({**resolved, "spec_hash": spec_hash, "n_entries": len(entries),
                              "n_groups": len(groups.groups), "gamma_used": gamma_used})

    backbone_spec, layer = _backbone_and_layer(
        _resolve(args, spec, "backbone"), _resolve(args, spec, "layer"), anchor
    )
    provider = make_feature_provider(backbone_spec, layer)
    images_root = Path(images_dir)

    def loader(image_id: str) -> np.ndarray:
        return load_image(images_root / image_id)

    result = run_group_experiment(
        groups, anchor, kernel, provider, loader,
        n_permutations=resolved["permutations"], permutation_seed=resolved["seed"],
    )
    out_dir = Path(resolved["out"])
    ordering = f"ascending {score_column}" if not resolved["invert_order"] else f"descending {score_column}"
    _write_csv(out_dir / "groups.csv",
               ["rank", "mean_opinion_score", "image_ids"],
               [{"rank": g.rank, "mean_opinion_score": g.mean_opinion_score,
                 "image_ids": ";".join(g.image_ids)} for g in groups.groups], spec_hash)
    _write_csv(out_dir / "scores.csv",
               ["rank", "mean_opinion_score", "mmd2"],
               [{"rank": g.rank, "mean_opinion_score": g.mean_opinion_score, "mmd2": s}
                for g, s in zip(groups.groups, result.scores)], spec_hash)
    _write_json(out_dir / "summary.json", {
        "resolved": resolved,
        "ordering": ordering,
        "gamma_used": gamma_used,
        "rho": result.rho,
        "tau": result.tau,
        "slope": result.slope,
        "intercept": result.intercept,
        "permutation_p": result.p_value,
    }, spec_hash)
    from .plots import save_regression_plot, save_score_plot

    ranks = [g.rank for g in groups.groups]
    mos = [g.mean_opinion_score for g in groups.groups]
    save_score_plot(out_dir / "scores_vs_rank.svg", ranks, result.scores,
                    f"group rank ({ordering})", f"{ordering_key.upper()} groups")
    save_regression_plot(out_dir / "regression.svg", mos, result.scores,
                         result.slope, result.intercept, result.rho,
                         f"group mean {score_column.upper()}", f"{ordering_key.upper()} regression")
    print(f"rho {result.rho:.4f}, tau {result.tau:.4f}, p {result.p_value:.4g} -> {out_dir}")
    return 0


def cmd_kadid(args) -> int:
    return _cmd_grouped(args, score_column="dmos", default_group_size=81, ordering_key="kadid")


def cmd_raise(args) -> int:
    return _cmd_grouped(args, score_column="mos", default_group_size=20, ordering_key="raise")


def cmd_inversion(args) -> int:
    spec = _load_spec_file(args.spec)
    anchor_path = _resolve(args, spec, "anchor")
    synthetic_dir = _resolve(args, spec, "synthetic")
    real_dir = _resolve(args, spec, "real")
    for name, val in (("anchor", anchor_path), ("synthetic", synthetic_dir), ("real", real_dir)):
        if val is None:
            raise InputError(f"inversion needs --{name}")
    anchor = load_anchor_model(anchor_path)
    raw_factors = _resolve(args, spec, "gamma_factors") or [0.1, 0.5, 1.0, 2.0, 10.0]
    if isinstance(raw_factors, str):
        raw_factors = raw_factors.split(",")
    factors = [float(f) for f in raw_factors]
    resolved = {
        "command": "inversion",
        "anchor": str(anchor_path),
        "synthetic": str(synthetic_dir),
        "real": str(real_dir),
        "gamma_factors": factors,
        "out": str(_resolve(args, spec, "out", "inversion_out")),
    }
    spec_hash = _spec_hash(resolved)
    if args.dry_run:
        return _dry_run_exit({
            **resolved, "spec_hash": spec_hash,
            "n_synthetic": len(_list_image_dir(synthetic_dir)),
            "n_real": len(_list_image_dir(real_dir)),
        })

    backbone_spec, layer = _backbone_and_layer(
        _resolve(args, spec, "backbone"), _resolve(args, spec, "layer"), anchor
    )
    provider = make_feature_provider(backbone_spec, layer)
    _, synth_images = _load_image_dir(synthetic_dir)
    _, real_images = _load_image_dir(real_dir)
    sweep = inversion_gamma_sweep(anchor, synth_images, real_images, factors, provider)
    out_dir = Path(resolved["out"])
    rows = [{"gamma_factor": f, "gamma": f * anchor.gamma_med,
             "score_synthetic": r.score_synthetic, "score_real": r.score_real,
             "ratio": r.ratio, "inverted": r.inverted} for f, r in sweep]
    _write_csv(out_dir / "inversion.csv",
               ["gamma_factor", "gamma", "score_synthetic", "score_real", "ratio", "inverted"],
               rows, spec_hash)
    _write_json(out_dir / "summary.json", {
        "resolved": resolved,
        "any_inverted": any(r.inverted for _, r in sweep),
        "results": rows,
    }, spec_hash)
    from .plots import save_gamma_sweep_plot

    save_gamma_sweep_plot(out_dir / "gamma_sweep.svg", factors,
                          [_log_safe(r.score_synthetic) for _, r in sweep],
                          [_log_safe(r.score_real) for _, r in sweep],
                          f"inversion sweep ({anchor.backbone_id} L{anchor.layer_index})")
    flag = "INVERTED" if any(r.inverted for _, r in sweep) else "not inverted"
    print(f"inversion: {flag} across factors {factors} -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    spec = _load_spec_file(args.spec)
    out_dir = Path(_resolve(args, spec, "dir", "."))
    if not out_dir.is_dir():
        raise InputError(f"report directory not found: {out_dir}")
    if args.dry_run:
        found = [p.name for p in out_dir.iterdir()
                 if p.name in ("meta_scores.csv", "scores.csv", "inversion.csv")]
        return _dry_run_exit({"command": "report", "dir": str(out_dir), "found": found})
    from .plots import save_gamma_sweep_plot, save_meta_per_type_plot, save_score_plot

    made = []
    meta_scores = out_dir / "meta_scores.csv"
    if meta_scores.exists():
        per_type: dict[int, list[float]] = {}
        for row in read_csv_rows(meta_scores):
            per_type.setdefault(int(row["type_id"]), []).append(float(row["score"]))
        save_meta_per_type_plot(out_dir / "meta_scores.svg",
                                {t: tuple(v) for t, v in per_type.items()}, "meta-metric scores")
        made.append("meta_scores.svg")
    group_scores = out_dir / "scores.csv"
    if group_scores.exists():
        rows = read_csv_rows(group_scores)
        if rows and "rank" in rows[0]:
            save_score_plot(out_dir / "scores_vs_rank.svg",
                            [int(r["rank"]) for r in rows],
                            [float(r["mmd2"]) for r in rows], "group rank", "group scores")
            made.append("scores_vs_rank.svg")
    inversion = out_dir / "inversion.csv"
    if inversion.exists():
        rows = read_csv_rows(inversion)
        save_gamma_sweep_plot(out_dir / "gamma_sweep.svg",
                              [float(r["gamma_factor"]) for r in rows],
                              [_log_safe(float(r["score_synthetic"])) for r in rows],
                              [_log_safe(float(r["score_real"])) for r in rows],
                              "inversion sweep")
        made.append("gamma_sweep.svg")
    if not made:
        raise InputError(f"nothing to report under {out_dir}")
    print(f"regenerated {', '.join(made)} in {out_dir}")
    return 0


# --- argument parsing --------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", help="JSON run-spec file (flags override its fields)")
    p.add_argument("--dry-run", action="store_true", help="validate inputs, print the plan, do not compute")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmmd",
        description="Gram-MMD distributional realism metric toolkit",
    )
    parser.add_argument("--version", action="version", version=f"gmmd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("degrade", help="build the 20x10 degradation tree from reference images")
    p.add_argument("--refs")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--types", help="comma-separated degradation type ids (default all 20)")
    p.add_argument("--levels", help="comma-separated severity levels (default 1..10)")
    p.add_argument("--threads", type=int)
    _add_common(p)
    p.set_defaults(fn=cmd_degrade)

    p = sub.add_parser("anchor", help="fit and persist an anchor model")
    p.add_argument("--images")
    p.add_argument("--backbone", help="'toy' or a path to model.onnx")
    p.add_argument("--layer", type=int)
    p.add_argument("--out")
    p.add_argument("--epsilon-floor", dest="epsilon_floor", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-exact-pairs", dest="max_exact_pairs", type=int)
    _add_common(p)
    p.set_defaults(fn=cmd_anchor)

    p = sub.add_parser("features", help="extract Gram vectors into the cache")
    p.add_argument("--images")
    p.add_argument("--backbone")
    p.add_argument("--layer", type=int)
    p.add_argument("--cache", help="cache root (default $GMMD_CACHE_DIR or ./cache)")
    _add_common(p)
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("score", help="score one evaluation set against an anchor")
    p.add_argument("--anchor")
    p.add_argument("--eval")
    p.add_argument("--eval-vectors", dest="eval_vectors",
                   help="directory with precomputed vectors.npy + manifest.json")
    p.add_argument("--backbone")
    p.add_argument("--layer", type=int)
    p.add_argument("--kernel", choices=["rbf", "poly"])
    p.add_argument("--gamma", type=float)
    p.add_argument("--gamma-factor", dest="gamma_factor", type=float)
    p.add_argument("--clamp-zero", dest="clamp_zero", action="store_const", const=True,
                   help="report negative MMD^2 as 0 in the output table")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("meta", help="run the degradation meta-metric for one configuration")
    p.add_argument("--refs")
    p.add_argument("--anchor-images", dest="anchor_images")
    p.add_argument("--anchor-mode", dest="anchor_mode", choices=["reference", "independent"])
    p.add_argument("--backbone")
    p.add_argument("--layer", type=int)
    p.add_argument("--kernel", choices=["rbf", "poly"])
    p.add_argument("--gamma", type=float)
    p.add_argument("--gamma-factor", dest="gamma_factor", type=float)
    p.add_argument("--types")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(fn=cmd_meta)

    p = sub.add_parser("grid", help="grid-search configurations from a JSON run-spec")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    _add_common(p)
    p.set_defaults(fn=cmd_grid)

    for name, fn, help_text in (
        ("kadid", cmd_kadid, "DMOS-ranked group experiment"),
        ("raise", cmd_raise, "MOS-grouped realism experiment"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--manifest")
        p.add_argument("--images")
        p.add_argument("--anchor")
        p.add_argument("--backbone")
        p.add_argument("--layer", type=int)
        p.add_argument("--group-size", dest="group_size", type=int)
        p.add_argument("--invert-order", dest="invert_order", action="store_const", const=True)
        p.add_argument("--kernel", choices=["rbf", "poly"])
        p.add_argument("--gamma", type=float)
        p.add_argument("--gamma-factor", dest="gamma_factor", type=float)
        p.add_argument("--permutations", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        _add_common(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("inversion", help="real-vs-synthetic inversion check with a gamma sweep")
    p.add_argument("--anchor")
    p.add_argument("--synthetic")
    p.add_argument("--real")
    p.add_argument("--backbone")
    p.add_argument("--layer", type=int)
    p.add_argument("--gamma-factors", dest="gamma_factors",
                   help="comma-separated multiples of gamma_med (default 0.1,0.5,1,2,10)")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(fn=cmd_inversion)

    p = sub.add_parser("report", help="regenerate plots from a results directory")
    p.add_argument("--dir")
    _add_common(p)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except InputError as exc:
        print(f"gmmd: input error: {exc}", file=sys.stderr)
        return 2
    except GmmdError as exc:
        print(f"gmmd: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
