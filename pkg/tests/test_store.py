import json

import numpy as np
import pytest

from gmmd import CacheCorruptionError, InputError
from gmmd.anchor import build_anchor_model, fit_anchor, load_anchor_model, save_anchor_model
from gmmd.backbones import toy_backbone_spec
from gmmd.errors import DegenerateBandwidthError
from gmmd.mmd import median_heuristic_gamma
from gmmd.store import GramCache, read_vector_dir


def test_cache_put_get_round_trip(tmp_path, rng):
    cache = GramCache(tmp_path)
    vec = rng.standard_normal(6)
    cache.put("toy", 1, "abc", "img1.png", vec)
    got = cache.get("toy", 1, "abc", "img1.png")
    assert np.array_equal(got, vec)


def test_cache_missing_key_returns_none(tmp_path, rng):
    cache = GramCache(tmp_path)
    assert cache.get("toy", 1, "abc", "nope.png") is None
    cache.put("toy", 1, "abc", "img1.png", rng.standard_normal(6))
    assert cache.get("toy", 1, "abc", "other.png") is None
    assert cache.get("toy", 2, "abc", "img1.png") is None
    assert cache.get("toy", 1, "different-prep", "img1.png") is None


def test_cache_update_in_place(tmp_path, rng):
    cache = GramCache(tmp_path)
    cache.put("toy", 0, "h", "a", np.zeros(4))
    cache.put("toy", 0, "h", "a", np.ones(4))
    assert np.array_equal(cache.get("toy", 0, "h", "a"), np.ones(4))


def test_cache_corruption_detected(tmp_path, rng):
    cache = GramCache(tmp_path)
    cache.put_many("toy", 1, "abc", ["a", "b"], rng.standard_normal((2, 4)))
    vec_file = tmp_path / "toy" / "1" / "vectors.npy"
    data = np.load(vec_file)
    data[0, 0] += 1.0
    np.save(vec_file, data)
    with pytest.raises(CacheCorruptionError):
        cache.get("toy", 1, "abc", "a")


def test_cache_refuses_mixed_preprocessing(tmp_path, rng):
    cache = GramCache(tmp_path)
    cache.put("toy", 1, "hash-one", "a", np.zeros(4))
    with pytest.raises(InputError):
        cache.put("toy", 1, "hash-two", "b", np.zeros(4))


def test_cache_get_many_order(tmp_path, rng):
    cache = GramCache(tmp_path)
    vectors = rng.standard_normal((3, 5))
    cache.put_many("toy", 2, "h", ["x", "y", "z"], vectors)
    got = cache.get_many("toy", 2, "h", ["z", "x"])
    assert np.array_equal(got, vectors[[2, 0]])
    assert cache.get_many("toy", 2, "h", ["z", "missing"]) is None


def test_read_vector_dir_schema_errors(tmp_path):
    with pytest.raises(InputError):
        read_vector_dir(tmp_path)
    np.save(tmp_path / "vectors.npy", np.zeros((2, 3)))
    (tmp_path / "manifest.json").write_text(json.dumps({"ids": ["only-one"]}))
    with pytest.raises(InputError):
        read_vector_dir(tmp_path)


def test_anchor_round_trip_bit_exact(tmp_path, rng):
    spec = toy_backbone_spec()
    images = [rng.random((16, 16, 3)) for _ in range(4)]
    model = build_anchor_model(spec, 1, images, image_ids=[f"i{k}" for k in range(4)], seed=5)
    save_anchor_model(model, tmp_path / "anchor.gmmd")
    back = load_anchor_model(tmp_path / "anchor.gmmd")
    assert back.gamma_med == model.gamma_med
    assert np.array_equal(back.anchor_vectors, model.anchor_vectors)
    assert np.array_equal(back.standardizer.mean, model.standardizer.mean)
    assert np.array_equal(back.standardizer.std, model.standardizer.std)
    assert back.provenance["image_ids"] == ["i0", "i1", "i2", "i3"]
    assert back.backbone_id == "toy" and back.layer_index == 1


def test_anchor_gamma_recomputation_reproduces(tmp_path, rng):
    spec = toy_backbone_spec()
    images = [rng.random((16, 16, 3)) for _ in range(5)]
    model = build_anchor_model(spec, 1, images, seed=5)
    save_anchor_model(model, tmp_path / "a.gmmd")
    back = load_anchor_model(tmp_path / "a.gmmd")
    assert median_heuristic_gamma(back.anchor_vectors, seed=5) == back.gamma_med


def test_anchor_file_bytes_deterministic(tmp_path, rng):
    spec = toy_backbone_spec()
    images = [rng.random((16, 16, 3)) for _ in range(3)]
    model = build_anchor_model(spec, 1, images, seed=5)
    save_anchor_model(model, tmp_path / "a1.gmmd")
    save_anchor_model(model, tmp_path / "a2.gmmd")
    assert (tmp_path / "a1.gmmd").read_bytes() == (tmp_path / "a2.gmmd").read_bytes()


def test_anchor_two_distinct_images_single_pair(rng):
    spec = toy_backbone_spec()
    imgs = [np.zeros((8, 8, 3)), np.full((8, 8, 3), 0.5)]
    model = build_anchor_model(spec, 1, imgs)
    # one pair: gamma_med = 1/(2 * d12^2) on the standardized vectors
    d12 = float(np.sum((model.anchor_vectors[0] - model.anchor_vectors[1]) ** 2))
    assert model.gamma_med == 1.0 / (2.0 * d12)


def test_anchor_identical_images_degenerate(rng):
    spec = toy_backbone_spec()
    img = rng.random((8, 8, 3))
    with pytest.raises(DegenerateBandwidthError):
        build_anchor_model(spec, 1, [img, img.copy(), img.copy()])


def test_anchor_needs_two_images(rng):
    with pytest.raises(InputError):
        build_anchor_model(toy_backbone_spec(), 1, [rng.random((8, 8, 3))])


def test_load_anchor_errors(tmp_path):
    with pytest.raises(InputError):
        load_anchor_model(tmp_path / "none.gmmd")
    bad = tmp_path / "bad.gmmd"
    bad.write_bytes(b"not a zip at all")
    with pytest.raises(InputError):
        load_anchor_model(bad)


def test_fit_anchor_standardizes_to_unit_stats(rng):
    raw = rng.standard_normal((20, 6)) * 3.0 + 5.0
    standardizer, standardized, gamma_med = fit_anchor(raw)
    assert np.allclose(standardized.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(standardized.std(axis=0), 1.0, atol=1e-12)
    assert gamma_med > 0
