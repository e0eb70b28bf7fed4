import json

import numpy as np
import pytest

from gmmd import InferenceError, InputError, Layout
from gmmd.backbones import (
    Preprocessing,
    extract_activations,
    load_backbone,
    load_image,
    make_feature_provider,
    preprocess,
    save_image,
    toy_backbone_spec,
)
from gmmd.gram import gram_vector
from gmmd.onnxio import OnnxSession, load_model
import onnx_builder as ob


def test_toy_spec_layers():
    spec = toy_backbone_spec()
    assert spec.family is Layout.CNN
    assert spec.layer_outputs == {0: "pool1", 1: "pool2", 2: "pool4", 3: "pool8"}


def test_toy_backbone_8x8_average_pool(rng):
    img = rng.random((16, 24, 3))
    (act,) = extract_activations(toy_backbone_spec(), 3, [img])
    assert act.layout is Layout.CNN
    assert act.values.shape == (3, 2, 3)
    block = img[:8, :8].mean(axis=(0, 1))
    assert np.allclose(act.values[:, 0, 0], block)


def test_toy_backbone_constant_image():
    img = np.full((16, 16, 3), 0.25)
    (act,) = extract_activations(toy_backbone_spec(), 3, [img])
    assert np.allclose(act.values, 0.25)


def test_toy_backbone_rejects_small_images():
    with pytest.raises(InputError):
        extract_activations(toy_backbone_spec(), 3, [np.zeros((4, 4, 3))])


def test_resolution_invariant_vector_length(rng):
    spec = toy_backbone_spec()
    lengths = set()
    for size in (16, 32, 64):
        img = rng.random((size, size, 3))
        (act,) = extract_activations(spec, 3, [img])
        lengths.add(len(gram_vector(act)))
    assert lengths == {6}  # d=3 -> 3*4/2


def test_preprocess_identity(rng):
    img = rng.random((8, 10, 3))
    out = preprocess(img, Preprocessing())
    assert out.shape == (3, 8, 10)
    assert np.array_equal(out, img.transpose(2, 0, 1))


def test_preprocess_downsample_constant():
    img = np.full((16, 16, 3), 0.5)
    out = preprocess(img, Preprocessing(resize="exact", size=8))
    assert out.shape == (3, 8, 8)
    assert np.allclose(out, 0.5, atol=1 / 255)


def test_preprocess_normalization():
    img = np.ones((4, 4, 3))
    out = preprocess(img, Preprocessing(mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)))
    assert np.allclose(out, 1.0)


def test_preprocess_short_side_and_crop(rng):
    img = rng.random((40, 60, 3))
    out = preprocess(img, Preprocessing(resize="short_side", size=20, crop=20))
    assert out.shape == (3, 20, 20)


def test_preprocessing_hash_changes_with_params():
    a = Preprocessing()
    b = Preprocessing(mean=(0.5, 0.5, 0.5))
    assert a.hash() != b.hash()
    assert a.hash() == Preprocessing().hash()


def test_image_round_trip(tmp_path, rng):
    img = rng.random((12, 9, 3))
    save_image(img, tmp_path / "x.png")
    back = load_image(tmp_path / "x.png")
    assert back.shape == (12, 9, 3)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_load_image_missing(tmp_path):
    with pytest.raises(InputError):
        load_image(tmp_path / "absent.png")


# --- ONNX-backed backbones ----------------------------------------------------

def _single_conv_model(tmp_path, weights: np.ndarray, bias: np.ndarray):
    n = ob.node("Conv", ["input", "w", "b"], ["act0"],
                attrs=[ob.attr_ints("kernel_shape", [2, 2]),
                       ob.attr_ints("strides", [1, 1]),
                       ob.attr_ints("pads", [0, 0, 0, 0])])
    blob = ob.model([n],
                    [ob.tensor("w", weights.astype(np.float32)),
                     ob.tensor("b", bias.astype(np.float32))],
                    ["input"], ["act0"])
    path = tmp_path / "model.onnx"
    path.write_bytes(blob)
    (tmp_path / "sidecar.json").write_text(json.dumps({
        "backbone_id": "single-conv",
        "family": "cnn",
        "layers": [{"index": 0, "output": "act0"}],
        "preprocessing": {"resize": "none"},
    }))
    return path


def conv2d_oracle(x, w, b):
    """Direct scalar convolution, stride 1, no padding."""
    c_out, c_in, kh, kw = w.shape
    h = x.shape[1] - kh + 1
    wd = x.shape[2] - kw + 1
    out = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = b[o]
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            acc += x[c, i + u, j + v] * w[o, c, u, v]
                out[o, i, j] = acc
    return out


def test_onnx_single_conv_matches_hand_convolution(tmp_path, rng):
    weights = rng.standard_normal((2, 3, 2, 2))
    bias = rng.standard_normal(2)
    path = _single_conv_model(tmp_path, weights, bias)
    spec = load_backbone(path)
    assert spec.backbone_id == "single-conv"
    img = rng.random((4, 4, 3))
    (act,) = extract_activations(spec, 0, [img])
    want = conv2d_oracle(img.transpose(2, 0, 1), weights, bias)
    assert act.values.shape == (2, 3, 3)
    assert np.abs(act.values - want).max() < 1e-6


def test_onnx_model_parse_surface(tmp_path, rng):
    path = _single_conv_model(tmp_path, rng.standard_normal((2, 3, 2, 2)), np.zeros(2))
    model = load_model(path)
    assert model.producer == "gmmd-tests"
    assert model.opset == 13
    assert model.input_names == ["input"]
    assert model.output_names == ["act0"]
    assert set(model.initializers) == {"w", "b"}


def test_onnx_unknown_layer_rejected(tmp_path, rng):
    path = _single_conv_model(tmp_path, rng.standard_normal((2, 3, 2, 2)), np.zeros(2))
    spec = load_backbone(path)
    with pytest.raises(InputError):
        extract_activations(spec, 5, [rng.random((4, 4, 3))])


def test_onnx_unsupported_op(tmp_path):
    n = ob.node("FancyOp", ["input"], ["out"])
    (tmp_path / "m.onnx").write_bytes(ob.model([n], [], ["input"], ["out"]))
    session = OnnxSession(tmp_path / "m.onnx")
    with pytest.raises(InferenceError, match="FancyOp"):
        session.run(["out"], {"input": np.zeros((1, 1, 2, 2), dtype=np.float32)})


def test_executor_relu_pool_chain(tmp_path, rng):
    nodes = [
        ob.node("Relu", ["input"], ["r"]),
        ob.node("AveragePool", ["r"], ["p"],
                attrs=[ob.attr_ints("kernel_shape", [2, 2]), ob.attr_ints("strides", [2, 2])]),
    ]
    (tmp_path / "m.onnx").write_bytes(ob.model(nodes, [], ["input"], ["p"]))
    session = OnnxSession(tmp_path / "m.onnx")
    x = rng.standard_normal((1, 2, 4, 4)).astype(np.float32)
    (got,) = session.run(["p"], {"input": x})
    relu = np.maximum(x.astype(np.float64), 0)
    want = relu.reshape(1, 2, 2, 2, 2, 2).mean(axis=(3, 5))
    assert np.allclose(got, want)


def test_sidecar_missing_key(tmp_path, rng):
    path = _single_conv_model(tmp_path, rng.standard_normal((2, 3, 2, 2)), np.zeros(2))
    (tmp_path / "sidecar.json").write_text(json.dumps({"backbone_id": "x"}))
    with pytest.raises(InputError, match="family"):
        load_backbone(path)


def test_token_family_drops_prefix_tokens(tmp_path):
    # Identity graph that returns the fed token matrix unchanged
    n = ob.node("Identity", ["input"], ["tok"])
    (tmp_path / "model.onnx").write_bytes(ob.model([n], [], ["input"], ["tok"]))
    (tmp_path / "sidecar.json").write_text(json.dumps({
        "backbone_id": "tok-test",
        "family": "tokens",
        "layers": [{"index": 0, "output": "tok"}],
        "num_prefix_tokens": 1,
        "preprocessing": {"resize": "exact", "size": 2},
    }))
    spec = load_backbone(tmp_path / "model.onnx")
    img = np.full((4, 4, 3), 0.5)
    # preprocess gives (1, 3, 2, 2); Identity returns it; token conversion
    # needs (1, N, d): reshape happens upstream in real exports, so here we
    # assert the shape error surfaces as an InferenceError
    with pytest.raises(InferenceError):
        extract_activations(spec, 0, [img])


def test_feature_provider_metadata(rng):
    provider = make_feature_provider(toy_backbone_spec(), 1)
    assert provider.backbone_id == "toy"
    assert provider.layer_index == 1
    vectors = provider([rng.random((8, 8, 3)) for _ in range(3)])
    assert vectors.shape == (3, 6)
