import numpy as np
import pytest

from counterattack.encoder import (
    CwMargin,
    Encoder,
    EncoderKind,
    L2DistanceToAnchor,
    Layer,
    NegCrossEntropy,
    build_encoder,
    encode,
    finite_difference_gradient,
    load_encoder,
    loss_value_and_input_gradient,
    save_encoder,
)
from counterattack.errors import DimensionMismatchError, NumericalError, ParameterFileError
from counterattack.zeroshot import ClassAnchorSet


def _relative_error(analytic, numeric):
    return np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)


@pytest.mark.parametrize("kind,dims", [
    (EncoderKind.LINEAR, (12, 5)),
    (EncoderKind.MLP, (12, 7, 5)),
])
def test_gradient_matches_finite_difference(kind, dims):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for case in range(100):
        encoder = build_encoder(kind, dims, seed=case)
        x = rng.uniform(0.05, 0.95, size=(1, 3, 4))
        anchors = ClassAnchorSet(rng.standard_normal((3, dims[-1])))
        label = case % 3
        loss = (
            L2DistanceToAnchor(rng.standard_normal(dims[-1])),
            NegCrossEntropy(anchors, label),
            CwMargin(anchors, label),
        )[case % 3]

        _, grad = loss_value_and_input_gradient(encoder, x, loss)
        fd = finite_difference_gradient(encoder, x, loss, h=1e-5)
        assert grad.shape == x.shape
        worst = max(worst, _relative_error(grad, fd))
    assert worst <= 1e-4


def test_linear_gradient_closed_form(linear_encoder, image):
    anchor = np.linspace(-1.0, 1.0, linear_encoder.output_dim)
    _, grad = loss_value_and_input_gradient(linear_encoder, image, L2DistanceToAnchor(anchor))

    layer = linear_encoder.layers[0]
    diff = layer.weight @ image.ravel() + layer.bias - anchor
    expected = layer.weight.T @ (diff / np.linalg.norm(diff))
    np.testing.assert_allclose(grad.ravel(), expected, rtol=1e-12, atol=1e-14)


def test_distance_gradient_is_zero_at_anchor(encoder, image):
    value, grad = loss_value_and_input_gradient(encoder, image, L2DistanceToAnchor(encode(encoder, image)))
    assert value == 0.0
    assert not np.any(grad)


def test_general_norm_gradient(linear_encoder, image):
    loss = L2DistanceToAnchor(np.zeros(linear_encoder.output_dim), norm_ord=3.0)
    _, grad = loss_value_and_input_gradient(linear_encoder, image, loss)
    fd = finite_difference_gradient(linear_encoder, image, loss)
    assert _relative_error(grad, fd) <= 1e-4


@pytest.mark.parametrize("norm_ord", [0.5, float("inf"), float("nan")])
def test_invalid_norm_ord_rejected(norm_ord):
    with pytest.raises(ValueError):
        L2DistanceToAnchor(np.ones(3), norm_ord=norm_ord)


def test_encode_is_deterministic(encoder, image):
    first = encode(encoder, image)
    second = encode(encoder, image.copy())
    assert first.shape == (encoder.output_dim,)
    assert np.array_equal(first, second)


def test_build_encoder_same_seed_same_parameters():
    a = build_encoder("mlp", (10, 6, 4), seed=3)
    b = build_encoder("mlp", (10, 6, 4), seed=3)
    c = build_encoder("mlp", (10, 6, 4), seed=4)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.weight, lb.weight)
        assert np.array_equal(la.bias, lb.bias)
    assert not np.array_equal(a.layers[0].weight, c.layers[0].weight)


@pytest.mark.parametrize("kind,dims", [
    ("linear", ()),
    ("linear", (10,)),
    ("linear", (10, 6, 4)),
    ("mlp", (10, 4)),
    ("mlp", (10, 0, 4)),
])
def test_build_encoder_rejects_bad_layer_dims(kind, dims):
    with pytest.raises(ValueError):
        build_encoder(kind, dims, seed=0)


def test_encoder_rejects_broken_layer_chain():
    layers = [Layer(np.ones((4, 6)), np.zeros(4)), Layer(np.ones((3, 5)), np.zeros(3))]
    with pytest.raises(DimensionMismatchError):
        Encoder("mlp", layers)


def test_encode_rejects_wrong_input_length(linear_encoder):
    with pytest.raises(DimensionMismatchError):
        encode(linear_encoder, np.zeros(linear_encoder.input_dim + 1))


def test_parameters_are_read_only(linear_encoder):
    with pytest.raises(ValueError):
        linear_encoder.layers[0].weight[0, 0] = 1.0


def test_overflow_reports_layer_index():
    encoder = Encoder("linear", [Layer(np.full((2, 3), 1e308), np.zeros(2))])
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericalError) as excinfo:
            encode(encoder, np.ones(3))
    assert excinfo.value.layer_index == 0


def test_save_load_preserves_parameters(mlp_encoder, image, tmp_path):
    path = tmp_path / "encoder.txt"
    save_encoder(mlp_encoder, path)
    loaded = load_encoder(path)
    assert loaded.kind is EncoderKind.MLP
    assert loaded.layer_dims == mlp_encoder.layer_dims
    assert np.array_equal(encode(loaded, image), encode(mlp_encoder, image))


def test_load_encoder_rejects_malformed_file(tmp_path):
    path = tmp_path / "broken.txt"
    path.write_text("kind linear\nlayer_dims 2 2\n", encoding="utf-8")
    with pytest.raises(ParameterFileError):
        load_encoder(path)
