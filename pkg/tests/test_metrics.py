import numpy as np
import pytest

from counterattack.encoder import Encoder, Layer, encode
from counterattack.errors import ZeroEmbeddingError
from counterattack.metrics import EvalSummary, accuracy, embedding_shift, mean_cos, pca_2d, summarize_shift


def _distances(points):
    diff = points[:, None, :] - points[None, :, :]
    return np.linalg.norm(diff, axis=-1)


def test_accuracy_examples():
    assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert accuracy([0, 0], [1, 1]) == 0.0
    assert accuracy([0, 1, 2, 3], [0, 1, 2, 0]) == 0.75


def test_accuracy_rejects_bad_input():
    with pytest.raises(ValueError):
        accuracy([], [])
    with pytest.raises(ValueError):
        accuracy([0, 1], [0])


def test_mean_cos_examples():
    v = np.array([0.3, -1.2, 2.0])
    assert mean_cos([v, v, v, v]) == pytest.approx(1.0, abs=1e-12)
    assert mean_cos([np.array([1.0, 0.0]), np.array([0.0, 1.0])]) == 0.0
    assert mean_cos([v, -v]) == pytest.approx(-1.0, abs=1e-12)
    assert mean_cos(list(np.eye(5))) == pytest.approx(0.0, abs=1e-12)


def test_mean_cos_permutation_and_scale_invariant():
    rng = np.random.default_rng(0)
    vectors = [rng.standard_normal((2, 3)) for _ in range(7)]
    base = mean_cos(vectors)
    shuffled = [vectors[i] for i in rng.permutation(7)]
    scaled = [v * s for v, s in zip(vectors, rng.uniform(0.1, 10.0, size=7))]
    assert mean_cos(shuffled) == pytest.approx(base, abs=1e-12)
    assert mean_cos(scaled) == pytest.approx(base, abs=1e-12)


def test_mean_cos_rejects_zero_vector_with_index():
    with pytest.raises(ZeroEmbeddingError) as excinfo:
        mean_cos([np.ones(3), np.ones(3), np.zeros(3)])
    assert excinfo.value.index == 2
    with pytest.raises(ValueError):
        mean_cos([np.ones(3)])


def test_embedding_shift():
    identity = Encoder("linear", [Layer(np.eye(2), np.zeros(2))])
    x = np.array([0.5, 0.5])
    assert embedding_shift(identity, [x, x], [x, x]) == [0.0, 0.0]
    shift = embedding_shift(identity, [x], [x + np.array([4 / 255, 0.0])])
    assert shift[0] == pytest.approx(4 / 255, abs=1e-15)
    with pytest.raises(ValueError):
        embedding_shift(identity, [x], [])


def test_embedding_shift_matches_recomputation(mlp_encoder, images):
    perturbed = [np.clip(x + 0.01, 0.0, 1.0) for x in images]
    expected = [np.linalg.norm(encode(mlp_encoder, p) - encode(mlp_encoder, x)) for x, p in zip(images, perturbed)]
    assert embedding_shift(mlp_encoder, images, perturbed) == pytest.approx(expected, abs=1e-15)


def test_summarize_shift():
    stats = summarize_shift([1.0, 3.0, 2.0, 10.0])
    assert stats == {"mean": 4.0, "median": 2.5, "max": 10.0}
    assert summarize_shift([]) == {"mean": None, "median": None, "max": None}


def test_pca_preserves_planar_distances():
    rng = np.random.default_rng(1)
    basis, _ = np.linalg.qr(rng.standard_normal((6, 2)))
    coords = np.column_stack([rng.normal(0, 3.0, 40), rng.normal(0, 1.0, 40)])
    points = coords @ basis.T + rng.standard_normal(6)

    projection = pca_2d(list(points))
    assert not projection.rank_deficient
    np.testing.assert_allclose(_distances(projection.points), _distances(points), atol=1e-6)


def test_pca_of_2d_data_is_rigid_motion():
    rng = np.random.default_rng(2)
    points = np.column_stack([rng.normal(0, 2.0, 30), rng.normal(0, 0.5, 30)])
    projection = pca_2d(list(points))
    np.testing.assert_allclose(_distances(projection.points), _distances(points), atol=1e-8)
    np.testing.assert_allclose(projection.points.mean(axis=0), 0.0, atol=1e-12)


def test_pca_identical_points():
    projection = pca_2d([np.ones(4)] * 5)
    assert projection.rank_deficient
    assert not np.any(projection.points)


def test_pca_collinear_points_flagged():
    direction = np.array([1.0, 2.0, -1.0])
    projection = pca_2d([t * direction for t in (0.0, 1.0, 2.0, 5.0)])
    assert projection.rank_deficient
    assert not np.any(projection.points[:, 1])


def test_pca_needs_three_points():
    with pytest.raises(ValueError):
        pca_2d([np.ones(3), np.zeros(3)])


def test_eval_summary_to_dict():
    summary = EvalSummary(0.75, 0.5, None, 0.01, 0.02, 4)
    assert summary.to_dict()["robust_acc"] == 0.5
    assert summary.to_dict()["mean_cos"] is None
    assert summary.robust_acc * summary.n_examples == 2
