import numpy as np
import pytest

from counterattack.defense import (
    CounterattackConfig,
    DefenseKind,
    GateMode,
    GatePolarity,
    MomentumState,
    ProbeNoise,
    apply_defense,
    composite_direction,
    counterattack,
    directional_sensitivity,
    doc_counterattack,
    doc_step,
    fit_gate,
    gate_weight,
    momentum_update,
    normalized_gradient,
    orthogonal_component,
    ttc_counterattack,
)
from counterattack.encoder import Encoder, Layer, encode
from counterattack.tensor import STREAM_PROBE, example_streams, is_valid_image, linf_norm
from counterattack.zeroshot import cosine_score

EPS = 4 / 255


class FixedProbeRng:
    """모든 프로브 좌표에 같은 값을 돌려주는 난수 생성기 대역."""

    def __init__(self, value):
        self.value = value

    def uniform(self, low, high, size):
        return np.full(size, self.value)


@pytest.fixture
def constant_encoder():
    return Encoder("linear", [Layer(np.zeros((4, 48)), np.array([1.0, -2.0, 0.5, 3.0]))])


# ── 직교 성분 ──────────────────────────────────

def test_orthogonal_component_hand_cases():
    np.testing.assert_allclose(orthogonal_component(np.array([1.0, 0.0]), np.array([1.0, 1.0])), [0.0, 1.0])
    np.testing.assert_allclose(orthogonal_component(np.array([0.0, 1.0]), np.array([2.0, 0.0])), [1.0, 0.0])


def test_orthogonality_over_many_draws():
    rng = np.random.default_rng(192)
    for _ in range(1000):
        g = rng.standard_normal(192)
        g /= np.linalg.norm(g)
        r_perp = orthogonal_component(g, rng.standard_normal(192))
        assert abs(np.dot(r_perp, g)) <= 1e-10
        assert abs(np.linalg.norm(r_perp) - 1.0) <= 1e-10


def test_parallel_draw_is_resampled():
    g = np.array([0.0, 0.0, 1.0])
    r_perp = orthogonal_component(g, 5.0 * g, np.random.default_rng(0))
    assert abs(np.dot(r_perp, g)) <= 1e-12
    assert np.linalg.norm(r_perp) == pytest.approx(1.0)


def test_parallel_draw_without_rng_gives_zero():
    g = np.array([1.0, 0.0])
    assert not np.any(orthogonal_component(g, np.array([-3.0, 0.0])))


# ── 방향 합성, 모멘텀, 스텝 ─────────────────────

def test_composite_direction():
    g = np.array([1.0, 0.0])
    r_perp = np.array([0.0, 1.0])
    np.testing.assert_array_equal(composite_direction(g, r_perp, 0.0), g)
    np.testing.assert_array_equal(composite_direction(g, r_perp, 1.0), [1.0, 1.0])
    assert np.linalg.norm(composite_direction(g, r_perp, 2.5)) ** 2 == pytest.approx(1.0 + 2.5 ** 2)


@pytest.mark.parametrize("mu", [0.0, 0.5, 0.9])
def test_momentum_closed_form_for_constant_direction(mu):
    d = np.random.default_rng(1).standard_normal(10)
    state = MomentumState.zeros(d.shape)
    for t in range(1, 11):
        state = momentum_update(state, d, mu)
        assert np.max(np.abs(state.m - (1.0 - mu ** t) * d)) <= 1e-12


def test_momentum_first_step_and_zero_mu():
    d1, d2 = np.array([1.0, -2.0]), np.array([0.5, 4.0])
    state = momentum_update(MomentumState.zeros(2), d1, 0.9)
    np.testing.assert_allclose(state.m, 0.1 * d1)
    assert np.array_equal(momentum_update(state, d2, 0.0).m, d2)
    with pytest.raises(ValueError):
        momentum_update(state, d2, 1.0)


def test_doc_step_projects_and_keeps_zero_coordinates():
    alpha = 3 / 255
    state = MomentumState(np.array([1.0, 2.0, 0.0]))
    first = doc_step(np.zeros(3), state, alpha, EPS)
    np.testing.assert_allclose(first, [alpha, alpha, 0.0])
    second = doc_step(first, state, alpha, EPS)
    np.testing.assert_allclose(second, [EPS, EPS, 0.0])
    zero = MomentumState.zeros(3)
    assert np.array_equal(doc_step(second, zero, alpha, EPS), second)


# ── 정규화 기울기 ──────────────────────────────

def test_normalized_gradient_unit_norm_and_closed_form(linear_encoder, image):
    delta = np.random.default_rng(2).uniform(-EPS, EPS, size=image.shape)
    g, degenerate = normalized_gradient(linear_encoder, image, delta)
    assert not degenerate
    assert np.linalg.norm(g) == pytest.approx(1.0, abs=1e-12)

    w = linear_encoder.layers[0].weight
    expected = w.T @ (w @ delta.ravel())
    expected /= np.linalg.norm(expected)
    np.testing.assert_allclose(g.ravel(), expected, atol=1e-10)


def test_normalized_gradient_degenerate_at_anchor(encoder, image):
    g, degenerate = normalized_gradient(encoder, image, np.zeros_like(image))
    assert degenerate
    assert not np.any(g)


# ── 방향 민감도 점수와 게이트 ─────────────────────

def test_dss_is_zero_for_constant_encoder(constant_encoder, image):
    assert directional_sensitivity(constant_encoder, image, CounterattackConfig()) == pytest.approx(0.0, abs=1e-12)


def test_dss_collinear_probe():
    identity = Encoder("linear", [Layer(np.eye(2), np.zeros(2))])
    x = np.full((1, 1, 2), 0.5)
    config = CounterattackConfig(num_probes=1)
    tau_hat = directional_sensitivity(identity, x, config, rng=FixedProbeRng(EPS))
    assert tau_hat == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("noise", list(ProbeNoise))
def test_dss_matches_straight_line_loop(mlp_encoder, image, noise):
    config = CounterattackConfig(num_probes=8, seed=21, probe_noise=noise)
    rng = example_streams(21, 3)[STREAM_PROBE]
    reference = encode(mlp_encoder, image)
    cosines = []
    for _ in range(8):
        if noise is ProbeNoise.SIGN_GAUSSIAN:
            eta = EPS * np.sign(rng.standard_normal(image.shape))
        else:
            eta = rng.uniform(-EPS, EPS, size=image.shape)
        cosines.append(cosine_score(encode(mlp_encoder, np.clip(image + eta, 0.0, 1.0)), reference))
    expected = 1.0 - sum(cosines) / 8

    tau_hat = directional_sensitivity(mlp_encoder, image, config, example_index=3)
    assert tau_hat == pytest.approx(expected, abs=1e-12)
    assert 0.0 <= tau_hat <= 2.0


@pytest.mark.parametrize("gamma", [0.1, 1.0, 50.0, 1e6])
def test_gate_midpoint(gamma):
    assert gate_weight(0.3, 0.3, gamma) == 0.5


def test_gate_saturation_and_polarity():
    assert gate_weight(0.0, 0.4, 50.0) >= 1.0 - 1e-8
    assert gate_weight(0.4, 0.0, 50.0) <= 1e-8
    assert 0.0 < gate_weight(10.0, 0.0, 1e6) < 1.0
    assert 0.0 < gate_weight(0.0, 10.0, 1e6) < 1.0

    literal = gate_weight(0.1, 0.3, 5.0)
    inverted = gate_weight(0.1, 0.3, 5.0, GatePolarity.INVERTED)
    assert literal + inverted == pytest.approx(1.0, abs=1e-15)


def test_hard_gate():
    assert gate_weight(0.1, 0.3, 5.0, mode=GateMode.HARD) == 1.0
    assert gate_weight(0.3, 0.3, 5.0, mode=GateMode.HARD) == 1.0
    assert gate_weight(0.5, 0.3, 5.0, mode=GateMode.HARD) == 0.0
    assert gate_weight(0.5, 0.3, 5.0, GatePolarity.INVERTED, GateMode.HARD) == 1.0


def test_gate_rejects_non_positive_gamma():
    with pytest.raises(ValueError):
        gate_weight(0.1, 0.2, 0.0)


def test_fit_gate_separates_clean_from_adversarial():
    # τ̂ 간격이 1e-4 규모여도 보정된 γ로 가중치가 0.5에서 벗어난다
    clean = [1.00e-4, 1.02e-4, 0.98e-4]
    adv = [1.05e-4, 1.07e-4, 1.03e-4]
    calibration = fit_gate(clean, adv, gate_scale=4.0)
    assert calibration.tau == pytest.approx(1.025e-4)
    assert calibration.gamma == pytest.approx(4.0 / 5e-6)

    w_clean = gate_weight(calibration.mean_tau_hat_clean, calibration.tau, calibration.gamma)
    w_adv = gate_weight(calibration.mean_tau_hat_adv, calibration.tau, calibration.gamma)
    assert w_clean == pytest.approx(1.0 / (1.0 + np.exp(-2.0)))
    assert w_adv == pytest.approx(1.0 / (1.0 + np.exp(2.0)))
    assert gate_weight(calibration.mean_tau_hat_clean, 1.025e-4, 50.0) == pytest.approx(0.5, abs=1e-3)


def test_fit_gate_polarities_give_different_weights():
    calibration = fit_gate([0.2, 0.2], [0.3, 0.3], gate_scale=6.0)
    literal = gate_weight(0.3, calibration.tau, calibration.gamma)
    inverted = gate_weight(0.3, calibration.tau, calibration.gamma, GatePolarity.INVERTED)
    assert literal < 0.1 < 0.9 < inverted
    assert literal + inverted == pytest.approx(1.0)


def test_fit_gate_without_gap_uses_spread():
    calibration = fit_gate([0.1, 0.3], [0.3, 0.1], gate_scale=2.0)
    assert calibration.tau == pytest.approx(0.2)
    assert calibration.gamma == pytest.approx(2.0 / 0.1)


def test_fit_gate_constant_scores():
    calibration = fit_gate([0.2, 0.2], [0.2], gate_scale=3.0)
    assert calibration.gamma == 3.0
    assert gate_weight(0.2, calibration.tau, calibration.gamma) == 0.5


def test_fit_gate_rejects_empty_input():
    with pytest.raises(ValueError):
        fit_gate([], [0.1])


# ── 반격 ───────────────────────────────────────

def _assert_steps_in_budget(outcome, eps):
    delta = outcome.delta_init.copy()
    assert linf_norm(delta) <= eps + 1e-12
    for step in outcome.step_directions:
        delta = delta + step
        assert linf_norm(delta) <= eps + 1e-12
    assert linf_norm(outcome.delta_ca) <= eps + 1e-12


@pytest.mark.parametrize("kind", [DefenseKind.TTC, DefenseKind.DOC])
def test_counterattack_budget(encoder, images, kind):
    config = CounterattackConfig(eps_ca=EPS, steps=5, step_size=3 / 255, tau=0.01, gamma=20.0, seed=3)
    for i, x in enumerate(images):
        outcome = counterattack(kind, encoder, x, config, i)
        assert len(outcome.step_directions) == 5
        _assert_steps_in_budget(outcome, EPS)
        defended = apply_defense(x, outcome)
        assert is_valid_image(defended)
        assert linf_norm(defended - x) <= EPS + 1e-12


def test_doc_reduces_to_ttc(encoder):
    rng = np.random.default_rng(50)
    doc_config = CounterattackConfig(lam=0.0, mu=0.0, force_weight=1.0, steps=4, seed=8)
    ttc_config = CounterattackConfig(steps=4, seed=8)
    for i in range(50):
        x = rng.uniform(0.0, 1.0, size=(3, 4, 4))
        doc = doc_counterattack(encoder, x, doc_config, i)
        ttc = ttc_counterattack(encoder, x, ttc_config, i)
        assert np.max(np.abs(doc.delta_ca - ttc.delta_ca)) <= 1e-12


def test_ttc_without_steps_returns_initial_perturbation(encoder, image):
    outcome = ttc_counterattack(encoder, image, CounterattackConfig(steps=0), 0)
    assert np.array_equal(outcome.delta_ca, outcome.delta_init)
    assert outcome.dss is None
    assert outcome.weight == 1.0


def test_doc_is_deterministic(encoder, image):
    config = CounterattackConfig(tau=0.02, gamma=50.0, seed=4)
    a = doc_counterattack(encoder, image, config, 7)
    b = doc_counterattack(encoder, image, config, 7)
    assert np.array_equal(a.delta_ca, b.delta_ca)
    assert a.dss == b.dss


def test_doc_final_blend(encoder, image):
    free = doc_counterattack(encoder, image, CounterattackConfig(force_weight=1.0, seed=2), 0)
    frozen = doc_counterattack(encoder, image, CounterattackConfig(force_weight=0.0, seed=2), 0)
    half = doc_counterattack(encoder, image, CounterattackConfig(force_weight=0.5, seed=2), 0)
    assert np.array_equal(frozen.delta_ca, frozen.delta_init)
    np.testing.assert_allclose(half.delta_ca, 0.5 * free.delta_ca + 0.5 * free.delta_init, atol=1e-15)


def test_doc_weight_follows_gate(encoder, image):
    config = CounterattackConfig(tau=0.05, gamma=30.0, seed=6)
    outcome = doc_counterattack(encoder, image, config, 1)
    assert outcome.weight == gate_weight(outcome.dss.tau_hat, 0.05, 30.0)


def test_doc_degenerate_gradient_still_moves(constant_encoder, image):
    outcome = doc_counterattack(constant_encoder, image, CounterattackConfig(force_weight=1.0, steps=3), 0)
    assert outcome.degenerate_steps == 3
    assert outcome.dss.tau_hat == pytest.approx(0.0, abs=1e-12)
    assert not np.array_equal(outcome.delta_ca, outcome.delta_init)
    _assert_steps_in_budget(outcome, EPS)


def test_doc_requires_tau(encoder, image):
    with pytest.raises(ValueError):
        doc_counterattack(encoder, image, CounterattackConfig(), 0)
    with pytest.raises(ValueError):
        doc_counterattack(encoder, image, CounterattackConfig(tau=0.1), 0)


def test_zero_budget_leaves_input_unchanged(encoder, image):
    for kind in DefenseKind:
        outcome = counterattack(kind, encoder, image, CounterattackConfig(eps_ca=0.0, tau=0.1, gamma=50.0), 0)
        assert np.array_equal(apply_defense(image, outcome), image)


def test_none_defense_is_identity(encoder, image):
    outcome = counterattack(DefenseKind.NONE, encoder, image, CounterattackConfig(), 0)
    assert np.array_equal(apply_defense(image, outcome), image)


def test_invalid_input_rejected(encoder, image):
    with pytest.raises(ValueError):
        ttc_counterattack(encoder, image - 1.0, CounterattackConfig(), 0)
