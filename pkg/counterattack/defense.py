"""
counterattack/defense.py
------------------------
테스트 시점 반격(counterattack) 방어.

    - TTC : ‖I(x + δ) − I(x)‖₂ 를 PGD로 최대화하는 기준 방법
    - DOC : 정규화 기울기 g에 직교 랜덤 성분 λ·r⊥를 더한 방향을 모멘텀으로
            누적해 sign 스텝을 밟고, 방향 민감도 점수(DSS) τ̂로 정한 가중치 w로
            최종 δ_ca = w·δ_ca + (1 − w)·δ⁰ 를 만든다.

모든 난수는 (config.seed, example_index)에서 파생된 용도별 스트림에서 뽑는다.
δ⁰는 STREAM_INIT에서 뽑으므로 같은 시드의 TTC와 DOC가 같은 δ⁰를 공유한다.
"""

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from counterattack.attack import clip_to_image, project_linf
from counterattack.encoder import Encoder, L2DistanceToAnchor, encode, loss_value_and_input_gradient
from counterattack.tensor import STREAM_INIT, STREAM_ORTHO, STREAM_PROBE, example_streams, is_valid_image
from counterattack.zeroshot import cosine_score

logger = logging.getLogger(__name__)

# 기울기/잔차 노름이 이 값보다 작으면 0으로 본다
_DEGENERATE_NORM = 1e-12
# r이 g와 평행할 때 다시 뽑는 최대 횟수
_MAX_RESAMPLES = 8
# 게이트 가중치를 (0, 1) 안쪽에 유지하기 위한 여유
_WEIGHT_MARGIN = float(np.finfo(np.float64).eps)


class DefenseKind(str, enum.Enum):
    NONE = "none"
    TTC = "ttc"
    DOC = "doc"


class ProbeNoise(str, enum.Enum):
    UNIFORM_BALL = "uniform_ball"     # η ~ U(−ε_ca, ε_ca)
    SIGN_GAUSSIAN = "sign_gaussian"   # η = ε_ca · sign(N(0, 1))


class GatePolarity(str, enum.Enum):
    LITERAL = "literal"     # w = σ(γ(τ − τ̂))
    INVERTED = "inverted"   # w = σ(γ(τ̂ − τ))


class GateMode(str, enum.Enum):
    SOFT = "soft"
    HARD = "hard"


@dataclass(frozen=True)
class CounterattackConfig:
    """반격 설정.

    Attributes:
        eps_ca: 반격 ℓ∞ 예산 ε_ca
        steps: 반복 횟수 T
        step_size: 스텝 크기 α
        lam: 직교 성분 세기 λ
        mu: 모멘텀 계수 μ ∈ [0, 1)
        num_probes: DSS 프로브 수 M
        tau: 게이트 임계값 τ. None이면 실험에서 보정한다
        gamma: 게이트 기울기 γ. None이면 보정 분할의 τ̂ 차이로 정한다
        gate_scale: 보정된 γ가 깨끗한/적대적 평균 τ̂ 사이에 두는 시그모이드 인자 폭
        probe_noise: DSS 프로브 노이즈 분포
        seed: 예제별 난수 스트림의 루트 시드
        gate_polarity: 게이트 부호 규약
        gate_mode: soft(시그모이드) 또는 hard(계단) 게이트
        force_weight: 지정하면 게이트 대신 이 가중치를 사용한다
    """

    eps_ca: float = 4 / 255
    steps: int = 4
    step_size: float = 3 / 255
    lam: float = 1.0
    mu: float = 0.9
    num_probes: int = 8
    tau: float | None = None
    gamma: float | None = None
    gate_scale: float = 4.0
    probe_noise: ProbeNoise = ProbeNoise.UNIFORM_BALL
    seed: int = 0
    gate_polarity: GatePolarity = GatePolarity.LITERAL
    gate_mode: GateMode = GateMode.SOFT
    force_weight: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "probe_noise", ProbeNoise(self.probe_noise))
        object.__setattr__(self, "gate_polarity", GatePolarity(self.gate_polarity))
        object.__setattr__(self, "gate_mode", GateMode(self.gate_mode))
        if self.eps_ca < 0:
            raise ValueError(f"eps_ca는 0 이상이어야 합니다: {self.eps_ca}")
        if self.steps < 0:
            raise ValueError(f"steps는 0 이상이어야 합니다: {self.steps}")
        if self.step_size <= 0:
            raise ValueError(f"step_size는 양수여야 합니다: {self.step_size}")
        if self.lam < 0:
            raise ValueError(f"lam은 0 이상이어야 합니다: {self.lam}")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError(f"mu는 [0, 1) 범위여야 합니다: {self.mu}")
        if self.num_probes < 1:
            raise ValueError(f"num_probes는 1 이상이어야 합니다: {self.num_probes}")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError(f"gamma는 양수여야 합니다: {self.gamma}")
        if self.gate_scale <= 0:
            raise ValueError(f"gate_scale은 양수여야 합니다: {self.gate_scale}")
        if self.force_weight is not None and not 0.0 <= self.force_weight <= 1.0:
            raise ValueError(f"force_weight는 [0, 1] 범위여야 합니다: {self.force_weight}")


@dataclass(frozen=True)
class MomentumState:
    """모멘텀 누적 벡터 m_t. 초기값은 0 벡터."""

    m: np.ndarray

    @classmethod
    def zeros(cls, shape) -> "MomentumState":
        return cls(np.zeros(shape, dtype=np.float64))


@dataclass(frozen=True)
class DssResult:
    tau_hat: float
    weight: float


@dataclass(frozen=True)
class CounterattackOutcome:
    """반격 결과.

    Attributes:
        delta_ca: 최종 δ_ca
        delta_init: 초기 랜덤 섭동 δ⁰_ca
        dss: DOC의 τ̂와 w. TTC는 게이트가 없으므로 None
        step_directions: 스텝별 실제 갱신량 δ_{t+1} − δ_t
        degenerate_steps: 기울기가 0이라 순수 직교 방향을 쓴 스텝 수
    """

    delta_ca: np.ndarray
    delta_init: np.ndarray
    dss: DssResult | None
    step_directions: tuple[np.ndarray, ...] = field(default=())
    degenerate_steps: int = 0

    @property
    def weight(self) -> float:
        return 1.0 if self.dss is None else self.dss.weight


class NormalizedGradient(NamedTuple):
    direction: np.ndarray
    degenerate: bool


# ──────────────────────────────────────────────
# 직교 기울기 증강 구성 요소
# ──────────────────────────────────────────────

def normalized_gradient(encoder: Encoder, x_input: np.ndarray, delta: np.ndarray) -> NormalizedGradient:
    """g = ∇L / ‖∇L‖₂, L = ‖I(clip(x + δ)) − I(x)‖₂.

    ‖∇L‖₂ < 1e-12이면 0 벡터와 degenerate=True를 반환한다.
    """
    x = np.asarray(x_input, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if x.shape != delta.shape:
        raise ValueError(f"x_input {x.shape}와 delta {delta.shape}의 모양이 다릅니다.")
    loss = L2DistanceToAnchor(encode(encoder, x))
    _, grad = loss_value_and_input_gradient(encoder, clip_to_image(x + delta), loss)
    norm = float(np.linalg.norm(grad))
    if norm < _DEGENERATE_NORM:
        return NormalizedGradient(np.zeros_like(x), True)
    return NormalizedGradient(grad / norm, False)


def orthogonal_component(
    g: np.ndarray, r: np.ndarray, rng: np.random.Generator | None = None
) -> np.ndarray:
    """r에서 g 방향 성분을 제거하고 정규화한 r⊥.

    잔차 노름이 1e-12보다 작으면(r ∥ g) rng로 r을 최대 8번 다시 뽑고,
    그래도 안 되면 0 벡터를 반환한다.
    """
    g = np.asarray(g, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if g.shape != r.shape:
        raise ValueError(f"g {g.shape}와 r {r.shape}의 모양이 다릅니다.")
    for attempt in range(_MAX_RESAMPLES + 1):
        residual = r - np.vdot(r, g) * g
        norm = float(np.linalg.norm(residual))
        if norm >= _DEGENERATE_NORM:
            return residual / norm
        if rng is None:
            break
        logger.debug("r이 g와 평행 — 재추출 %d/%d", attempt + 1, _MAX_RESAMPLES)
        r = rng.standard_normal(g.shape)
    return np.zeros_like(g)


def composite_direction(g: np.ndarray, r_perp: np.ndarray, lam: float) -> np.ndarray:
    """d = g + λ·r⊥"""
    g = np.asarray(g, dtype=np.float64)
    r_perp = np.asarray(r_perp, dtype=np.float64)
    if g.shape != r_perp.shape:
        raise ValueError(f"g {g.shape}와 r⊥ {r_perp.shape}의 모양이 다릅니다.")
    return g + lam * r_perp


def momentum_update(state: MomentumState, d: np.ndarray, mu: float) -> MomentumState:
    """m_t = μ·m_{t−1} + (1 − μ)·d"""
    if not 0.0 <= mu < 1.0:
        raise ValueError(f"mu는 [0, 1) 범위여야 합니다: {mu}")
    d = np.asarray(d, dtype=np.float64)
    if d.shape != state.m.shape:
        raise ValueError(f"모멘텀 {state.m.shape}와 방향 {d.shape}의 모양이 다릅니다.")
    return MomentumState(mu * state.m + (1.0 - mu) * d)


def doc_step(delta: np.ndarray, state: MomentumState, alpha: float, eps_ca: float) -> np.ndarray:
    """δ ← Π_{ε_ca}(δ + α·sign(m_t)). sign(0) = 0이므로 모멘텀이 0인 좌표는 움직이지 않는다."""
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != state.m.shape:
        raise ValueError(f"delta {delta.shape}와 모멘텀 {state.m.shape}의 모양이 다릅니다.")
    return project_linf(delta + alpha * np.sign(state.m), eps_ca)


# ──────────────────────────────────────────────
# 방향 민감도 점수와 게이트
# ──────────────────────────────────────────────

def draw_probe_noise(shape, config: CounterattackConfig, rng: np.random.Generator) -> np.ndarray:
    """설정된 분포로 프로브 노이즈 η 하나를 뽑는다."""
    eps = config.eps_ca
    if config.probe_noise is ProbeNoise.SIGN_GAUSSIAN:
        return eps * np.sign(rng.standard_normal(shape))
    return rng.uniform(-eps, eps, size=shape)


def directional_sensitivity(
    encoder: Encoder,
    x_input: np.ndarray,
    config: CounterattackConfig,
    example_index: int = 0,
    rng: np.random.Generator | None = None,
) -> float:
    """τ̂(x) = 1 − (1/M) Σ_m cos(I(clip(x + η^m)), I(x)). 결과는 [0, 2]로 제한한다.

    Args:
        encoder: 인코더
        x_input: 입력 이미지 (깨끗한 입력이든 적대적 입력이든 구분하지 않는다)
        config: num_probes, eps_ca, probe_noise를 사용한다
        example_index: rng가 없을 때 프로브 스트림을 고르는 인덱스
        rng: 직접 지정한 프로브 난수 생성기
    """
    x = np.asarray(x_input, dtype=np.float64)
    if rng is None:
        rng = example_streams(config.seed, example_index)[STREAM_PROBE]
    reference = encode(encoder, x)
    total = 0.0
    for _ in range(config.num_probes):
        eta = draw_probe_noise(x.shape, config, rng)
        total += cosine_score(encode(encoder, clip_to_image(x + eta)), reference)
    tau_hat = 1.0 - total / config.num_probes
    return min(2.0, max(0.0, tau_hat))


def gate_weight(
    tau_hat: float,
    tau: float,
    gamma: float,
    polarity: GatePolarity = GatePolarity.LITERAL,
    mode: GateMode = GateMode.SOFT,
) -> float:
    """w = σ(γ(τ − τ̂)) (literal). inverted 극성은 인자의 부호를 뒤집는다.

    soft 모드 결과는 (0, 1) 안쪽으로 유지된다. hard 모드는 인자 ≥ 0이면 1, 아니면 0.
    """
    if gamma <= 0:
        raise ValueError(f"gamma는 양수여야 합니다: {gamma}")
    z = gamma * (tau - tau_hat)
    if GatePolarity(polarity) is GatePolarity.INVERTED:
        z = -z
    if GateMode(mode) is GateMode.HARD:
        return 1.0 if z >= 0 else 0.0
    if z >= 0:
        w = 1.0 / (1.0 + math.exp(-z))
    else:
        ez = math.exp(z)
        w = ez / (1.0 + ez)
    return min(1.0 - _WEIGHT_MARGIN, max(_WEIGHT_MARGIN, w))


class GateCalibration(NamedTuple):
    tau: float
    gamma: float
    mean_tau_hat_clean: float
    mean_tau_hat_adv: float


def fit_gate(clean_scores, adv_scores, gate_scale: float = 4.0) -> GateCalibration:
    """보정 분할의 τ̂로 게이트 임계값과 기울기를 정한다.

    τ는 두 평균의 중간값이고, γ = gate_scale / |평균 차이|이므로 두 평균에서
    시그모이드 인자가 ±gate_scale/2가 된다. 평균 차이가 0이면 전체 τ̂의
    표준편차로 나누고, 그것도 0이면 γ = gate_scale로 둔다 (모든 가중치가 0.5).
    """
    clean = np.asarray(clean_scores, dtype=np.float64)
    adv = np.asarray(adv_scores, dtype=np.float64)
    if clean.size == 0 or adv.size == 0:
        raise ValueError("게이트 보정에는 깨끗한/적대적 τ̂가 하나 이상씩 필요합니다.")
    if gate_scale <= 0:
        raise ValueError(f"gate_scale은 양수여야 합니다: {gate_scale}")
    mean_clean, mean_adv = float(clean.mean()), float(adv.mean())
    tau = 0.5 * (mean_clean + mean_adv)
    spread = abs(mean_adv - mean_clean)
    if spread <= _DEGENERATE_NORM:
        spread = float(np.concatenate([clean, adv]).std())
    if spread <= _DEGENERATE_NORM:
        logger.warning("τ̂ 분산이 0 — gamma=%.3f로 둡니다 (게이트 가중치 0.5).", gate_scale)
        return GateCalibration(tau, float(gate_scale), mean_clean, mean_adv)
    return GateCalibration(tau, float(gate_scale / spread), mean_clean, mean_adv)


def _resolve_weight(tau_hat: float, config: CounterattackConfig) -> float:
    if config.force_weight is not None:
        return float(config.force_weight)
    if config.tau is None or config.gamma is None:
        raise ValueError("DOC 게이트에는 tau와 gamma가 필요합니다 — 설정하거나 calibrate_gate로 보정하세요.")
    return gate_weight(tau_hat, config.tau, config.gamma, config.gate_polarity, config.gate_mode)


# ──────────────────────────────────────────────
# 반격
# ──────────────────────────────────────────────

def _check_input(x_input: np.ndarray) -> np.ndarray:
    x = np.asarray(x_input, dtype=np.float64)
    if not is_valid_image(x):
        raise ValueError("반격 입력은 [0, 1] 범위의 유효한 이미지여야 합니다.")
    return x


def ttc_counterattack(
    encoder: Encoder, x_input: np.ndarray, config: CounterattackConfig, example_index: int = 0
) -> CounterattackOutcome:
    """TTC: δ⁰ ~ U(−ε_ca, ε_ca)에서 시작해 δ ← Π(δ + α·sign(∇L))를 T번 반복한다.

    직교 성분, 모멘텀, 게이트가 없다 (w = 1).
    """
    x = _check_input(x_input)
    eps = config.eps_ca
    init_rng = example_streams(config.seed, example_index)[STREAM_INIT]
    delta_init = init_rng.uniform(-eps, eps, size=x.shape)
    delta = delta_init.copy()
    anchor_loss = L2DistanceToAnchor(encode(encoder, x))

    directions = []
    for step in range(config.steps):
        _, grad = loss_value_and_input_gradient(encoder, clip_to_image(x + delta), anchor_loss)
        updated = project_linf(delta + config.step_size * np.sign(grad), eps)
        directions.append(updated - delta)
        delta = updated
        logger.debug("TTC step %d/%d — index=%d", step + 1, config.steps, example_index)

    return CounterattackOutcome(delta, delta_init, None, tuple(directions), 0)


def doc_counterattack(
    encoder: Encoder, x_input: np.ndarray, config: CounterattackConfig, example_index: int = 0
) -> CounterattackOutcome:
    """DOC 전체 절차.

    1. DSS: M개 프로브로 τ̂를 구하고 게이트 가중치 w를 정한다.
    2. m₀ = 0, δ⁰ ~ U(−ε_ca, ε_ca).
    3. t = 1..T: g, r ~ N(0, 1), r⊥, d = g + λr⊥, m_t, δ ← Π(δ + α·sign(m_t)).
       기울기가 0인 스텝은 고정 축 e₀에 대해 만든 r⊥로 d = λ·r⊥를 쓴다.
    4. δ_ca = w·δ_ca + (1 − w)·δ⁰.
    """
    x = _check_input(x_input)
    eps = config.eps_ca
    streams = example_streams(config.seed, example_index)
    init_rng, probe_rng, ortho_rng = streams[STREAM_INIT], streams[STREAM_PROBE], streams[STREAM_ORTHO]

    tau_hat = directional_sensitivity(encoder, x, config, rng=probe_rng)
    weight = _resolve_weight(tau_hat, config)

    delta_init = init_rng.uniform(-eps, eps, size=x.shape)
    delta = delta_init.copy()
    state = MomentumState.zeros(x.shape)
    fixed_axis = np.zeros(x.size)
    fixed_axis[0] = 1.0
    fixed_axis = fixed_axis.reshape(x.shape)

    directions = []
    degenerate_steps = 0
    for step in range(config.steps):
        g, degenerate = normalized_gradient(encoder, x, delta)
        r = ortho_rng.standard_normal(x.shape)
        if degenerate:
            degenerate_steps += 1
            r_perp = orthogonal_component(fixed_axis, r, ortho_rng)
        else:
            r_perp = orthogonal_component(g, r, ortho_rng)
        d = composite_direction(g, r_perp, config.lam)
        state = momentum_update(state, d, config.mu)
        updated = doc_step(delta, state, config.step_size, eps)
        directions.append(updated - delta)
        delta = updated
        logger.debug(
            "DOC step %d/%d — index=%d, degenerate=%s", step + 1, config.steps, example_index, degenerate
        )

    delta_ca = weight * delta + (1.0 - weight) * delta_init
    logger.debug("DOC 완료 — index=%d, tau_hat=%.6f, w=%.6f", example_index, tau_hat, weight)
    return CounterattackOutcome(delta_ca, delta_init, DssResult(tau_hat, weight), tuple(directions), degenerate_steps)


def counterattack(
    kind: DefenseKind | str,
    encoder: Encoder,
    x_input: np.ndarray,
    config: CounterattackConfig,
    example_index: int = 0,
) -> CounterattackOutcome:
    """DefenseKind에 맞는 반격을 실행한다. NONE은 δ_ca = 0인 결과를 돌려준다."""
    kind = DefenseKind(kind)
    if kind is DefenseKind.TTC:
        return ttc_counterattack(encoder, x_input, config, example_index)
    if kind is DefenseKind.DOC:
        return doc_counterattack(encoder, x_input, config, example_index)
    zeros = np.zeros_like(np.asarray(x_input, dtype=np.float64))
    return CounterattackOutcome(zeros, zeros.copy(), None)


def apply_defense(x_input: np.ndarray, outcome: CounterattackOutcome) -> np.ndarray:
    """x_ca = clip(x + δ_ca)"""
    x = np.asarray(x_input, dtype=np.float64)
    if x.shape != outcome.delta_ca.shape:
        raise ValueError(f"x_input {x.shape}와 δ_ca {outcome.delta_ca.shape}의 모양이 다릅니다.")
    return clip_to_image(x + outcome.delta_ca)
