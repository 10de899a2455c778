"""
counterattack/attack.py
-----------------------
ℓ∞ 제약 적대적 예제 생성 (PGD, CW-margin PGD)과 방어 쪽과 공유하는
투영/클리핑 유틸리티.

δ ← Π_ε(δ + step_size · sign(∇_x L)) 를 steps번 반복하며, 기울기는 매번
clip(x + δ)에서 계산한다. 마지막 출력도 clip(x + δ)이다.
"""

import enum
import logging
from dataclasses import dataclass, replace

import numpy as np

from counterattack.encoder import CwMargin, Encoder, EmbeddingLoss, NegCrossEntropy, loss_value_and_input_gradient
from counterattack.tensor import STREAM_INIT, example_streams, is_valid_image
from counterattack.zeroshot import ClassAnchorSet

logger = logging.getLogger(__name__)


class LossKind(str, enum.Enum):
    CROSS_ENTROPY = "cross_entropy"
    CW_MARGIN = "cw_margin"


@dataclass(frozen=True)
class AttackConfig:
    """PGD 공격 설정.

    Attributes:
        eps_atk: ℓ∞ 예산 (픽셀 단위)
        steps: 반복 횟수 (PGD-10이면 10)
        step_size: 한 스텝의 크기 (픽셀 단위)
        loss_kind: 상승시킬 손실 종류
        random_init: True이면 δ⁰ ~ U(−ε, ε), 아니면 δ⁰ = 0
        seed: 예제별 난수 스트림의 루트 시드
        temperature: cross-entropy 손실의 소프트맥스 온도
    """

    eps_atk: float = 4 / 255
    steps: int = 10
    step_size: float = 1 / 255
    loss_kind: LossKind = LossKind.CROSS_ENTROPY
    random_init: bool = True
    seed: int = 0
    temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "loss_kind", LossKind(self.loss_kind))
        if not 0.0 <= self.eps_atk <= 1.0:
            raise ValueError(f"eps_atk는 [0, 1] 범위여야 합니다: {self.eps_atk}")
        if self.steps < 0:
            raise ValueError(f"steps는 0 이상이어야 합니다: {self.steps}")
        if self.step_size <= 0:
            raise ValueError(f"step_size는 양수여야 합니다: {self.step_size}")
        if self.temperature <= 0:
            raise ValueError(f"temperature는 양수여야 합니다: {self.temperature}")
        if self.step_size > self.eps_atk > 0:
            logger.warning(
                "공격 step_size(%.5f)가 eps_atk(%.5f)보다 큽니다 — 매 스텝이 경계로 투영됩니다.",
                self.step_size, self.eps_atk,
            )


def project_linf(delta: np.ndarray, eps: float) -> np.ndarray:
    """각 좌표를 [−eps, eps]로 자른다."""
    if eps < 0:
        raise ValueError(f"eps는 0 이상이어야 합니다: {eps}")
    return np.clip(np.asarray(delta, dtype=np.float64), -eps, eps)


def clip_to_image(x: np.ndarray) -> np.ndarray:
    """각 좌표를 유효 픽셀 범위 [0, 1]로 자른다."""
    return np.clip(np.asarray(x, dtype=np.float64), 0.0, 1.0)


def _attack_loss(anchors: ClassAnchorSet, label: int, config: AttackConfig) -> EmbeddingLoss:
    if config.loss_kind is LossKind.CW_MARGIN:
        return CwMargin(anchors, label)
    return NegCrossEntropy(anchors, label, config.temperature)


def pgd_attack(
    encoder: Encoder,
    anchors: ClassAnchorSet,
    image: np.ndarray,
    label: int,
    config: AttackConfig,
    example_index: int = 0,
) -> np.ndarray:
    """설정된 손실을 상승시키는 ℓ∞ PGD로 적대적 이미지를 만든다.

    Args:
        encoder: 공격 대상 인코더
        anchors: 제로샷 분류 앵커
        image: [0, 1] 범위의 원본 이미지
        label: 정답 클래스
        config: 공격 설정
        example_index: 예제별 난수 스트림 인덱스

    Returns:
        clip(x + δ_atk), ‖δ_atk‖∞ ≤ eps_atk
    """
    x = np.asarray(image, dtype=np.float64)
    if not is_valid_image(x):
        raise ValueError("공격 입력은 [0, 1] 범위의 유효한 이미지여야 합니다.")
    if not 0 <= int(label) < anchors.num_classes:
        raise ValueError(f"label은 [0, {anchors.num_classes}) 범위여야 합니다: {label}")

    loss = _attack_loss(anchors, label, config)
    eps = config.eps_atk
    if config.random_init:
        rng = example_streams(config.seed, example_index)[STREAM_INIT]
        delta = rng.uniform(-eps, eps, size=x.shape)
    else:
        delta = np.zeros_like(x)

    for step in range(config.steps):
        value, grad = loss_value_and_input_gradient(encoder, clip_to_image(x + delta), loss)
        delta = project_linf(delta + config.step_size * np.sign(grad), eps)
        logger.debug("PGD step %d/%d — index=%d, loss=%.6f", step + 1, config.steps, example_index, value)

    return clip_to_image(x + delta)


def cw_attack(
    encoder: Encoder,
    anchors: ClassAnchorSet,
    image: np.ndarray,
    label: int,
    config: AttackConfig,
    example_index: int = 0,
) -> np.ndarray:
    """CW margin 손실을 상승시키는 PGD. loss_kind 외의 설정은 config를 그대로 쓴다."""
    return pgd_attack(encoder, anchors, image, label, replace(config, loss_kind=LossKind.CW_MARGIN), example_index)


def run_attack(
    encoder: Encoder,
    anchors: ClassAnchorSet,
    image: np.ndarray,
    label: int,
    config: AttackConfig,
    example_index: int = 0,
) -> np.ndarray:
    """config.loss_kind에 맞는 공격을 실행한다."""
    if config.loss_kind is LossKind.CW_MARGIN:
        return cw_attack(encoder, anchors, image, label, config, example_index)
    return pgd_attack(encoder, anchors, image, label, config, example_index)
