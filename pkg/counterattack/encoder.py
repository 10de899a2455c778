"""
counterattack/encoder.py
------------------------
미분 가능한 이미지 인코더 I_θ 와 임베딩 손실.

    - Linear : e = W x + b
    - Mlp    : 은닉층은 tanh(W x + b), 마지막 층은 활성화 없는 affine

입력 기울기는 레이어별로 손으로 유도한 역전파(reverse-mode)로 정확히 계산하고,
중앙 차분(finite_difference_gradient)을 테스트 오라클로 제공한다.
인코더는 생성 후 변경되지 않으므로 여러 스레드에서 동시에 호출해도 안전하다.
"""

import enum
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from counterattack import paramfile, zeroshot
from counterattack.errors import DimensionMismatchError, NumericalError, ParameterFileError
from counterattack.zeroshot import ClassAnchorSet

logger = logging.getLogger(__name__)


class EncoderKind(str, enum.Enum):
    LINEAR = "linear"
    MLP = "mlp"


@dataclass(frozen=True)
class Layer:
    """affine 레이어 하나. weight: (out, in), bias: (out,)"""

    weight: np.ndarray
    bias: np.ndarray


class Encoder:
    """파라미터 θ로 고정된 결정적 인코더."""

    def __init__(self, kind: EncoderKind | str, layers: list[Layer] | tuple[Layer, ...]):
        """
        Args:
            kind: EncoderKind 또는 그 문자열 값
            layers: 입력 쪽부터 순서대로 나열한 affine 레이어들

        Raises:
            ValueError: 레이어가 없거나 kind와 레이어 수가 맞지 않을 때
            DimensionMismatchError: 레이어 차원이 체인으로 이어지지 않을 때
        """
        self.kind = EncoderKind(kind)
        if not layers:
            raise ValueError("인코더에는 최소 한 개의 레이어가 필요합니다.")
        if self.kind is EncoderKind.LINEAR and len(layers) != 1:
            raise ValueError(f"Linear 인코더는 레이어가 정확히 1개여야 합니다: {len(layers)}개")

        frozen = []
        for i, layer in enumerate(layers):
            w = np.array(layer.weight, dtype=np.float64)
            b = np.array(layer.bias, dtype=np.float64).ravel()
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionMismatchError(
                    f"레이어 {i}: weight {w.shape}와 bias {b.shape}의 모양이 맞지 않습니다."
                )
            if frozen and frozen[-1].weight.shape[0] != w.shape[1]:
                raise DimensionMismatchError(
                    f"레이어 {i}의 입력 폭 {w.shape[1]}이 이전 레이어 출력 폭 "
                    f"{frozen[-1].weight.shape[0]}과 다릅니다."
                )
            w.setflags(write=False)
            b.setflags(write=False)
            frozen.append(Layer(w, b))
        self.layers: tuple[Layer, ...] = tuple(frozen)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *(layer.weight.shape[0] for layer in self.layers))

    def __repr__(self) -> str:
        return f"Encoder(kind={self.kind.value}, layer_dims={self.layer_dims})"

    def _flatten_input(self, image: np.ndarray) -> np.ndarray:
        x = np.asarray(image, dtype=np.float64).ravel()
        if x.size != self.input_dim:
            raise DimensionMismatchError(
                f"입력 길이 {x.size}가 인코더 input_dim {self.input_dim}과 다릅니다."
            )
        return x

    def forward(self, image: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """순전파를 수행하고 역전파용 레이어 입력 캐시를 함께 반환한다.

        Returns:
            (embedding, cache) — cache[i]는 레이어 i의 입력, cache[-1]은 출력
        """
        h = self._flatten_input(image)
        cache = [h]
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z = layer.weight @ h + layer.bias
            h = z if i == last else np.tanh(z)
            if not np.all(np.isfinite(h)):
                raise NumericalError("순전파 중 유한하지 않은 값이 발생했습니다.", layer_index=i)
            cache.append(h)
        return h, cache

    def backward(self, cache: list[np.ndarray], grad_out: np.ndarray) -> np.ndarray:
        """출력 기울기 ∂L/∂e를 입력 기울기 ∂L/∂x로 역전파한다."""
        grad = np.asarray(grad_out, dtype=np.float64)
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            if i != last:
                # cache[i + 1] = tanh(z_i) → dtanh = 1 − tanh²
                grad = grad * (1.0 - cache[i + 1] ** 2)
            grad = self.layers[i].weight.T @ grad
            if not np.all(np.isfinite(grad)):
                raise NumericalError("역전파 중 유한하지 않은 값이 발생했습니다.", layer_index=i)
        return grad


# ──────────────────────────────────────────────
# 임베딩 손실
# ──────────────────────────────────────────────

class EmbeddingLoss(Protocol):
    """임베딩 e에 대한 스칼라 손실과 ∂L/∂e를 제공하는 객체."""

    def value_and_grad(self, embedding: np.ndarray) -> tuple[float, np.ndarray]:
        ...


@dataclass(frozen=True)
class L2DistanceToAnchor:
    """‖e − anchor‖_p. 기본 p = 2.

    e가 anchor와 정확히 같으면 기울기는 0 벡터로 정의한다 (노름의 비미분점).
    """

    anchor: np.ndarray
    norm_ord: float = 2.0

    def __post_init__(self):
        if not np.isfinite(self.norm_ord) or self.norm_ord < 1.0:
            raise ValueError(f"norm_ord는 1 이상의 유한한 값이어야 합니다: {self.norm_ord}")

    def value_and_grad(self, embedding: np.ndarray) -> tuple[float, np.ndarray]:
        e = np.asarray(embedding, dtype=np.float64).ravel()
        anchor = np.asarray(self.anchor, dtype=np.float64).ravel()
        if e.size != anchor.size:
            raise DimensionMismatchError(f"앵커 차원 {anchor.size}이 임베딩 차원 {e.size}과 다릅니다.")
        diff = e - anchor
        p = self.norm_ord
        dist = float(np.linalg.norm(diff, ord=p))
        if dist == 0.0:
            return 0.0, np.zeros_like(diff)
        if p == 2.0:
            return dist, diff / dist
        grad = np.sign(diff) * np.abs(diff) ** (p - 1.0) / dist ** (p - 1.0)
        return dist, grad


@dataclass(frozen=True)
class NegCrossEntropy:
    """−log P(y = label | x) (공격이 상승시키는 표준 cross-entropy)."""

    anchors: ClassAnchorSet
    label: int
    temperature: float = 1.0

    def value_and_grad(self, embedding: np.ndarray) -> tuple[float, np.ndarray]:
        return zeroshot.cross_entropy_value_and_grad(embedding, self.anchors, self.label, self.temperature)


@dataclass(frozen=True)
class CwMargin:
    """max_{j≠label} s_j − s_label."""

    anchors: ClassAnchorSet
    label: int

    def value_and_grad(self, embedding: np.ndarray) -> tuple[float, np.ndarray]:
        return zeroshot.cw_margin_value_and_grad(embedding, self.anchors, self.label)


# ──────────────────────────────────────────────
# 연산
# ──────────────────────────────────────────────

def encode(encoder: Encoder, image: np.ndarray) -> np.ndarray:
    """I_θ(x). 같은 입력에 대해 항상 비트 단위로 같은 결과를 낸다.

    Raises:
        DimensionMismatchError: 입력 길이가 input_dim과 다를 때
    """
    embedding, _ = encoder.forward(image)
    return embedding


def loss_value_and_input_gradient(
    encoder: Encoder, image: np.ndarray, loss: EmbeddingLoss
) -> tuple[float, np.ndarray]:
    """L(I_θ(x))와 ∇_x L을 역전파로 계산한다. 기울기는 입력과 같은 모양이다.

    Raises:
        NumericalError: 중간값이 유한하지 않을 때 (손실 단계는 layer_index = 레이어 수)
    """
    image = np.asarray(image, dtype=np.float64)
    embedding, cache = encoder.forward(image)
    value, grad_e = loss.value_and_grad(embedding)
    if not (np.isfinite(value) and np.all(np.isfinite(grad_e))):
        raise NumericalError("손실 계산 중 유한하지 않은 값이 발생했습니다.", layer_index=len(encoder.layers))
    grad_x = encoder.backward(cache, grad_e)
    return float(value), grad_x.reshape(image.shape)


def finite_difference_gradient(
    encoder: Encoder, image: np.ndarray, loss: EmbeddingLoss, h: float = 1e-5
) -> np.ndarray:
    """좌표별 중앙 차분 (L(x + h·e_i) − L(x − h·e_i)) / 2h. 테스트 오라클 용도."""
    if h <= 0:
        raise ValueError(f"h는 양수여야 합니다: {h}")
    x = np.asarray(image, dtype=np.float64)
    flat = x.ravel()
    grad = np.empty_like(flat)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += h
        minus[i] -= h
        f_plus, _ = loss.value_and_grad(encode(encoder, plus))
        f_minus, _ = loss.value_and_grad(encode(encoder, minus))
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape)


def build_encoder(kind: EncoderKind | str, layer_dims, seed: int) -> Encoder:
    """시드 고정 PRNG로 파라미터를 뽑아 인코더를 만든다.

    가중치와 편향은 N(0, 1)에서 뽑아 1/√(fan_in)로 스케일한다.

    Args:
        kind: linear 또는 mlp
        layer_dims: (input_dim, hidden..., output_dim). linear는 길이 2, mlp는 길이 3 이상
        seed: PRNG 시드

    Raises:
        ValueError: 레이어 목록이 비었거나 kind와 길이가 맞지 않을 때
    """
    kind = EncoderKind(kind)
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ValueError(f"layer_dims에는 최소 두 개의 차원이 필요합니다: {dims}")
    if any(d <= 0 for d in dims):
        raise ValueError(f"layer_dims의 모든 값은 양수여야 합니다: {dims}")
    if kind is EncoderKind.LINEAR and len(dims) != 2:
        raise ValueError(f"Linear 인코더의 layer_dims는 (input, output) 형태여야 합니다: {dims}")
    if kind is EncoderKind.MLP and len(dims) < 3:
        raise ValueError(f"Mlp 인코더에는 최소 한 개의 은닉층이 필요합니다: {dims}")

    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        weight = rng.standard_normal((fan_out, fan_in)) * scale
        bias = rng.standard_normal(fan_out) * scale
        layers.append(Layer(weight, bias))
    encoder = Encoder(kind, layers)
    logger.debug("인코더 생성 — kind=%s, layer_dims=%s, seed=%d", kind.value, dims, seed)
    return encoder


def save_encoder(encoder: Encoder, path: str | Path) -> None:
    """인코더 파라미터를 텍스트 파일로 저장한다 (헤더 → 레이어별 weight 행 → bias)."""
    lines = [f"kind {encoder.kind.value}", "layer_dims " + " ".join(str(d) for d in encoder.layer_dims)]
    for layer in encoder.layers:
        lines += [paramfile.format_row(row) for row in layer.weight]
        lines.append(paramfile.format_row(layer.bias))
    paramfile.write_lines(path, lines)
    logger.info("인코더 저장 완료 — path=%s, %r", path, encoder)


def load_encoder(path: str | Path) -> Encoder:
    """save_encoder 형식의 파일에서 인코더를 읽는다.

    Raises:
        ParameterFileError: 형식이 맞지 않을 때
    """
    reader = paramfile.ParamReader(path)
    kind_tokens = reader.keyword("kind")
    try:
        kind = EncoderKind(kind_tokens[0] if kind_tokens else "")
        dims = [int(t) for t in reader.keyword("layer_dims")]
    except ValueError as e:
        raise ParameterFileError(f"{path}: 인코더 헤더를 해석할 수 없습니다 ({e})") from e
    if len(dims) < 2:
        raise ParameterFileError(f"{path}: layer_dims가 너무 짧습니다: {dims}")
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weight = reader.matrix(fan_out, fan_in)
        bias = reader.row(fan_out)
        layers.append(Layer(weight, bias))
    encoder = Encoder(kind, layers)
    logger.info("인코더 로드 완료 — path=%s, %r", path, encoder)
    return encoder
