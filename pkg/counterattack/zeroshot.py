"""
counterattack/zeroshot.py
-------------------------
제로샷 분류 헤드: 클래스 앵커에 대한 코사인 점수, 소프트맥스 확률, 예측,
그리고 공격 쪽에서 쓰는 손실(cross-entropy, CW margin).

텍스트 인코더 대신 클래스별 고정 임베딩(앵커)을 사용한다. 앵커 집합은
harness.build_anchors가 anchor_fit 분할의 클래스 평균 임베딩으로 만든다.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from counterattack import paramfile
from counterattack.errors import DimensionMismatchError, ParameterFileError, ZeroEmbeddingError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassAnchorSet:
    """K개의 클래스 앵커 임베딩과 클래스 이름.

    Attributes:
        anchors: (K, d) float64 배열. 각 행이 한 클래스의 앵커
        class_names: 길이 K의 클래스 이름 튜플
    """

    anchors: np.ndarray
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        anchors = np.array(self.anchors, dtype=np.float64)
        if anchors.ndim != 2:
            raise DimensionMismatchError(f"앵커 배열은 (K, d) 2차원이어야 합니다: shape={anchors.shape}")
        k, d = anchors.shape
        if k < 2:
            raise ValueError(f"클래스 수 K는 2 이상이어야 합니다: K={k}")
        if d < 2:
            raise DimensionMismatchError(f"임베딩 차원 d는 2 이상이어야 합니다: d={d}")
        if not np.all(np.isfinite(anchors)):
            raise ValueError("앵커에 유한하지 않은 값이 있습니다.")
        norms = np.linalg.norm(anchors, axis=1)
        for i, n in enumerate(norms):
            if n == 0.0:
                raise ZeroEmbeddingError("앵커 임베딩의 노름이 0입니다.", index=i)

        names = tuple(self.class_names) if self.class_names else tuple(f"class_{i}" for i in range(k))
        if len(names) != k:
            raise ValueError(f"class_names 길이 {len(names)}가 K={k}와 다릅니다.")

        anchors.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "class_names", names)

    @property
    def num_classes(self) -> int:
        return self.anchors.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]


def _embedding_norm(e: np.ndarray) -> float:
    n = float(np.linalg.norm(e))
    if n == 0.0:
        raise ZeroEmbeddingError("임베딩의 노름이 0이라 코사인 유사도를 정의할 수 없습니다.")
    return n


def _check_label(label: int, k: int) -> int:
    label = int(label)
    if not 0 <= label < k:
        raise ValueError(f"label은 [0, {k}) 범위여야 합니다: label={label}")
    return label


def cosine_score(e: np.ndarray, anchor: np.ndarray) -> float:
    """두 벡터의 코사인 유사도 ⟨e, a⟩ / (‖e‖·‖a‖). 결과는 [-1, 1]로 잘라낸다.

    Raises:
        DimensionMismatchError: 차원이 다를 때
        ZeroEmbeddingError: 둘 중 하나의 노름이 0일 때
    """
    e = np.asarray(e, dtype=np.float64).ravel()
    a = np.asarray(anchor, dtype=np.float64).ravel()
    if e.shape != a.shape:
        raise DimensionMismatchError(f"차원 불일치: {e.size} vs {a.size}")
    s = float(np.dot(e, a)) / (_embedding_norm(e) * _embedding_norm(a))
    return min(1.0, max(-1.0, s))


def cosine_scores(e: np.ndarray, anchors: ClassAnchorSet) -> np.ndarray:
    """모든 앵커에 대한 코사인 점수 벡터 (길이 K)."""
    e = np.asarray(e, dtype=np.float64).ravel()
    if e.size != anchors.dim:
        raise DimensionMismatchError(f"임베딩 차원 {e.size}가 앵커 차원 {anchors.dim}와 다릅니다.")
    e_norm = _embedding_norm(e)
    a_norms = np.linalg.norm(anchors.anchors, axis=1)
    scores = anchors.anchors @ e / (a_norms * e_norm)
    return np.clip(scores, -1.0, 1.0)


def cosine_score_jacobian(e: np.ndarray, anchors: ClassAnchorSet) -> tuple[np.ndarray, np.ndarray]:
    """코사인 점수와 임베딩에 대한 야코비안을 함께 반환한다.

    ∂s_k/∂e = a_k / (‖e‖‖a_k‖) − s_k · e / ‖e‖²

    Returns:
        (scores, jacobian) — scores: (K,), jacobian: (K, d)
    """
    e = np.asarray(e, dtype=np.float64).ravel()
    if e.size != anchors.dim:
        raise DimensionMismatchError(f"임베딩 차원 {e.size}가 앵커 차원 {anchors.dim}와 다릅니다.")
    e_norm = _embedding_norm(e)
    a_norms = np.linalg.norm(anchors.anchors, axis=1)
    # 야코비안은 클리핑 전 점수로 계산해야 미분과 일치한다
    raw = anchors.anchors @ e / (a_norms * e_norm)
    jac = anchors.anchors / (a_norms[:, None] * e_norm) - raw[:, None] * e[None, :] / (e_norm ** 2)
    return raw, jac


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - np.max(z)
    return shifted - np.log(np.sum(np.exp(shifted)))


def class_probabilities(e: np.ndarray, anchors: ClassAnchorSet, temperature: float = 1.0) -> np.ndarray:
    """코사인 점수 / temperature에 대한 소프트맥스 분포.

    Args:
        e: 이미지 임베딩
        anchors: 클래스 앵커 집합
        temperature: 양수 온도. 기본값 1은 로짓 스케일이 없는 소프트맥스와 같다.

    Returns:
        길이 K의 확률 벡터 (합 1)
    """
    if temperature <= 0:
        raise ValueError(f"temperature는 양수여야 합니다: {temperature}")
    z = cosine_scores(e, anchors) / temperature
    p = np.exp(_log_softmax(z))
    return p / np.sum(p)


def predict(e: np.ndarray, anchors: ClassAnchorSet) -> int:
    """코사인 점수가 가장 큰 클래스 인덱스. 동점이면 가장 작은 인덱스."""
    return int(np.argmax(cosine_scores(e, anchors)))


def cross_entropy_loss(e: np.ndarray, anchors: ClassAnchorSet, label: int, temperature: float = 1.0) -> float:
    """−log P(y = label | x). log-sum-exp 안정화(최대 점수 빼기)를 적용한다."""
    if temperature <= 0:
        raise ValueError(f"temperature는 양수여야 합니다: {temperature}")
    label = _check_label(label, anchors.num_classes)
    z = cosine_scores(e, anchors) / temperature
    return float(-_log_softmax(z)[label])


def cw_margin_loss(e: np.ndarray, anchors: ClassAnchorSet, label: int) -> float:
    """max_{j≠label} s_j − s_label. 양수이면 argmax 기준 오분류."""
    label = _check_label(label, anchors.num_classes)
    s = cosine_scores(e, anchors)
    others = np.delete(s, label)
    return float(np.max(others) - s[label])


def cross_entropy_value_and_grad(
    e: np.ndarray, anchors: ClassAnchorSet, label: int, temperature: float = 1.0
) -> tuple[float, np.ndarray]:
    """cross_entropy_loss 값과 임베딩에 대한 기울기."""
    if temperature <= 0:
        raise ValueError(f"temperature는 양수여야 합니다: {temperature}")
    label = _check_label(label, anchors.num_classes)
    raw, jac = cosine_score_jacobian(e, anchors)
    log_p = _log_softmax(raw / temperature)
    dloss_ds = np.exp(log_p)
    dloss_ds[label] -= 1.0
    dloss_ds /= temperature
    return float(-log_p[label]), dloss_ds @ jac


def cw_margin_value_and_grad(e: np.ndarray, anchors: ClassAnchorSet, label: int) -> tuple[float, np.ndarray]:
    """cw_margin_loss 값과 임베딩에 대한 (부분)기울기. 동점 경쟁 클래스는 가장 작은 인덱스."""
    label = _check_label(label, anchors.num_classes)
    raw, jac = cosine_score_jacobian(e, anchors)
    masked = raw.copy()
    masked[label] = -np.inf
    rival = int(np.argmax(masked))
    return float(raw[rival] - raw[label]), jac[rival] - jac[label]


def save_anchors(anchors: ClassAnchorSet, path) -> None:
    """앵커 집합을 파라미터 파일 형식(K, d 헤더 + 행 우선 값 + 클래스 이름)으로 저장한다."""
    k, d = anchors.anchors.shape
    lines = ["kind anchors", f"shape {k} {d}"]
    lines += [paramfile.format_row(row) for row in anchors.anchors]
    lines.append("class_names")
    lines += list(anchors.class_names)
    paramfile.write_lines(path, lines)
    logger.info("앵커 저장 완료 — path=%s, K=%d, d=%d", path, k, d)


def load_anchors(path) -> ClassAnchorSet:
    """save_anchors로 기록한 파일에서 앵커 집합을 읽는다."""
    reader = paramfile.ParamReader(path)
    kind = reader.keyword("kind")
    if kind != ["anchors"]:
        raise ParameterFileError(f"{path}: 앵커 파일이 아닙니다 (kind={kind})")
    try:
        k, d = (int(t) for t in reader.keyword("shape"))
    except ValueError as e:
        raise ParameterFileError(f"{path}: shape 줄을 해석할 수 없습니다 ({e})") from e
    values = reader.matrix(k, d)
    reader.keyword("class_names")
    names = tuple(reader.text() for _ in range(k))
    logger.info("앵커 로드 완료 — path=%s, K=%d, d=%d", path, k, d)
    return ClassAnchorSet(values, names)
