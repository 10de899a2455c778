"""
counterattack/metrics.py
------------------------
평가 지표: 정확도, MeanCos(섭동 다양성), 임베딩 이동량, 2차원 PCA 좌표.
"""

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from counterattack.encoder import Encoder, encode
from counterattack.errors import ZeroEmbeddingError

logger = logging.getLogger(__name__)

_PCA_TOL = 1e-9
_PCA_MAX_ITER = 1000
# 두 번째 고유값이 첫 번째 대비 이 비율 이하이면 rank 부족으로 본다
_RANK_RTOL = 1e-12


@dataclass(frozen=True)
class EvalSummary:
    """한 조건(방어 없음/방어 적용)의 집계 결과."""

    clean_acc: float
    robust_acc: float
    mean_cos: float | None
    mean_tau_hat_clean: float
    mean_tau_hat_adv: float
    n_examples: int

    def to_dict(self) -> dict:
        return {
            "clean_acc": self.clean_acc,
            "robust_acc": self.robust_acc,
            "mean_cos": self.mean_cos,
            "mean_tau_hat_clean": self.mean_tau_hat_clean,
            "mean_tau_hat_adv": self.mean_tau_hat_adv,
            "n_examples": self.n_examples,
        }


class PcaProjection(NamedTuple):
    points: np.ndarray          # (n, 2)
    rank_deficient: bool


def accuracy(predictions, labels) -> float:
    """일치 개수 / 전체 개수.

    Raises:
        ValueError: 빈 목록이거나 길이가 다를 때
    """
    preds = np.asarray(predictions)
    labels = np.asarray(labels)
    if preds.size == 0 or labels.size == 0:
        raise ValueError("accuracy에는 비어 있지 않은 목록이 필요합니다.")
    if preds.shape != labels.shape:
        raise ValueError(f"predictions({preds.size})와 labels({labels.size})의 길이가 다릅니다.")
    return int(np.sum(preds == labels)) / preds.size


def mean_cos(vectors) -> float:
    """서로 다른 순서 없는 쌍 전체에 대한 코사인 유사도 평균 (자기 쌍 제외).

    값이 낮을수록 섭동 집합이 다양하다.

    Raises:
        ValueError: 벡터가 2개 미만이거나 모양이 다를 때
        ZeroEmbeddingError: 노름이 0인 벡터가 있을 때 (index 포함)
    """
    vectors = [np.asarray(v, dtype=np.float64) for v in vectors]
    if len(vectors) < 2:
        raise ValueError(f"mean_cos에는 벡터가 2개 이상 필요합니다: {len(vectors)}개")
    shape = vectors[0].shape
    for i, v in enumerate(vectors):
        if v.shape != shape:
            raise ValueError(f"벡터 {i}의 모양 {v.shape}가 {shape}와 다릅니다.")
    mat = np.stack([v.ravel() for v in vectors])
    norms = np.linalg.norm(mat, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ZeroEmbeddingError("MeanCos 집합에 0 벡터가 있습니다.", index=int(zero[0]))
    unit = mat / norms[:, None]
    gram = unit @ unit.T
    iu = np.triu_indices(len(vectors), k=1)
    return float(np.mean(gram[iu]))


def embedding_shift(encoder: Encoder, originals, perturbed) -> list[float]:
    """쌍별 ‖I(x′) − I(x)‖₂."""
    originals = list(originals)
    perturbed = list(perturbed)
    if len(originals) != len(perturbed):
        raise ValueError(f"originals({len(originals)})와 perturbed({len(perturbed)})의 길이가 다릅니다.")
    return [
        float(np.linalg.norm(encode(encoder, xp) - encode(encoder, x)))
        for x, xp in zip(originals, perturbed)
    ]


def summarize_shift(shifts: list[float]) -> dict:
    """embedding_shift 목록의 평균/중앙값/최댓값."""
    if not shifts:
        return {"mean": None, "median": None, "max": None}
    arr = np.asarray(shifts, dtype=np.float64)
    return {"mean": float(np.mean(arr)), "median": float(np.median(arr)), "max": float(np.max(arr))}


def _power_iteration(cov: np.ndarray, start: np.ndarray, against: np.ndarray | None) -> tuple[np.ndarray, float]:
    v = start / np.linalg.norm(start)
    for _ in range(_PCA_MAX_ITER):
        w = cov @ v
        if against is not None:
            w = w - np.dot(w, against) * against
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return v, 0.0
        w = w / norm
        # 부호 진동을 무시하고 수렴을 판정한다
        if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < _PCA_TOL:
            v = w
            break
        v = w
    return v, float(v @ cov @ v)


def _fix_sign(v: np.ndarray) -> np.ndarray:
    """절댓값이 가장 큰 loading이 양수가 되도록 부호를 맞춘다."""
    return v if v[int(np.argmax(np.abs(v)))] >= 0 else -v


def pca_2d(embeddings) -> PcaProjection:
    """평균 중심화한 집합을 상위 두 주성분에 투영한다.

    주성분은 공분산 행렬에 대한 power iteration + deflation으로 구한다
    (허용오차 1e-9, 최대 1000회). 두 번째 성분은 매 반복 첫 번째 성분과
    직교화한다.

    Returns:
        PcaProjection — 두 번째 고유값이 사실상 0이면 두 번째 좌표를 0으로 채우고
        rank_deficient=True
    """
    data = np.stack([np.asarray(e, dtype=np.float64).ravel() for e in embeddings])
    if data.shape[0] < 3:
        raise ValueError(f"pca_2d에는 임베딩이 3개 이상 필요합니다: {data.shape[0]}개")
    centered = data - data.mean(axis=0)
    cov = centered.T @ centered
    n, d = centered.shape

    scale = float(np.max(np.abs(cov))) if cov.size else 0.0
    if scale == 0.0:
        logger.debug("PCA 입력이 모두 같은 점 — 0 좌표 반환")
        return PcaProjection(np.zeros((n, 2)), True)

    # 시작 벡터는 결정적으로 고정한다
    start = np.random.default_rng(0).standard_normal(d)
    v1, lam1 = _power_iteration(cov, start, None)
    v1 = _fix_sign(v1)

    rank_deficient = d < 2
    v2 = np.zeros(d)
    if not rank_deficient:
        deflated = cov - lam1 * np.outer(v1, v1)
        start2 = np.random.default_rng(1).standard_normal(d)
        start2 = start2 - np.dot(start2, v1) * v1
        v2, lam2 = _power_iteration(deflated, start2, v1)
        if lam2 <= _RANK_RTOL * lam1:
            rank_deficient = True
            v2 = np.zeros(d)
        else:
            v2 = _fix_sign(v2)

    points = np.column_stack([centered @ v1, centered @ v2])
    if rank_deficient:
        points[:, 1] = 0.0
    return PcaProjection(points, rank_deficient)
