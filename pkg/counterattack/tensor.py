"""
counterattack/tensor.py
-----------------------
ImageTensor 관련 공용 헬퍼.

ImageTensor는 (channels, height, width) 모양의 float64 ndarray로 표현한다.
이미지 x, 섭동 δ, 기울기가 모두 같은 표현을 공유한다.
"""

import numpy as np

from counterattack.errors import DimensionMismatchError

# 예제별 난수 스트림의 용도별 인덱스
STREAM_INIT = 0     # δ⁰ 초기화 (공격 random start, 반격 δ⁰_ca)
STREAM_PROBE = 1    # DSS 프로브 노이즈 η^m
STREAM_ORTHO = 2    # 직교 성분용 r ~ N(0, 1)
_N_STREAMS = 3


def as_image_tensor(data, shape: tuple[int, int, int] | None = None) -> np.ndarray:
    """임의의 실수 배열을 float64 ImageTensor로 변환한다.

    Args:
        data: 평탄화되었거나 이미 (C, H, W) 모양인 실수 배열
        shape: 평탄 입력일 때 사용할 (C, H, W). None이면 data의 모양을 그대로 쓴다.

    Raises:
        DimensionMismatchError: 원소 수가 C×H×W와 다를 때
    """
    arr = np.asarray(data, dtype=np.float64)
    if shape is None:
        return arr.copy()
    if any(int(s) <= 0 for s in shape):
        raise DimensionMismatchError(f"shape의 각 차원은 양수여야 합니다: {shape}")
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise DimensionMismatchError(
            f"데이터 길이 {arr.size}가 shape {tuple(shape)}의 원소 수 {expected}와 다릅니다."
        )
    return arr.reshape(tuple(int(s) for s in shape)).copy()


def is_valid_image(x: np.ndarray) -> bool:
    """모든 원소가 유한하고 [0, 1] 구간에 있으면 True."""
    return bool(np.all(np.isfinite(x)) and np.all(x >= 0.0) and np.all(x <= 1.0))


def linf_norm(x: np.ndarray) -> float:
    """ℓ∞ 노름. 빈 배열은 0으로 본다."""
    return float(np.max(np.abs(x))) if x.size else 0.0


def example_streams(seed: int, example_index: int) -> list[np.random.Generator]:
    """(seed, example_index)에서 파생된 독립 난수 스트림 목록을 반환한다.

    스트림은 용도별로 분리되어 있어(STREAM_* 상수) 한 소비자가 추가로 난수를
    뽑아도 다른 소비자의 수열이 바뀌지 않는다. 병렬/직렬 실행 결과가 동일하다.
    """
    if seed < 0 or example_index < 0:
        raise ValueError(f"seed와 example_index는 0 이상이어야 합니다: seed={seed}, index={example_index}")
    children = np.random.SeedSequence([int(seed), int(example_index)]).spawn(_N_STREAMS)
    return [np.random.default_rng(child) for child in children]
