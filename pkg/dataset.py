"""
dataset.py
----------
데스크 규모 실험용 데이터셋 생성과 CSV 입출력 모듈.

    - generate_blobs     : 클래스 템플릿 + 가우시안 노이즈로 만든 합성 이미지
    - load_csv_dataset   : `label,p0,p1,...` 헤더의 CSV 읽기
    - write_csv_dataset  : 위 형식으로 쓰기 (첫 줄에 `# shape=C,H,W` 부가 정보)
"""

import csv
import enum
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from counterattack.errors import DatasetFormatError
from counterattack.tensor import as_image_tensor, is_valid_image

logger = logging.getLogger(__name__)

_SHAPE_PREFIX = "# shape="


class Split(str, enum.Enum):
    ANCHOR_FIT = "anchor_fit"
    TEST = "test"


@dataclass(frozen=True)
class Dataset:
    """이미지와 라벨 묶음.

    Attributes:
        images: (N, C, H, W) float64, 모든 값이 [0, 1]
        labels: (N,) int, [0, class_count) 범위
        split: anchor_fit 또는 test
        class_count: 클래스 수 K
        seed: 생성 시드 (외부 파일이면 None)
    """

    images: np.ndarray
    labels: np.ndarray
    split: Split
    class_count: int
    seed: int | None = None

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if images.ndim != 4:
            raise ValueError(f"images는 (N, C, H, W) 모양이어야 합니다: {images.shape}")
        if images.shape[0] == 0:
            raise ValueError("빈 데이터셋 분할은 허용되지 않습니다.")
        if labels.shape != (images.shape[0],):
            raise ValueError(f"labels 길이 {labels.size}가 이미지 수 {images.shape[0]}와 다릅니다.")
        if self.class_count < 2:
            raise ValueError(f"class_count는 2 이상이어야 합니다: {self.class_count}")
        if labels.min() < 0 or labels.max() >= self.class_count:
            raise ValueError(f"label은 [0, {self.class_count}) 범위여야 합니다.")
        if not is_valid_image(images):
            raise ValueError("모든 픽셀은 [0, 1] 범위여야 합니다.")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split", Split(self.split))

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, n: int) -> "Dataset":
        """앞에서부터 n개만 남긴 분할."""
        n = max(1, min(n, len(self)))
        return Dataset(self.images[:n], self.labels[:n], self.split, self.class_count, self.seed)


def generate_blobs(
    class_count: int,
    shape: tuple[int, int, int],
    noise_sigma: float,
    n_anchor: int,
    n_test: int,
    seed: int,
) -> tuple[Dataset, Dataset]:
    """클래스 템플릿 기반 합성 데이터셋을 만든다.

    K개의 템플릿 이미지를 U(0.2, 0.8)에서 한 번 뽑고, 각 예제는
    clip(template_label + N(0, σ²))로 만든다. 라벨은 0, 1, ..., K−1 순으로 반복된다.

    Args:
        class_count: 클래스 수 K (2 이상)
        shape: (C, H, W)
        noise_sigma: 픽셀별 가우시안 노이즈 표준편차 (0 이상)
        n_anchor: 클래스당 anchor_fit 예제 수
        n_test: 클래스당 test 예제 수
        seed: PRNG 시드

    Returns:
        (anchor_fit 분할, test 분할)
    """
    if class_count < 2:
        raise ValueError(f"class_count는 2 이상이어야 합니다: {class_count}")
    if n_anchor < 1 or n_test < 1:
        raise ValueError(f"분할 크기는 1 이상이어야 합니다: n_anchor={n_anchor}, n_test={n_test}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma는 0 이상이어야 합니다: {noise_sigma}")
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or any(s <= 0 for s in shape):
        raise ValueError(f"shape는 양수 (C, H, W)여야 합니다: {shape}")

    rng = np.random.default_rng(seed)
    templates = rng.uniform(0.2, 0.8, size=(class_count, *shape))

    def _split(n_per_class: int, split: Split) -> Dataset:
        labels = np.tile(np.arange(class_count), n_per_class)
        noise = rng.standard_normal((labels.size, *shape))
        images = np.clip(templates[labels] + noise_sigma * noise, 0.0, 1.0)
        return Dataset(images, labels, split, class_count, seed)

    anchor_fit = _split(n_anchor, Split.ANCHOR_FIT)
    test = _split(n_test, Split.TEST)
    logger.info(
        "blob 데이터셋 생성 — K=%d, shape=%s, sigma=%.4f, anchor=%d, test=%d, seed=%d",
        class_count, shape, noise_sigma, len(anchor_fit), len(test), seed,
    )
    return anchor_fit, test


def write_csv_dataset(dataset: Dataset, path: str | Path) -> None:
    """데이터셋을 CSV로 기록한다. 실수는 repr()로 기록해 읽기와 정확히 왕복한다."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_pixels = int(np.prod(dataset.image_shape))
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(_SHAPE_PREFIX + ",".join(str(s) for s in dataset.image_shape) + "\n")
        writer = csv.writer(f)
        writer.writerow(["label", *(f"p{i}" for i in range(n_pixels))])
        for image, label in zip(dataset.images, dataset.labels):
            writer.writerow([int(label), *(repr(float(v)) for v in image.ravel())])
    logger.info("데이터셋 CSV 기록 — path=%s, rows=%d", path, len(dataset))


def load_csv_dataset(
    path: str | Path,
    shape: tuple[int, int, int] | None = None,
    split: Split | str = Split.TEST,
    class_count: int | None = None,
) -> Dataset:
    """`label,p0,p1,...` CSV를 읽는다.

    이미지 모양은 첫 줄의 `# shape=C,H,W`에서 읽고, 없으면 shape 인자를 쓴다.
    둘 다 없으면 (1, 1, 픽셀 수)로 본다.

    Raises:
        FileNotFoundError: 파일이 없을 때
        DatasetFormatError: 헤더/행 형식 오류 (line), 범위 밖 픽셀 (line, column)
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"데이터셋 파일이 없습니다: {path}")

    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = f.read().splitlines()

    line_offset = 0
    if lines and lines[0].startswith(_SHAPE_PREFIX):
        try:
            sidecar = tuple(int(t) for t in lines[0][len(_SHAPE_PREFIX):].split(","))
        except ValueError:
            raise DatasetFormatError("shape 부가 정보를 해석할 수 없습니다.", line=1) from None
        shape = shape or sidecar
        line_offset = 1

    rows = list(csv.reader(lines[line_offset:]))
    if not rows:
        raise DatasetFormatError("헤더 행이 없습니다.", line=line_offset + 1)
    header = rows[0]
    if not header or header[0].strip() != "label" or len(header) < 2:
        raise DatasetFormatError(f"헤더는 'label,p0,p1,...' 형식이어야 합니다: {header[:3]}", line=line_offset + 1)
    n_pixels = len(header) - 1
    if shape is None:
        shape = (1, 1, n_pixels)
    if int(np.prod(shape)) != n_pixels:
        raise DatasetFormatError(f"shape {tuple(shape)}가 픽셀 열 수 {n_pixels}와 맞지 않습니다.", line=line_offset + 1)

    images, labels = [], []
    for i, row in enumerate(rows[1:]):
        lineno = line_offset + 2 + i
        if not row:
            continue
        if len(row) != n_pixels + 1:
            raise DatasetFormatError(f"열 수 {len(row)}가 헤더 열 수 {n_pixels + 1}와 다릅니다.", line=lineno)
        try:
            label = int(row[0])
        except ValueError:
            raise DatasetFormatError(f"label을 정수로 해석할 수 없습니다: {row[0]!r}", line=lineno, column=0) from None
        if label < 0 or (class_count is not None and label >= class_count):
            raise DatasetFormatError(f"label {label}이 클래스 범위를 벗어났습니다.", line=lineno, column=0)
        pixels = np.empty(n_pixels)
        for j, token in enumerate(row[1:], start=1):
            try:
                value = float(token)
            except ValueError:
                raise DatasetFormatError(f"픽셀 값을 실수로 해석할 수 없습니다: {token!r}", line=lineno, column=j) from None
            if not 0.0 <= value <= 1.0:
                raise DatasetFormatError(f"픽셀 값 {value}가 [0, 1] 범위를 벗어났습니다.", line=lineno, column=j)
            pixels[j - 1] = value
        images.append(as_image_tensor(pixels, shape))
        labels.append(label)

    if not images:
        raise DatasetFormatError("데이터 행이 없습니다.", line=line_offset + 2)
    labels_arr = np.asarray(labels, dtype=np.int64)
    k = class_count if class_count is not None else max(2, int(labels_arr.max()) + 1)
    dataset = Dataset(np.stack(images), labels_arr, Split(split), k, None)
    logger.info("데이터셋 CSV 로드 — path=%s, rows=%d, shape=%s", path, len(dataset), tuple(shape))
    return dataset
