"""
counterattack/paramfile.py
--------------------------
인코더/앵커 파라미터 텍스트 파일 공용 입출력.

파일 구조 (README의 "파라미터 파일 형식" 참고):
    # counterattack parameter file v1
    kind <linear|mlp|anchors>
    <헤더 라인들>
    <행 우선(row-major) 실수 값 라인들>

실수는 repr()로 기록하므로 읽고 쓰기가 비트 단위로 왕복된다.
"""

import logging
from pathlib import Path
from typing import Iterator

import numpy as np

from counterattack.errors import ParameterFileError

logger = logging.getLogger(__name__)

MAGIC = "# counterattack parameter file v1"


def format_row(values) -> str:
    """실수 시퀀스를 공백 구분 repr 문자열로 만든다."""
    return " ".join(repr(float(v)) for v in np.asarray(values, dtype=np.float64).ravel())


class ParamReader:
    """파라미터 파일을 한 줄씩 소비하는 리더. 오류 메시지에 줄 번호를 붙인다."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        try:
            text = self.path.read_text(encoding="utf-8")
        except OSError as e:
            raise ParameterFileError(f"파라미터 파일을 읽을 수 없습니다: {self.path} ({e})") from e
        self._lines: Iterator[tuple[int, str]] = (
            (i, line.rstrip("\n")) for i, line in enumerate(text.splitlines(), start=1)
        )
        lineno, first = self._next()
        if first.strip() != MAGIC:
            raise ParameterFileError(f"{self.path}:{lineno}: 파라미터 파일 헤더가 아닙니다: {first!r}")

    def _next(self) -> tuple[int, str]:
        try:
            return next(self._lines)
        except StopIteration:
            raise ParameterFileError(f"{self.path}: 파일이 예상보다 일찍 끝났습니다.") from None

    def keyword(self, expected: str) -> list[str]:
        """`<expected> a b c` 형태의 줄을 읽어 나머지 토큰을 반환한다."""
        lineno, line = self._next()
        tokens = line.split()
        if not tokens or tokens[0] != expected:
            raise ParameterFileError(f"{self.path}:{lineno}: '{expected}' 줄이 필요합니다: {line!r}")
        return tokens[1:]

    def row(self, n: int) -> np.ndarray:
        """실수 n개로 이루어진 한 줄을 읽는다."""
        lineno, line = self._next()
        try:
            values = np.array([float(t) for t in line.split()], dtype=np.float64)
        except ValueError as e:
            raise ParameterFileError(f"{self.path}:{lineno}: 실수로 변환할 수 없는 값 ({e})") from e
        if values.size != n:
            raise ParameterFileError(f"{self.path}:{lineno}: 값 {n}개가 필요하지만 {values.size}개입니다.")
        return values

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        return np.stack([self.row(cols) for _ in range(rows)]) if rows else np.zeros((0, cols))

    def text(self) -> str:
        return self._next()[1]


def write_lines(path: str | Path, lines: list[str]) -> None:
    """MAGIC 헤더를 앞에 붙여 파일을 기록한다."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join([MAGIC, *lines]) + "\n", encoding="utf-8")
    logger.debug("파라미터 파일 기록 — %s (%d 줄)", path, len(lines) + 1)
