"""
counterattack/errors.py
-----------------------
툴킷 전역에서 사용하는 도메인 예외 정의.

모든 예외는 CounterattackError를 상속하므로 CLI에서는 이 기본 클래스 하나만
잡아서 처리하면 된다.
"""


class CounterattackError(Exception):
    """툴킷 예외의 공통 기본 클래스."""


class DimensionMismatchError(CounterattackError, ValueError):
    """입력 길이나 임베딩 차원이 기대값과 다를 때 발생한다."""


class NumericalError(CounterattackError, ArithmeticError):
    """순전파/역전파 중 NaN 또는 Inf가 나타났을 때 발생한다.

    Attributes:
        layer_index: 문제가 된 레이어 번호 (손실 단계는 레이어 수와 같은 값)
    """

    def __init__(self, message: str, layer_index: int):
        super().__init__(f"{message} (layer={layer_index})")
        self.layer_index = layer_index


class ZeroEmbeddingError(CounterattackError, ValueError):
    """노름이 0인 벡터로 코사인 유사도를 계산하려 할 때 발생한다."""

    def __init__(self, message: str, index: int | None = None):
        if index is not None:
            message = f"{message} (index={index})"
        super().__init__(message)
        self.index = index


class DatasetFormatError(CounterattackError, ValueError):
    """데이터셋 CSV 형식 오류. 행 번호와(가능하면) 열 번호를 함께 보고한다."""

    def __init__(self, message: str, line: int, column: int | None = None):
        where = f"line={line}" if column is None else f"line={line}, column={column}"
        super().__init__(f"{message} ({where})")
        self.line = line
        self.column = column


class ParameterFileError(CounterattackError, ValueError):
    """인코더/앵커 파라미터 파일을 해석할 수 없을 때 발생한다."""


class ConfigError(CounterattackError, ValueError):
    """알 수 없는 설정 키 또는 변환할 수 없는 설정 값."""


class ExperimentError(CounterattackError, RuntimeError):
    """실험 파이프라인의 특정 단계가 실패했을 때 발생한다.

    Attributes:
        stage: 실패한 단계 이름 (dataset, encoder, anchors, attack, defense, report ...)
    """

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"실험 단계 '{stage}' 실패: {cause}")
        self.stage = stage
