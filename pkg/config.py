"""
config.py
---------
프로젝트 전역 기본 설정 모듈.

우선순위: 환경변수(.env) > config.yaml 기본값
- 환경변수가 존재하면 환경변수 값을 사용
- 환경변수가 없으면 config.yaml에 정의된 기본값을 사용

실험 단위의 세부 설정(ExperimentConfig)은 experiment.py가 이 모듈의 섹션
딕셔너리를 기본값으로 삼아 만든다.
"""

import os
from pathlib import Path

import yaml
from dotenv import load_dotenv

# .env 파일이 존재하면 환경변수로 로드 (없어도 오류 없음)
load_dotenv()

# 이 파일이 위치한 디렉토리를 프로젝트 루트로 사용
PROJECT_ROOT = Path(__file__).parent

# config.yaml 파일을 읽어 기본값 딕셔너리로 파싱
CONFIG_PATH = PROJECT_ROOT / "config.yaml"
with open(CONFIG_PATH, "r", encoding="utf-8") as f:
    _yaml = yaml.safe_load(f)


def resolve_path(path_str: str) -> str:
    """
    상대 경로를 프로젝트 루트 기준 절대 경로로 변환한다.
    이미 절대 경로인 경우 그대로 반환한다.

    Args:
        path_str: 변환할 경로 문자열

    Returns:
        절대 경로 문자열
    """
    p = Path(path_str)
    return str(p if p.is_absolute() else PROJECT_ROOT / p)


# ──────────────────────────────────────────────
# 섹션별 기본값 (experiment.py에서 dataclass 기본값으로 사용)
# ──────────────────────────────────────────────

DATASET_DEFAULTS: dict = dict(_yaml["dataset"])
ENCODER_DEFAULTS: dict = dict(_yaml["encoder"])
ATTACK_DEFAULTS: dict = dict(_yaml["attack"])
DEFENSE_DEFAULTS: dict = dict(_yaml["defense"])
LOGGING_CONFIG: dict = dict(_yaml["logging"])

# ──────────────────────────────────────────────
# 실행 환경 설정
# ──────────────────────────────────────────────

# 결과물(summary.json, records.csv ...)을 기록할 기본 디렉토리
OUTPUT_DIR = resolve_path(os.getenv("DOC_OUTPUT_DIR", _yaml["experiment"]["output_dir"]))

# 예제 단위 병렬 처리 스레드 수 (결과는 값과 무관하게 동일)
WORKERS = int(os.getenv("DOC_WORKERS", str(_yaml["experiment"]["workers"])))

# summary.json에서 실행 시간을 제외할지 여부
STABLE_OUTPUT = os.getenv("DOC_STABLE_OUTPUT", str(_yaml["experiment"]["stable_output"])).lower() in (
    "1", "true", "yes",
)

# 콘솔 로그 레벨 (None이면 config.yaml의 logging.console.level)
LOG_LEVEL = os.getenv("DOC_LOG_LEVEL")
