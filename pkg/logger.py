"""
logger.py
---------
애플리케이션 로깅 설정 모듈.

config.yaml의 logging 섹션을 읽어 두 가지 핸들러를 구성한다.
    - StreamHandler  : 콘솔(표준 에러) 로깅
    - TimedRotatingFileHandler : 일 단위 롤링 파일 로깅 (counterattack.log)

사용법:
    # CLI 시작 시 1회 호출
    from logger import setup_logging
    setup_logging(console_level="DEBUG")

    # 각 모듈에서는 표준 방식으로 로거 획득
    import logging
    logger = logging.getLogger(__name__)

라이브러리 모듈(counterattack/, harness.py 등)은 로깅을 직접 구성하지 않는다.
"""

import logging
import logging.handlers
from pathlib import Path

import config

# 로깅 설정이 중복 적용되는 것을 방지하기 위한 플래그
_initialized = False


def setup_logging(console_level: str | None = None, log_file: bool | None = None) -> None:
    """config.yaml의 logging 섹션으로 루트 로거를 구성한다.

    이미 한 번 호출된 경우 중복 핸들러 등록을 방지하기 위해 즉시 반환한다.

    Args:
        console_level: 콘솔 핸들러 레벨. None이면 DOC_LOG_LEVEL 환경변수,
                       그것도 없으면 config.yaml 값을 사용
        log_file: 파일 핸들러 사용 여부. None이면 config.yaml 값을 따름
    """
    global _initialized
    if _initialized:
        return
    _initialized = True

    cfg = config.LOGGING_CONFIG

    # ── 로그 포맷터 생성 (콘솔/파일 공통) ─────────────────────────────
    formatter = logging.Formatter(fmt=cfg["format"], datefmt=cfg["date_format"])

    # 루트 레벨을 가장 낮게 설정하고, 각 핸들러에서 필터링
    root_logger = logging.getLogger()
    root_logger.setLevel(cfg["level"])

    # ── 콘솔 핸들러 ────────────────────────────────────────────────────
    console_level = (console_level or config.LOG_LEVEL or cfg["console"]["level"]).upper()
    if cfg["console"]["enabled"]:
        console_handler = logging.StreamHandler()
        console_handler.setLevel(console_level)
        console_handler.setFormatter(formatter)
        root_logger.addHandler(console_handler)

    # ── 파일 핸들러 (일 단위 롤링) ────────────────────────────────────
    file_enabled = cfg["file"]["enabled"] if log_file is None else log_file
    if file_enabled:
        log_path = Path(config.resolve_path(cfg["file"]["path"]))
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_handler = logging.handlers.TimedRotatingFileHandler(
            filename=str(log_path),
            when=cfg["file"]["when"],
            backupCount=cfg["file"]["backup_count"],
            encoding=cfg["file"]["encoding"],
        )
        file_handler.setLevel(cfg["file"]["level"])
        file_handler.setFormatter(formatter)
        # 롤링 파일명 형식: counterattack.log.2024-01-15
        file_handler.suffix = "%Y-%m-%d"
        root_logger.addHandler(file_handler)

    logging.getLogger(__name__).debug(
        "로깅 설정 완료 — 콘솔: %s, 파일: %s",
        console_level,
        cfg["file"]["path"] if file_enabled else "비활성",
    )
