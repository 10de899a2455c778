"""
experiment.py
-------------
실험 설정(ExperimentConfig)과 평탄한 key=value 덮어쓰기 계층.

우선순위: CLI 플래그 > --config 파일 > 환경변수 > config.yaml
    - config.yaml/환경변수는 config.py가 읽어 기본값으로 제공한다.
    - --config 파일은 `key=value` 줄로 이루어진 텍스트이며 dotenv_values로 파싱한다.
    - CLI 플래그와 --config 파일은 FLAT_KEYS에 정의된 같은 키 이름을 쓴다.
"""

import enum
import logging
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable

from dotenv import dotenv_values

import config
from counterattack.attack import AttackConfig, LossKind
from counterattack.defense import CounterattackConfig, DefenseKind, GateMode, GatePolarity, ProbeNoise
from counterattack.encoder import EncoderKind
from counterattack.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetSpec:
    """합성 blob 파라미터 또는 외부 CSV 경로."""

    class_count: int = 4
    shape: tuple[int, int, int] = (3, 8, 8)
    noise_sigma: float = 0.3
    n_anchor_per_class: int = 50
    n_test_per_class: int = 100
    seed: int = 1
    test_csv: str | None = None
    anchor_csv: str | None = None


@dataclass(frozen=True)
class EncoderSpec:
    """시드로 만들 인코더 구조 또는 파라미터 파일 경로."""

    kind: EncoderKind = EncoderKind.LINEAR
    hidden_dims: tuple[int, ...] = ()
    embed_dim: int = 16
    seed: int = 7
    param_path: str | None = None

    def layer_dims(self, input_dim: int) -> tuple[int, ...]:
        return (input_dim, *self.hidden_dims, self.embed_dim)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    attack: AttackConfig = field(default_factory=AttackConfig)
    defense: CounterattackConfig = field(default_factory=CounterattackConfig)
    defense_kind: DefenseKind = DefenseKind.DOC
    calibration_size: int = 64
    output_dir: str = "./runs/default"
    workers: int = 1
    stable_output: bool = False

    @classmethod
    def from_defaults(cls) -> "ExperimentConfig":
        """config.yaml(+환경변수) 기본값으로 설정을 만든다."""
        ds = config.DATASET_DEFAULTS
        enc = config.ENCODER_DEFAULTS
        atk = config.ATTACK_DEFAULTS
        dfn = dict(config.DEFENSE_DEFAULTS)
        defense_kind = dfn.pop("kind")
        calibration_size = dfn.pop("calibration_size")
        return cls(
            dataset=DatasetSpec(
                class_count=int(ds["class_count"]),
                shape=tuple(int(s) for s in ds["shape"]),
                noise_sigma=float(ds["noise_sigma"]),
                n_anchor_per_class=int(ds["n_anchor_per_class"]),
                n_test_per_class=int(ds["n_test_per_class"]),
                seed=int(ds["seed"]),
            ),
            encoder=EncoderSpec(
                kind=EncoderKind(enc["kind"]),
                hidden_dims=tuple(int(h) for h in enc.get("hidden_dims") or ()),
                embed_dim=int(enc["embed_dim"]),
                seed=int(enc["seed"]),
            ),
            attack=AttackConfig(**atk),
            defense=CounterattackConfig(**dfn),
            defense_kind=DefenseKind(defense_kind),
            calibration_size=int(calibration_size),
            output_dir=config.OUTPUT_DIR,
            workers=config.WORKERS,
            stable_output=config.STABLE_OUTPUT,
        )

    def to_dict(self) -> dict:
        """JSON으로 직렬화 가능한 설정 사본 (summary.json의 config echo)."""
        return {
            "dataset": _plain(self.dataset),
            "encoder": _plain(self.encoder),
            "attack": _plain(self.attack),
            "defense": _plain(self.defense),
            "defense_kind": self.defense_kind.value,
            "calibration_size": self.calibration_size,
            "output_dir": self.output_dir,
            "workers": self.workers,
            "stable_output": self.stable_output,
        }


def _plain(obj) -> Any:
    if hasattr(obj, "__dataclass_fields__"):
        return {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (tuple, list)):
        return [_plain(v) for v in obj]
    return obj


# ──────────────────────────────────────────────
# 값 변환기
# ──────────────────────────────────────────────

def _to_float(text: str) -> float:
    """'0.0157'뿐 아니라 '4/255' 같은 분수 표기도 허용한다."""
    return float(Fraction(text.strip())) if "/" in text else float(text)


def _to_optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none", "null") else _to_float(text)


def _to_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"불리언으로 해석할 수 없습니다: {text!r}")


def _to_int_tuple(text: str) -> tuple[int, ...]:
    text = text.strip().strip("()[]")
    return tuple(int(t) for t in text.replace("x", ",").split(",") if t.strip())


def _to_optional_str(text: str) -> str | None:
    return None if text.strip().lower() in ("", "none", "null") else text.strip()


# 평탄 키 → (섹션, 필드, 변환기). 섹션 None은 ExperimentConfig 최상위 필드
FLAT_KEYS: dict[str, tuple[str | None, str, Callable[[str], Any]]] = {
    # dataset
    "class_count": ("dataset", "class_count", int),
    "shape": ("dataset", "shape", _to_int_tuple),
    "noise_sigma": ("dataset", "noise_sigma", _to_float),
    "n_anchor_per_class": ("dataset", "n_anchor_per_class", int),
    "n_test_per_class": ("dataset", "n_test_per_class", int),
    "data_seed": ("dataset", "seed", int),
    "test_csv": ("dataset", "test_csv", _to_optional_str),
    "anchor_csv": ("dataset", "anchor_csv", _to_optional_str),
    # encoder
    "encoder_kind": ("encoder", "kind", EncoderKind),
    "hidden_dims": ("encoder", "hidden_dims", _to_int_tuple),
    "embed_dim": ("encoder", "embed_dim", int),
    "encoder_seed": ("encoder", "seed", int),
    "encoder_path": ("encoder", "param_path", _to_optional_str),
    # attack
    "eps_atk": ("attack", "eps_atk", _to_float),
    "attack_steps": ("attack", "steps", int),
    "attack_step_size": ("attack", "step_size", _to_float),
    "loss_kind": ("attack", "loss_kind", LossKind),
    "random_init": ("attack", "random_init", _to_bool),
    "attack_seed": ("attack", "seed", int),
    "temperature": ("attack", "temperature", _to_float),
    # defense
    "defense_kind": (None, "defense_kind", DefenseKind),
    "eps_ca": ("defense", "eps_ca", _to_float),
    "ca_steps": ("defense", "steps", int),
    "ca_step_size": ("defense", "step_size", _to_float),
    "lam": ("defense", "lam", _to_float),
    "mu": ("defense", "mu", _to_float),
    "num_probes": ("defense", "num_probes", int),
    "tau": ("defense", "tau", _to_optional_float),
    "gamma": ("defense", "gamma", _to_optional_float),
    "gate_scale": ("defense", "gate_scale", _to_float),
    "probe_noise": ("defense", "probe_noise", ProbeNoise),
    "defense_seed": ("defense", "seed", int),
    "gate_polarity": ("defense", "gate_polarity", GatePolarity),
    "gate_mode": ("defense", "gate_mode", GateMode),
    "force_weight": ("defense", "force_weight", _to_optional_float),
    "calibration_size": (None, "calibration_size", int),
    # experiment
    "output_dir": (None, "output_dir", str),
    "workers": (None, "workers", int),
    "stable_output": (None, "stable_output", _to_bool),
}


def apply_overrides(base: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    """평탄 키 덮어쓰기를 적용한 새 ExperimentConfig를 반환한다.

    문자열 값은 FLAT_KEYS의 변환기로 바꾸고, 그 밖의 값은 그대로 사용한다.

    Raises:
        ConfigError: 알 수 없는 키이거나 값 변환/검증에 실패했을 때
    """
    sections: dict[str | None, dict[str, Any]] = {}
    for key, raw in overrides.items():
        if raw is None:
            continue
        if key not in FLAT_KEYS:
            raise ConfigError(f"알 수 없는 설정 키: {key!r}")
        section, name, parse = FLAT_KEYS[key]
        try:
            value = parse(raw) if isinstance(raw, str) else raw
        except (ValueError, ArithmeticError) as e:
            raise ConfigError(f"설정 값을 해석할 수 없습니다: {key}={raw!r} ({e})") from e
        sections.setdefault(section, {})[name] = value

    try:
        updated = base
        for section, values in sections.items():
            if section is None:
                updated = replace(updated, **values)
            else:
                updated = replace(updated, **{section: replace(getattr(updated, section), **values)})
    except (ValueError, TypeError) as e:
        raise ConfigError(f"설정 검증 실패: {e}") from e

    if sections:
        logger.debug("설정 덮어쓰기 적용 — %s", sorted(overrides))
    return updated


def load_config_file(path: str | Path) -> dict[str, str]:
    """평탄 key=value 설정 파일을 읽는다 (주석 `#`, 빈 줄 허용).

    Raises:
        ConfigError: 파일이 없거나 알 수 없는 키가 있을 때
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"설정 파일이 없습니다: {path}")
    values = {k: v for k, v in dotenv_values(path).items() if v is not None}
    unknown = sorted(set(values) - set(FLAT_KEYS))
    if unknown:
        raise ConfigError(f"{path}: 알 수 없는 설정 키 {unknown}")
    logger.info("설정 파일 로드 — path=%s, 키 %d개", path, len(values))
    return values


def validate(config_: ExperimentConfig) -> None:
    """참조 파일 존재 여부 등 dataclass 생성 시점에 확인할 수 없는 조건을 검사한다."""
    for label, p in (
        ("test_csv", config_.dataset.test_csv),
        ("anchor_csv", config_.dataset.anchor_csv),
        ("encoder_path", config_.encoder.param_path),
    ):
        if p is not None and not Path(p).exists():
            raise ConfigError(f"{label} 파일이 없습니다: {p}")
    if (config_.dataset.test_csv is None) != (config_.dataset.anchor_csv is None):
        raise ConfigError("외부 데이터셋은 test_csv와 anchor_csv를 함께 지정해야 합니다.")
    if config_.workers < 1:
        raise ConfigError(f"workers는 1 이상이어야 합니다: {config_.workers}")
    if config_.calibration_size < 1:
        raise ConfigError(f"calibration_size는 1 이상이어야 합니다: {config_.calibration_size}")
