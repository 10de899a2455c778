"""
counterattack/__init__.py
-------------------------
반격(counterattack) 기반 테스트 시점 적대적 방어 툴킷 패키지.

자주 쓰는 진입점을 패키지 수준에서 바로 임포트할 수 있도록 노출한다.
    from counterattack import build_encoder, doc_counterattack
"""

from counterattack.attack import AttackConfig, LossKind, clip_to_image, cw_attack, pgd_attack, project_linf
from counterattack.defense import (
    CounterattackConfig,
    CounterattackOutcome,
    DefenseKind,
    apply_defense,
    directional_sensitivity,
    doc_counterattack,
    fit_gate,
    gate_weight,
    ttc_counterattack,
)
from counterattack.encoder import Encoder, EncoderKind, build_encoder, encode
from counterattack.zeroshot import ClassAnchorSet, predict

__version__ = "0.1.0"

# 패키지 공개 API: `from counterattack import *` 시 노출할 심볼 목록
__all__ = [
    "AttackConfig",
    "ClassAnchorSet",
    "CounterattackConfig",
    "CounterattackOutcome",
    "DefenseKind",
    "Encoder",
    "EncoderKind",
    "LossKind",
    "apply_defense",
    "build_encoder",
    "clip_to_image",
    "cw_attack",
    "directional_sensitivity",
    "doc_counterattack",
    "encode",
    "fit_gate",
    "gate_weight",
    "pgd_attack",
    "predict",
    "project_linf",
    "ttc_counterattack",
    "__version__",
]
