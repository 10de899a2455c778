"""
harness.py
----------
실험 오케스트레이션 모듈.

run_experiment 파이프라인:
    데이터셋 → 인코더 → 클래스 앵커 → (DOC) tau 보정 → 깨끗한 입력 평가
    → 적대적 예제 생성 → 깨끗한/적대적 입력 모두에 방어 적용 → 네 조건 평가
    → MeanCos, τ̂ 집계 → 리포트 기록

방어는 입력이 깨끗한지 적대적인지 모른 채 모든 테스트 입력에 같은 경로로 적용된다.
모든 난수는 (seed, example_index)에서 파생되므로 workers 값과 무관하게 결과가 같다.
"""

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable, Iterator, TypeVar

import numpy as np

import counterattack
from counterattack.attack import AttackConfig, run_attack
from counterattack.defense import (
    CounterattackConfig,
    CounterattackOutcome,
    DefenseKind,
    GateCalibration,
    GatePolarity,
    apply_defense,
    counterattack as run_counterattack,
    directional_sensitivity,
    fit_gate,
)
from counterattack.encoder import Encoder, build_encoder, encode, load_encoder
from counterattack.errors import CounterattackError, ExperimentError, ZeroEmbeddingError
from counterattack.metrics import EvalSummary, accuracy, embedding_shift, mean_cos, summarize_shift
from counterattack.zeroshot import ClassAnchorSet, predict
from dataset import Dataset, Split, generate_blobs, load_csv_dataset
from experiment import DatasetSpec, EncoderSpec, ExperimentConfig, validate
from report import ExampleRecord, ExperimentReport, emit_report

logger = logging.getLogger(__name__)

T = TypeVar("T")

# tau 보정용 held-out 예제의 스트림 인덱스 오프셋 (테스트 예제 인덱스와 겹치지 않게)
_CALIBRATION_INDEX_OFFSET = 1_000_000

# sweep 파라미터 이름 → CounterattackConfig 필드
SWEEP_PARAMETERS = {
    "steps": "steps",
    "T": "steps",
    "lambda": "lam",
    "lam": "lam",
    "mu": "mu",
    "gamma": "gamma",
    "gate_scale": "gate_scale",
    "tau": "tau",
    "eps_ca": "eps_ca",
    "M": "num_probes",
    "num_probes": "num_probes",
}
_INT_FIELDS = {"steps", "num_probes"}


@contextmanager
def _stage(name: str, timings: dict[str, float]) -> Iterator[None]:
    """단계 실행 시간을 기록하고, 실패를 ExperimentError(stage)로 감싼다."""
    logger.info("단계 시작 — %s", name)
    start = time.perf_counter()
    try:
        yield
    except ExperimentError:
        raise
    except Exception as e:
        logger.error("단계 실패 — %s: %s", name, e)
        raise ExperimentError(name, e) from e
    finally:
        timings[name] = time.perf_counter() - start
    logger.info("단계 완료 — %s (%.3fs)", name, timings[name])


def _parallel_map(fn: Callable[[int], T], n: int, workers: int) -> list[T]:
    """인덱스 0..n−1에 fn을 적용한다. 결과 순서는 인덱스 순서를 따른다."""
    if workers <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


# ──────────────────────────────────────────────
# 구성 요소 준비
# ──────────────────────────────────────────────

def load_datasets(spec: DatasetSpec) -> tuple[Dataset, Dataset]:
    """설정에 따라 (anchor_fit, test) 분할을 만들거나 읽는다."""
    if spec.test_csv is not None:
        anchor_fit = load_csv_dataset(spec.anchor_csv, split=Split.ANCHOR_FIT, class_count=spec.class_count)
        test = load_csv_dataset(spec.test_csv, split=Split.TEST, class_count=spec.class_count)
        if anchor_fit.image_shape != test.image_shape:
            raise ValueError(f"anchor/test 이미지 모양이 다릅니다: {anchor_fit.image_shape} vs {test.image_shape}")
        return anchor_fit, test
    return generate_blobs(
        spec.class_count, spec.shape, spec.noise_sigma, spec.n_anchor_per_class, spec.n_test_per_class, spec.seed
    )


def load_or_build_encoder(spec: EncoderSpec, input_dim: int) -> Encoder:
    """파라미터 파일이 있으면 읽고, 없으면 시드로 인코더를 만든다."""
    if spec.param_path is not None:
        return load_encoder(spec.param_path)
    return build_encoder(spec.kind, spec.layer_dims(input_dim), spec.seed)


def build_anchors(encoder: Encoder, dataset: Dataset) -> ClassAnchorSet:
    """클래스 i의 앵커 = anchor_fit 분할에서 클래스 i 예제 임베딩의 평균.

    Raises:
        ValueError: 예제가 하나도 없는 클래스가 있을 때 (클래스 인덱스 포함)
    """
    embeddings = np.stack([encode(encoder, x) for x in dataset.images])
    anchors = []
    for k in range(dataset.class_count):
        members = embeddings[dataset.labels == k]
        if members.shape[0] == 0:
            raise ValueError(f"클래스 {k}에 anchor_fit 예제가 없습니다.")
        anchors.append(members.mean(axis=0))
    anchor_set = ClassAnchorSet(np.stack(anchors), tuple(f"class_{k}" for k in range(dataset.class_count)))
    logger.info("클래스 앵커 생성 — K=%d, d=%d", anchor_set.num_classes, anchor_set.dim)
    return anchor_set


def calibrate_gate(
    encoder: Encoder,
    anchors: ClassAnchorSet,
    held_out: Dataset,
    attack_config: AttackConfig,
    defense_config: CounterattackConfig,
    size: int = 64,
) -> GateCalibration:
    """held-out 깨끗한 예제와 그 적대적 버전의 τ̂로 게이트 τ와 γ를 정한다 (fit_gate)."""
    subset = held_out.subset(size)
    clean, adv = [], []
    for i, (x, y) in enumerate(zip(subset.images, subset.labels)):
        index = _CALIBRATION_INDEX_OFFSET + i
        x_adv = run_attack(encoder, anchors, x, int(y), attack_config, index)
        clean.append(directional_sensitivity(encoder, x, defense_config, example_index=index))
        adv.append(directional_sensitivity(encoder, x_adv, defense_config, example_index=index))
    calibration = fit_gate(clean, adv, defense_config.gate_scale)
    logger.info(
        "게이트 보정 — n=%d, mean_tau_hat_clean=%.6g, mean_tau_hat_adv=%.6g, tau=%.6g, gamma=%.6g",
        len(subset), calibration.mean_tau_hat_clean, calibration.mean_tau_hat_adv,
        calibration.tau, calibration.gamma,
    )
    return calibration


def calibrate_tau(
    encoder: Encoder,
    anchors: ClassAnchorSet,
    held_out: Dataset,
    attack_config: AttackConfig,
    defense_config: CounterattackConfig,
    size: int = 64,
) -> float:
    """held-out 깨끗한 예제와 그 적대적 버전의 평균 τ̂ 사이 중간값을 tau로 쓴다."""
    return calibrate_gate(encoder, anchors, held_out, attack_config, defense_config, size).tau


def prepare_gate(
    kind: DefenseKind,
    defense_config: CounterattackConfig,
    encoder: Encoder,
    anchors: ClassAnchorSet,
    held_out: Dataset,
    attack_config: AttackConfig,
    size: int = 64,
) -> tuple[CounterattackConfig, bool, bool]:
    """DOC 게이트의 비어 있는 tau/gamma를 보정값으로 채운다.

    Returns:
        (설정, tau 보정 여부, gamma 보정 여부). DOC가 아니거나 force_weight가 있으면 그대로 반환한다.
    """
    needs_gate = defense_config.tau is None or defense_config.gamma is None
    if kind is not DefenseKind.DOC or not needs_gate or defense_config.force_weight is not None:
        return defense_config, False, False
    calibration = calibrate_gate(encoder, anchors, held_out, attack_config, defense_config, size)
    tau_calibrated = defense_config.tau is None
    gamma_calibrated = defense_config.gamma is None
    updated = replace(
        defense_config,
        tau=calibration.tau if tau_calibrated else defense_config.tau,
        gamma=calibration.gamma if gamma_calibrated else defense_config.gamma,
    )
    return updated, tau_calibrated, gamma_calibrated


# ──────────────────────────────────────────────
# 실험 실행
# ──────────────────────────────────────────────

def _tau_hats(
    encoder: Encoder, images: list[np.ndarray], outcomes: list[CounterattackOutcome],
    config: CounterattackConfig, workers: int,
) -> list[float]:
    def one(i: int) -> float:
        if outcomes[i].dss is not None:
            return outcomes[i].dss.tau_hat
        return directional_sensitivity(encoder, images[i], config, example_index=i)

    return _parallel_map(one, len(images), workers)


def _mean_cos_or_none(deltas: list[np.ndarray]) -> float | None:
    if len(deltas) < 2:
        return None
    try:
        return mean_cos(deltas)
    except ZeroEmbeddingError as e:
        logger.warning("MeanCos 계산 불가 — %s", e)
        return None


def run_experiment(config: ExperimentConfig, emit: bool = True) -> ExperimentReport:
    """전체 파이프라인을 실행하고 리포트를 반환한다 (emit=True이면 파일도 기록).

    Raises:
        ExperimentError: 어떤 단계든 실패하면 단계 이름과 원인을 담아 중단한다.
    """
    timings: dict[str, float] = {}
    kind = config.defense_kind
    workers = config.workers
    logger.info("실험 시작 — defense=%s, output_dir=%s", kind.value, config.output_dir)

    with _stage("config", timings):
        validate(config)
    with _stage("dataset", timings):
        anchor_fit, test = load_datasets(config.dataset)
    with _stage("encoder", timings):
        encoder = load_or_build_encoder(config.encoder, int(np.prod(test.image_shape)))
    with _stage("anchors", timings):
        anchors = build_anchors(encoder, anchor_fit)

    with _stage("calibration", timings):
        defense_config, tau_calibrated, gamma_calibrated = prepare_gate(
            kind, config.defense, encoder, anchors, anchor_fit, config.attack, config.calibration_size
        )

    images = list(test.images)
    labels = [int(y) for y in test.labels]
    n = len(images)

    with _stage("attack", timings):
        adv_images = _parallel_map(
            lambda i: run_attack(encoder, anchors, images[i], labels[i], config.attack, i), n, workers
        )

    with _stage("defense", timings):
        outcomes_clean = _parallel_map(
            lambda i: run_counterattack(kind, encoder, images[i], defense_config, i), n, workers
        )
        outcomes_adv = _parallel_map(
            lambda i: run_counterattack(kind, encoder, adv_images[i], defense_config, i), n, workers
        )
        defended_clean = [apply_defense(x, o) for x, o in zip(images, outcomes_clean)]
        defended_adv = [apply_defense(x, o) for x, o in zip(adv_images, outcomes_adv)]

    with _stage("dss", timings):
        tau_hat_clean = _tau_hats(encoder, images, outcomes_clean, defense_config, workers)
        tau_hat_adv = _tau_hats(encoder, adv_images, outcomes_adv, defense_config, workers)

    with _stage("evaluate", timings):
        inputs = {
            "clean": images,
            "adversarial": adv_images,
            "defended_clean": defended_clean,
            "defended_adversarial": defended_adv,
        }
        embeddings = {c: np.stack([encode(encoder, x) for x in xs]) for c, xs in inputs.items()}
        preds = {c: [predict(e, anchors) for e in emb] for c, emb in embeddings.items()}

        records = [
            ExampleRecord(
                id=i,
                label=labels[i],
                clean_prediction=preds["clean"][i],
                adversarial_prediction=preds["adversarial"][i],
                defended_clean_prediction=preds["defended_clean"][i],
                defended_adversarial_prediction=preds["defended_adversarial"][i],
                tau_hat_clean=float(tau_hat_clean[i]),
                tau_hat_adv=float(tau_hat_adv[i]),
                weight_clean=float(outcomes_clean[i].weight),
                weight_adv=float(outcomes_adv[i].weight),
            )
            for i in range(n)
        ]

        mean_tau_clean = float(np.mean(tau_hat_clean))
        mean_tau_adv = float(np.mean(tau_hat_adv))
        defended_mean_cos = (
            None if kind is DefenseKind.NONE else _mean_cos_or_none([o.delta_ca for o in outcomes_adv])
        )
        summaries = {
            "undefended": EvalSummary(
                clean_acc=accuracy(preds["clean"], labels),
                robust_acc=accuracy(preds["adversarial"], labels),
                mean_cos=None,
                mean_tau_hat_clean=mean_tau_clean,
                mean_tau_hat_adv=mean_tau_adv,
                n_examples=n,
            ),
            "defended": EvalSummary(
                clean_acc=accuracy(preds["defended_clean"], labels),
                robust_acc=accuracy(preds["defended_adversarial"], labels),
                mean_cos=defended_mean_cos,
                mean_tau_hat_clean=mean_tau_clean,
                mean_tau_hat_adv=mean_tau_adv,
                n_examples=n,
            ),
        }
        extras = {
            "defense_kind": kind.value,
            "tau": defense_config.tau,
            "tau_calibrated": tau_calibrated,
            "gamma": defense_config.gamma,
            "gamma_calibrated": gamma_calibrated,
            "mean_weight_clean": float(np.mean([r.weight_clean for r in records])),
            "mean_weight_adv": float(np.mean([r.weight_adv for r in records])),
            "degenerate_steps": int(sum(o.degenerate_steps for o in outcomes_clean + outcomes_adv)),
            "embedding_shift": {
                "adversarial": summarize_shift(embedding_shift(encoder, images, adv_images)),
                "defended_adversarial": summarize_shift(embedding_shift(encoder, images, defended_adv)),
            },
        }

    report = ExperimentReport(
        records=records,
        summaries=summaries,
        config=config.to_dict(),
        embeddings=embeddings,
        extras=extras,
        timings=timings,
        version=counterattack.__version__,
        stable_output=config.stable_output,
    )
    for name, s in summaries.items():
        logger.info(
            "결과 — %s: clean_acc=%.4f, robust_acc=%.4f, mean_cos=%s",
            name, s.clean_acc, s.robust_acc, "n/a" if s.mean_cos is None else f"{s.mean_cos:.4f}",
        )

    if emit:
        with _stage("report", timings):
            emit_report(report, config.output_dir)
    return report


# ──────────────────────────────────────────────
# 스윕
# ──────────────────────────────────────────────

@dataclass(frozen=True)
class SweepRow:
    parameter: str
    value: float
    clean_acc: float
    robust_acc: float
    undefended_clean_acc: float
    undefended_robust_acc: float
    mean_cos: float | None


def _sweep_value(field_name: str, value) -> float | int | None:
    if field_name in ("tau", "gamma") and (value is None or str(value).lower() in ("none", "null")):
        return None
    return int(value) if field_name in _INT_FIELDS else float(value)


def sweep(config: ExperimentConfig, parameter: str, values, emit: bool = True) -> list[SweepRow]:
    """반격 파라미터 하나를 바꿔 가며 run_experiment를 반복한다 (시드 공유).

    emit=True이면 값별 리포트를 output_dir/sweep_<parameter>_<value>/에,
    요약을 output_dir/sweep_<parameter>.csv에 기록한다.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"지원하지 않는 sweep 파라미터: {parameter!r} (가능: {sorted(SWEEP_PARAMETERS)})")
    field_name = SWEEP_PARAMETERS[parameter]
    rows = []
    for raw in values:
        value = _sweep_value(field_name, raw)
        try:
            defense = replace(config.defense, **{field_name: value})
        except ValueError as e:
            raise ExperimentError("config", e) from e
        run_config = replace(
            config, defense=defense, output_dir=str(Path(config.output_dir) / f"sweep_{parameter}_{value}")
        )
        report = run_experiment(run_config, emit=emit)
        defended, undefended = report.summaries["defended"], report.summaries["undefended"]
        rows.append(SweepRow(
            parameter=parameter,
            value=value,
            clean_acc=defended.clean_acc,
            robust_acc=defended.robust_acc,
            undefended_clean_acc=undefended.clean_acc,
            undefended_robust_acc=undefended.robust_acc,
            mean_cos=defended.mean_cos,
        ))
        logger.info("sweep — %s=%s: robust_acc=%.4f", parameter, value, defended.robust_acc)

    if emit:
        write_rows_csv(rows, Path(config.output_dir) / f"sweep_{parameter}.csv")
    return rows


# ──────────────────────────────────────────────
# 구성 요소 제거 실험
# ──────────────────────────────────────────────

# 변형 이름 → (방어 종류, DSS 게이트 사용, 직교 방향(OGA) 사용, 반격 설정 변경)
ABLATION_VARIANTS = {
    "ttc": (DefenseKind.TTC, False, False, {}),
    "dss_only": (DefenseKind.DOC, True, False, {"lam": 0.0, "mu": 0.0}),
    "oga_only": (DefenseKind.DOC, False, True, {"force_weight": 1.0}),
    "dss_oga": (DefenseKind.DOC, True, True, {}),
}


@dataclass(frozen=True)
class AblationRow:
    variant: str
    dss: bool
    oga: bool
    clean_acc_mean: float
    clean_acc_std: float
    robust_acc_mean: float
    robust_acc_std: float
    n_seeds: int


def ablation(config: ExperimentConfig, seeds=(1, 2, 3, 4, 5), emit: bool = True) -> list[AblationRow]:
    """TTC / DSS만 / 직교 방향만 / 둘 다를 같은 데이터로 비교한다.

    시드는 공격과 반격의 난수 루트 시드에 함께 쓰이고, 데이터셋은 고정된다.
    emit=True이면 output_dir/ablation.csv를 쓴다.
    """
    if not seeds:
        raise ValueError("ablation에는 시드가 하나 이상 필요합니다.")
    rows = []
    for variant, (kind, dss, oga, changes) in ABLATION_VARIANTS.items():
        clean, robust = [], []
        for seed in seeds:
            run_config = replace(
                config,
                defense_kind=kind,
                attack=replace(config.attack, seed=int(seed)),
                defense=replace(config.defense, seed=int(seed), **changes),
            )
            defended = run_experiment(run_config, emit=False).summaries["defended"]
            clean.append(defended.clean_acc)
            robust.append(defended.robust_acc)
        rows.append(AblationRow(
            variant=variant,
            dss=dss,
            oga=oga,
            clean_acc_mean=float(np.mean(clean)),
            clean_acc_std=float(np.std(clean)),
            robust_acc_mean=float(np.mean(robust)),
            robust_acc_std=float(np.std(robust)),
            n_seeds=len(seeds),
        ))
        logger.info(
            "ablation — %s: clean=%.4f±%.4f, robust=%.4f±%.4f",
            variant, rows[-1].clean_acc_mean, rows[-1].clean_acc_std,
            rows[-1].robust_acc_mean, rows[-1].robust_acc_std,
        )

    if emit:
        write_rows_csv(rows, Path(config.output_dir) / "ablation.csv")
    return rows


def write_rows_csv(rows: list, path: Path) -> None:
    """dataclass 행 목록을 CSV로 기록한다 (열 순서 = 필드 순서)."""
    if not rows:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [f.name for f in fields(rows[0])]
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=names)
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
    logger.info("CSV 기록 — path=%s, rows=%d", path, len(rows))


# ──────────────────────────────────────────────
# 추세 점검
# ──────────────────────────────────────────────

@dataclass(frozen=True)
class TrendRow:
    """데이터셋 시드 하나에 대한 방어 비교 결과와 추세 판정."""

    seed: int
    robust_none: float
    robust_ttc: float
    robust_doc: float
    robust_doc_inverted: float
    clean_none: float
    clean_doc: float
    mean_cos_ttc: float | None
    mean_cos_doc: float | None
    tau_hat_clean: float
    tau_hat_adv: float
    robust_doc_t1: float
    robust_doc_t4: float
    ordering_ok: bool
    doc_gain: bool
    clean_preserved: bool
    diversity_ok: bool
    dss_separation: bool
    steps_ok: bool


def trend_check(config: ExperimentConfig, seeds=(1, 2, 3), emit: bool = True) -> list[TrendRow]:
    """시드별로 None/TTC/DOC(두 게이트 극성)와 T=1/T=4를 실행해 추세를 점검한다.

    판정 결과는 기록만 하며 예외를 던지지 않는다. emit=True이면 trend.csv를 쓴다.
    """
    rows = []
    for seed in seeds:
        base = replace(config, dataset=replace(config.dataset, seed=int(seed)))

        def run(kind: DefenseKind, **defense_changes) -> ExperimentReport:
            cfg = replace(base, defense_kind=kind, defense=replace(base.defense, **defense_changes))
            return run_experiment(cfg, emit=False)

        none = run(DefenseKind.NONE)
        ttc = run(DefenseKind.TTC)
        doc = run(DefenseKind.DOC, steps=4)
        doc_inv = run(DefenseKind.DOC, steps=4, gate_polarity=GatePolarity.INVERTED)
        doc_t1 = run(DefenseKind.DOC, steps=1)

        r_none = none.summaries["defended"].robust_acc
        r_ttc = ttc.summaries["defended"].robust_acc
        r_doc = doc.summaries["defended"].robust_acc
        mc_ttc = ttc.summaries["defended"].mean_cos
        mc_doc = doc.summaries["defended"].mean_cos
        und = doc.summaries["undefended"]
        rows.append(TrendRow(
            seed=int(seed),
            robust_none=r_none,
            robust_ttc=r_ttc,
            robust_doc=r_doc,
            robust_doc_inverted=doc_inv.summaries["defended"].robust_acc,
            clean_none=none.summaries["defended"].clean_acc,
            clean_doc=doc.summaries["defended"].clean_acc,
            mean_cos_ttc=mc_ttc,
            mean_cos_doc=mc_doc,
            tau_hat_clean=und.mean_tau_hat_clean,
            tau_hat_adv=und.mean_tau_hat_adv,
            robust_doc_t1=doc_t1.summaries["defended"].robust_acc,
            robust_doc_t4=r_doc,
            ordering_ok=r_none <= r_ttc <= r_doc,
            doc_gain=r_doc > r_ttc,
            clean_preserved=abs(doc.summaries["defended"].clean_acc - und.clean_acc) <= 0.10,
            diversity_ok=mc_ttc is not None and mc_doc is not None and mc_doc < mc_ttc,
            dss_separation=und.mean_tau_hat_adv > und.mean_tau_hat_clean,
            steps_ok=r_doc >= doc_t1.summaries["defended"].robust_acc,
        ))
        logger.info("추세 점검 — seed=%d: %s", seed, rows[-1])

    gains = sum(r.doc_gain for r in rows)
    logger.info("추세 점검 완료 — DOC > TTC 시드 %d/%d", gains, len(rows))
    if emit:
        write_rows_csv(rows, Path(config.output_dir) / "trend.csv")
    return rows


__all__ = [
    "CounterattackError",
    "ablation",
    "build_anchors",
    "calibrate_gate",
    "calibrate_tau",
    "load_datasets",
    "load_or_build_encoder",
    "run_experiment",
    "sweep",
    "trend_check",
]
