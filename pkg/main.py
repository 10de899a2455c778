"""
main.py
-------
반격 방어 실험 CLI 진입점.

서브커맨드:
    gen-data  합성 데이터셋(anchor_fit/test CSV)과 인코더·앵커 파라미터 파일 생성
    attack    테스트 분할에 PGD/CW 공격을 적용해 adversarial.csv 기록
    defend    입력 CSV의 모든 예제에 반격 방어를 적용해 defended.csv 기록
    eval      전체 파이프라인 실행 후 summary.json 등 리포트 기록
    sweep     반격 파라미터 하나를 바꿔 가며 eval 반복
    report    기존 실행 디렉토리의 summary.json/records.csv를 다시 표시
    trend     시드별 None/TTC/DOC 비교 추세 점검 (trend.csv)
    ablation  TTC / DSS만 / 직교 방향만 / DSS+직교 방향 비교 (ablation.csv)

모든 서브커맨드는 --config <key=value 파일>과 설정 키별 플래그(--eps-atk 등)를 받는다.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from counterattack.attack import run_attack
from counterattack.defense import apply_defense, counterattack, directional_sensitivity
from counterattack.encoder import encode, save_encoder
from counterattack.errors import CounterattackError
from counterattack.metrics import EvalSummary, accuracy
from counterattack.zeroshot import predict, save_anchors
from dataset import Dataset, Split, load_csv_dataset, write_csv_dataset
from experiment import FLAT_KEYS, ExperimentConfig, apply_overrides, load_config_file
from harness import (
    SWEEP_PARAMETERS,
    ablation,
    build_anchors,
    load_datasets,
    load_or_build_encoder,
    prepare_gate,
    run_experiment,
    sweep,
    trend_check,
)
from logger import setup_logging
from report import summaries_from_rows

logger = logging.getLogger(__name__)

console = Console()


# ──────────────────────────────────────────────
# 인자 파싱
# ──────────────────────────────────────────────

def _common_parser() -> argparse.ArgumentParser:
    """모든 서브커맨드가 공유하는 설정 플래그. 플래그 이름은 FLAT_KEYS에서 만든다."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", help="평탄 key=value 설정 파일 경로")
    parser.add_argument("-v", "--verbose", action="store_true", help="콘솔 로그 레벨을 DEBUG로")
    group = parser.add_argument_group("실험 설정 (config.yaml/환경변수/--config 값을 덮어씀)")
    for key in FLAT_KEYS:
        group.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar="VALUE")
    return parser


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="counterattack", description="테스트 시점 반격 방어 실험 도구")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-data", parents=[common], help="합성 데이터셋과 파라미터 파일 생성")
    sub.add_parser("attack", parents=[common], help="테스트 분할 공격 → adversarial.csv")
    p_defend = sub.add_parser("defend", parents=[common], help="입력 CSV에 방어 적용 → defended.csv")
    p_defend.add_argument("--input", help="방어할 입력 CSV (기본: 테스트 분할)")
    sub.add_parser("eval", parents=[common], help="전체 파이프라인 실행 및 리포트 기록")
    p_sweep = sub.add_parser("sweep", parents=[common], help="반격 파라미터 스윕")
    p_sweep.add_argument("--parameter", required=True, choices=sorted(SWEEP_PARAMETERS))
    p_sweep.add_argument("--values", required=True, help="쉼표로 구분한 값 목록 (예: 0,0.5,0.9)")
    p_report = sub.add_parser("report", parents=[common], help="기존 실행 결과 표시")
    p_report.add_argument("--run-dir", help="실행 디렉토리 (기본: output_dir)")
    p_trend = sub.add_parser("trend", parents=[common], help="시드별 추세 점검 → trend.csv")
    p_trend.add_argument("--seeds", default="1,2,3", help="쉼표로 구분한 데이터셋 시드 (기본: 1,2,3)")
    p_ablation = sub.add_parser("ablation", parents=[common], help="구성 요소 제거 실험 → ablation.csv")
    p_ablation.add_argument("--seeds", default="1,2,3,4,5", help="쉼표로 구분한 공격/반격 시드 (기본: 1,2,3,4,5)")
    return parser


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """config.yaml/환경변수 → --config 파일 → CLI 플래그 순으로 덮어쓴다."""
    cfg = ExperimentConfig.from_defaults()
    if args.config:
        cfg = apply_overrides(cfg, load_config_file(args.config))
    flags = {key: getattr(args, key) for key in FLAT_KEYS if getattr(args, key, None) is not None}
    return apply_overrides(cfg, flags)


def _split_values(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


# ──────────────────────────────────────────────
# 출력
# ──────────────────────────────────────────────

def _fmt(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def print_summaries(summaries: dict[str, EvalSummary], title: str) -> None:
    table = Table(title=title)
    for column in ("조건", "clean_acc", "robust_acc", "mean_cos", "τ̂ clean", "τ̂ adv", "n"):
        table.add_column(column, justify="right" if column != "조건" else "left")
    for name, s in summaries.items():
        table.add_row(
            name, _fmt(s.clean_acc), _fmt(s.robust_acc), _fmt(s.mean_cos),
            _fmt(s.mean_tau_hat_clean), _fmt(s.mean_tau_hat_adv), str(s.n_examples),
        )
    console.print(table)


def print_rows(rows: list, title: str) -> None:
    """dataclass 행 목록을 표로 출력한다."""
    if not rows:
        return
    table = Table(title=title)
    names = list(rows[0].__dataclass_fields__)
    for name in names:
        table.add_column(name, justify="right")
    for row in rows:
        cells = []
        for name in names:
            value = getattr(row, name)
            cells.append(_fmt(value) if isinstance(value, float) or value is None else str(value))
        table.add_row(*cells)
    console.print(table)


# ──────────────────────────────────────────────
# 서브커맨드
# ──────────────────────────────────────────────

def cmd_gen_data(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    out = Path(cfg.output_dir)
    anchor_fit, test = load_datasets(cfg.dataset)
    encoder = load_or_build_encoder(cfg.encoder, int(np.prod(test.image_shape)))
    anchors = build_anchors(encoder, anchor_fit)

    write_csv_dataset(anchor_fit, out / "anchor_fit.csv")
    write_csv_dataset(test, out / "test.csv")
    save_encoder(encoder, out / "encoder.txt")
    save_anchors(anchors, out / "anchors.txt")
    console.print(Panel.fit(
        f"anchor_fit {len(anchor_fit)}개, test {len(test)}개, shape={test.image_shape}\n"
        f"인코더 {encoder.kind.value} {encoder.layer_dims}\n[dim]{out}[/dim]",
        title="[bold green]데이터 생성 완료[/bold green]", border_style="green",
    ))


def cmd_attack(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    anchor_fit, test = load_datasets(cfg.dataset)
    encoder = load_or_build_encoder(cfg.encoder, int(np.prod(test.image_shape)))
    anchors = build_anchors(encoder, anchor_fit)

    labels = [int(y) for y in test.labels]
    adv = [run_attack(encoder, anchors, x, y, cfg.attack, i) for i, (x, y) in enumerate(zip(test.images, labels))]
    clean_acc = accuracy([predict(encode(encoder, x), anchors) for x in test.images], labels)
    robust_acc = accuracy([predict(encode(encoder, x), anchors) for x in adv], labels)

    path = Path(cfg.output_dir) / "adversarial.csv"
    write_csv_dataset(Dataset(np.stack(adv), test.labels, Split.TEST, test.class_count, test.seed), path)
    console.print(Panel.fit(
        f"clean_acc  {clean_acc:.4f}\nrobust_acc {robust_acc:.4f}\n[dim]{path}[/dim]",
        title=f"[bold red]{cfg.attack.loss_kind.value} 공격 (eps={cfg.attack.eps_atk:.5f})[/bold red]",
        border_style="red",
    ))


def cmd_defend(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    anchor_fit, test = load_datasets(cfg.dataset)
    encoder = load_or_build_encoder(cfg.encoder, int(np.prod(test.image_shape)))
    anchors = build_anchors(encoder, anchor_fit)
    inputs = load_csv_dataset(args.input, shape=test.image_shape, class_count=test.class_count) if args.input else test

    defense, _, _ = prepare_gate(
        cfg.defense_kind, cfg.defense, encoder, anchors, anchor_fit, cfg.attack, cfg.calibration_size
    )

    defended, tau_hats, weights = [], [], []
    for i, x in enumerate(inputs.images):
        outcome = counterattack(cfg.defense_kind, encoder, x, defense, i)
        defended.append(apply_defense(x, outcome))
        weights.append(outcome.weight)
        tau_hats.append(outcome.dss.tau_hat if outcome.dss is not None
                        else directional_sensitivity(encoder, x, defense, example_index=i))
    labels = [int(y) for y in inputs.labels]
    acc = accuracy([predict(encode(encoder, x), anchors) for x in defended], labels)

    path = Path(cfg.output_dir) / "defended.csv"
    write_csv_dataset(Dataset(np.stack(defended), inputs.labels, Split.TEST, inputs.class_count), path)
    console.print(Panel.fit(
        f"accuracy   {acc:.4f}\nmean τ̂     {np.mean(tau_hats):.4f}\nmean w     {np.mean(weights):.4f}\n"
        f"tau        {_fmt(defense.tau)}\n[dim]{path}[/dim]",
        title=f"[bold blue]{cfg.defense_kind.value} 방어[/bold blue]", border_style="blue",
    ))


def cmd_eval(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    report = run_experiment(cfg)
    print_summaries(report.summaries, f"평가 결과 ({cfg.defense_kind.value})")
    console.print(f"[dim]리포트: {cfg.output_dir}[/dim]")


def cmd_sweep(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    rows = sweep(cfg, args.parameter, _split_values(args.values))
    print_rows(rows, f"sweep — {args.parameter}")


def cmd_report(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    run_dir = Path(args.run_dir or cfg.output_dir)
    summary_path = run_dir / "summary.json"
    if not summary_path.exists():
        raise FileNotFoundError(f"summary.json이 없습니다: {summary_path}")
    summary = json.loads(summary_path.read_text(encoding="utf-8"))
    print_summaries(
        {name: EvalSummary(**values) for name, values in summary["summaries"].items()},
        f"리포트 — {run_dir}",
    )

    records_path = run_dir / "records.csv"
    if records_path.exists():
        with open(records_path, "r", encoding="utf-8", newline="") as f:
            recomputed = summaries_from_rows(list(csv.DictReader(f)))
        table = Table(title="records.csv 재계산 정확도")
        table.add_column("조건")
        table.add_column("accuracy", justify="right")
        for condition, acc in recomputed.items():
            table.add_row(condition, _fmt(acc))
        console.print(table)


def cmd_trend(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    rows = trend_check(cfg, [int(s) for s in _split_values(args.seeds)])
    print_rows(rows, "추세 점검")
    gains = sum(r.doc_gain for r in rows)
    style = "green" if gains * 3 >= len(rows) * 2 else "yellow"
    console.print(f"[bold {style}]DOC > TTC: {gains}/{len(rows)} 시드[/bold {style}]")


def cmd_ablation(cfg: ExperimentConfig, args: argparse.Namespace) -> None:
    rows = ablation(cfg, [int(s) for s in _split_values(args.seeds)])
    print_rows(rows, "구성 요소 제거 실험")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "attack": cmd_attack,
    "defend": cmd_defend,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "trend": cmd_trend,
    "ablation": cmd_ablation,
}


def main(argv: list[str] | None = None) -> int:
    """CLI 메인 함수. 도메인 오류는 로그를 남기고 종료 코드 1을 반환한다."""
    args = build_parser().parse_args(argv)
    setup_logging(console_level="DEBUG" if args.verbose else None)
    logger.info("counterattack CLI 시작 — command=%s", args.command)

    try:
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
    except (CounterattackError, FileNotFoundError) as e:
        logger.error("실행 실패 — %s", e)
        console.print(f"[bold red]오류:[/bold red] {e}")
        return 1
    logger.info("counterattack CLI 종료 — command=%s", args.command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
