"""
report.py
---------
실험 리포트 자료형과 파일 출력 모듈.

emit_report가 기록하는 파일:
    - summary.json       : 조건별 EvalSummary + 설정 사본 + (선택) 실행 시간
    - records.csv        : 예제 × 조건 한 줄씩 (열 순서 RECORD_COLUMNS 고정)
    - embeddings_pca.csv : 조건별 임베딩의 2차원 PCA 좌표
    - scatter.svg        : PCA 좌표 산점도 (matplotlib SVG, 조건별 gid 그룹에 점마다 마커 하나)
"""

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")  # 화면 없이 파일로만 그린다
import matplotlib.pyplot as plt  # noqa: E402

from counterattack.errors import ExperimentError
from counterattack.metrics import EvalSummary, pca_2d

logger = logging.getLogger(__name__)

CONDITIONS = ("clean", "adversarial", "defended_clean", "defended_adversarial")
RECORD_COLUMNS = ("id", "label", "condition", "prediction", "correct", "tau_hat", "weight")
PCA_COLUMNS = ("condition", "id", "label", "pc1", "pc2")

# 산점도 조건별 색상
_COLORS = {
    "clean": "#1f77b4",
    "adversarial": "#d62728",
    "defended_clean": "#2ca02c",
    "defended_adversarial": "#ff7f0e",
}
_FIG_INCHES = 6.0


@dataclass(frozen=True)
class ExampleRecord:
    """테스트 예제 하나에 대한 네 조건의 예측과 DSS 값."""

    id: int
    label: int
    clean_prediction: int
    adversarial_prediction: int
    defended_clean_prediction: int
    defended_adversarial_prediction: int
    tau_hat_clean: float
    tau_hat_adv: float
    weight_clean: float
    weight_adv: float

    def rows(self) -> list[dict]:
        """records.csv용 조건별 행 4개."""
        by_condition = {
            "clean": (self.clean_prediction, self.tau_hat_clean, self.weight_clean),
            "adversarial": (self.adversarial_prediction, self.tau_hat_adv, self.weight_adv),
            "defended_clean": (self.defended_clean_prediction, self.tau_hat_clean, self.weight_clean),
            "defended_adversarial": (self.defended_adversarial_prediction, self.tau_hat_adv, self.weight_adv),
        }
        return [
            {
                "id": self.id,
                "label": self.label,
                "condition": condition,
                "prediction": pred,
                "correct": int(pred == self.label),
                "tau_hat": tau_hat,
                "weight": weight,
            }
            for condition, (pred, tau_hat, weight) in by_condition.items()
        ]


@dataclass
class ExperimentReport:
    """run_experiment 결과.

    Attributes:
        records: 예제별 기록
        summaries: {"undefended": EvalSummary, "defended": EvalSummary}
        config: 설정 사본 (ExperimentConfig.to_dict())
        embeddings: 조건 → (n, d) 임베딩 배열 (PCA 출력용)
        extras: 보정된 tau, 임베딩 이동량 통계 등 부가 정보
        timings: 단계별 실행 시간(초)
        version: 툴킷 버전
        stable_output: True이면 summary에서 실행 시간과 실행 환경 값을 뺀다
    """

    records: list[ExampleRecord]
    summaries: dict[str, EvalSummary]
    config: dict
    embeddings: dict[str, np.ndarray] = field(default_factory=dict)
    extras: dict = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    version: str = ""
    stable_output: bool = False

    def summary_dict(self) -> dict:
        """summary.json 내용. json.loads(파일) == summary_dict()가 성립한다."""
        config_echo = dict(self.config)
        if self.stable_output:
            config_echo.pop("output_dir", None)
            config_echo.pop("workers", None)
        summary = {
            "version": self.version,
            "n_examples": len(self.records),
            "summaries": {name: s.to_dict() for name, s in self.summaries.items()},
            "extras": self.extras,
            "config": config_echo,
        }
        if not self.stable_output:
            summary["timings"] = dict(self.timings)
        return summary

    def record_rows(self) -> list[dict]:
        return [row for record in self.records for row in record.rows()]


def summaries_from_rows(rows: list[dict]) -> dict[str, float]:
    """records.csv 행에서 조건별 정확도를 다시 계산한다 (자기 일관성 검사용)."""
    totals: dict[str, list[int]] = {c: [0, 0] for c in CONDITIONS}
    for row in rows:
        t = totals[row["condition"]]
        t[0] += int(row["correct"])
        t[1] += 1
    return {c: (ok / n if n else float("nan")) for c, (ok, n) in totals.items()}


def _write_summary(report: ExperimentReport, path: Path) -> None:
    text = json.dumps(report.summary_dict(), indent=2, sort_keys=True, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")


def _write_records(report: ExperimentReport, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=RECORD_COLUMNS)
        writer.writeheader()
        for row in report.record_rows():
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _pca_rows(report: ExperimentReport) -> list[dict]:
    conditions = [c for c in CONDITIONS if c in report.embeddings]
    if not conditions:
        return []
    stacked = np.concatenate([report.embeddings[c] for c in conditions])
    if stacked.shape[0] < 3:
        return []
    projection = pca_2d(list(stacked))
    if projection.rank_deficient:
        logger.warning("PCA 입력이 rank 부족 — 두 번째 좌표를 0으로 기록합니다.")
    rows = []
    offset = 0
    for condition in conditions:
        for i, record in enumerate(report.records):
            pc1, pc2 = projection.points[offset + i]
            rows.append({"condition": condition, "id": record.id, "label": record.label,
                         "pc1": float(pc1), "pc2": float(pc2)})
        offset += len(report.records)
    return rows


def _write_pca(rows: list[dict], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=PCA_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def render_scatter_svg(rows: list[dict]) -> str:
    """PCA 행을 matplotlib 산점도로 그려 SVG 문자열로 반환한다.

    조건마다 Line2D 하나를 그리고 gid를 조건 이름으로 두므로, SVG에서
    id가 조건 이름인 첫 그룹 안에 그 조건의 점마다 <use> 마커가 하나씩 생긴다.
    """
    with plt.rc_context({"svg.hashsalt": "counterattack", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(_FIG_INCHES, _FIG_INCHES))
        try:
            for condition in CONDITIONS:
                points = [(r["pc1"], r["pc2"]) for r in rows if r["condition"] == condition]
                if not points:
                    continue
                xs, ys = zip(*points)
                ax.plot(
                    xs, ys, linestyle="none", marker="o", markersize=4, alpha=0.7,
                    color=_COLORS[condition], label=condition, gid=condition,
                )
            ax.set_xlabel("pc1")
            ax.set_ylabel("pc2")
            if rows:
                ax.legend(loc="best", fontsize="small")
            buffer = io.StringIO()
            fig.savefig(buffer, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buffer.getvalue()


def emit_report(report: ExperimentReport, out_dir: str | Path) -> list[Path]:
    """리포트 파일 4종을 기록하고 경로 목록을 반환한다.

    기록 중 실패하면 이번 호출에서 쓴 파일을 모두 지우고 ExperimentError를 던진다.
    """
    out_dir = Path(out_dir)
    written: list[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        pca_rows = _pca_rows(report)
        writers = (
            ("summary.json", lambda p: _write_summary(report, p)),
            ("records.csv", lambda p: _write_records(report, p)),
            ("embeddings_pca.csv", lambda p: _write_pca(pca_rows, p)),
            ("scatter.svg", lambda p: p.write_text(render_scatter_svg(pca_rows), encoding="utf-8")),
        )
        for name, write in writers:
            path = out_dir / name
            written.append(path)
            write(path)
    except OSError as e:
        for path in written:
            path.unlink(missing_ok=True)
        logger.error("리포트 기록 실패 — path=%s, error=%s", written[-1] if written else out_dir, e)
        raise ExperimentError("report", OSError(f"{written[-1] if written else out_dir}: {e}")) from e

    logger.info("리포트 기록 완료 — dir=%s, 파일 %d개", out_dir, len(written))
    return written
