"""Method comparisons, threshold sweeps and report files (CSV, JSON, SVG)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from adaswitch.actions import ToolContext
from adaswitch.backends import AgentProfile
from adaswitch.data import DatasetRecord
from adaswitch.exam import compile_rationale
from adaswitch.metrics import REFERENCE_DETECTION, BatchSummary, ConfusionReport, detection_confusion
from adaswitch.oracle import build_reference, check_step
from adaswitch.orchestrator import InferenceConfig, Mode, RunResult, run_batch
from adaswitch.policy import Adaptive, Never, RandomSwitch, Sequential
from adaswitch.trajectory import Author, Step

REPORT_COLUMNS = ("method", "p", "accuracy", "mean_flops", "escalation_rate")
FLOPS_NOTE = "cost = 2 * param_count * (prompt_tokens + generated_tokens), summed over calls"
DEFAULT_THRESHOLDS = (0.1, 0.3, 0.5, 0.7, 0.9)


def summary_row(method: str, p: float | None, summary: BatchSummary) -> dict[str, Any]:
    return {
        "method": method,
        "p": p,
        "accuracy": summary.accuracy,
        "mean_flops": summary.mean_flops,
        "escalation_rate": summary.escalation_rate,
    }


def standard_methods(p: float = 0.5) -> dict[str, InferenceConfig]:
    return {
        "local_only": InferenceConfig(Mode.LOCAL_ONLY, Never()),
        "cloud_only": InferenceConfig(Mode.CLOUD_ONLY, Never()),
        "self_reflection": InferenceConfig(Mode.SELF_REFLECTION, Adaptive(p)),
        "adaswitch": InferenceConfig(Mode.ADASWITCH, Adaptive(p)),
    }


def matched_baselines(escalation_rate: float, seed: int = 0) -> dict[str, InferenceConfig]:
    """Random and sequential switches tuned to a given escalation rate."""
    rate = min(1.0, max(0.0, escalation_rate))
    k = max(1, round(1 / rate)) if rate > 0 else 10**9
    return {
        "random": InferenceConfig(Mode.ADASWITCH, RandomSwitch(rate, seed)),
        "sequential": InferenceConfig(Mode.ADASWITCH, Sequential(k)),
    }


def _threshold(cfg: InferenceConfig) -> float | None:
    return getattr(cfg.policy, "p", None)


def compare(
    records: Sequence[DatasetRecord],
    local: AgentProfile,
    cloud: AgentProfile,
    methods: Mapping[str, InferenceConfig],
    *,
    seed: int = 0,
    parallelism: int = 1,
    tools: ToolContext | None = None,
) -> tuple[list[dict[str, Any]], dict[str, list[RunResult]]]:
    rows, runs = [], {}
    for name, cfg in methods.items():
        results, summary = run_batch(records, local, cloud, cfg, seed=seed, parallelism=parallelism, tools=tools)
        rows.append(summary_row(name, _threshold(cfg), summary))
        runs[name] = results
    return rows, runs


def sweep_threshold(
    records: Sequence[DatasetRecord],
    local: AgentProfile,
    cloud: AgentProfile,
    thresholds: Iterable[float] = DEFAULT_THRESHOLDS,
    cfg: InferenceConfig | None = None,
    *,
    seed: int = 0,
    parallelism: int = 1,
    tools: ToolContext | None = None,
) -> list[dict[str, Any]]:
    """One adaswitch batch per threshold; failed records count as wrong."""
    base = cfg or InferenceConfig(Mode.ADASWITCH)
    if base.mode is not Mode.ADASWITCH:
        raise ValueError("threshold sweeps run in adaswitch mode")
    rows = []
    for p in thresholds:
        _, summary = run_batch(
            records, local, cloud, replace(base, policy=Adaptive(p)), seed=seed, parallelism=parallelism, tools=tools
        )
        rows.append(summary_row("adaswitch", p, summary))
    return rows


def labeled_local_steps(
    results: Sequence[RunResult], records: Sequence[DatasetRecord], mode: str = "math", tolerance: float = 1e-6
) -> list[Step]:
    """Local steps that carry an error probability, labeled by the step oracle.

    Erased steps are included: their probability is what triggered the switch.
    """
    by_id = {r.question_id: r for r in records}
    out = []
    for result in results:
        rec = by_id[result.trajectory.question_id]
        ref = build_reference([compile_rationale(rec).trajectory], mode, tolerance)
        for step in result.trajectory.steps:
            if step.author is Author.LOCAL and step.error_prob is not None:
                out.append(replace(step, oracle_label=check_step(step, ref).label))
    return out


def detection_report(steps: Sequence[Step], threshold: float) -> dict[str, Any]:
    report: ConfusionReport = detection_confusion(steps, threshold)
    return {
        "threshold": threshold,
        "confusion": report.to_json(),
        "reference_points": {k: {"TPR": v[0], "TNR": v[1]} for k, v in REFERENCE_DETECTION.items()},
    }


def _csv_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows: Sequence[Mapping[str, Any]], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_csv_value(row.get(c)) for c in REPORT_COLUMNS])


def write_json(rows: Sequence[Mapping[str, Any]], path: Path, extra: Mapping[str, Any] | None = None) -> None:
    doc = {"cost_model": FLOPS_NOTE, "rows": [{c: row.get(c) for c in REPORT_COLUMNS} for row in rows]}
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def plot_frontier(rows: Sequence[Mapping[str, Any]], path: Path) -> None:
    if not rows:
        raise ValueError("nothing to plot")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "adaswitch"
    fig, ax = plt.subplots(figsize=(6, 4))
    for method in dict.fromkeys(r["method"] for r in rows):
        pts = sorted((r["mean_flops"], 100 * r["accuracy"], r.get("p")) for r in rows if r["method"] == method)
        xs, ys = [p[0] for p in pts], [p[1] for p in pts]
        ax.plot(xs, ys, marker="o", linestyle="-" if len(pts) > 1 else "none", label=method)
        for x, y, p in pts:
            if p is not None and not (isinstance(p, float) and math.isnan(p)):
                ax.annotate(f"p={p:g}", (x, y), textcoords="offset points", xytext=(4, 4), fontsize=7)
    ax.set_xlabel("mean cost per question (FLOPs)")
    ax.set_ylabel("accuracy (%)")
    ax.set_title("accuracy vs cost")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def report(
    rows: Sequence[Mapping[str, Any]],
    out_dir: str | Path,
    formats: Iterable[str] = ("csv", "json", "svg"),
    stem: str = "report",
    extra: Mapping[str, Any] | None = None,
) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for fmt in formats:
        path = out / f"{stem}.{fmt}"
        if fmt == "csv":
            write_csv(rows, path)
        elif fmt == "json":
            write_json(rows, path, extra)
        elif fmt == "svg":
            plot_frontier(rows, path)
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written.append(path)
    return written


def read_rows(path: str | Path) -> list[dict[str, Any]]:
    """Load rows back from a report CSV or JSON file."""
    path = Path(path)
    if path.suffix == ".json":
        return list(json.loads(path.read_text(encoding="utf-8"))["rows"])
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        for raw in csv.DictReader(fh):
            rows.append(
                {
                    "method": raw["method"],
                    "p": float(raw["p"]) if raw["p"] else None,
                    "accuracy": float(raw["accuracy"]),
                    "mean_flops": float(raw["mean_flops"]),
                    "escalation_rate": float(raw["escalation_rate"]),
                }
            )
    return rows

