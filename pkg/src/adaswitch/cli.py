"""``adaswitch`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from adaswitch import bench
from adaswitch.config import Config, ConfigError, load_config
from adaswitch.data import load_dataset, save_dataset
from adaswitch.exam import ExamConfig, compile_rationale, emit_training_sets, examine_batch
from adaswitch.oracle import OracleError
from adaswitch.orchestrator import InferenceConfig, Mode, result_row, run_batch
from adaswitch.policy import PolicyParseError, format_policy, parse_policy
from adaswitch.synthetic import gen_synthetic_tasks
from adaswitch.trajectory import read_trajectories, write_jsonl, write_trajectories

log = logging.getLogger("adaswitch")

GOLD_FILE = "gold.jsonl"
REVISED_FILE = "revised.jsonl"


class UsageError(Exception):
    pass


def _inference_config(args: argparse.Namespace, conf: Config, mode: Mode, policy_text: str) -> InferenceConfig:
    d = conf.defaults
    return InferenceConfig(
        mode=mode,
        policy=parse_policy(policy_text),
        max_steps=d.max_steps,
        max_self_retries=d.retries,
        answer_mode=args.answer_mode,
        tolerance=d.tolerance,
    )


def _records(args: argparse.Namespace):
    if not args.dataset:
        raise UsageError("--dataset is required")
    return load_dataset(args.dataset, args.limit)


def cmd_compile_data(args: argparse.Namespace, conf: Config) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        tasks = gen_synthetic_tasks(args.synthetic, args.steps, seed=args.seed)
        records = [t.record() for t in tasks]
        save_dataset(out / "dataset.jsonl", records)
        if args.limit is not None:
            records = records[: args.limit]
    else:
        records = _records(args)
    compiled = [compile_rationale(r) for r in records]
    write_trajectories(out / GOLD_FILE, (c.trajectory for c in compiled))
    write_jsonl(
        out / "compile_report.jsonl",
        ({"question_id": c.trajectory.question_id, "low_quality": c.low_quality, "issues": list(c.issues)} for c in compiled),
    )
    flagged = sum(c.low_quality for c in compiled)
    print(f"compiled {len(compiled)} records ({flagged} low-quality) -> {out / GOLD_FILE}")
    return 0


def cmd_examine(args: argparse.Namespace, conf: Config) -> int:
    records = _records(args)
    gold_path = Path(args.gold) if args.gold else Path(args.out) / GOLD_FILE
    gold = {t.question_id: t for t in read_trajectories(gold_path)} if gold_path.exists() else {}
    exam = ExamConfig(
        samples_per_question=args.samples, temperature=args.temperature, top_k=args.top_k, mode=args.answer_mode
    )
    revised, reports = examine_batch(
        records,
        conf.profile(args.local),
        conf.profile(args.cloud),
        exam,
        gold=gold,
        tools=conf.tools(),
        seed=args.seed,
        parallelism=args.parallel,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectories(out / REVISED_FILE, revised)
    write_jsonl(out / "exam_report.jsonl", (r.to_json() for r in reports))
    print(f"retained {len(revised)} of {len(reports)} samples -> {out / REVISED_FILE}")
    return 0


def cmd_export_train(args: argparse.Namespace, conf: Config) -> int:
    out = Path(args.out)
    gold = read_trajectories(Path(args.gold) if args.gold else out / GOLD_FILE)
    revised_path = Path(args.revised) if args.revised else out / REVISED_FILE
    revised = read_trajectories(revised_path) if revised_path.exists() else []
    first, second = emit_training_sets(gold, revised, out)
    print(f"wrote {first} ({len(gold)}) and {second} ({len(revised)})")
    return 0


def cmd_infer(args: argparse.Namespace, conf: Config) -> int:
    records = _records(args)
    mode = Mode.parse(args.mode)
    cfg = _inference_config(args, conf, mode, args.policy)
    cloud = conf.profile(args.cloud) if mode in (Mode.CLOUD_ONLY, Mode.ADASWITCH) else None
    results, summary = run_batch(
        records, conf.profile(args.local), cloud, cfg, seed=args.seed, parallelism=args.parallel, tools=conf.tools()
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    method = mode.value
    write_jsonl(out / "results.jsonl", (result_row(r, method, cfg) for r in results))
    doc = {"method": method, "policy": format_policy(cfg.policy), **summary.to_json()}
    (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    print(
        f"{method}: accuracy {summary.accuracy:.4f}, mean FLOPs {summary.mean_flops:.4g}, "
        f"escalation rate {summary.escalation_rate:.4f}, failures {summary.failures}"
    )
    return 0


def _thresholds(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --thresholds {text!r}") from exc


def cmd_sweep(args: argparse.Namespace, conf: Config) -> int:
    records = _records(args)
    cfg = _inference_config(args, conf, Mode.ADASWITCH, "never")
    rows = bench.sweep_threshold(
        records,
        conf.profile(args.local),
        conf.profile(args.cloud),
        _thresholds(args.thresholds),
        cfg,
        seed=args.seed,
        parallelism=args.parallel,
        tools=conf.tools(),
    )
    for path in bench.report(rows, args.out, stem="sweep"):
        print(path)
    return 0


def cmd_simulate(args: argparse.Namespace, conf: Config) -> int:
    """Synthetic end-to-end comparison of every method, with matched baselines."""
    tasks = gen_synthetic_tasks(args.n, args.steps, seed=args.seed)
    records = [t.record() for t in tasks]
    local, cloud = conf.profile(args.local), conf.profile(args.cloud)
    kwargs = dict(seed=args.seed, parallelism=args.parallel, tools=conf.tools())
    rows, runs = bench.compare(records, local, cloud, bench.standard_methods(args.p), **kwargs)
    rate = next(r["escalation_rate"] for r in rows if r["method"] == "adaswitch")
    more, _ = bench.compare(records, local, cloud, bench.matched_baselines(rate, args.seed), **kwargs)
    rows += more
    steps = bench.labeled_local_steps(runs["adaswitch"], records)
    extra = {"detection": bench.detection_report(steps, args.p)} if steps else None
    for path in bench.report(rows, args.out, stem="simulate", extra=extra):
        print(path)
    for row in rows:
        print(f"{row['method']:>16}  acc {row['accuracy']:.3f}  flops {row['mean_flops']:.4g}  esc {row['escalation_rate']:.3f}")
    return 0


def cmd_report(args: argparse.Namespace, conf: Config) -> int:
    rows = [row for path in args.inputs for row in bench.read_rows(path)]
    if not rows:
        raise UsageError("no rows in inputs")
    for path in bench.report(rows, args.out, formats=args.formats.split(","), stem=args.stem):
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config with profiles, tools and defaults")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--limit", type=int, default=None, help="use only the first N records")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--answer-mode", choices=("math", "text"), default="math")
    common.add_argument("-v", "--verbose", action="store_true")

    agents = argparse.ArgumentParser(add_help=False)
    agents.add_argument("--dataset", help="dataset JSONL {question_id, question, rationale, answer}")
    agents.add_argument("--local", default="local", help="local profile name")
    agents.add_argument("--cloud", default="cloud", help="cloud profile name")
    agents.add_argument("--parallel", type=int, default=1, help="questions processed concurrently")

    parser = argparse.ArgumentParser(prog="adaswitch", description="Local/cloud collaborative inference toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile-data", parents=[common], help="compile gold rationales into trajectories")
    p.add_argument("--dataset")
    p.add_argument("--synthetic", type=int, default=0, metavar="N", help="generate N synthetic tasks instead")
    p.add_argument("--steps", type=int, default=5, help="operations per synthetic task")
    p.set_defaults(func=cmd_compile_data)

    p = sub.add_parser("examine", parents=[common, agents], help="collaborative examination")
    p.add_argument("--gold", help="gold trajectories (default: <out>/gold.jsonl)")
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--top-k", type=int, default=40)
    p.set_defaults(func=cmd_examine)

    p = sub.add_parser("export-train", parents=[common], help="write loss-masked training sets")
    p.add_argument("--gold")
    p.add_argument("--revised")
    p.set_defaults(func=cmd_export_train)

    p = sub.add_parser("infer", parents=[common, agents], help="run inference over a dataset")
    p.add_argument("--mode", default="adaswitch", help="local | cloud | self-reflection | adaswitch")
    p.add_argument("--policy", default="adaptive:p=0.5")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("sweep", parents=[common, agents], help="adaswitch threshold sweep")
    p.add_argument("--thresholds", default="0.1,0.3,0.5,0.7,0.9")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("simulate", parents=[common, agents], help="synthetic comparison of all methods")
    p.add_argument("--n", type=int, default=1000, help="number of synthetic tasks")
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--p", type=float, default=0.5, help="adaswitch threshold")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="render report files from CSV/JSON rows")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--formats", default="csv,json,svg")
    p.add_argument("--stem", default="report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if getattr(args, "mode", None) is not None:
            Mode.parse(args.mode)
        conf = load_config(args.config)
        return args.func(args, conf)
    except (ConfigError, PolicyParseError, UsageError, OracleError, FileNotFoundError, ValueError) as exc:
        print(f"adaswitch: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
