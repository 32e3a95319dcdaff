"""Command-line entry points.

Exit codes are part of the contract:
  0  run reached its objective or was stopped by the operator; queries OK
  2  run stopped on a budget (cycle or wall clock)
  3  configuration or backend trouble
  4  corrupt or inconsistent on-disk state, including failed validation
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Sequence

from .canonical import dumps_pretty
from .engine import REASON_CYCLES, REASON_WALL, DiscoveryRun, RunConfig
from .errors import (
    BackendFailure,
    ConfigInvalid,
    CorruptStore,
    DatasetTooLarge,
    MalformedPlan,
    OrreryError,
    PlanEmpty,
    ProtocolError,
    ProvenanceIncomplete,
    SampleTooLarge,
    UnvalidatedReport,
)
from .evalharness import (
    SampledClaim,
    findings_counts_from_store,
    findings_curve,
    read_verdicts,
    sample_statements,
    score_accuracy,
    write_sample,
)
from .metrics import compute_run_metrics
from .report import DiscoveryReport, render_report, validate_report
from .storage import DEFAULT_SIZE_CAP_BYTES, RunStorage, enforce_size_cap
from .worldmodel import WorldModelStore

EXIT_OK = 0
EXIT_BUDGET = 2
EXIT_BACKEND = 3
EXIT_CORRUPT = 4

_BUDGET_REASONS = (REASON_CYCLES, REASON_WALL)


def _print_json(obj: Any) -> None:
    sys.stdout.write(dumps_pretty(obj))


def _load_store(storage: RunStorage) -> WorldModelStore:
    return WorldModelStore.load(storage.paths.worldmodel)


def _emit_run_result(result, fmt: str) -> int:
    if fmt == "machine":
        _print_json(
            {
                "run_id": result.run_id,
                "termination_reason": result.termination_reason,
                "cycles_completed": result.cycles_completed,
                "wm_version": result.wm_version,
                "report_ids": list(result.report_ids),
            }
        )
    else:
        print(f"run {result.run_id}: {result.termination_reason}")
        print(f"  cycles completed: {result.cycles_completed}")
        print(f"  world model version: {result.wm_version}")
        for rid in result.report_ids:
            print(f"  report: {rid}")
    if result.termination_reason in _BUDGET_REASONS:
        return EXIT_BUDGET
    return EXIT_OK


def _cmd_run(args: argparse.Namespace) -> int:
    raw = Path(args.config).read_bytes()
    config = RunConfig.from_bytes(raw)
    if config.dataset and config.dataset.get("path"):
        cap = config.dataset.get("size_cap_bytes", DEFAULT_SIZE_CAP_BYTES)
        enforce_size_cap(config.dataset["path"], cap, override=args.override_size_cap)
    run = DiscoveryRun.new(args.run_dir, raw)
    result = run.run(stop_after_cycle=args.stop_after_cycle)
    if result.termination_reason is None:
        print(f"run {result.run_id}: paused after cycle {result.cycles_completed}")
        return EXIT_OK
    return _emit_run_result(result, args.format)


def _cmd_resume(args: argparse.Namespace) -> int:
    run = DiscoveryRun.resume(args.run_dir)
    result = run.run(stop_after_cycle=args.stop_after_cycle)
    if result.termination_reason is None:
        print(f"run {result.run_id}: paused after cycle {result.cycles_completed}")
        return EXIT_OK
    return _emit_run_result(result, args.format)


def _cmd_report(args: argparse.Namespace) -> int:
    storage = RunStorage(args.run_dir)
    ids = [args.report_id] if args.report_id else storage.list_report_ids()
    if not ids:
        print("no reports in this run", file=sys.stderr)
        return EXIT_CORRUPT
    chunks = []
    for rid in ids:
        report = DiscoveryReport.from_dict(storage.read_report(rid))
        chunks.append(render_report(report, args.format))
    out = ("\n".join(chunks)) if args.format != "json" else "[" + ",".join(chunks) + "]"
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
    else:
        sys.stdout.write(out)
    return EXIT_OK


def _cmd_validate(args: argparse.Namespace) -> int:
    storage = RunStorage(args.run_dir)
    store = _load_store(storage)
    all_ok = True
    rows = []
    for rid in storage.list_report_ids():
        report = DiscoveryReport.from_dict(storage.read_report(rid))
        result = validate_report(
            report,
            store,
            artifact_exists=lambda tid, name: storage.artifact_path(tid, name).exists(),
        )
        all_ok = all_ok and result.ok
        rows.append({"report_id": rid, **result.to_dict()})
    if args.format == "machine":
        _print_json({"ok": all_ok, "reports": rows})
    else:
        for row in rows:
            mark = "ok" if row["ok"] else "FAIL"
            print(f"{row['report_id']}: {mark}")
            for failure in row["failures"]:
                print(f"  {failure['code']} at {failure['where']}: {failure['detail']}")
    return EXIT_OK if all_ok else EXIT_CORRUPT


def _cmd_metrics(args: argparse.Namespace) -> int:
    metrics = compute_run_metrics(RunStorage(args.run_dir))
    if args.format == "machine":
        _print_json(metrics.to_dict())
    else:
        for key, value in metrics.to_dict().items():
            if key == "expert_time_months":
                print(f"{key}: {value:.4f}")
            else:
                print(f"{key}: {value}")
    return EXIT_OK


def _cmd_curve(args: argparse.Namespace) -> int:
    storage = RunStorage(args.run_dir)
    state = storage.read_run_state()
    store = _load_store(storage)
    curve = findings_curve(findings_counts_from_store(store, state["cycles_completed"]))
    if args.format == "machine":
        _print_json(curve.to_dict())
    else:
        print(f"cycles: {list(curve.cycles)}")
        print(f"cumulative findings: {list(curve.cumulative)}")
        print(f"slope: {curve.slope:.6f} intercept: {curve.intercept:.6f}")
        if curve.degenerate:
            print("(single cycle: slope is degenerate)")
    return EXIT_OK


def _collect_claims(storage: RunStorage) -> tuple[list[SampledClaim], dict[str, str]]:
    claims: dict[str, SampledClaim] = {}
    for rid in storage.list_report_ids():
        report = DiscoveryReport.from_dict(storage.read_report(rid))
        for claim in report.claims():
            claims[claim.claim_id] = SampledClaim(claim.claim_id, claim.category, claim.text)
    ordered = [claims[k] for k in sorted(claims)]
    return ordered, {c.claim_id: c.category for c in ordered}


def _cmd_eval_sample(args: argparse.Namespace) -> int:
    storage = RunStorage(args.run_dir)
    claims, _ = _collect_claims(storage)
    sample = sample_statements(claims, args.size, args.seed)
    write_sample(args.out, sample)
    print(f"wrote {len(sample)} claims to {args.out}")
    return EXIT_OK


def _cmd_eval_score(args: argparse.Namespace) -> int:
    storage = RunStorage(args.run_dir)
    _, categories = _collect_claims(storage)
    records = read_verdicts(args.verdicts)
    breakdown = score_accuracy(records, categories)
    if args.format == "machine":
        _print_json(breakdown.to_dict())
    else:
        for name, score in sorted(breakdown.per_category.items()):
            pct = score.accuracy_pct
            shown = f"{pct}%" if pct is not None else "n/a"
            print(f"{name}: {score.supported}/{score.total} supported ({shown})")
        overall = breakdown.overall
        shown = f"{overall.accuracy_pct}%" if overall.accuracy_pct is not None else "n/a"
        print(f"overall: {overall.supported}/{overall.total} supported ({shown})")
        for warning in breakdown.warnings:
            print(f"warning: {warning}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orrery", description="autonomous discovery runs over a versioned world model"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="start a new run from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--run-dir", required=True)
    p.add_argument("--stop-after-cycle", type=int, default=None)
    p.add_argument("--override-size-cap", action="store_true")
    p.add_argument("--format", choices=("text", "machine"), default="text")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("resume", help="continue an interrupted run")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--stop-after-cycle", type=int, default=None)
    p.add_argument("--format", choices=("text", "machine"), default="text")
    p.set_defaults(fn=_cmd_resume)

    p = sub.add_parser("report", help="render stored reports")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--report-id", default=None)
    p.add_argument("--format", choices=("markdown", "html", "json"), default="markdown")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_report)

    p = sub.add_parser("validate", help="re-audit every stored report")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--format", choices=("text", "machine"), default="text")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("metrics", help="recount run metrics")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--format", choices=("text", "machine"), default="text")
    p.set_defaults(fn=_cmd_metrics)

    p = sub.add_parser("curve", help="cumulative findings trend")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--format", choices=("text", "machine"), default="text")
    p.set_defaults(fn=_cmd_curve)

    p = sub.add_parser("eval", help="reviewer sampling and scoring")
    esub = p.add_subparsers(dest="eval_command", required=True)
    ps = esub.add_parser("sample", help="draw a stratified claim sample")
    ps.add_argument("--run-dir", required=True)
    ps.add_argument("--size", type=int, required=True)
    ps.add_argument("--seed", type=int, required=True)
    ps.add_argument("--out", required=True)
    ps.set_defaults(fn=_cmd_eval_sample)
    pc = esub.add_parser("score", help="score reviewer verdicts")
    pc.add_argument("--run-dir", required=True)
    pc.add_argument("--verdicts", required=True)
    pc.add_argument("--format", choices=("text", "machine"), default="text")
    pc.set_defaults(fn=_cmd_eval_score)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigInvalid, DatasetTooLarge, SampleTooLarge) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (BackendFailure, PlanEmpty, MalformedPlan, ProtocolError) as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (CorruptStore, UnvalidatedReport, ProvenanceIncomplete) as exc:
        print(f"state error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except OrreryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
