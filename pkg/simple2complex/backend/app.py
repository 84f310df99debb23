# simple2complex/backend/app.py
"""Command-line surface: one subcommand per harness operation.

Exit codes: 0 ok, 1 internal error, 2 config/usage error, 3 data error,
4 preservation failure, 5 numeric abort, 6 checkpoint error,
7 synth-demo missed its target.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import structlog

from simple2complex.backend.exports import export_run_report
from simple2complex.backend.graph import SeriesNetwork, receptive_field_check
from simple2complex.backend.growth import apply_growth, parameter_accounting, plan_growth, verify_preservation
from simple2complex.backend.harness import (
    COMPARISON_FILE,
    compare_runs,
    evaluate_accuracy,
    gamma_report,
    prepare_data,
    reproduce,
    run_e2e,
    run_s2c,
)
from simple2complex.backend.storage.checkpoint import load_checkpoint, save_checkpoint
from simple2complex.backend.storage.files import CONFIG_FILE
from simple2complex.common.config import TrainConfig, build_config, config_to_json
from simple2complex.common.errors import ConfigError, DemoTargetError, GraphError, PreservationError, S2CError
from simple2complex.common.evaluation import write_gamma_report
from simple2complex.common.log import configure_logging
from simple2complex.common.paths import default_runs_dir
from simple2complex.common.tensor import SeededRng
from simple2complex.common.utils import derive_seed, parse_override

log = structlog.get_logger(__name__)

DATA_COMMANDS = {"train-s2c", "train-e2e", "eval", "reproduce"}

# Sized for a laptop CPU: 4 classes of 8x8 images, 2 growth stages.
SYNTH_DEMO_DEFAULTS: Dict[str, Any] = {
    "run": {"run_id": "synth-demo"},
    "data": {"source": "synthetic", "batch_size": 32, "subset_size": None},
    "growth": {"stages": 2, "steps_per_growth": 150, "check_batches": 4},
    "schedule": {"steps_final_base_lr": 150, "steps_decay_phase": 100, "max_halvings": 2},
    "eval": {"every": 50},
}


# -------------------------------
# Parsing
# -------------------------------
@dataclass
class CliInvocation:
    command: str
    config: TrainConfig
    out_dir: Path
    args: argparse.Namespace


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON or key=value config file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted-key override, e.g. optimizer.lr=0.05 (repeatable)",
    )
    common.add_argument("--data-dir", help="CIFAR-10 binary batch directory")
    common.add_argument("--out-dir", type=Path, help="output directory")
    common.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    common.add_argument("--log-json", action="store_true", help="emit JSON log lines")

    parser = argparse.ArgumentParser(prog="s2c", description="simple2complex growth experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-s2c", parents=[common], help="staged growth run")
    sub.add_parser("train-e2e", parents=[common], help="end-to-end baseline run")

    p = sub.add_parser("grow", parents=[common], help="grow a checkpoint by one stage")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--output", type=Path, help="grown checkpoint path (default <out-dir>/grown.s2c)")

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=["test", "train"], default="test")
    p.add_argument("--no-ema", action="store_true", help="evaluate raw rather than EMA parameters")

    p = sub.add_parser("report-gamma", parents=[common], help="write gamma CSVs of a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--layers", help="comma-separated layer names (default: junction-feeding layers)")
    p.add_argument("--no-ema", action="store_true")

    p = sub.add_parser("verify", parents=[common], help="receptive-field and preservation checks")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--grown", type=Path, help="freshly grown child of --checkpoint")

    sub.add_parser("synth-demo", parents=[common], help="2-stage growth run on synthetic data")

    p = sub.add_parser("compare", parents=[common], help="join an s2c and an e2e run per lr rung")
    p.add_argument("--s2c-dir", type=Path, required=True)
    p.add_argument("--e2e-dir", type=Path, required=True)
    p.add_argument("--output", type=Path)

    p = sub.add_parser("reproduce", parents=[common], help="s2c + e2e over several seeds")
    p.add_argument("--seeds", default="1,2,3", help="comma-separated seeds")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    return parser


def _seeds(text: str) -> List[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds must be comma-separated integers, got {text!r}.", key="seeds") from exc


def parse_and_validate(argv: Optional[Sequence[str]] = None) -> CliInvocation:
    """Parse flags and resolve the config: defaults <- file <- --set <- dedicated flags."""
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, json_output=args.log_json)
    extra: Dict[str, Any] = {}
    if args.data_dir:
        extra["data"] = {"data_dir": str(args.data_dir)}
    base = SYNTH_DEMO_DEFAULTS if args.command == "synth-demo" else None
    config = build_config(config_path=args.config, overrides=args.overrides, extra=extra, base=base)
    if args.config:
        log.info("config_file", path=str(args.config))
    for text in args.overrides:
        key, value = parse_override(text)
        log.info("config_override", key=key, value=value)
    if args.command in DATA_COMMANDS and config.data.source == "cifar10" and not config.data.data_dir:
        raise ConfigError(
            f"{args.command} on CIFAR-10 needs data.data_dir (--data-dir or the config file).",
            key="data.data_dir",
        )
    if args.command == "reproduce":
        args.seeds = _seeds(args.seeds)
    out_dir = args.out_dir or default_runs_dir() / (config.run.run_id or f"{args.command}-seed{config.seed}")
    return CliInvocation(command=args.command, config=config, out_dir=Path(out_dir), args=args)


# -------------------------------
# Commands
# -------------------------------
def _emit(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, sort_keys=True))


def _train_s2c(inv: CliInvocation) -> int:
    result = run_s2c(inv.config, prepare_data(inv.config), inv.out_dir)
    _emit({"run_dir": str(result.out_dir), "test_acc": result.final.test_acc, "train_acc": result.final.train_acc})
    return 0


def _train_e2e(inv: CliInvocation) -> int:
    result = run_e2e(inv.config, prepare_data(inv.config), inv.out_dir)
    _emit({"run_dir": str(result.out_dir), "test_acc": result.final.test_acc, "train_acc": result.final.train_acc})
    return 0


def _grow(inv: CliInvocation) -> int:
    ckpt = load_checkpoint(inv.args.checkpoint)
    parent = ckpt.network
    g = inv.config.growth
    rng = SeededRng(derive_seed(inv.config.seed, "growth", parent.stage_count))
    child = apply_growth(parent, plan_growth(parent), rng)
    report = verify_preservation(
        parent,
        child,
        rng=SeededRng(derive_seed(inv.config.seed, "preservation", parent.stage_count)),
        check_batches=g.check_batches,
        batch=g.check_batch_size,
        tol=g.preservation_tol,
    )
    if not report.passed:
        raise PreservationError(
            f"Grown network differs from its parent by {report.max_abs_diff:.3e}.",
            max_abs_diff=report.max_abs_diff,
        )
    ema = ckpt.ema
    if ema is not None:
        ema.sync(child.parameters())
    out = inv.args.output or inv.out_dir / "grown.s2c"
    save_checkpoint(
        out,
        child,
        ema=ema,
        step=ckpt.step,
        rng_state={"growth": rng.state},
        normalization=ckpt.normalization,
        config=ckpt.config,
        meta={**ckpt.meta, "grown_from": str(inv.args.checkpoint)},
    )
    acct = parameter_accounting(parent, child)
    _emit(
        {
            "output": str(out),
            "stage": child.stage_count,
            "max_abs_diff": report.max_abs_diff,
            "parent_params": acct.parent_count,
            "added_params": acct.added_count,
        }
    )
    return 0


def _eval(inv: CliInvocation) -> int:
    ckpt = load_checkpoint(inv.args.checkpoint)
    net = ckpt.network
    config = inv.config.model_copy(update={"precision": net.precision})
    data = prepare_data(config, stats=ckpt.normalization)
    split = data.test if inv.args.split == "test" else data.train
    ema = None if inv.args.no_ema else ckpt.ema
    loss, acc = evaluate_accuracy(net, split, ema=ema, batch_size=config.eval.batch_size)
    _emit({"split": inv.args.split, "loss": loss, "accuracy": acc, "ema": ema is not None})
    return 0


def _report_gamma(inv: CliInvocation) -> int:
    ckpt = load_checkpoint(inv.args.checkpoint)
    layers = [s.strip() for s in inv.args.layers.split(",") if s.strip()] if inv.args.layers else None
    report = gamma_report(ckpt, layers=layers, use_ema=not inv.args.no_ema)
    paths = write_gamma_report(report, inv.out_dir)
    _emit({"files": [str(p) for p in paths], "groups": report.group_rows()})
    return 0


def _check_fields(net: SeriesNetwork) -> bool:
    rf = receptive_field_check(net)
    if not rf.passed:
        raise GraphError(f"Receptive fields disagree at junctions {rf.failures}.", junction=rf.failures[0])
    return True


def _verify(inv: CliInvocation) -> int:
    parent = load_checkpoint(inv.args.checkpoint).network
    payload: Dict[str, Any] = {"checkpoint_receptive_field": _check_fields(parent)}
    if inv.args.grown:
        child = load_checkpoint(inv.args.grown).network
        payload["grown_receptive_field"] = _check_fields(child)
        g = inv.config.growth
        report = verify_preservation(
            parent,
            child,
            rng=SeededRng(derive_seed(inv.config.seed, "preservation")),
            check_batches=g.check_batches,
            batch=g.check_batch_size,
            tol=g.preservation_tol,
        )
        payload["max_abs_diff"] = report.max_abs_diff
        payload["preserved"] = report.passed
        if not report.passed:
            _emit(payload)
            raise PreservationError(
                f"Grown checkpoint differs from its parent by {report.max_abs_diff:.3e}.",
                max_abs_diff=report.max_abs_diff,
            )
    _emit(payload)
    return 0


def _synth_demo(inv: CliInvocation) -> int:
    result = run_s2c(inv.config, prepare_data(inv.config), inv.out_dir)
    report = export_run_report(inv.out_dir)
    preserved = len(result.growth_rows) == inv.config.growth.stages and all(
        r["passed"] for r in result.growth_rows
    )
    _emit(
        {
            "run_dir": str(result.out_dir),
            "train_acc": result.final.train_acc,
            "test_acc": result.final.test_acc,
            "growth_preserved": preserved,
            "report": str(report),
        }
    )
    if not preserved:
        raise DemoTargetError(
            f"Only {len(result.growth_rows)} of {inv.config.growth.stages} growths completed with preservation."
        )
    if result.final.train_acc < 1.0:
        raise DemoTargetError(
            f"Demo ended at train accuracy {result.final.train_acc:.4f}; the synthetic set should separate to 1.0."
        )
    return 0


def _compare(inv: CliInvocation) -> int:
    out = inv.args.output or inv.out_dir / COMPARISON_FILE
    rows = compare_runs(inv.args.s2c_dir, inv.args.e2e_dir, out)
    _emit({"output": str(out), "rows": len(rows)})
    return 0


def _reproduce(inv: CliInvocation) -> int:
    summary = reproduce(inv.config, inv.out_dir, seeds=inv.args.seeds, workers=inv.args.workers)
    print(summary.model_dump_json(indent=2))
    return 0


COMMANDS: Dict[str, Callable[[CliInvocation], int]] = {
    "train-s2c": _train_s2c,
    "train-e2e": _train_e2e,
    "grow": _grow,
    "eval": _eval,
    "report-gamma": _report_gamma,
    "verify": _verify,
    "synth-demo": _synth_demo,
    "compare": _compare,
    "reproduce": _reproduce,
}


def dispatch(inv: CliInvocation) -> int:
    inv.out_dir.mkdir(parents=True, exist_ok=True)
    (inv.out_dir / CONFIG_FILE).write_text(config_to_json(inv.config), encoding="utf-8")
    log.info("command_started", command=inv.command, out_dir=str(inv.out_dir))
    return COMMANDS[inv.command](inv)


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        inv = parse_and_validate(argv)
    except ConfigError as exc:
        log.error("config_error", key=exc.key, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    try:
        return dispatch(inv)
    except S2CError as exc:
        log.error("command_failed", command=inv.command, error_type=type(exc).__name__, error=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
