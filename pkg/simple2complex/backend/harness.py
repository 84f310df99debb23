"""Training regimes: staged growth (s2c) and the architecture-matched end-to-end baseline (e2e)."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from statistics import median
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, Field

from simple2complex.backend.adapters.cifar10 import load_cifar10_split
from simple2complex.backend.adapters.synthetic import synth_train_test
from simple2complex.backend.data import (
    BatchPlan,
    LabeledImageSet,
    NormalizationStats,
    augment_batch,
    iterate_batches,
    normalize_images,
    subset,
)
from simple2complex.backend.graph import (
    SeriesNetwork,
    backward_pass,
    build_plain_network,
    forward_pass,
    iter_gamma_layers,
)
from simple2complex.backend.growth import (
    apply_growth,
    build_series_network,
    growth_stop_criterion,
    parameter_accounting,
    plan_growth,
    stage_gamma_means,
    verify_preservation,
)
from simple2complex.backend.optimizer import (
    EmaState,
    LrSchedule,
    SgdState,
    lr_schedule_next,
    sgd_momentum_step,
)
from simple2complex.backend.storage.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from simple2complex.backend.storage.files import (
    GROWTH_FILE,
    METRICS_FILE,
    RUNGS_FILE,
    STAGES_FILE,
    RunWriter,
)
from simple2complex.common.config import ScheduleSection, TrainConfig, config_to_json
from simple2complex.common.errors import ConfigError, ConsistencyError, NumericError, PreservationError
from simple2complex.common.evaluation import (
    GAMMA_GROUPS_FILE,
    GammaReport,
    build_gamma_report,
    default_groups,
    write_gamma_report,
)
from simple2complex.common.models import COMPARISON_COLUMNS, MetricsRecord
from simple2complex.common.tensor import SeededRng, dtype_for
from simple2complex.common.utils import derive_seed, read_csv, write_csv

log = structlog.get_logger(__name__)

FINAL_CHECKPOINT = "final.s2c"
BEST_CHECKPOINT = "best.s2c"
ABORT_CHECKPOINT = "abort.s2c"
ABORT_FILE = "abort.json"
SUMMARY_FILE = "summary.json"
COMPARISON_FILE = "comparison.csv"
CONTINUITY_FACTOR = 10.0
CONTINUITY_WINDOW = 100
REPRODUCTION_SEEDS = (1, 2, 3)
E2E_NOTE = (
    "e2e trains the grown series architecture from scratch; it is architecture-matched, "
    "not a plain network baseline."
)


# -------------------------------
# Data
# -------------------------------
@dataclass
class DataBundle:
    train: LabeledImageSet
    test: LabeledImageSet
    train_eval: LabeledImageSet
    stats: NormalizationStats

    @property
    def classes(self) -> int:
        return self.train.classes

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return self.train.input_shape


def prepare_data(config: TrainConfig, *, stats: Optional[NormalizationStats] = None) -> DataBundle:
    """Load, subset and normalize the configured dataset; test data uses the train statistics."""
    dtype = dtype_for(config.precision)
    d = config.data
    if d.source == "synthetic":
        s = d.synthetic
        rng = SeededRng(derive_seed(config.seed, "data"))
        train, test = synth_train_test(
            s.classes, s.per_class, s.test_per_class, s.size, rng, noise=s.noise, dtype=dtype
        )
    else:
        if not d.data_dir:
            raise ConfigError(
                "CIFAR-10 runs need data.data_dir (or --data-dir).", key="data.data_dir"
            )
        train = subset(load_cifar10_split(d.data_dir, "train", dtype=dtype), d.subset_size, config.seed)
        test = load_cifar10_split(d.data_dir, "test", dtype=dtype)
    train, stats = normalize_images(train, stats)
    test, _ = normalize_images(test, stats)
    return DataBundle(
        train=train,
        test=test,
        train_eval=subset(train, config.eval.train_eval_size, config.seed),
        stats=stats,
    )


def _stream_int(seed: int, stream: str) -> int:
    return int(derive_seed(seed, stream).generate_state(1)[0])


# -------------------------------
# Evaluation
# -------------------------------
def evaluate_accuracy(
    net: SeriesNetwork,
    data: LabeledImageSet,
    *,
    ema: Optional[EmaState] = None,
    batch_size: int = 500,
) -> Tuple[float, float]:
    """(mean loss, exact-match accuracy) of an eval-mode pass over ``data`` in stored order."""
    if ema is not None:
        with ema.applied(net.parameters()):
            return evaluate_accuracy(net, data, batch_size=batch_size)
    total_loss = 0.0
    correct = 0
    for start in range(0, len(data), batch_size):
        x = data.images[start : start + batch_size]
        y = data.labels[start : start + batch_size]
        result = forward_pass(net, x, y, mode="eval")
        total_loss += float(result.loss) * len(y)
        correct += int(np.sum(np.argmax(result.logits, axis=1) == y))
    return total_loss / len(data), correct / len(data)


def network_gammas(net: SeriesNetwork, ema: Optional[EmaState] = None) -> Dict[str, np.ndarray]:
    if ema is not None:
        return {e.key: ema.shadow[f"{e.key}.gamma"] for e in net.edges}
    return {e.key: e.bn.gamma for e in net.edges}


def gamma_report(
    checkpoint: Checkpoint,
    groups: Optional[Sequence[Sequence[str]]] = None,
    *,
    layers: Optional[Sequence[str]] = None,
    use_ema: bool = True,
) -> GammaReport:
    """Gamma report of the parameters the checkpoint was evaluated with (EMA shadows when present)."""
    net = checkpoint.network
    gammas = network_gammas(net, checkpoint.ema if use_ema else None)
    if groups is None:
        groups = default_groups(net.layer_names())
    if layers is None:
        layers = [e.key for e in iter_gamma_layers(net)]
    return build_gamma_report(gammas, layers=layers, groups=groups)


# -------------------------------
# Training loop
# -------------------------------
@dataclass
class RunResult:
    regime: str
    run_id: str
    out_dir: Path
    network: SeriesNetwork
    ema: EmaState
    final: MetricsRecord
    records: List[MetricsRecord] = field(default_factory=list)
    stage_rows: List[Dict[str, Any]] = field(default_factory=list)
    rung_rows: List[Dict[str, Any]] = field(default_factory=list)
    growth_rows: List[Dict[str, Any]] = field(default_factory=list)
    best_test_acc: float = 0.0
    best_step: int = 0

    @property
    def checkpoint(self) -> Path:
        return self.out_dir / FINAL_CHECKPOINT

    @property
    def best_checkpoint(self) -> Path:
        return self.out_dir / BEST_CHECKPOINT


def _rung_steps(schedule: ScheduleSection) -> int:
    return max(1, math.ceil(schedule.steps_decay_phase / max(1, schedule.max_halvings)))


class Trainer:
    """One run: owns the network, optimizer state, schedule, batch stream and run directory."""

    def __init__(self, config: TrainConfig, data: DataBundle, out_dir: Union[str, Path], *, regime: str):
        self.config = config
        self.data = data
        self.regime = regime
        self.run_id = config.run.run_id or f"{regime}-seed{config.seed}"
        self.out_dir = Path(out_dir)
        self.writer = RunWriter(self.out_dir)
        self.writer.write_config(config_to_json(config))

        o, s = config.optimizer, config.schedule
        self.sgd = SgdState(
            lr=o.lr,
            momentum=o.momentum,
            weight_decay=o.weight_decay,
            decay_norm_params=o.decay_norm_params,
        )
        self.ema = EmaState(decay=o.ema_decay, warmup=o.ema_warmup)
        self.schedule = LrSchedule(
            kind=s.kind,
            base_lr=o.lr,
            halve_factor=s.halve_factor,
            max_halvings=s.max_halvings,
            min_lr=s.min_lr,
            window=s.window,
            epsilon=s.epsilon,
            base_steps=s.steps_final_base_lr,
            rung_steps=_rung_steps(s),
            lr=o.lr,
        )
        plan = BatchPlan(
            batch_size=config.data.batch_size,
            seed=_stream_int(config.seed, "data"),
            drop_last=config.data.drop_last,
        )
        self.batches = iterate_batches(data.train, plan)
        self.rngs = {
            name: SeededRng(derive_seed(config.seed, name)) for name in ("init", "growth", "preservation", "augment")
        }

        self.net: Optional[SeriesNetwork] = None
        self.step = 0
        self.losses: List[float] = []
        self.phase_losses: List[float] = []
        self.records: List[MetricsRecord] = []
        self.stage_rows: List[Dict[str, Any]] = []
        self.rung_rows: List[Dict[str, Any]] = []
        self.growth_rows: List[Dict[str, Any]] = []
        self.best_test_acc = -1.0
        self.best_step = 0
        self._rung_lr: Optional[float] = None
        self._pending_growth: Optional[Dict[str, Any]] = None
        self._started = time.perf_counter()
        log.info("run_started", run_id=self.run_id, regime=regime, out_dir=str(self.out_dir))

    # -- state ---------------------------------------------------------------
    def attach(self, net: SeriesNetwork) -> None:
        """Adopt ``net``; optimizer velocity and EMA shadows are extended to new parameters."""
        params = net.parameters()
        self.sgd.sync(params)
        self.ema.sync(params)
        self.net = net

    def _wall_time(self) -> float:
        if self.config.run.freeze_wall_time:
            return 0.0
        return round(time.perf_counter() - self._started, 3)

    def _rng_state(self) -> Dict[str, Any]:
        return {name: rng.state for name, rng in self.rngs.items()}

    def save(self, name: str, **meta: Any) -> Path:
        assert self.net is not None
        return save_checkpoint(
            self.out_dir / name,
            self.net,
            ema=self.ema,
            step=self.step,
            rng_state=self._rng_state(),
            normalization=self.data.stats,
            config=self.config.model_dump(mode="json"),
            meta={"run_id": self.run_id, "regime": self.regime, **meta},
        )

    # -- stepping ------------------------------------------------------------
    def _next_lr(self) -> float:
        lr = lr_schedule_next(self.schedule, self.phase_losses)
        if self.schedule.phase == "final":
            if self._rung_lr is not None and lr != self._rung_lr:
                self.writer.event("lr_halved", step=self.step, old_lr=self._rung_lr, new_lr=lr)
                self._close_rung(self._rung_lr)
            self._rung_lr = lr
        return lr

    def _step(self, lr: float) -> None:
        assert self.net is not None
        net = self.net
        _, x, y = next(self.batches)
        if self.config.data.augment:
            x = augment_batch(x, self.rngs["augment"])
        self.sgd.lr = lr
        params = net.parameters()
        try:
            result = forward_pass(net, x, y, mode="train")
            if not math.isfinite(result.loss):
                raise NumericError(f"Non-finite training loss at step {self.step + 1}.", key="loss")
            grads = backward_pass(net, result.cache)
            sgd_momentum_step(params, grads, self.sgd)
        except NumericError as exc:
            self._abort(exc)
            raise
        net.touch()
        self.ema.update(params)
        self.step += 1
        loss = float(result.loss)
        self.losses.append(loss)
        if self.schedule.phase == "final":
            self.phase_losses.append(loss)
        if self._pending_growth is not None:
            self._close_growth(loss)

    def train(self, steps: int) -> None:
        every = self.config.eval.every
        for _ in range(steps):
            self._step(self._next_lr())
            if self.step % every == 0:
                self.evaluate()

    def _abort(self, exc: NumericError) -> None:
        assert self.net is not None
        dump = {
            "step": self.step,
            "stage": self.net.stage_count,
            "phase": self.schedule.phase,
            "lr": self.sgd.lr,
            "reason": str(exc),
            "key": exc.key,
            "recent_losses": self.losses[-10:],
        }
        self.writer.write_json(ABORT_FILE, dump)
        self.writer.event("abort", **dump)
        self.save(ABORT_CHECKPOINT, aborted=True)
        log.error("training_aborted", run_id=self.run_id, **dump)

    # -- evaluation ----------------------------------------------------------
    def evaluate(self) -> MetricsRecord:
        assert self.net is not None
        if self.records and self.records[-1].step == self.step:
            return self.records[-1]
        ev = self.config.eval
        ema = self.ema if ev.use_ema else None
        _, train_acc = evaluate_accuracy(self.net, self.data.train_eval, ema=ema, batch_size=ev.batch_size)
        _, test_acc = evaluate_accuracy(self.net, self.data.test, ema=ema, batch_size=ev.batch_size)
        since = self.records[-1].step if self.records else 0
        window = self.losses[since:]
        record = MetricsRecord(
            run_id=self.run_id,
            regime=self.regime,
            stage=self.net.stage_count,
            step=self.step,
            lr=self.sgd.lr,
            train_loss=float(np.mean(window)) if window else float("nan"),
            train_acc=train_acc,
            test_acc=test_acc,
            wall_time_s=self._wall_time(),
        )
        self.records.append(record)
        self.writer.metrics(record)
        log.info(
            "evaluated",
            step=record.step,
            stage=record.stage,
            lr=record.lr,
            train_loss=round(record.train_loss, 5),
            train_acc=train_acc,
            test_acc=test_acc,
        )
        if test_acc > self.best_test_acc:
            self.best_test_acc = test_acc
            self.best_step = self.step
            self.save(BEST_CHECKPOINT, test_acc=test_acc, stage=self.net.stage_count)
        return record

    def _close_rung(self, lr: float) -> None:
        rec = self.evaluate()
        row = {
            "lr": lr,
            "step": rec.step,
            "train_acc": rec.train_acc,
            "test_acc": rec.test_acc,
            "gap": rec.gap,
        }
        self.rung_rows.append(row)
        self.writer.rung(row)

    def finish_stage(self) -> MetricsRecord:
        assert self.net is not None
        rec = self.evaluate()
        row = {
            "stage": self.net.stage_count,
            "step": rec.step,
            "train_acc": rec.train_acc,
            "test_acc": rec.test_acc,
        }
        self.stage_rows.append(row)
        self.writer.stage(row)
        self.save(f"stage{self.net.stage_count}.s2c", test_acc=rec.test_acc)
        return rec

    # -- growth --------------------------------------------------------------
    def grow(self) -> bool:
        """Grow the current network one stage; False when the enforced stop criterion says stop."""
        assert self.net is not None
        g = self.config.growth
        parent = self.net
        stop_suggested: Optional[bool] = None
        newest_mean = stage_gamma_means(parent).get(parent.stage_count, 0.0)
        if parent.stage_count >= 1:
            decision = growth_stop_criterion(parent, g.stop_threshold)
            stop_suggested = decision.stop
            self.writer.event(
                "stop_criterion",
                stage=parent.stage_count,
                newest_mean_abs_gamma=decision.newest_mean,
                threshold=decision.threshold,
                stop=decision.stop,
            )
            if decision.stop and g.enforce_stop:
                log.info("growth_stopped", stage=parent.stage_count, newest_mean=decision.newest_mean)
                return False

        plan = plan_growth(parent)
        child = apply_growth(parent, plan, self.rngs["growth"])
        report = verify_preservation(
            parent,
            child,
            rng=self.rngs["preservation"],
            check_batches=g.check_batches,
            batch=g.check_batch_size,
            tol=g.preservation_tol,
        )
        accounting = parameter_accounting(parent, child)
        row: Dict[str, Any] = {
            "stage": plan.stage,
            "parent_params": accounting.parent_count,
            "added_params": accounting.added_count,
            "child_params": accounting.child_count,
            "max_abs_diff": report.max_abs_diff,
            "passed": report.passed,
            "newest_mean_abs_gamma": newest_mean,
            "stop_suggested": "" if stop_suggested is None else stop_suggested,
        }
        if not report.passed:
            self.growth_rows.append(row)
            self.writer.growth(row)
            self.writer.event("preservation_failed", stage=plan.stage, max_abs_diff=report.max_abs_diff)
            raise PreservationError(
                f"Growth to stage {plan.stage} changed the network function "
                f"(max |diff| {report.max_abs_diff:.3e} > tol {report.tol:.1e}).",
                max_abs_diff=report.max_abs_diff,
            )
        if not (accounting.balanced and accounting.inherited_preserved and accounting.new_keys_disjoint):
            raise ConsistencyError(f"Parameter accounting failed at stage {plan.stage}: {accounting}")

        window = self.losses[-CONTINUITY_WINDOW:]
        row["loss_before"] = window[-1] if window else float("nan")
        row["loss_std"] = float(np.std(window)) if window else float("nan")
        self._pending_growth = row
        self.attach(child)
        self.writer.event(
            "growth",
            stage=plan.stage,
            step=self.step,
            added_layers=len(plan.new_layers),
            max_abs_diff=report.max_abs_diff,
        )
        return True

    def _close_growth(self, loss_after: float) -> None:
        row = self._pending_growth
        assert row is not None
        diff = abs(loss_after - row["loss_before"])
        row["loss_after"] = loss_after
        row["continuous"] = diff == 0.0 or diff < CONTINUITY_FACTOR * row["loss_std"]
        self.growth_rows.append(row)
        self.writer.growth(row)
        self._pending_growth = None
        if not row["continuous"]:
            log.warning("growth_loss_cliff", stage=row["stage"], loss_before=row["loss_before"], loss_after=loss_after)

    # -- phases --------------------------------------------------------------
    def final_phase(self) -> RunResult:
        """Base-lr phase then the decay phase, closing every lr rung with an EMA evaluation."""
        assert self.net is not None
        s = self.config.schedule
        self.schedule.start_final()
        self.phase_losses = []
        self._rung_lr = None
        # best.s2c only ever holds the final architecture
        self.best_test_acc = -1.0
        self.writer.event("phase_final", step=self.step, stage=self.net.stage_count, lr=self.schedule.lr)
        self.train(s.steps_final_base_lr + s.steps_decay_phase)
        if self._rung_lr is not None:
            self._close_rung(self._rung_lr)
        final = self.finish_stage()
        self.save(FINAL_CHECKPOINT, test_acc=final.test_acc, stage=self.net.stage_count)

        best = load_checkpoint(self.out_dir / BEST_CHECKPOINT)
        write_gamma_report(gamma_report(best, use_ema=self.config.eval.use_ema), self.out_dir)
        self.writer.event("run_finished", step=self.step, best_step=self.best_step, best_test_acc=self.best_test_acc)
        log.info(
            "run_finished",
            run_id=self.run_id,
            steps=self.step,
            test_acc=final.test_acc,
            best_test_acc=self.best_test_acc,
        )
        return RunResult(
            regime=self.regime,
            run_id=self.run_id,
            out_dir=self.out_dir,
            network=self.net,
            ema=self.ema,
            final=final,
            records=list(self.records),
            stage_rows=list(self.stage_rows),
            rung_rows=list(self.rung_rows),
            growth_rows=list(self.growth_rows),
            best_test_acc=self.best_test_acc,
            best_step=self.best_step,
        )


# -------------------------------
# Regimes
# -------------------------------
def _model_kwargs(config: TrainConfig, data: DataBundle) -> Dict[str, Any]:
    m = config.model
    return {
        "classes": data.classes,
        "input_shape": data.input_shape,
        "precision": config.precision,
        "activation": m.activation,
        "bn_epsilon": m.bn_epsilon,
        "bn_decay": m.bn_decay,
        "bn_warmup": config.optimizer.ema_warmup,
    }


def run_s2c(config: TrainConfig, data: DataBundle, out_dir: Union[str, Path]) -> RunResult:
    """Train N_s0, then alternately grow and train up to ``growth.stages``, then decay the lr."""
    trainer = Trainer(config, data, out_dir, regime="s2c")
    net = build_plain_network(config.model.plan(), rng=trainer.rngs["init"], **_model_kwargs(config, data))
    trainer.attach(net)
    for _ in range(config.growth.stages):
        trainer.train(config.growth.steps_per_growth)
        trainer.finish_stage()
        if not trainer.grow():
            break
    return trainer.final_phase()


def run_e2e(config: TrainConfig, data: DataBundle, out_dir: Union[str, Path]) -> RunResult:
    """Build the stage-n architecture directly and train it with the final-phase budget."""
    trainer = Trainer(config, data, out_dir, regime="e2e")
    net = build_series_network(
        config.model.plan(),
        stages=config.growth.stages,
        rng=trainer.rngs["init"],
        **_model_kwargs(config, data),
    )
    trainer.attach(net)
    trainer.writer.event("e2e_baseline", note=E2E_NOTE, stages=config.growth.stages)
    return trainer.final_phase()


REGIMES = {"s2c": run_s2c, "e2e": run_e2e}


# -------------------------------
# Comparison / reproduction
# -------------------------------
def compare_runs(s2c_dir: Union[str, Path], e2e_dir: Union[str, Path], out_path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Join two runs' per-rung accuracies into one row per learning rate."""
    s2c = {float(r["lr"]): r for r in read_csv(Path(s2c_dir) / RUNGS_FILE)}
    e2e = {float(r["lr"]): r for r in read_csv(Path(e2e_dir) / RUNGS_FILE)}
    rows = []
    for lr in sorted(set(s2c) | set(e2e), reverse=True):
        row: Dict[str, Any] = {"lr": lr}
        for prefix, runs in (("e2e", e2e), ("s2c", s2c)):
            r = runs.get(lr)
            row[f"{prefix}_train"] = r["train_acc"] if r else ""
            row[f"{prefix}_test"] = r["test_acc"] if r else ""
            row[f"{prefix}_gap"] = r["gap"] if r else ""
        rows.append(row)
    write_csv(out_path, COMPARISON_COLUMNS, rows)
    return rows


class SeedDelta(BaseModel):
    seed: int
    s2c_test: float
    e2e_test: float
    delta: float
    sign: int


class ReproductionSummary(BaseModel):
    seeds: List[int]
    chance: float
    stage_medians: List[float]
    stage_monotonic: bool
    stages_above_chance: bool
    gamma_ordering_seeds: int
    gamma_ordering_holds: bool
    growth_continuous: bool
    deltas: List[SeedDelta] = Field(default_factory=list)
    note: str = E2E_NOTE


def _run_worker(job: Tuple[Dict[str, Any], str, str]) -> str:
    config_data, regime, out_dir = job
    config = TrainConfig.model_validate(config_data)
    REGIMES[regime](config, prepare_data(config), out_dir)
    return out_dir


def _truthy(value: str) -> bool:
    return value.strip().lower() == "true"


def _final_test(run_dir: Path) -> float:
    return float(read_csv(run_dir / METRICS_FILE)[-1]["test_acc"])


def _first_group_decreasing(run_dir: Path) -> bool:
    rows = read_csv(run_dir / GAMMA_GROUPS_FILE)
    return bool(rows) and _truthy(rows[0]["strictly_decreasing"])


def summarize_reproduction(out_dir: Union[str, Path], seeds: Sequence[int], classes: int) -> ReproductionSummary:
    out_dir = Path(out_dir)
    per_stage: Dict[int, List[float]] = {}
    ordering = 0
    continuous = True
    deltas = []
    for seed in seeds:
        s2c_dir = out_dir / f"s2c-seed{seed}"
        e2e_dir = out_dir / f"e2e-seed{seed}"
        for row in read_csv(s2c_dir / STAGES_FILE):
            per_stage.setdefault(int(row["stage"]), []).append(float(row["test_acc"]))
        ordering += int(_first_group_decreasing(s2c_dir))
        growth_file = s2c_dir / GROWTH_FILE
        if growth_file.exists():
            continuous = continuous and all(_truthy(r["continuous"]) for r in read_csv(growth_file))
        s2c_test, e2e_test = _final_test(s2c_dir), _final_test(e2e_dir)
        delta = s2c_test - e2e_test
        deltas.append(
            SeedDelta(seed=seed, s2c_test=s2c_test, e2e_test=e2e_test, delta=delta, sign=int(np.sign(delta)))
        )
    medians = [float(median(per_stage[s])) for s in sorted(per_stage)]
    chance = 1.0 / classes
    return ReproductionSummary(
        seeds=list(seeds),
        chance=chance,
        stage_medians=medians,
        stage_monotonic=all(a <= b for a, b in zip(medians, medians[1:])),
        stages_above_chance=all(m >= chance + 0.15 for m in medians),
        gamma_ordering_seeds=ordering,
        gamma_ordering_holds=3 * ordering >= 2 * len(seeds),
        growth_continuous=continuous,
        deltas=deltas,
    )


def reproduce(
    config: TrainConfig,
    out_dir: Union[str, Path],
    *,
    seeds: Sequence[int] = REPRODUCTION_SEEDS,
    workers: int = 1,
) -> ReproductionSummary:
    """Run both regimes for every seed, then write comparison CSVs and the trend summary."""
    out_dir = Path(out_dir)
    jobs = []
    for seed in seeds:
        for regime in ("s2c", "e2e"):
            seeded = config.model_copy(deep=True)
            seeded.seed = seed
            seeded.run.run_id = f"{regime}-seed{seed}"
            jobs.append((seeded.model_dump(mode="json"), regime, str(out_dir / f"{regime}-seed{seed}")))
    log.info("reproduce_started", seeds=list(seeds), runs=len(jobs), workers=workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_run_worker, jobs))
    else:
        for job in jobs:
            _run_worker(job)
    for seed in seeds:
        compare_runs(
            out_dir / f"s2c-seed{seed}",
            out_dir / f"e2e-seed{seed}",
            out_dir / f"comparison-seed{seed}.csv",
        )
    classes = config.data.synthetic.classes if config.data.source == "synthetic" else 10
    summary = summarize_reproduction(out_dir, seeds, classes)
    (out_dir / SUMMARY_FILE).write_text(summary.model_dump_json(indent=2), encoding="utf-8")
    log.info(
        "reproduce_finished",
        stage_medians=summary.stage_medians,
        stage_monotonic=summary.stage_monotonic,
        gamma_ordering_seeds=summary.gamma_ordering_seeds,
    )
    return summary
