import json

import numpy as np
import pytest

from helpers import SYNTH_SETTINGS, identity_net
from simple2complex.backend import harness
from simple2complex.backend.adapters.synthetic import synth_samples
from simple2complex.backend.data import LabeledImageSet
from simple2complex.backend.exports import build_run_report, export_run_report
from simple2complex.backend.graph import build_plain_network
from simple2complex.backend.growth import apply_growth, plan_growth
from simple2complex.backend.optimizer import EmaState
from simple2complex.backend.harness import (
    ABORT_FILE,
    compare_runs,
    evaluate_accuracy,
    gamma_report,
    prepare_data,
    reproduce,
    run_e2e,
    run_s2c,
)
from simple2complex.backend.storage.checkpoint import load_checkpoint
from simple2complex.common.config import build_config
from simple2complex.common.errors import ConfigError, NumericError, ReportError
from simple2complex.common.models import COMPARISON_COLUMNS, DEFAULT_CHANNEL_PLAN
from simple2complex.common.tensor import SeededRng
from simple2complex.common.utils import read_csv


@pytest.fixture(scope="module")
def s2c_run(tmp_path_factory):
    config = build_config(overrides=SYNTH_SETTINGS)
    out = tmp_path_factory.mktemp("s2c")
    return run_s2c(config, prepare_data(config), out)


@pytest.fixture(scope="module")
def e2e_run(tmp_path_factory):
    config = build_config(overrides=SYNTH_SETTINGS)
    out = tmp_path_factory.mktemp("e2e")
    return run_e2e(config, prepare_data(config), out)


def _events(run_dir):
    return [json.loads(line) for line in (run_dir / "events.jsonl").read_text().splitlines()]


# ---- data ----------------------------------------------------------------
def test_synthetic_bundle_is_normalized(synth_config):
    data = prepare_data(synth_config())
    assert data.classes == 2
    assert data.input_shape == (3, 8, 8)
    assert len(data.train) == 32 and len(data.test) == 16
    assert np.all(np.abs(data.train.images.mean(axis=(0, 2, 3))) < 1e-5)
    assert data.train.images.dtype == np.float32


def test_cifar_needs_a_data_dir():
    with pytest.raises(ConfigError) as info:
        prepare_data(build_config())
    assert info.value.key == "data.data_dir"


# ---- evaluation ----------------------------------------------------------
def _one_hot_set(labels):
    images = np.zeros((len(labels), 3, 1, 1))
    images[np.arange(len(labels)), labels] = 4.0
    return LabeledImageSet(images, np.asarray(labels, dtype=np.int64), classes=3)


def test_accuracy_of_a_perfect_classifier_is_one():
    data = _one_hot_set([0, 1, 2, 2, 1, 0, 1])
    loss, acc = evaluate_accuracy(identity_net(1), data, batch_size=3)
    assert acc == 1.0
    assert 0.0 < loss < np.log(3)


def test_untrained_network_is_at_chance():
    # pure-noise images with balanced labels: nothing to learn from
    rng = SeededRng(8)
    data = synth_samples(np.zeros((10, 3, 8, 8)), 100, rng, noise=1.0)
    net = build_plain_network(DEFAULT_CHANNEL_PLAN, classes=10, rng=SeededRng(9), input_shape=(3, 8, 8))
    assert len(data) == 1000
    _, acc = evaluate_accuracy(net, data)
    assert abs(acc - 0.1) <= 0.05


def test_evaluation_is_repeatable_and_leaves_the_network_alone():
    rng = SeededRng(10)
    data = synth_samples(rng.normal((4, 3, 8, 8)), 16, rng, noise=0.5)
    net = build_plain_network(DEFAULT_CHANNEL_PLAN[:2], classes=4, rng=SeededRng(11), input_shape=(3, 8, 8))
    before = {k: v.copy() for k, v in net.parameters().items()}
    first = evaluate_accuracy(net, data, batch_size=7)
    second = evaluate_accuracy(net, data, batch_size=7)
    assert first == second
    assert all(np.array_equal(before[k], v) for k, v in net.parameters().items())
    assert all(e.bn.updates == 0 for e in net.edges)


def test_ema_evaluation_uses_shadows_then_restores():
    net = identity_net(1)
    data = _one_hot_set([0, 1, 2])
    ema = EmaState(decay=0.5)
    ema.sync(net.parameters())
    ema.shadow["head.weight"][...] = -np.eye(3)
    _, acc = evaluate_accuracy(net, data, ema=ema)
    assert acc == 0.0
    assert np.array_equal(net.head.weights, np.eye(3))
    assert evaluate_accuracy(net, data)[1] == 1.0


# ---- staged growth -------------------------------------------------------
@pytest.mark.slow
def test_s2c_run_visits_every_stage(s2c_run):
    assert [r["stage"] for r in s2c_run.stage_rows] == [0, 1, 2]
    assert [r["step"] for r in s2c_run.stage_rows] == [6, 12, 20]
    assert s2c_run.network.stage_count == 2
    assert len(s2c_run.network.edges) == 42
    assert s2c_run.final.step == 20


@pytest.mark.slow
def test_s2c_growth_is_preserving(s2c_run):
    assert [r["stage"] for r in s2c_run.growth_rows] == [1, 2]
    for row in s2c_run.growth_rows:
        assert row["passed"] is True
        assert row["max_abs_diff"] <= 1e-5
        assert row["child_params"] == row["parent_params"] + row["added_params"]


@pytest.mark.slow
def test_s2c_rungs_follow_the_ladder(s2c_run):
    assert [r["lr"] for r in s2c_run.rung_rows] == pytest.approx([0.1, 0.05, 0.025])
    assert [r["step"] for r in s2c_run.rung_rows] == [16, 18, 20]
    halvings = [e for e in _events(s2c_run.out_dir) if e["event"] == "lr_halved"]
    assert [(e["old_lr"], e["new_lr"]) for e in halvings] == pytest.approx([(0.1, 0.05), (0.05, 0.025)])


@pytest.mark.slow
def test_s2c_run_directory(s2c_run):
    out = s2c_run.out_dir
    for name in [
        "metrics.csv",
        "events.jsonl",
        "resolved_config.json",
        "stages.csv",
        "rungs.csv",
        "growth.csv",
        "final.s2c",
        "best.s2c",
        "stage0.s2c",
        "stage1.s2c",
        "gamma_channels.csv",
        "gamma_summary.csv",
        "gamma_groups.csv",
    ]:
        assert (out / name).exists(), name
    metrics = read_csv(out / "metrics.csv")
    assert [int(r["step"]) for r in metrics] == [4, 6, 8, 12, 16, 18, 20]
    assert all(r["wall_time_s"] == "0.0" for r in metrics)
    assert all(r["run_id"] == "s2c-seed1" for r in metrics)
    kinds = {e["event"] for e in _events(out)}
    assert {"growth", "stop_criterion", "phase_final", "lr_halved", "run_finished"} <= kinds


@pytest.mark.slow
def test_growth_keeps_accuracy_at_the_boundary(s2c_run):
    ckpt = load_checkpoint(s2c_run.out_dir / "stage0.s2c")
    data = prepare_data(build_config(overrides=SYNTH_SETTINGS), stats=ckpt.normalization)
    before = evaluate_accuracy(ckpt.network, data.train, ema=ckpt.ema)
    child = apply_growth(ckpt.network, plan_growth(ckpt.network), SeededRng(3))
    ckpt.ema.sync(child.parameters())
    after = evaluate_accuracy(child, data.train, ema=ckpt.ema)
    assert after[1] == before[1]
    assert after[0] == pytest.approx(before[0], abs=1e-5)


@pytest.mark.slow
def test_gamma_groups_cover_the_grown_layers(s2c_run):
    rows = read_csv(s2c_run.out_dir / "gamma_groups.csv")
    assert [r["layers"] for r in rows] == ["0_6 > 1_12 > 2_24", "0_3 > 1_6 > 2_12", "1_5 > 2_10"]
    report = gamma_report(load_checkpoint(s2c_run.checkpoint))
    assert report.row("2_24").mean_abs_gamma >= 0.0
    with pytest.raises(ReportError) as info:
        report.row("3_1")
    assert "0_1" in info.value.valid


@pytest.mark.slow
def test_gamma_report_rejects_unknown_layers(s2c_run):
    with pytest.raises(ReportError):
        gamma_report(load_checkpoint(s2c_run.checkpoint), layers=["9_9"])


@pytest.mark.slow
def test_pdf_report(s2c_run, tmp_path):
    pdf = export_run_report(s2c_run.out_dir, tmp_path / "report.pdf")
    assert pdf.read_bytes()[:4] == b"%PDF"
    with pytest.raises(ReportError):
        build_run_report(tmp_path)


# ---- baseline and comparison ---------------------------------------------
@pytest.mark.slow
def test_e2e_matches_final_architecture(s2c_run, e2e_run):
    assert set(e2e_run.network.parameters()) == set(s2c_run.network.parameters())
    assert e2e_run.final.step == 8
    notes = [e for e in _events(e2e_run.out_dir) if e["event"] == "e2e_baseline"]
    assert len(notes) == 1 and "architecture-matched" in notes[0]["note"]


@pytest.mark.slow
def test_compare_joins_rungs(s2c_run, e2e_run, tmp_path):
    rows = compare_runs(s2c_run.out_dir, e2e_run.out_dir, tmp_path / "comparison.csv")
    assert [r["lr"] for r in rows] == pytest.approx([0.1, 0.05, 0.025])
    written = read_csv(tmp_path / "comparison.csv")
    assert list(written[0]) == COMPARISON_COLUMNS
    assert all(r["s2c_test"] != "" and r["e2e_test"] != "" for r in written)


# ---- determinism and degenerate configs ----------------------------------
@pytest.mark.slow
def test_runs_are_bitwise_reproducible(s2c_run, tmp_path):
    config = build_config(overrides=SYNTH_SETTINGS)
    again = run_s2c(config, prepare_data(config), tmp_path / "again")
    for name in ("metrics.csv", "growth.csv", "final.s2c"):
        assert (again.out_dir / name).read_bytes() == (s2c_run.out_dir / name).read_bytes(), name


@pytest.mark.slow
def test_zero_stages_trains_the_plain_network(synth_config, tmp_path):
    config = synth_config("growth.stages=0")
    result = run_s2c(config, prepare_data(config), tmp_path)
    assert result.network.stage_count == 0
    assert [r["stage"] for r in result.stage_rows] == [0]
    assert not result.growth_rows
    assert not (tmp_path / "growth.csv").exists()


@pytest.mark.slow
def test_enforced_stop_ends_growth_early(synth_config, tmp_path):
    config = synth_config("growth.stop_threshold=1000", "growth.enforce_stop=true")
    result = run_s2c(config, prepare_data(config), tmp_path)
    assert result.network.stage_count == 1
    stops = [e for e in _events(tmp_path) if e["event"] == "stop_criterion"]
    assert len(stops) == 1 and stops[0]["stop"] is True


@pytest.mark.slow
def test_non_finite_gradient_aborts_with_dump(synth_config, tmp_path, monkeypatch):
    real_backward = harness.backward_pass

    def poisoned(net, cache):
        grads = real_backward(net, cache)
        grads["head.bias"] = np.full_like(grads["head.bias"], np.nan)
        return grads

    monkeypatch.setattr(harness, "backward_pass", poisoned)
    config = synth_config()
    with pytest.raises(NumericError):
        run_s2c(config, prepare_data(config), tmp_path)
    dump = json.loads((tmp_path / ABORT_FILE).read_text())
    assert dump["step"] == 0
    assert dump["key"] == "head.bias"
    assert (tmp_path / "abort.s2c").exists()


@pytest.mark.slow
def test_plain_network_separates_synthetic_classes(synth_config, tmp_path):
    config = synth_config(
        "growth.stages=0",
        "schedule.steps_final_base_lr=150",
        "schedule.steps_decay_phase=50",
        "eval.every=50",
    )
    result = run_s2c(config, prepare_data(config), tmp_path)
    assert result.final.step == 200
    assert result.final.train_acc == 1.0


@pytest.mark.slow
def test_reproduce_summary(synth_config, tmp_path):
    summary = reproduce(synth_config(), tmp_path, seeds=(1, 2))
    assert summary.seeds == [1, 2]
    assert len(summary.stage_medians) == 3
    assert summary.chance == 0.5
    assert [d.seed for d in summary.deltas] == [1, 2]
    assert (tmp_path / "summary.json").exists()
    assert (tmp_path / "comparison-seed2.csv").exists()
