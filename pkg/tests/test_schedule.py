import os

import numpy as np
import pytest

from bitcycle.checkpoint import CheckpointError, load_checkpoint
from bitcycle.config import ConfigError, RunConfig
from bitcycle.data import Normalization, make_synthetic
from bitcycle.metrics import read_metrics
from bitcycle.models import build_model, desk_config
from bitcycle.schedule import (
    CtmqInputs,
    Phase,
    evaluate,
    expand_schedule,
    load_datasets,
    model_from_checkpoint,
    plan_phases,
    pooled_weight_error,
    run_schedule,
)

from oracle_schedule import literal_plan

_BUDGET_FIELD = {"T_s": "soft_epochs", "T_c": "cyclic_epochs", "T_f": "final_epochs"}


def tiny_values(**extra):
    """A config small enough to train in well under a second."""
    values = {
        "model.stage_channels": (4, 8),
        "model.blocks_per_stage": (1, 1),
        "model.num_classes": 4,
        "data.synth_classes": 4,
        "data.synth_per_class": 8,
        "data.synth_size": 12,
        "data.batch_size": 16,
        "schedule.target_k": 1,
        "schedule.start_bits": 3,
        "schedule.cycles": 1,
        "schedule.soft_epochs": 1,
        "schedule.cyclic_epochs": 1,
        "schedule.final_epochs": 3,
        "run.checkpoint_every": 1,
    }
    values.update(extra)
    return values


# ----------------------------------------------------------------------
# plan expansion


def test_expansion_matches_literal_plan_grid():
    for k in (1, 2):
        for start in (4, 8):
            for cycles in (0, 1, 3, 9):
                inputs = CtmqInputs(target_k=k, start_bits=start, cycles=cycles,
                                    soft_epochs=5, cyclic_epochs=7, final_epochs=11)
                phases = expand_schedule(inputs)
                expected = literal_plan(k, start, cycles)
                assert len(phases) == len(expected)
                for phase, (part, depth, budget) in zip(phases, expected):
                    assert phase.part == part
                    assert phase.bit_depth == depth
                    assert phase.epochs == getattr(inputs, _BUDGET_FIELD[budget])


def test_expansion_phase_count_formula():
    for k in (1, 2, 3):
        for start in (k + 1, k + 2, 8):
            for cycles in (0, 2, 9):
                inputs = CtmqInputs(target_k=k, start_bits=start, cycles=cycles)
                assert len(expand_schedule(inputs)) == (start - k - 1) + 2 * cycles + 2


def test_default_plan_is_twenty_six_phases():
    phases = expand_schedule(CtmqInputs(target_k=1))
    assert len(phases) == 26
    depths = [p.bit_depth for p in phases]
    assert depths == [8, 7, 6, 5, 4, 3] + [2, 1] * 9 + [2, 1]
    assert [p.part for p in phases[:6]] == ["soft_transfer"] * 6
    assert phases[-2].part == "cyclic_tail"
    assert phases[-1].part == "final"
    assert [p.index for p in phases] == list(range(26))


def test_minimal_start_bits_skips_soft_transfer():
    phases = expand_schedule(CtmqInputs(target_k=1, start_bits=2, cycles=0))
    assert [(p.part, p.bit_depth) for p in phases] == [("cyclic_tail", 2), ("final", 1)]


def test_start_bits_three_gives_single_soft_phase():
    phases = expand_schedule(CtmqInputs(target_k=1, start_bits=3, cycles=2))
    soft = [p for p in phases if p.part == "soft_transfer"]
    assert [(p.bit_depth) for p in soft] == [3]


@pytest.mark.parametrize("kwargs", [
    dict(target_k=0),
    dict(target_k=32),
    dict(target_k=4, start_bits=4),
    dict(target_k=1, start_bits=17),
    dict(target_k=1, cycles=-1),
    dict(target_k=1, soft_epochs=0),
    dict(target_k=1, final_epochs=0),
])
def test_inputs_validation(kwargs):
    with pytest.raises(ValueError):
        CtmqInputs(**kwargs)


def test_plan_phases_single_mode():
    cfg = RunConfig({"schedule.mode": "single", "schedule.bit_depth": 4,
                     "schedule.epochs": 6})
    phases = plan_phases(cfg)
    assert phases == [Phase(0, "single", 4, 6)]


# ----------------------------------------------------------------------
# datasets and evaluation


def test_load_datasets_synthetic_counts():
    cfg = RunConfig(tiny_values())
    train, test = load_datasets(cfg)
    assert len(train.labels) == 32
    assert train.class_count == 4
    assert len(test.labels) == 32  # test split floor of 8 per class


def test_load_datasets_class_mismatch():
    cfg = RunConfig(tiny_values(**{"model.num_classes": 7,
                                   "data.synth_classes": 4}))
    with pytest.raises(ConfigError, match="num_classes is 7"):
        load_datasets(cfg)


def test_load_datasets_cifar_needs_root(monkeypatch):
    monkeypatch.delenv("BITCYCLE_DATA", raising=False)
    cfg = RunConfig(tiny_values(**{"data.format": "cifar", "model.num_classes": 10}))
    with pytest.raises(ConfigError, match="BITCYCLE_DATA"):
        load_datasets(cfg)


def test_load_datasets_train_subset():
    cfg = RunConfig(tiny_values(**{"data.train_per_class": 2}))
    train, _ = load_datasets(cfg)
    assert len(train.labels) == 8
    assert all((train.labels == c).sum() == 2 for c in range(4))


def test_evaluate_batch_size_invariant():
    ds = make_synthetic(per_class=8, class_count=4, image_size=12, seed=3, split="test")
    norm = Normalization.from_train(ds)
    model = build_model(desk_config(bit_depth=2, num_classes=4),
                        rng=np.random.default_rng(0))
    results = [evaluate(model, ds, bs, norm)[:2] for bs in (5, 7, 32)]
    assert results[0] == results[1] == results[2]


def test_pooled_weight_error_zero_at_full_precision():
    model = build_model(desk_config(bit_depth=32, num_classes=4),
                        rng=np.random.default_rng(0))
    assert pooled_weight_error(model) == 0.0


def test_pooled_weight_error_positive_when_quantized():
    model = build_model(desk_config(bit_depth=1, num_classes=4),
                        rng=np.random.default_rng(0))
    assert pooled_weight_error(model) > 0.0


# ----------------------------------------------------------------------
# the driver


def _run(tmp_path, name, resume=False, log=None, **extra):
    values = tiny_values(**extra)
    values["run.out_dir"] = str(tmp_path / name)
    cfg = RunConfig(values)
    rows = run_schedule(cfg, resume=resume, log=log)
    return cfg, rows


def test_run_covers_plan(tmp_path):
    cfg, rows = _run(tmp_path, "run")
    phases = plan_phases(cfg)
    assert len(rows) == sum(p.epochs for p in phases)
    seen = [(r.phase, r.part, r.bit_depth) for r in rows]
    expected = [(p.index, p.part, p.bit_depth) for p in phases for _ in range(p.epochs)]
    assert seen == expected
    iters = [r.iteration for r in rows]
    assert iters == sorted(iters) and len(set(iters)) == len(iters)
    out = str(tmp_path / "run")
    files = sorted(os.listdir(out))
    for required in ("checkpoint.bin", "config.txt", "metrics.csv", "timing.csv"):
        assert required in files
    snapshots = [f for f in files if f.startswith("checkpoint_phase")]
    assert len(snapshots) == len(phases)
    assert open(os.path.join(out, "config.txt")).read() == cfg.canonical_text()


def test_learning_rate_decays_within_final_phase(tmp_path):
    cfg, rows = _run(tmp_path, "run")
    final = [r for r in rows if r.part == "final"]
    base = float(cfg["optimizer.lr_base"])
    expected = [base * (1 - e / len(final)) for e in range(len(final))]
    np.testing.assert_allclose([r.lr for r in final], expected, rtol=0, atol=0)


def test_metrics_file_matches_returned_rows(tmp_path):
    cfg, rows = _run(tmp_path, "run")
    on_disk = read_metrics(os.path.join(str(tmp_path / "run"), "metrics.csv"))
    assert [(r.phase, r.epoch, r.train_loss, r.eval_top1) for r in on_disk] == \
        [(r.phase, r.epoch, r.train_loss, r.eval_top1) for r in rows]


def test_identical_configs_reproduce_metrics_bytes(tmp_path):
    _run(tmp_path, "a")
    _run(tmp_path, "b")
    a = open(tmp_path / "a" / "metrics.csv", "rb").read()
    b = open(tmp_path / "b" / "metrics.csv", "rb").read()
    assert a == b


def test_seed_changes_metrics(tmp_path):
    _run(tmp_path, "a")
    _run(tmp_path, "b", **{"run.seed": 1})
    a = open(tmp_path / "a" / "metrics.csv", "rb").read()
    b = open(tmp_path / "b" / "metrics.csv", "rb").read()
    assert a != b


def test_quant_error_column_recomputes_from_checkpoint(tmp_path):
    _, rows = _run(tmp_path, "run")
    assert all(r.mean_abs_quant_error > 0 for r in rows)
    ck = load_checkpoint(str(tmp_path / "run" / "checkpoint.bin"))
    model, _ = model_from_checkpoint(ck)
    assert pooled_weight_error(model) == rows[-1].mean_abs_quant_error


def test_final_checkpoint_evaluates_to_last_row(tmp_path):
    cfg, rows = _run(tmp_path, "run")
    ck = load_checkpoint(str(tmp_path / "run" / "checkpoint.bin"))
    assert ck.config_digest == cfg.digest()
    assert ck.metadata["iteration"] == rows[-1].iteration
    model, cfg_back = model_from_checkpoint(ck)
    assert cfg_back.digest() == cfg.digest()
    _, test = load_datasets(cfg_back)
    norm = Normalization.from_dict(ck.metadata["normalization"])
    top1, top5, _ = evaluate(model, test, int(cfg["data.batch_size"]), norm)
    assert top1 == rows[-1].eval_top1
    assert top5 == rows[-1].eval_top5


def test_eval_at_other_batch_size_matches(tmp_path):
    cfg, rows = _run(tmp_path, "run")
    ck = load_checkpoint(str(tmp_path / "run" / "checkpoint.bin"))
    model, cfg_back = model_from_checkpoint(ck)
    _, test = load_datasets(cfg_back)
    norm = Normalization.from_dict(ck.metadata["normalization"])
    top1, top5, _ = evaluate(model, test, 5, norm)
    assert top1 == rows[-1].eval_top1
    assert top5 == rows[-1].eval_top5


class _InterruptAfter:
    """Log callback that kills the run after a fixed number of epochs."""

    def __init__(self, rows_allowed):
        self.remaining = rows_allowed

    def __call__(self, message):
        self.remaining -= 1
        if self.remaining <= 0:
            raise KeyboardInterrupt


@pytest.mark.parametrize("rows_allowed", [2, 6])
def test_resume_reproduces_uninterrupted_run(tmp_path, rows_allowed):
    # 2 interrupts at a phase boundary, 6 interrupts mid final phase
    _run(tmp_path, "full")
    with pytest.raises(KeyboardInterrupt):
        _run(tmp_path, "cut", log=_InterruptAfter(rows_allowed))
    _run(tmp_path, "cut", resume=True)
    full = open(tmp_path / "full" / "metrics.csv", "rb").read()
    cut = open(tmp_path / "cut" / "metrics.csv", "rb").read()
    assert full == cut
    a = open(tmp_path / "full" / "checkpoint.bin", "rb").read()
    b = open(tmp_path / "cut" / "checkpoint.bin", "rb").read()
    assert a == b


def test_resume_on_finished_run_is_a_no_op(tmp_path):
    cfg, rows = _run(tmp_path, "run")
    again = run_schedule(cfg, resume=True)
    assert [(r.phase, r.epoch) for r in again] == [(r.phase, r.epoch) for r in rows]


def test_resume_without_checkpoint_fails(tmp_path):
    values = tiny_values()
    values["run.out_dir"] = str(tmp_path / "empty")
    with pytest.raises(CheckpointError, match="does not exist"):
        run_schedule(RunConfig(values), resume=True)


def test_resume_rejects_other_config(tmp_path):
    _run(tmp_path, "run")
    values = tiny_values(**{"optimizer.lr_base": 0.5})
    values["run.out_dir"] = str(tmp_path / "run")
    with pytest.raises(CheckpointError, match="different config"):
        run_schedule(RunConfig(values), resume=True)


def test_single_mode_runs(tmp_path):
    values = tiny_values(**{"schedule.mode": "single", "schedule.bit_depth": 2,
                            "schedule.epochs": 2})
    values["run.out_dir"] = str(tmp_path / "single")
    rows = run_schedule(RunConfig(values))
    assert [(r.part, r.bit_depth, r.epoch) for r in rows] == \
        [("single", 2, 1), ("single", 2, 2)]


def test_single_mode_warm_start_changes_trajectory(tmp_path):
    warm_values = tiny_values(**{"schedule.mode": "single", "schedule.bit_depth": 2,
                                 "schedule.epochs": 2})
    warm_values["run.out_dir"] = str(tmp_path / "teacher")
    run_schedule(RunConfig(warm_values))
    ckpt = str(tmp_path / "teacher" / "checkpoint.bin")

    cold = tiny_values(**{"schedule.mode": "single", "schedule.bit_depth": 1,
                          "schedule.epochs": 2})
    cold["run.out_dir"] = str(tmp_path / "cold")
    cold_rows = run_schedule(RunConfig(cold))

    hot = dict(cold)
    hot["schedule.initial_weights"] = ckpt
    hot["run.out_dir"] = str(tmp_path / "hot")
    hot_rows = run_schedule(RunConfig(hot))
    assert [r.train_loss for r in hot_rows] != [r.train_loss for r in cold_rows]


def test_batch_size_larger_than_train_set_rejected(tmp_path):
    values = tiny_values(**{"data.batch_size": 4096})
    values["run.out_dir"] = str(tmp_path / "run")
    with pytest.raises(ConfigError, match="exceeds the training set size"):
        run_schedule(RunConfig(values))
