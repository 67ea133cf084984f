"""Cyclic training across descending bit depths.

A run is a sequence of phases, each training the same latent weights at
one quantization depth. For a target depth k the plan has three parts:

  1. soft transfer: one phase per depth from start_bits down to k+2,
     each starting from the weights the previous depth finished with;
  2. cyclic: C round trips alternating k+1 and k, followed by one more
     k+1 phase (the tail) to settle the pair;
  3. final: a long phase at k itself.

Every phase gets a fresh optimizer and its own learning-rate decay; the
weights are the only state that crosses a phase boundary. Checkpoints go
out at the end of every phase (plus periodically inside the final phase)
and carry enough state to resume mid-run with byte-identical metrics.
"""

from __future__ import annotations

import os
import shutil
import time
from dataclasses import dataclass

import numpy as np

from . import data as D
from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, parse_config_text
from .metrics import MetricsRow, MetricsWriter, read_metrics
from .models import QuantResNet, build_model, transfer_weights
from .nn import softmax_cross_entropy
from .optim import LrSchedule, lr_at, make_optimizer
from .quantize import REAL_BITS, apply_quantizer, weight_spec
from .tensor import no_grad

_INIT_TAG = 0x1A17


@dataclass(frozen=True)
class CtmqInputs:
    """Knobs that determine the whole phase plan."""

    target_k: int
    start_bits: int = 8
    cycles: int = 9
    soft_epochs: int = 20
    cyclic_epochs: int = 20
    final_epochs: int = 200

    def __post_init__(self):
        if not 1 <= self.target_k < REAL_BITS:
            raise ValueError(f"target_k must be in [1, {REAL_BITS}), got {self.target_k}")
        if not self.target_k < self.start_bits <= 16:
            raise ValueError(
                f"start_bits must be in ({self.target_k}, 16], got {self.start_bits}"
            )
        if self.cycles < 0:
            raise ValueError(f"cycles must be nonnegative, got {self.cycles}")
        for name in ("soft_epochs", "cyclic_epochs", "final_epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")

    @staticmethod
    def from_config(cfg: RunConfig) -> "CtmqInputs":
        return CtmqInputs(
            target_k=int(cfg["schedule.target_k"]),
            start_bits=int(cfg["schedule.start_bits"]),
            cycles=int(cfg["schedule.cycles"]),
            soft_epochs=int(cfg["schedule.soft_epochs"]),
            cyclic_epochs=int(cfg["schedule.cyclic_epochs"]),
            final_epochs=int(cfg["schedule.final_epochs"]),
        )


@dataclass(frozen=True)
class Phase:
    index: int
    part: str       # soft_transfer | cyclic | cyclic_tail | final | single
    bit_depth: int
    epochs: int


def expand_schedule(inputs: CtmqInputs) -> list[Phase]:
    """Unroll the plan into a concrete phase list.

    Phase count is (start_bits - target_k - 1) + 2 * cycles + 2: the
    descent, the cycles, the tail, and the final phase.
    """
    k = inputs.target_k
    phases: list[Phase] = []

    def add(part: str, depth: int, epochs: int):
        phases.append(Phase(len(phases), part, depth, epochs))

    for n in range(inputs.start_bits, k + 1, -1):
        add("soft_transfer", n, inputs.soft_epochs)
    for _ in range(inputs.cycles):
        add("cyclic", k + 1, inputs.cyclic_epochs)
        add("cyclic", k, inputs.cyclic_epochs)
    add("cyclic_tail", k + 1, inputs.cyclic_epochs)
    add("final", k, inputs.final_epochs)
    return phases


def _single_phase(cfg: RunConfig) -> list[Phase]:
    return [Phase(0, "single", int(cfg["schedule.bit_depth"]), int(cfg["schedule.epochs"]))]


def plan_phases(cfg: RunConfig) -> list[Phase]:
    if cfg["schedule.mode"] == "single":
        return _single_phase(cfg)
    return expand_schedule(CtmqInputs.from_config(cfg))


# ----------------------------------------------------------------------
# data plumbing

_IDX_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def load_datasets(cfg: RunConfig) -> tuple[D.Dataset, D.Dataset]:
    """Resolve the train and eval datasets named by the config."""
    fmt = cfg["data.format"]
    seed = int(cfg["run.seed"])
    if fmt == "synthetic":
        train = D.make_synthetic(
            per_class=int(cfg["data.synth_per_class"]),
            class_count=int(cfg["data.synth_classes"]),
            image_size=int(cfg["data.synth_size"]),
            seed=seed,
            split="train",
        )
        test = D.make_synthetic(
            per_class=max(8, int(cfg["data.synth_per_class"]) // 4),
            class_count=int(cfg["data.synth_classes"]),
            image_size=int(cfg["data.synth_size"]),
            seed=seed,
            split="test",
        )
    else:
        root = cfg.data_root()
        if not root:
            raise ConfigError(
                "no data root configured: set data.root or the "
                "BITCYCLE_DATA environment variable"
            )
        if fmt == "cifar":
            train = D.load_cifar(root, split="train")
            test = D.load_cifar(root, split="test")
        else:
            ti, tl = (os.path.join(root, n) for n in _IDX_NAMES["train"])
            ei, el = (os.path.join(root, n) for n in _IDX_NAMES["test"])
            train = D.load_idx(ti, tl, split="train")
            test = D.load_idx(ei, el, split="test")
    if int(cfg["data.train_per_class"]) > 0:
        train = D.balanced_subset(train, int(cfg["data.train_per_class"]), seed)
    if int(cfg["data.eval_per_class"]) > 0:
        test = D.balanced_subset(test, int(cfg["data.eval_per_class"]), seed)
    if train.class_count != int(cfg["model.num_classes"]):
        raise ConfigError(
            f"model.num_classes is {cfg['model.num_classes']} but the training "
            f"set has {train.class_count} classes"
        )
    return train, test


# ----------------------------------------------------------------------
# evaluation and quantization error

def evaluate(model: QuantResNet, ds: D.Dataset, batch_size: int,
             norm: D.Normalization | None) -> tuple[float, float, float]:
    """Top-1 and top-5 accuracy plus mean loss over a dataset, eval mode.

    Accuracies are exact example counts divided by the dataset size, so
    they do not depend on the batch size used to stream the data.
    """
    top1 = 0
    top5 = 0
    loss_sum = 0.0
    n = len(ds.labels)
    want = min(5, ds.class_count)
    with no_grad():
        for xb, yb in D.eval_batches(ds, batch_size, norm=norm):
            logits = model.forward(xb, training=False)
            z = logits.data
            pred = np.argmax(z, axis=1)
            top1 += int((pred == yb).sum())
            part = np.argpartition(-z, want - 1, axis=1)[:, :want]
            top5 += int((part == yb[:, None]).any(axis=1).sum())
            loss_sum += softmax_cross_entropy(logits, yb).item() * len(yb)
    return top1 / n, top5 / n, loss_sum / n


def pooled_weight_error(model: QuantResNet) -> float:
    """Mean absolute fake-quantization error over all quantized weights."""
    names = model.quantized_weight_names()
    if not names:
        return 0.0
    spec = weight_spec(model.cfg.bit_depth)
    total = 0.0
    count = 0
    for name in sorted(names):
        w = model.params[name].data
        wq = apply_quantizer(w.astype(np.float64), spec)
        total += float(np.abs(wq - w).sum())
        count += w.size
    return total / count


# ----------------------------------------------------------------------
# the driver

def _epochs_before(phases: list[Phase], index: int) -> int:
    return sum(p.epochs for p in phases[:index])


def _write_checkpoint(out_dir: str, cfg: RunConfig, model: QuantResNet, optimizer,
                      phase: Phase, epochs_done: int, iteration: int,
                      norm: D.Normalization, train_name: str,
                      snapshot: bool = False) -> None:
    meta = {
        "part": phase.part,
        "bit_depth": phase.bit_depth,
        "iteration": iteration,
        "normalization": norm.to_dict(),
        "dataset": train_name,
        "config": cfg.canonical_text(),
        "threads": int(cfg["run.threads"]),
    }
    ck = Checkpoint(
        config_digest=cfg.digest(),
        phase_index=phase.index,
        epochs_done=epochs_done,
        tensors={k: v.data for k, v in model.params.items()},
        optimizer_state=dict(optimizer.state_tensors()),
        step_count=optimizer.step_count,
        metadata=meta,
    )
    latest = os.path.join(out_dir, "checkpoint.bin")
    save_checkpoint(latest, ck)
    if snapshot:
        # end-of-phase snapshots stay around; checkpoint.bin is the rolling latest
        shutil.copyfile(latest, os.path.join(out_dir, f"checkpoint_phase{phase.index:03d}.bin"))


def model_from_checkpoint(ck: Checkpoint) -> tuple[QuantResNet, RunConfig]:
    """Rebuild the exact network a checkpoint was taken from."""
    cfg = RunConfig.from_raw(parse_config_text(ck.metadata["config"], origin="<checkpoint>"))
    model = build_model(cfg.model_config(int(ck.metadata["bit_depth"])),
                        rng=np.random.default_rng(0))
    names_have = set(model.params)
    names_want = set(ck.tensors)
    if names_have != names_want:
        missing = sorted(names_have ^ names_want)
        raise CheckpointError(f"checkpoint tensors do not match the model: {missing[:6]}")
    for name, arr in ck.tensors.items():
        np.copyto(model.params[name].data, arr, casting="same_kind")
    return model, cfg


def run_schedule(cfg: RunConfig, resume: bool = False, log=None,
                 on_phase_start=None) -> list[MetricsRow]:
    """Execute the full phase plan; returns every metrics row written.

    With resume=True and an existing checkpoint in the run directory,
    training continues from the last completed epoch and the metrics
    file is truncated back to that point, so an interrupted run and an
    uninterrupted one end with identical metrics bytes.

    on_phase_start, when given, is called as on_phase_start(phase, model)
    after the hand-off and before the phase's first batch; it sees the
    exact weights the phase starts from.
    """
    out_dir = str(cfg["run.out_dir"])
    seed = int(cfg["run.seed"])
    phases = plan_phases(cfg)
    train, test = load_datasets(cfg)
    norm = D.Normalization.from_train(train)
    policy = None
    if bool(cfg["data.augment"]):
        policy = D.AugmentPolicy(pad=int(cfg["data.pad"]),
                                 horizontal_flip_prob=float(cfg["data.flip_prob"]))
    batch_size = int(cfg["data.batch_size"])
    eval_bs = int(cfg["data.eval_batch_size"]) or batch_size
    if batch_size > len(train.labels):
        raise ConfigError(
            f"data.batch_size {batch_size} exceeds the training set size {len(train.labels)}"
        )

    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")

    start_phase = 0
    start_epoch = 0
    loaded: Checkpoint | None = None
    if resume:
        if not os.path.exists(ckpt_path):
            raise CheckpointError(f"cannot resume: {ckpt_path} does not exist")
        loaded = load_checkpoint(ckpt_path)
        if loaded.config_digest != cfg.digest():
            raise CheckpointError(
                "cannot resume: checkpoint was produced by a different config "
                f"(digest {loaded.config_digest[:12]}, expected {cfg.digest()[:12]})"
            )
        start_phase = loaded.phase_index
        start_epoch = loaded.epochs_done
        if start_epoch >= phases[start_phase].epochs:
            start_phase += 1
            start_epoch = 0
        if start_phase >= len(phases):
            return read_metrics(os.path.join(out_dir, "metrics.csv"))

    with open(os.path.join(out_dir, "config.txt"), "w") as f:
        f.write(cfg.canonical_text())

    writer = MetricsWriter(
        out_dir,
        resume_cursor=(loaded.phase_index, loaded.epochs_done) if loaded else None,
    )
    rows: list[MetricsRow] = []
    if loaded:
        rows = read_metrics(writer.metrics_path)

    model: QuantResNet | None = None
    if loaded:
        model = build_model(cfg.model_config(phases[start_phase].bit_depth),
                            rng=np.random.default_rng(0))
        source_depth = int(loaded.metadata["bit_depth"])
        if source_depth != phases[start_phase].bit_depth:
            carrier = build_model(cfg.model_config(source_depth),
                                  rng=np.random.default_rng(0))
            for name, arr in loaded.tensors.items():
                np.copyto(carrier.params[name].data, arr, casting="same_kind")
            transfer_weights(carrier.params, model.params)
        else:
            for name, arr in loaded.tensors.items():
                np.copyto(model.params[name].data, arr, casting="same_kind")

    iteration = int(loaded.metadata["iteration"]) if loaded else 0
    checkpoint_every = int(cfg["run.checkpoint_every"])

    try:
        for phase in phases[start_phase:]:
            if model is None:
                init_rng = np.random.default_rng(np.random.SeedSequence([seed, _INIT_TAG]))
                model = build_model(cfg.model_config(phase.bit_depth), rng=init_rng)
                if cfg["schedule.initial_weights"]:
                    warm = load_checkpoint(str(cfg["schedule.initial_weights"]))
                    for name, arr in warm.tensors.items():
                        if name not in model.params:
                            raise CheckpointError(
                                f"initial weights tensor {name!r} has no home in this model"
                            )
                        np.copyto(model.params[name].data, arr, casting="same_kind")
            elif model.cfg.bit_depth != phase.bit_depth:
                successor = build_model(cfg.model_config(phase.bit_depth),
                                        rng=np.random.default_rng(0))
                transfer_weights(model.params, successor.params)
                model = successor

            if on_phase_start is not None:
                on_phase_start(phase, model)
            optimizer = make_optimizer(model.trainable(), cfg.optimizer_config())
            lr_schedule = LrSchedule(str(cfg["optimizer.lr_policy"]), phase.epochs)
            phase_epoch0 = start_epoch if phase.index == start_phase else 0
            if loaded and phase.index == start_phase and phase_epoch0 > 0:
                optimizer.load_state(loaded.optimizer_state, loaded.step_count)

            global_epoch0 = _epochs_before(phases, phase.index)
            for epoch in range(phase_epoch0, phase.epochs):
                t0 = time.monotonic()
                lr = lr_at(lr_schedule, epoch, float(cfg["optimizer.lr_base"]))
                loss_sum = 0.0
                n_batches = 0
                for xb, yb in D.batches(train, batch_size, seed,
                                        global_epoch0 + epoch,
                                        policy=policy, norm=norm):
                    logits = model.forward(xb, training=True)
                    loss = softmax_cross_entropy(logits, yb)
                    model.zero_grad()
                    loss.backward()
                    optimizer.step(lr)
                    loss_sum += loss.item()
                    n_batches += 1
                    iteration += 1
                top1, top5, _ = evaluate(model, test, eval_bs, norm)
                row = MetricsRow(
                    phase=phase.index, part=phase.part, bit_depth=phase.bit_depth,
                    epoch=epoch + 1, iteration=iteration, lr=lr,
                    train_loss=loss_sum / max(1, n_batches),
                    eval_top1=top1, eval_top5=top5,
                    mean_abs_quant_error=pooled_weight_error(model),
                    wall_seconds=time.monotonic() - t0,
                )
                writer.append(row)
                rows.append(row)
                if log:
                    log(f"phase {phase.index:>2} {phase.part:<13} k={phase.bit_depth:<2} "
                        f"epoch {epoch + 1:>3}/{phase.epochs} lr={lr:.5f} "
                        f"loss={row.train_loss:.4f} top1={top1:.4f}")
                end_of_phase = epoch + 1 == phase.epochs
                periodic = (phase.part in ("final", "single")
                            and (epoch + 1) % checkpoint_every == 0)
                if end_of_phase or periodic:
                    _write_checkpoint(out_dir, cfg, model, optimizer, phase,
                                      epoch + 1, iteration, norm, train.name,
                                      snapshot=end_of_phase)
    finally:
        writer.close()
    return rows
