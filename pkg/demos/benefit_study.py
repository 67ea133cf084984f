"""Does the cyclic schedule actually help? Three arms, three seeds.

Arm (a) trains a 1-bit model directly from random init. Arm (b) first
trains the same architecture with real weights, then fine-tunes at 1 bit
from that checkpoint. Arm (c) runs the full cyclic schedule: soft transfer
from 4 bits, three (2,1) cycles, a 2-bit tail, then the final 1-bit phase.
All arms spend the same 8 epochs in their final 1-bit configuration and are
scored on held-out top-1. The corpus is the built-in synthetic one, so the
whole study is a couple of minutes on one core.

Alongside the final scores, the study tracks the accuracy reached at the
end of each 1-bit re-entry inside arm (c); on a healthy run that sequence
climbs cycle over cycle.

Run as: python demos/benefit_study.py
"""

import shutil
import tempfile
from pathlib import Path

import numpy as np

from bitcycle.config import RunConfig
from bitcycle.schedule import run_schedule

BASE = {
    "model.stage_channels": (8, 16),
    "model.blocks_per_stage": (1, 1),
    "model.num_classes": 10,
    "data.synth_classes": 10,
    "data.synth_per_class": 64,
    "data.synth_size": 16,
    "data.batch_size": 64,
    "optimizer.lr_base": 0.003,
}
FINAL_EPOCHS = 8
SEEDS = (0, 1, 2)


def train(out_dir, **extra):
    values = dict(BASE, **extra)
    values["run.out_dir"] = str(out_dir)
    return run_schedule(RunConfig(values))


def one_bit_reentries(rows):
    ends = {}
    for r in rows:
        if r.part == "cyclic" and r.bit_depth == 1:
            ends[r.phase] = r.eval_top1
    return [ends[p] for p in sorted(ends)]


if __name__ == "__main__":
    root = Path(tempfile.mkdtemp(prefix="bitcycle_study_"))
    finals = {"direct": [], "warm": [], "ctmq": []}
    reentries = []
    try:
        for seed in SEEDS:
            print(f"seed {seed}: direct 1-bit...", flush=True)
            rows = train(root / f"direct_{seed}", **{
                "schedule.mode": "single", "schedule.bit_depth": 1,
                "schedule.epochs": FINAL_EPOCHS, "run.seed": seed})
            finals["direct"].append(rows[-1].eval_top1)

            print(f"seed {seed}: real-weight warm start...", flush=True)
            train(root / f"real_{seed}", **{
                "schedule.mode": "single", "schedule.bit_depth": 32,
                "schedule.epochs": FINAL_EPOCHS, "run.seed": seed})
            rows = train(root / f"warm_{seed}", **{
                "schedule.mode": "single", "schedule.bit_depth": 1,
                "schedule.epochs": FINAL_EPOCHS, "run.seed": seed,
                "schedule.initial_weights": str(root / f"real_{seed}" / "checkpoint.bin")})
            finals["warm"].append(rows[-1].eval_top1)

            print(f"seed {seed}: cyclic schedule...", flush=True)
            rows = train(root / f"ctmq_{seed}", **{
                "schedule.mode": "ctmq", "schedule.target_k": 1,
                "schedule.start_bits": 4, "schedule.cycles": 3,
                "schedule.soft_epochs": 2, "schedule.cyclic_epochs": 3,
                "schedule.final_epochs": FINAL_EPOCHS, "run.seed": seed})
            finals["ctmq"].append(rows[-1].eval_top1)
            reentries.append(one_bit_reentries(rows))

        print("\nfinal 1-bit top-1 by arm:")
        for arm in ("direct", "warm", "ctmq"):
            per_seed = "  ".join(f"{v:.4f}" for v in finals[arm])
            print(f"  {arm:>6}: {per_seed}   mean {np.mean(finals[arm]):.4f}")

        means = np.mean(np.asarray(reentries), axis=0)
        print("\n1-bit re-entry top-1 inside the cyclic arm, mean over seeds:")
        print("  " + " -> ".join(f"{v:.4f}" for v in means))
    finally:
        shutil.rmtree(root)
