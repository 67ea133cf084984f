"""Per-epoch training metrics.

Rows land in two files inside the run directory:

    metrics.csv   one row per completed epoch; pure function of config,
                  seed, and thread count, so reruns produce identical bytes
    timing.csv    wall-clock seconds per epoch, kept out of metrics.csv
                  precisely because timings never reproduce

Both files are flushed after every row, so a partial run always leaves a
valid prefix that a resumed run can truncate and extend.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

METRICS_HEADER = (
    "phase,part,bit_depth,epoch,iteration,lr,train_loss,"
    "eval_top1,eval_top5,mean_abs_quant_error"
)
TIMING_HEADER = "phase,epoch,wall_seconds"


@dataclass
class MetricsRow:
    phase: int
    part: str
    bit_depth: int
    epoch: int
    iteration: int
    lr: float
    train_loss: float
    eval_top1: float
    eval_top5: float
    mean_abs_quant_error: float
    wall_seconds: float = 0.0

    def csv_line(self) -> str:
        fields = [
            str(self.phase), self.part, str(self.bit_depth), str(self.epoch),
            str(self.iteration), repr(float(self.lr)), repr(float(self.train_loss)),
            repr(float(self.eval_top1)), repr(float(self.eval_top5)),
            repr(float(self.mean_abs_quant_error)),
        ]
        return ",".join(fields)


def read_metrics(path: str) -> list[MetricsRow]:
    rows: list[MetricsRow] = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != METRICS_HEADER.split(","):
            raise ValueError(f"{path}: unexpected metrics header {header}")
        for rec in reader:
            if not rec:
                continue
            rows.append(MetricsRow(
                phase=int(rec[0]), part=rec[1], bit_depth=int(rec[2]),
                epoch=int(rec[3]), iteration=int(rec[4]), lr=float(rec[5]),
                train_loss=float(rec[6]), eval_top1=float(rec[7]),
                eval_top5=float(rec[8]), mean_abs_quant_error=float(rec[9]),
            ))
    return rows


class MetricsWriter:
    """Appends rows to metrics.csv and timing.csv under a run directory."""

    def __init__(self, out_dir: str, resume_cursor: tuple[int, int] | None = None):
        os.makedirs(out_dir, exist_ok=True)
        self.metrics_path = os.path.join(out_dir, "metrics.csv")
        self.timing_path = os.path.join(out_dir, "timing.csv")
        if resume_cursor is not None and os.path.exists(self.metrics_path):
            self._truncate(resume_cursor)
            self._metrics = open(self.metrics_path, "a", newline="")
            self._timing = open(self.timing_path, "a", newline="")
        else:
            self._metrics = open(self.metrics_path, "w", newline="")
            self._metrics.write(METRICS_HEADER + "\n")
            self._timing = open(self.timing_path, "w", newline="")
            self._timing.write(TIMING_HEADER + "\n")
            self._flush()

    def _truncate(self, cursor: tuple[int, int]) -> None:
        """Drop rows past (phase, epoch); a resumed run rewrites them."""
        phase, epoch = cursor
        kept = [r for r in read_metrics(self.metrics_path)
                if r.phase < phase or (r.phase == phase and r.epoch <= epoch)]
        with open(self.metrics_path, "w", newline="") as f:
            f.write(METRICS_HEADER + "\n")
            for r in kept:
                f.write(r.csv_line() + "\n")
        keep_keys = {(r.phase, r.epoch) for r in kept}
        timing_lines = []
        if os.path.exists(self.timing_path):
            with open(self.timing_path, newline="") as f:
                reader = csv.reader(f)
                next(reader, None)
                for rec in reader:
                    if rec and (int(rec[0]), int(rec[1])) in keep_keys:
                        timing_lines.append(",".join(rec))
        with open(self.timing_path, "w", newline="") as f:
            f.write(TIMING_HEADER + "\n")
            for line in timing_lines:
                f.write(line + "\n")

    def append(self, row: MetricsRow) -> None:
        self._metrics.write(row.csv_line() + "\n")
        self._timing.write(f"{row.phase},{row.epoch},{row.wall_seconds:.3f}\n")
        self._flush()

    def _flush(self) -> None:
        self._metrics.flush()
        self._timing.flush()

    def close(self) -> None:
        self._metrics.close()
        self._timing.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
