"""Centralized evaluation and JSONL experiment logs.

One JSONL line per round plus a summary line per trial. Floats are written
with Python's shortest round-trip repr, so write -> read -> write is
lossless for every numeric field.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import DataError, ReportError
from .models import ModelState, forward
from .numerics import per_sample_nll

TIMING_FIELDS = ("elapsed_s", "total_time_s")


@dataclass
class RoundRecord:
    round: int
    test_acc: float
    test_loss: float
    train_acc: float
    train_loss: float
    elapsed_s: float
    sampled_clients: list[int] = field(default_factory=list)


@dataclass
class TrialSummary:
    trial_id: str
    model: str
    seed: int
    records: list[RoundRecord]
    total_time_s: float


def evaluate(model: ModelState, test: Dataset, batch_size: int = 512) -> tuple[float, float]:
    """Accuracy and mean cross-entropy on the full test set.

    Batched for memory only; the result is independent of batch_size.
    Argmax ties break toward the lowest class index.
    """
    n = len(test)
    correct = 0
    loss_sum = 0.0
    for start in range(0, n, batch_size):
        imgs = test.images[start : start + batch_size]
        labs = test.labels[start : start + batch_size]
        logits, _ = forward(model, imgs)
        correct += int((np.argmax(logits, axis=1) == labs).sum())
        loss_sum += float(per_sample_nll(logits, labs).sum())
    return correct / n, loss_sum / n


def write_logs(trial: TrialSummary, path) -> None:
    """One JSONL line per round, then a trailing summary line."""
    with open(path, "w") as f:
        for r in trial.records:
            line = {
                "trial_id": trial.trial_id,
                "model": trial.model,
                "round": r.round,
                "test_acc": r.test_acc,
                "test_loss": r.test_loss,
                "train_acc": r.train_acc,
                "train_loss": r.train_loss,
                "sampled_clients": r.sampled_clients,
                "elapsed_s": r.elapsed_s,
            }
            f.write(json.dumps(line) + "\n")
        f.write(
            json.dumps(
                {
                    "trial_id": trial.trial_id,
                    "model": trial.model,
                    "seed": trial.seed,
                    "n_rounds": len(trial.records),
                    "total_time_s": trial.total_time_s,
                }
            )
            + "\n"
        )


def read_logs(path) -> TrialSummary:
    records = []
    summary = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}: malformed JSON at line {lineno}: {e}") from e
            if "round" in obj:
                records.append(
                    RoundRecord(
                        round=obj["round"],
                        test_acc=obj["test_acc"],
                        test_loss=obj["test_loss"],
                        train_acc=obj["train_acc"],
                        train_loss=obj["train_loss"],
                        elapsed_s=obj["elapsed_s"],
                        sampled_clients=obj["sampled_clients"],
                    )
                )
            else:
                summary = obj
    if summary is None:
        raise DataError(f"{path}: missing trial summary line (truncated file?)")
    if summary["n_rounds"] != len(records):
        raise DataError(
            f"{path}: summary says {summary['n_rounds']} rounds, found {len(records)}"
        )
    return TrialSummary(
        trial_id=summary["trial_id"],
        model=summary["model"],
        seed=summary["seed"],
        records=records,
        total_time_s=summary["total_time_s"],
    )


def scan_logs(log_dir) -> dict[str, list[TrialSummary]]:
    """Read every *.jsonl trial log under log_dir, grouped by model kind."""
    log_dir = Path(log_dir)
    if not log_dir.is_dir():
        raise ReportError(f"log directory {log_dir} does not exist")
    groups: dict[str, list[TrialSummary]] = {}
    for path in sorted(log_dir.glob("*.jsonl")):
        trial = read_logs(path)
        groups.setdefault(trial.model, []).append(trial)
    if not groups:
        raise ReportError(f"no trial logs found under {log_dir}")
    return groups


def strip_timing(path) -> list[dict]:
    """Parsed log lines with wall-clock fields removed (determinism checks)."""
    out = []
    with open(path) as f:
        for line in f:
            obj = json.loads(line)
            for k in TIMING_FIELDS:
                obj.pop(k, None)
            out.append(obj)
    return out
