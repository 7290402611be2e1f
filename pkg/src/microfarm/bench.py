"""Benchmark harness producing accuracy/MSE/timing learning curves.

For each dataset size a fresh synthetic dataset is generated with complete
rating knowledge (sparsity 0), split 80/20, and every requested model kind
is fitted and evaluated.  Timing columns are wall clock and vary between
runs; the accuracy and MSE columns are deterministic per seed.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import MODEL_KINDS, ModelError, dataset_from_soils, fit, predict_matrix, split
from .ratings import generate_dataset

DEFAULT_SIZES = tuple(range(100, 10101, 1000))

BENCH_COLUMNS = ("kind", "size", "accuracy", "mse", "train_ms", "infer_ms")
CURVE_COLUMNS = ("kind", "size", "accuracy", "mse")


@dataclass(frozen=True)
class BenchRow:
    kind: str
    size: int
    accuracy: float
    mse: float
    train_ms: float
    infer_ms: float


def benchmark(
    kinds=MODEL_KINDS,
    sizes=DEFAULT_SIZES,
    seed: int = 0,
    progress=None,
) -> list[BenchRow]:
    """One BenchRow per (kind, size), sizes outermost, kinds in given order."""
    kinds = tuple(kinds)
    unknown = [k for k in kinds if k not in MODEL_KINDS]
    if unknown:
        raise ModelError(
            f"unknown model kind {unknown[0]!r}, expected one of {', '.join(MODEL_KINDS)}"
        )
    if not kinds or not sizes:
        raise ModelError("kinds and sizes must be non-empty")
    rows = []
    for i, size in enumerate(sizes):
        # independent per-size substreams so cells never share random draws
        children = np.random.SeedSequence(entropy=seed, spawn_key=(i,)).spawn(3)
        data_seed, split_seed, fit_seed = (int(c.generate_state(1)[0]) for c in children)
        soils, truth = generate_dataset(size, seed=data_seed)
        train, test = split(dataset_from_soils(soils, truth), seed=split_seed)
        for kind in kinds:
            model = fit(kind, train, seed=fit_seed)
            start = time.perf_counter()
            scores, rounded = predict_matrix(model, test.features)
            infer_ms = (time.perf_counter() - start) * 1000.0
            accuracy = float(np.mean(rounded == test.labels))
            mse = float(np.mean((scores - test.labels) ** 2))
            rows.append(BenchRow(kind, size, accuracy, mse, model.train_ms, infer_ms))
            if progress is not None:
                progress(rows[-1])
    return rows


def write_bench_csv(path: str | Path, rows: list[BenchRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(BENCH_COLUMNS)
        for r in rows:
            writer.writerow(
                [r.kind, r.size, repr(r.accuracy), repr(r.mse), f"{r.train_ms:.3f}", f"{r.infer_ms:.3f}"]
            )


def write_bench_json(path: str | Path, rows: list[BenchRow], seed: int) -> None:
    doc = {
        "seed": seed,
        "rows": [
            {
                "kind": r.kind,
                "size": r.size,
                "accuracy": r.accuracy,
                "mse": r.mse,
                "train_ms": r.train_ms,
                "infer_ms": r.infer_ms,
            }
            for r in rows
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_curve_csv(path: str | Path, rows: list[BenchRow]) -> None:
    """Timing-free learning-curve table; byte-identical for a fixed seed."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for r in rows:
            writer.writerow([r.kind, r.size, repr(r.accuracy), repr(r.mse)])
