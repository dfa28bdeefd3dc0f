"""Test error, rotation-head specialization matrices and CSV output."""

from __future__ import annotations

import csv
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from . import model as mdl
from .data import rotate_batch

METRIC_FIELDS = ("epoch", "supervised_ce", "rotation_ce", "sharpen_ce", "aux_ce", "total",
                 "test_error", "diagonality")


class DiagnosticsError(ValueError):
    pass


@dataclass
class MetricsRecord:
    epoch: int
    supervised_ce: float
    rotation_ce: float
    sharpen_ce: float
    aux_ce: float
    total: float
    test_error: float
    diagonality: float


def evaluate_error(params: mdl.ModelParameters, images: np.ndarray, labels: np.ndarray,
                   use_aux: bool = False) -> float:
    """Fraction of examples whose predicted class differs from the label."""
    if len(labels) == 0:
        raise DiagnosticsError("cannot evaluate on an empty test set")
    pred = mdl.test_predict(params, images, use_aux)
    return float(np.mean(pred != np.asarray(labels)))


def best_heads(head_dists: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Index of the head putting the most mass on the true angle, ties to the lowest."""
    on_truth = head_dists[np.arange(len(angles)), :, angles]
    return np.argmax(on_truth, axis=1)


def confusion_from_heads(head_dists: np.ndarray, angles: np.ndarray, classes: np.ndarray,
                         C: int) -> np.ndarray:
    """Row i, column j: share of class-i rotated copies whose best head is j."""
    best = best_heads(head_dists, angles)
    counts = np.zeros((C, C))
    np.add.at(counts, (classes, best), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        missing = np.flatnonzero(totals[:, 0] == 0).tolist()
        raise DiagnosticsError(f"classes {missing} have no examples in the evaluation set")
    return counts / totals


def head_confusion(params: mdl.ModelParameters, images: np.ndarray, labels: np.ndarray,
                   rng: np.random.Generator | None = None, max_examples: int | None = None) -> np.ndarray:
    """Specialization matrix of the conditional rotation heads.

    Every example is evaluated under all four rotations.  When ``rng`` and
    ``max_examples`` are given, a random subsample of that size is used.
    """
    images, labels = np.asarray(images), np.asarray(labels)
    if rng is not None and max_examples is not None and len(labels) > max_examples:
        keep = np.sort(rng.choice(len(labels), size=max_examples, replace=False))
        images, labels = images[keep], labels[keep]
    rotated, angles, src = rotate_batch(images)
    out = mdl.forward(params.constants(), rotated, params.config)
    return confusion_from_heads(out.head_dists.values, angles, labels[src], params.config.C)


def diagonality(m: np.ndarray) -> float:
    m = np.asarray(m)
    return float(np.trace(m) / m.shape[0])


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else f"{float(v):.17g}"


def write_metrics(records: list[MetricsRecord], path: str | Path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(METRIC_FIELDS) + "\n")
            for r in records:
                fh.write(",".join(_fmt(v) for v in astuple(r)) + "\n")
    except OSError as exc:
        raise DiagnosticsError(f"cannot write metrics to {path}: {exc}") from exc


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    types = [f.type for f in fields(MetricsRecord)]
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [MetricsRecord(*(int(row[k]) if t in ("int", int) else float(row[k])
                            for k, t in zip(METRIC_FIELDS, types))) for row in rows]


def write_confusion(matrix: np.ndarray, path: str | Path) -> None:
    try:
        with open(path, "w") as fh:
            for row in np.asarray(matrix):
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    except OSError as exc:
        raise DiagnosticsError(f"cannot write confusion matrix to {path}: {exc}") from exc


def read_confusion(path: str | Path) -> np.ndarray:
    with open(path) as fh:
        return np.array([[float(v) for v in line.split(",")] for line in fh if line.strip()])
