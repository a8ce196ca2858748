"""Evaluation metrics and scaling-curve statistics.

Normalized entropy here is the positive/positive form: mean prediction
cross-entropy divided by the entropy of the empirical label prior.  1.0
means no better than always predicting the base rate; lower is better.
ROC AUC is the tied-rank statistic and must agree exactly with pairwise
enumeration, ties crediting half.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DegenerateFitError,
    InsufficientDataError,
    UndefinedAucError,
    UndefinedPriorError,
)

PREDICTION_CLIP = 1e-7


@dataclass(frozen=True)
class EvalBatch:
    """Aligned predictions in (0,1) and binary labels."""

    predictions: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.predictions, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if p.shape != y.shape or p.ndim != 1:
            raise ValueError(f"shape mismatch: preds {p.shape} labels {y.shape}")
        if p.size < 1:
            raise ValueError("empty batch")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("labels must be 0/1")
        object.__setattr__(self, "predictions", p)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return int(self.predictions.size)


def normalized_entropy(batch: EvalBatch) -> float:
    """Mean cross-entropy of the predictions over the entropy of the prior.

    Predictions are clipped to [1e-7, 1 - 1e-7] before the logs.  Raises
    when all labels are identical (the prior entropy is zero).
    """
    y = batch.labels
    prior = float(y.mean())
    if prior in (0.0, 1.0):
        raise UndefinedPriorError("all labels identical; prior entropy is zero")
    p = np.clip(batch.predictions, PREDICTION_CLIP, 1.0 - PREDICTION_CLIP)
    ce = -np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
    denom = -(prior * np.log(prior) + (1.0 - prior) * np.log(1.0 - prior))
    return float(ce / denom)


def _tied_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their group average."""
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(values.size, dtype=np.float64)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        # average of ranks i+1 .. j+1
        avg = (i + j + 2) / 2.0
        ranks[order[i : j + 1]] = avg
        i = j + 1
    return ranks


def roc_auc(batch: EvalBatch) -> float:
    """Probability that a random positive outranks a random negative.

    Computed via the tied-rank statistic; ties credit 0.5, which makes
    the result equal to brute-force pairwise enumeration exactly.
    """
    y = batch.labels
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError("need at least one positive and one negative")
    ranks = _tied_ranks(batch.predictions)
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def ne_gain(baseline_ne: float, variant_ne: float) -> float:
    """Relative NE reduction versus a baseline; positive is better."""
    if baseline_ne <= 0:
        raise ValueError("baseline NE must be positive")
    return (baseline_ne - variant_ne) / baseline_ne


@dataclass(frozen=True)
class ScalingCurve:
    """(training capacity, NE gain) points for one configuration.

    Capacity is stored raw (samples consumed); the normalized axis maps
    the curve's own range onto [0, 1], so areas and slopes are comparable
    within one sweep only.
    """

    capacities: tuple[float, ...]
    gains: tuple[float, ...]
    source: str = ""
    enrichment: bool = False
    nes: tuple[float, ...] | None = None  # raw NE per point, for export

    def __post_init__(self) -> None:
        if len(self.capacities) != len(self.gains):
            raise ValueError("capacities and gains must align")
        if self.nes is not None and len(self.nes) != len(self.gains):
            raise ValueError("nes and gains must align")
        if len(self.capacities) < 2:
            raise InsufficientDataError("a curve needs at least 2 points")
        x = np.asarray(self.capacities, dtype=np.float64)
        if not np.all(np.diff(x) > 0):
            raise ValueError("capacities must be strictly increasing")
        object.__setattr__(self, "capacities", tuple(float(v) for v in x))
        object.__setattr__(self, "gains", tuple(float(v) for v in self.gains))
        if self.nes is not None:
            object.__setattr__(self, "nes", tuple(float(v) for v in self.nes))

    @property
    def normalized_capacities(self) -> np.ndarray:
        x = np.asarray(self.capacities, dtype=np.float64)
        span = x[-1] - x[0]
        if span <= 0:
            raise DegenerateFitError("curve spans zero capacity")
        return (x - x[0]) / span


def curve_auc(curve: ScalingCurve) -> float:
    """Trapezoidal mean of the gains over the normalized capacity axis."""
    x = curve.normalized_capacities
    y = np.asarray(curve.gains, dtype=np.float64)
    return float(np.trapezoid(y, x) / (x[-1] - x[0]))


def best_fit_slope(curve: ScalingCurve) -> float:
    """Ordinary least-squares slope of gain on normalized capacity."""
    x = curve.normalized_capacities
    y = np.asarray(curve.gains, dtype=np.float64)
    dx = x - x.mean()
    denom = float(np.sum(dx * dx))
    if denom == 0.0:
        raise DegenerateFitError("all capacities identical")
    return float(np.sum(dx * (y - y.mean())) / denom)


# ----------------------------------------------------------------------
# Delimited exports
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class RoiRow:
    """One row of the per-source ROI table: curve area and fitted slope."""

    source: str
    enrichment: bool
    max_len: int
    curve_auc: float
    slope: float


def write_curves_csv(curves: Sequence[tuple[ScalingCurve, int]], path) -> None:
    """Columns: source, enrichment, max_len, capacity_raw, capacity_norm, ne, ne_gain."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "source",
                "enrichment",
                "max_len",
                "capacity_raw",
                "capacity_norm",
                "ne",
                "ne_gain",
            ]
        )
        for curve, max_len in curves:
            xs = curve.normalized_capacities
            nes = curve.nes if curve.nes is not None else [float("nan")] * len(xs)
            for raw, xn, ne, gain in zip(curve.capacities, xs, nes, curve.gains):
                writer.writerow(
                    [
                        curve.source,
                        int(curve.enrichment),
                        max_len,
                        repr(float(raw)),
                        repr(float(xn)),
                        repr(float(ne)),
                        repr(float(gain)),
                    ]
                )


def write_roi_csv(rows: Iterable[RoiRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source", "enrichment", "max_len", "curve_auc", "slope"])
        for row in rows:
            writer.writerow(
                [
                    row.source,
                    int(row.enrichment),
                    row.max_len,
                    repr(float(row.curve_auc)),
                    repr(float(row.slope)),
                ]
            )
