"""Stratified confusion tables and accuracy-versus-size bucket reports.

Confusion tables follow the column-normalized layout: each column is an
actual class (or stratum) and its two rows, "returns ovenbird" and
"returns non-ovenbird", sum to 100%.
"""
from __future__ import annotations

import csv
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .synthesis import STRATA

PREDICTED = ("ovenbird", "non-ovenbird")
ACTUAL = ("present", "not-present")

SERIES = ("spectrogram", "conditions", "combined")

REFERENCE_NOTES = (
    "Reference values from the original field study, not reproducible on synthetic data:",
    "conditions-only accuracy plateau 61.7%",
    "spectrogram-only accuracy range 50.1% to 94.8%",
    "smallest spectrogram-only bucket about 0.3e3 parameters",
)


def _column_percent(counts: np.ndarray) -> list[list[float] | None]:
    out = []
    for col in counts.T:
        total = col.sum()
        out.append(None if total == 0 else [round(100.0 * c / total, 1) for c in col])
    return out


@dataclass
class StratifiedConfusion:
    overall: np.ndarray  # (2, 2) counts, [predicted row, actual column]
    strata: np.ndarray  # (2, 3) counts over STRATA
    stratum_names: tuple[str, ...] = STRATA

    @property
    def overall_percent(self):
        return _column_percent(self.overall)

    @property
    def strata_percent(self):
        return _column_percent(self.strata)

    @property
    def empty_strata(self) -> list[str]:
        return [s for s, col in zip(self.stratum_names, self.strata.T) if col.sum() == 0]

    @property
    def total(self) -> int:
        return int(self.overall.sum())

    @property
    def accuracy(self) -> float:
        return float((self.overall[0, 0] + self.overall[1, 1]) / self.total)

    def returns_ovenbird_rate(self, stratum: str) -> float:
        """Fraction of a stratum predicted as containing the song (nan if empty)."""
        col = self.strata[:, self.stratum_names.index(stratum)]
        return float(col[0] / col.sum()) if col.sum() else math.nan

    def to_csv(self, directory: str | Path) -> None:
        directory = Path(directory)
        pct = self.overall_percent
        with open(directory / "confusion_overall.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["predicted", "actual", "count", "percent"])
            for j, actual in enumerate(ACTUAL):
                for i, pred in enumerate(PREDICTED):
                    w.writerow([pred, actual, int(self.overall[i, j]), "" if pct[j] is None else f"{pct[j][i]:.1f}"])
        pct = self.strata_percent
        with open(directory / "confusion_strata.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["predicted", "stratum", "count", "percent"])
            for j, stratum in enumerate(self.stratum_names):
                for i, pred in enumerate(PREDICTED):
                    w.writerow([pred, stratum, int(self.strata[i, j]), "" if pct[j] is None else f"{pct[j][i]:.1f}"])


def confusion(predictions: Sequence[int], labels: Sequence[int], strata: Sequence[str]) -> StratifiedConfusion:
    """Counts for predictions (1 = song present) against labels and strata."""
    pred = np.asarray(predictions, dtype=int)
    lab = np.asarray(labels, dtype=int)
    st = np.asarray(strata)
    if not (len(pred) == len(lab) == len(st)):
        raise DataError(f"misaligned inputs: {len(pred)} predictions, {len(lab)} labels, {len(st)} strata")
    unknown = set(st.tolist()) - set(STRATA)
    if unknown:
        raise DataError(f"unknown strata {sorted(unknown)}")
    row = 1 - pred  # row 0 is "returns ovenbird"
    overall = np.zeros((2, 2), dtype=np.int64)
    np.add.at(overall, (row, 1 - lab), 1)
    col = np.array([STRATA.index(s) for s in st.tolist()], dtype=int)
    strata_counts = np.zeros((2, len(STRATA)), dtype=np.int64)
    np.add.at(strata_counts, (row, col), 1)
    return StratifiedConfusion(overall, strata_counts)


@dataclass
class Bucket:
    series: str
    lo: float
    hi: float
    accuracies: list[float]  # every network in the bucket, descending

    @property
    def n(self) -> int:
        return len(self.accuracies)

    @property
    def top3(self) -> list[float]:
        return self.accuracies[:3]

    @property
    def median(self) -> float:
        return float(statistics.median(self.top3))

    @property
    def top(self) -> float:
        return self.top3[0]

    @property
    def third(self) -> float:
        return self.top3[-1]

    @property
    def error_bars(self) -> tuple[float, float]:
        return self.top - self.median, self.median - self.third

    @property
    def flagged(self) -> bool:
        return self.n < 3


@dataclass
class BucketReport:
    buckets: list[Bucket]
    points: dict[str, list[tuple[int, float]]] = field(default_factory=dict)
    footer: tuple[str, ...] = REFERENCE_NOTES

    def series(self, name: str) -> list[Bucket]:
        return [b for b in self.buckets if b.series == name]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", "bucket_lo", "bucket_hi", "median_acc", "top_acc", "third_acc", "n"])
            for b in self.buckets:
                w.writerow([b.series, repr(b.lo), repr(b.hi), repr(b.median), repr(b.top), repr(b.third), b.n])

    def to_plot_csv(self, path: str | Path) -> None:
        """Scatter markers per network plus median-of-top-3 lines per series."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["series", "kind", "params", "accuracy", "err_plus", "err_minus"])
            for name in self.points:
                for params, acc in self.points[name]:
                    w.writerow([name, "network", params, repr(acc), "", ""])
                for b in self.series(name):
                    hi, lo = b.error_bars
                    centre = math.sqrt(b.lo * b.hi)
                    w.writerow([name, "median" if not b.flagged else "median-flagged", repr(centre), repr(b.median), repr(hi), repr(lo)])

    def to_text(self) -> str:
        lines = []
        for b in self.buckets:
            hi, lo = b.error_bars
            flag = "  (fewer than 3 networks)" if b.flagged else ""
            lines.append(
                f"{b.series:<12} [{b.lo:>12.1f}, {b.hi:>12.1f})  median {100 * b.median:5.1f}%  "
                f"+{100 * hi:.1f}/-{100 * lo:.1f}  n={b.n}{flag}"
            )
        lines.append("")
        lines.extend(self.footer)
        return "\n".join(lines) + "\n"


def bucket_edges(params: Iterable[int]) -> tuple[int, int]:
    """Half-decade bucket index range ``[k_lo, k_hi)`` covering all counts."""
    ks = [math.floor(2 * math.log10(max(p, 1))) for p in params]
    return min(ks), max(ks) + 1


def bucket_report(series: Mapping[str, Sequence[tuple[int, float]]]) -> BucketReport:
    """Buckets of (parameter count, accuracy) points per input-type series."""
    points = {name: sorted((int(p), float(a)) for p, a in pts) for name, pts in series.items() if pts}
    if not points:
        raise DataError("bucket_report needs at least one non-empty series")
    k_lo, k_hi = bucket_edges(p for pts in points.values() for p, _ in pts)
    buckets = []
    for name in points:
        by_k: dict[int, list[float]] = {}
        for p, a in points[name]:
            by_k.setdefault(math.floor(2 * math.log10(max(p, 1))), []).append(a)
        for k in range(k_lo, k_hi):
            if k in by_k:
                buckets.append(Bucket(name, 10 ** (k / 2), 10 ** ((k + 1) / 2), sorted(by_k[k], reverse=True)))
    return BucketReport(buckets, points)


def archive_points(records) -> list[tuple[int, float]]:
    """(params, mean accuracy) per distinct individual of an archive."""
    return [(r.params, r.mean_accuracy) for r in records if not getattr(r, "carried", False)]
