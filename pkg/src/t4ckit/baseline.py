"""Historic-distribution baseline, logit re-weighting and comparison reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .metrics import ClassWeights, edge_coverage
from .model import CC_CLASSES, MASKED_CLASS, CongestionLabel, EtaLabel

HOURS = 24
SMOOTHING = 1.0


def hour_of(t: int) -> int:
    return t // 4


@dataclass
class HistoricDistribution:
    """Class counts per (edge, hour of day) over classified bins, classes 1..3."""

    counts: dict[tuple[int, int], np.ndarray]  # (u, v) -> (24, 3) int array
    alpha: float = SMOOTHING
    city_hour: np.ndarray = field(init=False)
    city_global: np.ndarray = field(init=False)

    def __post_init__(self):
        self.city_hour = np.zeros((HOURS, 3), dtype=np.int64)
        for arr in self.counts.values():
            self.city_hour += arr
        self.city_global = self.city_hour.sum(axis=0)

    def n(self, edge: tuple[int, int], hour: int) -> int:
        arr = self.counts.get(edge)
        return 0 if arr is None else int(arr[hour].sum())

    def probabilities(self, edge: tuple[int, int], hour: int) -> np.ndarray | None:
        """Empirical class frequencies, or None without classified samples."""
        arr = self.counts.get(edge)
        if arr is None or arr[hour].sum() == 0:
            return None
        return arr[hour] / arr[hour].sum()

    def smoothed(self, edge: tuple[int, int], hour: int) -> np.ndarray:
        """Additively smoothed distribution, falling back edge-hour -> city-hour -> city-global."""
        arr = self.counts.get(edge)
        for c in (None if arr is None else arr[hour], self.city_hour[hour], self.city_global):
            if c is not None and c.sum() > 0:
                return (c + self.alpha) / (c.sum() + 3 * self.alpha)
        return np.full(3, 1.0 / 3.0)


def fit_historic(train_labels: Iterable[CongestionLabel], alpha: float = SMOOTHING) -> HistoricDistribution:
    counts: dict[tuple[int, int], np.ndarray] = {}
    for x in train_labels:
        arr = counts.setdefault((x.u, x.v), np.zeros((HOURS, 3), dtype=np.int64))
        if x.cc != MASKED_CLASS:
            arr[hour_of(x.t), x.cc - 1] += 1
    return HistoricDistribution(dict(sorted(counts.items())), alpha)


def predict_historic(dist: HistoricDistribution, edge: tuple[int, int], t: int) -> np.ndarray:
    """Logits (log smoothed probabilities) for classes 1..3 at bin t."""
    return np.log(dist.smoothed(edge, hour_of(t)))


@dataclass(frozen=True)
class ReweightedProbabilities:
    p: np.ndarray  # (N, 3)
    log_b: np.ndarray  # (N,), log of the per-sample normalisation factor

    @property
    def b(self) -> np.ndarray:
        return np.exp(self.log_b)


def reweight_logits(logits, weights: ClassWeights | Sequence[float]) -> ReweightedProbabilities:
    """p[n, c] = b[n] * exp(logits[n, c] * w[c]), normalised per sample."""
    y = np.atleast_2d(np.asarray(logits, dtype=float))
    w = weights.array() if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("logits must be finite")
    z = y * w
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    return ReweightedProbabilities(e / s, -(m + np.log(s))[:, 0])


def softmax(logits) -> np.ndarray:
    y = np.atleast_2d(np.asarray(logits, dtype=float))
    e = np.exp(y - y.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    """Pearson correlation, None when either side has zero variance or fewer than 2 points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 2:
        return None
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx <= 1e-12 * max(1.0, len(x)) or sy <= 1e-12 * max(1.0, len(y)):
        return None
    return float(dx @ dy) / (sx * sy)


@dataclass
class HistoricComparison:
    keys: list
    historic: np.ndarray  # (M, 3)
    predicted: np.ndarray  # (M, 3)
    correlation: dict[int, float | None]

    def to_dict(self) -> dict:
        return {"n": len(self.keys), "pearson": {str(c): r for c, r in self.correlation.items()}}

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["u", "v", "day", "t", "class", "historic_p", "predicted_p"])
            for (u, v, day, t), h, p in zip(self.keys, self.historic, self.predicted):
                for i, c in enumerate(CC_CLASSES):
                    w.writerow([u, v, day or "", t, c, repr(float(h[i])), repr(float(p[i]))])


def compare_to_historic(
    predictions: Mapping[tuple, Sequence[float]],
    dist: HistoricDistribution,
    weights: ClassWeights | Sequence[float] | None = None,
    hour_range: tuple[int, int] = (14, 18),
) -> HistoricComparison:
    """Pair re-weighted predicted probabilities with the edge-hour historic distribution.

    predictions map (u, v, day, t) to logits. Only samples whose hour lies in
    [hour_range[0], hour_range[1]) and whose edge-hour has history are used.
    Without weights the plain softmax is compared.
    """
    lo, hi = hour_range
    keys, hist, logits = [], [], []
    for key in sorted(predictions, key=lambda k: (k[0], k[1], k[2] or "", k[3])):
        u, v, _, t = key
        if not lo <= hour_of(t) < hi:
            continue
        h = dist.probabilities((u, v), hour_of(t))
        if h is None:
            continue
        keys.append(key)
        hist.append(h)
        logits.append(predictions[key])
    if not keys:
        return HistoricComparison([], np.zeros((0, 3)), np.zeros((0, 3)), {c: None for c in CC_CLASSES})
    hist_arr = np.asarray(hist)
    pred = reweight_logits(logits, weights).p if weights is not None else softmax(logits)
    corr = {c: pearson(hist_arr[:, i], pred[:, i]) for i, c in enumerate(CC_CLASSES)}
    return HistoricComparison(keys, hist_arr, pred, corr)


@dataclass
class DistributionReport:
    fractions: dict[str, dict[str, float]]  # city -> {"0".."3": fraction of all labels, "1".."3" among classified}
    coverage_hist: dict[str, list[int]]
    bin_width: float

    def to_dict(self) -> dict:
        return {"bin_width": self.bin_width, "fractions": self.fractions, "coverage_histogram": self.coverage_hist}

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["city", "coverage_lo", "coverage_hi", "n_edges"])
            for city, hist in self.coverage_hist.items():
                for i, n in enumerate(hist):
                    w.writerow([city, round(i * self.bin_width, 6), round((i + 1) * self.bin_width, 6), n])


def label_distribution_report(
    labels_by_city: Mapping[str, Sequence[CongestionLabel]], bin_width: float = 0.05
) -> DistributionReport:
    n_bins = int(round(1.0 / bin_width))
    fractions, hists = {}, {}
    for city, labels in labels_by_city.items():
        counts = np.zeros(4, dtype=np.int64)
        for x in labels:
            counts[x.cc] += 1
        classified = counts[1:].sum()
        frac = {f"all_{c}": (counts[c] / counts.sum() if counts.sum() else 0.0) for c in range(4)}
        frac.update({str(c): (counts[c] / classified if classified else 0.0) for c in CC_CLASSES})
        fractions[city] = {k: float(v) for k, v in frac.items()}
        hist = [0] * n_bins
        for cov in edge_coverage(labels).values():
            hist[min(int(cov / bin_width + 1e-9), n_bins - 1)] += 1
        hists[city] = hist
    return DistributionReport(fractions, hists, bin_width)


@dataclass
class HistoricEta:
    by_bin: dict[tuple[str, int], float]
    by_ss: dict[str, float]
    overall: float

    def predict(self, ssid: str, t: int) -> float:
        if (ssid, t) in self.by_bin:
            return self.by_bin[(ssid, t)]
        return self.by_ss.get(ssid, self.overall)


def fit_eta_historic(labels: Iterable[EtaLabel]) -> HistoricEta:
    """Mean training ETA per (super-segment, bin), with per-super-segment and global fallbacks."""
    sums: dict[tuple[str, int], list[float]] = {}
    for x in labels:
        sums.setdefault((x.ssid, x.t), []).append(x.eta_s)
    by_bin = {k: math.fsum(v) / len(v) for k, v in sorted(sums.items())}
    per_ss: dict[str, list[float]] = {}
    for (ssid, _), v in sums.items():
        per_ss.setdefault(ssid, []).extend(v)
    by_ss = {k: math.fsum(v) / len(v) for k, v in sorted(per_ss.items())}
    allv = [x for v in sums.values() for x in v]
    return HistoricEta(by_bin, by_ss, math.fsum(allv) / len(allv) if allv else 0.0)
