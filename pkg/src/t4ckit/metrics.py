"""Competition metrics: weighted masked cross-entropy, ETA L1 and loss decompositions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import CC_CLASSES, MASKED_CLASS, CongestionLabel

N_CLASSES = len(CC_CLASSES)


@dataclass(frozen=True)
class ClassWeights:
    """Macro-averaged weights for classes 1..3 and the training counts they came from."""

    w: tuple[float, float, float]
    counts: tuple[int, int, int]

    def __post_init__(self):
        if len(self.w) != N_CLASSES or any(not x > 0 for x in self.w):
            raise ValueError(f"class weights must be 3 positive values, got {self.w}")

    @property
    def total(self) -> int:
        return sum(self.counts)

    def exact(self) -> tuple[Fraction, Fraction, Fraction]:
        n = self.total
        return tuple(Fraction(n, N_CLASSES * c) for c in self.counts)

    def array(self) -> np.ndarray:
        return np.asarray(self.w, dtype=float)

    def to_dict(self) -> dict:
        return {"weights": list(self.w), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> ClassWeights:
        w = tuple(float(x) for x in d["weights"])
        counts = tuple(int(x) for x in d.get("counts", (0, 0, 0)))
        return cls(w, counts)


def class_counts(labels: Iterable[int] | np.ndarray) -> tuple[int, int, int]:
    y = np.asarray(list(labels) if not isinstance(labels, np.ndarray) else labels, dtype=np.int64)
    return tuple(int(np.count_nonzero(y == c)) for c in CC_CLASSES)


def compute_class_weights(training_labels: Iterable[int] | np.ndarray | Sequence[int]) -> ClassWeights:
    """w_c = N / (3 * N_c) over the non-masked training labels."""
    counts = class_counts(training_labels)
    return weights_from_counts(counts)


def weights_from_counts(counts: Sequence[int]) -> ClassWeights:
    counts = tuple(int(c) for c in counts)
    if len(counts) != N_CLASSES:
        raise ValueError("need one count per class 1..3")
    if any(c <= 0 for c in counts):
        raise ValueError(f"every class needs at least one training label, got counts {counts}")
    n = sum(counts)
    return ClassWeights(tuple(n / (N_CLASSES * c) for c in counts), counts)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass(frozen=True)
class CrossEntropyResult:
    loss: float
    k: float
    per_sample: np.ndarray  # l_n, zero for masked samples


def weighted_masked_ce(logits, targets, weights: ClassWeights | Sequence[float]) -> CrossEntropyResult:
    """Weighted cross-entropy over classes 1..3, ignoring samples with target 0.

    logits has shape (N, 3) for classes 1..3; targets are in {0, 1, 2, 3}.
    The loss is normalised by k, the summed weight of the unmasked samples.
    """
    logits = np.asarray(logits, dtype=float)
    y = np.asarray(targets, dtype=np.int64)
    w = weights.array() if isinstance(weights, ClassWeights) else np.asarray(weights, dtype=float)
    if logits.ndim != 2 or logits.shape[1] != N_CLASSES or logits.shape[0] != y.shape[0]:
        raise ValueError(f"logits must have shape (N, 3) matching targets, got {logits.shape} vs {y.shape}")
    if np.any((y < 0) | (y > N_CLASSES)):
        raise ValueError("targets must be in 0..3")
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    unmasked = y != MASKED_CLASS
    k_terms = np.zeros(len(y))
    k_terms[unmasked] = w[y[unmasked] - 1]
    k = float(np.sum(k_terms))
    if k == 0:
        raise ValueError("no classified samples")
    per_sample = np.zeros(len(y))
    if unmasked.any():
        lsm = log_softmax(logits[unmasked])
        idx = y[unmasked] - 1
        per_sample[unmasked] = -w[idx] * lsm[np.arange(len(idx)), idx]
    return CrossEntropyResult(float(np.sum(per_sample)) / k, k, per_sample)


def l1_eta(pred: Mapping, labels: Mapping) -> float:
    """Mean absolute error over every labelled key; all keys must be predicted."""
    if not labels:
        raise ValueError("no ETA labels")
    missing = [k for k in labels if k not in pred]
    if missing:
        raise KeyError(f"{len(missing)} labelled keys have no prediction, e.g. {missing[0]}")
    diffs = np.fromiter((abs(pred[k] - labels[k]) for k in labels), dtype=float, count=len(labels))
    return float(np.sum(diffs)) / len(diffs)


def overall_score(city_losses: Sequence[float], allow_any_count: bool = False) -> float:
    """Arithmetic mean of the per-city losses (three cities unless overridden)."""
    if len(city_losses) != 3 and not allow_any_count:
        raise ValueError(f"expected 3 city losses, got {len(city_losses)}")
    if not city_losses:
        raise ValueError("no city losses")
    return math.fsum(city_losses) / len(city_losses)


@dataclass(frozen=True)
class ClassLoss:
    cls: int
    n: int
    summed: float
    mean: float | None


def loss_by_ground_truth(per_sample, targets, k: float) -> dict[int, ClassLoss]:
    """Per true class c: summed loss (1/k) * sum(l_n) and mean loss (1/N_c) * sum(l_n)."""
    l = np.asarray(per_sample, dtype=float)
    y = np.asarray(targets, dtype=np.int64)
    out = {}
    for c in CC_CLASSES:
        mask = y == c
        n_c = int(mask.sum())
        s = float(np.sum(l[mask]))
        out[c] = ClassLoss(c, n_c, s / k, s / n_c if n_c else None)
    return out


def weight_scaling_gap(by_class: Mapping[int, ClassLoss], weights: ClassWeights) -> dict[int, float | None]:
    """meanloss(c) / (w_c * 3) - summedloss(c); zero when test and training class fractions agree."""
    out = {}
    for c, cl in by_class.items():
        out[c] = None if cl.mean is None else cl.mean / (weights.w[c - 1] * N_CLASSES) - cl.summed
    return out


@dataclass(frozen=True)
class CoverageBin:
    lo: float
    hi: float
    n: int
    mean: float | None
    summed: float
    cumulative: float


def loss_by_coverage(per_sample, sample_coverage, k: float, bin_width: float = 0.05, masked=None) -> list[CoverageBin]:
    """Losses binned by the coverage of each sample's edge, right-open bins (coverage 1.0 joins the last).

    `masked` marks samples excluded from counts and means (their l_n is zero anyway).
    """
    l = np.asarray(per_sample, dtype=float)
    cov = np.asarray(sample_coverage, dtype=float)
    if np.any((cov < 0) | (cov > 1)):
        raise ValueError("coverage must lie in [0, 1]")
    keep = np.ones(len(l), dtype=bool) if masked is None else ~np.asarray(masked, dtype=bool)
    n_bins = int(round(1.0 / bin_width))
    idx = np.minimum((cov / bin_width + 1e-9).astype(int), n_bins - 1)
    bins = []
    cum = 0.0
    for b in range(n_bins):
        sel = (idx == b) & keep
        n = int(sel.sum())
        s = float(np.sum(l[sel]))
        cum += s / k
        bins.append(CoverageBin(b * bin_width, (b + 1) * bin_width, n, s / n if n else None, s / k, cum))
    return bins


def edge_coverage(labels: Iterable[CongestionLabel]) -> dict[tuple[int, int], float]:
    """Fraction of labelled bins with a non-zero class, per edge."""
    total: dict[tuple[int, int], int] = {}
    hit: dict[tuple[int, int], int] = {}
    for x in labels:
        uv = (x.u, x.v)
        total[uv] = total.get(uv, 0) + 1
        hit[uv] = hit.get(uv, 0) + (x.cc != MASKED_CLASS)
    return {uv: hit[uv] / total[uv] for uv in sorted(total)}


def city_coverage(labels: Iterable[CongestionLabel]) -> float:
    cov = edge_coverage(labels)
    return math.fsum(cov.values()) / len(cov) if cov else 0.0


@dataclass
class ScoreReport:
    city: str
    loss: float
    n: int
    n_c: dict[int, int]
    k: float
    by_class: dict[int, ClassLoss]
    by_coverage: list[CoverageBin]
    coverage: float

    def to_dict(self) -> dict:
        return {
            "city": self.city,
            "loss": self.loss,
            "N": self.n,
            "N_c": {str(c): v for c, v in self.n_c.items()},
            "k": self.k,
            "coverage": self.coverage,
            "by_class": {
                str(c): {"n": cl.n, "summed_loss": cl.summed, "mean_loss": cl.mean} for c, cl in self.by_class.items()
            },
            "by_coverage": [
                {"lo": round(b.lo, 6), "hi": round(b.hi, 6), "n": b.n, "mean_loss": b.mean, "summed_loss": b.summed,
                 "cumulative_loss": b.cumulative}
                for b in self.by_coverage
            ],
        }


def score_cc(city: str, labels: Sequence[CongestionLabel], predictions: Mapping, weights: ClassWeights,
             bin_width: float = 0.05) -> ScoreReport:
    """Score one city's CC predictions, keyed by (u, v, day, t), against its labels."""
    keys = [(x.u, x.v, x.day, x.t) for x in labels]
    missing = [k for k, x in zip(keys, labels) if x.cc != MASKED_CLASS and k not in predictions]
    if missing:
        raise KeyError(f"{len(missing)} classified samples have no prediction, e.g. {missing[0]}")
    y = np.fromiter((x.cc for x in labels), dtype=np.int64, count=len(labels))
    logits = np.asarray([predictions.get(k, (0.0, 0.0, 0.0)) for k in keys], dtype=float).reshape(-1, N_CLASSES)
    ce = weighted_masked_ce(logits, y, weights)
    cov = edge_coverage(labels)
    sample_cov = np.fromiter((cov[(x.u, x.v)] for x in labels), dtype=float, count=len(labels))
    by_class = loss_by_ground_truth(ce.per_sample, y, ce.k)
    return ScoreReport(
        city=city,
        loss=ce.loss,
        n=int(np.count_nonzero(y != MASKED_CLASS)),
        n_c={c: by_class[c].n for c in CC_CLASSES},
        k=ce.k,
        by_class=by_class,
        by_coverage=loss_by_coverage(ce.per_sample, sample_cov, ce.k, bin_width, masked=y == MASKED_CLASS),
        coverage=math.fsum(cov.values()) / len(cov) if cov else 0.0,
    )
