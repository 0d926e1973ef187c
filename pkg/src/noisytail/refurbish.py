"""Soft-label refurbishment bridging the two training stages.

When the pre-screening prediction disagrees with the observed label, the
label is not discarded or overwritten: the predicted probability vector is
blended with the observed one-hot label, weighted by prediction confidence
times class rarity, and renormalized.  Agreement keeps the observed label
exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .datagen import Dataset
from .errors import InvalidInputError, InvalidSpecError, ParseError
from .numerics import as_vec
from .stage1 import Prediction


@dataclass
class ClassStats:
    """Per-class sample counts with their proportions of the corpus."""

    counts: np.ndarray
    total: float
    proportions: np.ndarray

    def __post_init__(self):
        self.counts = as_vec(self.counts, "counts")
        self.proportions = as_vec(self.proportions, "proportions")
        if np.any(self.counts < 0):
            raise InvalidInputError("counts must be nonnegative")
        if abs(self.counts.sum() - self.total) > 1e-6:
            raise InvalidInputError("counts must sum to the total")

    @property
    def num_classes(self) -> int:
        return self.counts.size


def class_stats_from_counts(counts) -> ClassStats:
    counts = as_vec(counts, "counts")
    total = float(counts.sum())
    if total <= 0:
        raise InvalidInputError("counts must have positive total")
    return ClassStats(counts, total, counts / total)


@dataclass
class RefurbishConfig:
    sigma: float = 0.2

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidSpecError("sigma must be positive")


@dataclass
class SoftLabel:
    """A full probability vector over classes used as a training target."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = as_vec(self.weights, "soft label")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise InvalidInputError("soft label must be a probability vector")


def onehot_soft_label(label: int, num_classes: int) -> SoftLabel:
    w = np.zeros(num_classes)
    w[label] = 1.0
    return SoftLabel(w)


@dataclass
class RefurbishRecord:
    id: int
    rho: float       # predicted probability of the observed label
    gamma: float     # rarity of the observed class
    weight: float    # rho * gamma
    soft_label: SoftLabel
    changed: bool    # prediction disagreed with the observed label


def class_proportions(ds: Dataset) -> ClassStats:
    """Hard occurrence counts of observed labels and their proportions."""
    counts = np.bincount(ds.observed_labels(), minlength=ds.num_classes).astype(float)
    return class_stats_from_counts(counts)


def rarity(h: float, sigma: float) -> float:
    """Zero-mean bell curve over the class proportion: exp(-h^2/sigma^2).

    Near 1 for vanishing proportions, decaying fast past h ~ sigma.
    """
    if not (0.0 <= h <= 1.0):
        raise InvalidInputError(f"proportion h={h} outside [0, 1]")
    if sigma <= 0:
        raise InvalidSpecError("sigma must be positive")
    return math.exp(-(h * h) / (sigma * sigma))


def refurbish_one(pred: Prediction, observed: int, stats: ClassStats,
                  cfg: RefurbishConfig, sample_id: int = 0) -> RefurbishRecord:
    """Refurbish a single sample's label.

    Agreement (predicted class == observed) keeps the exact one-hot label.
    Otherwise the new label is (probs + w * onehot) / (1 + w) with
    w = rho * gamma: the prediction's confidence in the observed label
    times the observed class's rarity.
    """
    probs = as_vec(pred.probs, "probs")
    k = probs.size
    if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-6:
        raise InvalidInputError("prediction probs is not a probability vector")
    if not (0 <= observed < k):
        raise InvalidInputError(f"observed label {observed} out of range [0, {k})")
    if stats.num_classes != k:
        raise InvalidInputError("class stats length does not match probs")

    rho = float(probs[observed])
    gamma = rarity(float(stats.proportions[observed]), cfg.sigma)
    w = rho * gamma
    if pred.predicted_class == observed:
        soft = onehot_soft_label(observed, k)
        changed = False
    else:
        s = probs.copy()
        s[observed] += w
        soft = SoftLabel(s / s.sum())
        changed = True
    return RefurbishRecord(sample_id, rho, gamma, w, soft, changed)


def refurbish_dataset(ds: Dataset, preds: list[Prediction], cfg: RefurbishConfig
                      ) -> tuple[list[SoftLabel], list[RefurbishRecord]]:
    """Refurbish the whole corpus; one record per sample, none dropped.

    `preds` must align positionally with `ds.samples` (use
    `stage1.align_predictions` when loading from a file).
    """
    if len(preds) != len(ds):
        raise InvalidInputError(
            f"prediction count {len(preds)} != dataset size {len(ds)}")
    stats = class_proportions(ds)
    softs, records = [], []
    for s, p in zip(ds.samples, preds):
        rec = refurbish_one(p, s.observed_label, stats, cfg, sample_id=s.id)
        softs.append(rec.soft_label)
        records.append(rec)
    return softs, records


def summarize_records(records: list[RefurbishRecord]) -> dict:
    changed = [r for r in records if r.changed]
    frac = len(changed) / len(records) if records else 0.0
    mean_w = float(np.mean([r.weight for r in changed])) if changed else 0.0
    return {"fraction_changed": frac, "mean_weight_changed": mean_w}


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_records(records: list[RefurbishRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "id": r.id,
                "soft_label": r.soft_label.weights.tolist(),
                "changed": r.changed,
                "rho": r.rho,
                "gamma": r.gamma,
                "weight": r.weight,
            }) + "\n")


def load_records(path) -> list[RefurbishRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(RefurbishRecord(
                    id=int(rec["id"]),
                    rho=float(rec["rho"]),
                    gamma=float(rec["gamma"]),
                    weight=float(rec["weight"]),
                    soft_label=SoftLabel(as_vec(rec["soft_label"], "soft_label")),
                    changed=bool(rec["changed"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, InvalidInputError) as e:
                raise ParseError(f"bad refurbishment record: {e}", lineno) from e
    return out


def align_records(ds: Dataset, records: list[RefurbishRecord]
                  ) -> list[RefurbishRecord]:
    """Order records to match the dataset; ids must correspond 1:1."""
    by_id = {r.id: r for r in records}
    if len(by_id) != len(records):
        raise InvalidInputError("duplicate record ids")
    if len(by_id) != len(ds):
        raise InvalidInputError(
            f"record count {len(by_id)} != dataset size {len(ds)}")
    out = []
    for s in ds.samples:
        if s.id not in by_id:
            raise InvalidInputError(f"no refurbishment record for sample id {s.id}")
        out.append(by_id[s.id])
    return out
