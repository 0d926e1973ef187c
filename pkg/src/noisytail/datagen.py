"""Long-tailed dataset construction with controlled label noise.

Builds synthetic Gaussian-mixture feature datasets whose class sizes decay
exponentially from head to tail, corrupts labels symmetrically or along a
directed flip map, and persists everything as JSON Lines.  Externally
computed embeddings can be imported for real-noise data without any image
handling in this package.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError, InvalidSpecError, ParseError
from .numerics import as_vec


@dataclass
class Sample:
    id: int
    features: np.ndarray
    observed_label: int
    true_label: Optional[int] = None


@dataclass
class Dataset:
    """Ordered sample collection; ids unique, every label < num_classes."""

    samples: list[Sample]
    num_classes: int
    feature_dim: int

    def __post_init__(self):
        if self.num_classes < 1:
            raise InvalidSpecError("num_classes must be >= 1")
        if not self.samples:
            raise InvalidInputError("dataset must contain at least one sample")
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise InvalidInputError(f"duplicate sample id {s.id}")
            seen.add(s.id)
            if s.features.shape != (self.feature_dim,):
                raise InvalidInputError(
                    f"sample {s.id}: feature dim {s.features.shape} != {self.feature_dim}"
                )
            if not np.all(np.isfinite(s.features)):
                raise InvalidInputError(f"sample {s.id}: non-finite features")
            if not (0 <= s.observed_label < self.num_classes):
                raise InvalidInputError(
                    f"sample {s.id}: observed_label {s.observed_label} out of range"
                )
            if s.true_label is not None and not (0 <= s.true_label < self.num_classes):
                raise InvalidInputError(
                    f"sample {s.id}: true_label {s.true_label} out of range"
                )

    def __len__(self) -> int:
        return len(self.samples)

    def feature_matrix(self) -> np.ndarray:
        return np.stack([s.features for s in self.samples])

    def observed_labels(self) -> np.ndarray:
        return np.array([s.observed_label for s in self.samples], dtype=np.int64)

    def true_labels(self) -> Optional[np.ndarray]:
        if any(s.true_label is None for s in self.samples):
            return None
        return np.array([s.true_label for s in self.samples], dtype=np.int64)


@dataclass
class LongTailSpec:
    num_classes: int
    head_count: int
    imbalance_ratio: float

    def __post_init__(self):
        if self.num_classes < 2:
            raise InvalidSpecError("num_classes must be >= 2")
        if self.imbalance_ratio < 1:
            raise InvalidSpecError("imbalance_ratio must be >= 1")
        if self.head_count < self.imbalance_ratio:
            raise InvalidSpecError("head_count must be >= imbalance_ratio")


@dataclass
class NoiseSpec:
    kind: str  # "symmetric" | "asymmetric"
    rate: float
    flip_map: Optional[list[tuple[int, int]]] = None

    def __post_init__(self):
        if self.kind not in ("symmetric", "asymmetric"):
            raise InvalidSpecError(f"unknown noise kind {self.kind!r}")
        if not (0.0 <= self.rate < 1.0):
            raise InvalidSpecError("noise rate must be in [0, 1)")
        if self.kind == "asymmetric":
            if not self.flip_map:
                raise InvalidSpecError("asymmetric noise requires a non-empty flip_map")
            self.flip_map = [(int(a), int(b)) for a, b in self.flip_map]
            for src, dst in self.flip_map:
                if src == dst:
                    raise InvalidSpecError(f"flip pair {src}->{dst} maps a class to itself")
            sources = [a for a, _ in self.flip_map]
            if len(sources) != len(set(sources)):
                raise InvalidSpecError("flip_map has duplicate source classes")


@dataclass
class MixtureSpec:
    """Isotropic Gaussian blobs standing in for image feature extractors."""

    feature_dim: int = 16
    class_center_scale: float = 1.0
    within_class_stddev: float = 0.3

    def __post_init__(self):
        if self.feature_dim < 1:
            raise InvalidSpecError("feature_dim must be >= 1")
        if self.class_center_scale <= 0 or self.within_class_stddev <= 0:
            raise InvalidSpecError("mixture scales must be positive")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def longtail_counts(spec: LongTailSpec) -> list[int]:
    """Per-class sizes n_k = round(n_1 * IR^(-(k-1)/(K-1))), floored at 1.

    The head count is preserved exactly and the sequence is non-increasing.
    """
    k = spec.num_classes
    counts = []
    for i in range(k):
        raw = spec.head_count * spec.imbalance_ratio ** (-i / (k - 1))
        counts.append(max(1, _round_half_up(raw)))
    return counts


def class_centers(num_classes: int, mix: MixtureSpec,
                  rng: np.random.Generator) -> np.ndarray:
    """K randomly placed class centers, N(0, class_center_scale^2) per coord."""
    return rng.normal(0.0, mix.class_center_scale, size=(num_classes, mix.feature_dim))


def _draw_class_samples(centers: np.ndarray, counts: list[int], mix: MixtureSpec,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    feats, labels = [], []
    for k, n in enumerate(counts):
        x = centers[k] + rng.normal(0.0, mix.within_class_stddev,
                                    size=(n, mix.feature_dim))
        feats.append(x)
        labels.append(np.full(n, k, dtype=np.int64))
    return np.concatenate(feats), np.concatenate(labels)


def _assemble(features: np.ndarray, labels: np.ndarray, num_classes: int,
              rng: np.random.Generator) -> Dataset:
    order = rng.permutation(len(labels))
    samples = [
        Sample(id=i, features=features[j].copy(), observed_label=int(labels[j]),
               true_label=int(labels[j]))
        for i, j in enumerate(order)
    ]
    return Dataset(samples, num_classes, features.shape[1])


def synth_dataset(lt: LongTailSpec, mix: MixtureSpec, rng: np.random.Generator,
                  centers: Optional[np.ndarray] = None) -> Dataset:
    """Long-tailed Gaussian-mixture dataset; observed labels start clean."""
    if centers is None:
        centers = class_centers(lt.num_classes, mix, rng)
    counts = longtail_counts(lt)
    features, labels = _draw_class_samples(centers, counts, mix, rng)
    return _assemble(features, labels, lt.num_classes, rng)


def synth_split(lt: LongTailSpec, mix: MixtureSpec, rng: np.random.Generator,
                test_per_class: int) -> tuple[Dataset, Dataset]:
    """Imbalanced training split plus a balanced clean test split drawn from
    the same class centers."""
    if test_per_class < 1:
        raise InvalidSpecError("test_per_class must be >= 1")
    centers = class_centers(lt.num_classes, mix, rng)
    train = synth_dataset(lt, mix, rng, centers=centers)
    feats, labels = _draw_class_samples(centers, [test_per_class] * lt.num_classes,
                                        mix, rng)
    test = _assemble(feats, labels, lt.num_classes, rng)
    return train, test


# ---------------------------------------------------------------------------
# Label corruption
# ---------------------------------------------------------------------------

def inject_symmetric(ds: Dataset, rate: float, rng: np.random.Generator
                     ) -> tuple[Dataset, list[bool]]:
    """Relabel exactly round(rate*N) samples, chosen uniformly without
    replacement, each to a uniformly random *different* label.

    Returns the corrupted dataset and a per-sample mask of altered labels.
    True labels are untouched, so the measured corruption rate equals the
    requested one up to rounding of a single sample.
    """
    if not (0.0 <= rate < 1.0):
        raise InvalidSpecError("symmetric noise rate must be in [0, 1)")
    n = len(ds)
    n_noisy = _round_half_up(rate * n)
    chosen = set(rng.choice(n, size=n_noisy, replace=False).tolist()) if n_noisy else set()
    mask = [False] * n
    samples = []
    for i, s in enumerate(ds.samples):
        label = s.observed_label
        if i in chosen:
            # draw from the K-1 labels other than the current ground truth
            base = s.true_label if s.true_label is not None else s.observed_label
            offset = int(rng.integers(1, ds.num_classes))
            label = (base + offset) % ds.num_classes
            mask[i] = True
        samples.append(Sample(s.id, s.features, label, s.true_label))
    return Dataset(samples, ds.num_classes, ds.feature_dim), mask


def inject_asymmetric(ds: Dataset, rate: float, flip_map: list[tuple[int, int]],
                      rng: np.random.Generator) -> tuple[Dataset, list[bool]]:
    """Directed label flipping: within each source class of the map, a
    `rate` fraction (rounded) of its samples is relabeled to the mapped
    target.  Classes outside the map are untouched."""
    if not (0.0 <= rate < 1.0):
        raise InvalidSpecError("asymmetric noise rate must be in [0, 1)")
    if not flip_map:
        raise InvalidSpecError("asymmetric noise requires a non-empty flip_map")
    flips = {}
    for src, dst in flip_map:
        if not (0 <= src < ds.num_classes and 0 <= dst < ds.num_classes):
            raise InvalidSpecError(f"flip pair {src}->{dst} references an unknown class")
        if src == dst:
            raise InvalidSpecError(f"flip pair {src}->{dst} maps a class to itself")
        flips[int(src)] = int(dst)

    mask = [False] * len(ds)
    new_labels = [s.observed_label for s in ds.samples]
    for src, dst in flips.items():
        idx = [i for i, s in enumerate(ds.samples) if s.observed_label == src]
        n_flip = _round_half_up(rate * len(idx))
        if n_flip == 0:
            continue
        chosen = rng.choice(len(idx), size=n_flip, replace=False)
        for c in chosen:
            new_labels[idx[c]] = dst
            mask[idx[c]] = True
    samples = [
        Sample(s.id, s.features, new_labels[i], s.true_label)
        for i, s in enumerate(ds.samples)
    ]
    return Dataset(samples, ds.num_classes, ds.feature_dim), mask


def apply_noise(ds: Dataset, noise: NoiseSpec, rng: np.random.Generator
                ) -> tuple[Dataset, list[bool]]:
    if noise.kind == "symmetric":
        return inject_symmetric(ds, noise.rate, rng)
    return inject_asymmetric(ds, noise.rate, noise.flip_map, rng)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_dataset(ds: Dataset, path) -> None:
    """One JSON object per line; floats keep full double precision."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in ds.samples:
            rec = {"id": s.id, "features": s.features.tolist(),
                   "observed_label": s.observed_label}
            if s.true_label is not None:
                rec["true_label"] = s.true_label
            fh.write(json.dumps(rec) + "\n")


def load_dataset(path, num_classes: Optional[int] = None) -> Dataset:
    """Parse a JSONL dataset file.

    When `num_classes` is given, labels are bound-checked against it;
    otherwise K is inferred as max(label)+1.  Missing true_label loads as
    None (real-data mode).  Errors name the offending line.
    """
    samples = []
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"malformed JSON ({e.msg})", lineno) from e
            try:
                feats = as_vec(rec["features"], "features")
                sid = int(rec["id"])
                obs = int(rec["observed_label"])
            except (KeyError, TypeError, InvalidInputError) as e:
                raise ParseError(f"bad sample record: {e}", lineno) from e
            true = rec.get("true_label")
            true = int(true) if true is not None else None
            if dim is None:
                dim = feats.size
            elif feats.size != dim:
                raise ParseError(
                    f"feature dim {feats.size} inconsistent with {dim}", lineno)
            if num_classes is not None:
                if obs >= num_classes or obs < 0:
                    raise ParseError(f"observed_label {obs} out of range [0, {num_classes})",
                                     lineno)
                if true is not None and (true >= num_classes or true < 0):
                    raise ParseError(f"true_label {true} out of range [0, {num_classes})",
                                     lineno)
            samples.append(Sample(sid, feats, obs, true))
    if not samples:
        raise ParseError("dataset file contains no samples", None)
    k = num_classes
    if k is None:
        k = 1 + max(max(s.observed_label for s in samples),
                    max((s.true_label for s in samples if s.true_label is not None),
                        default=0))
    return Dataset(samples, k, dim)


def save_noise_mask(mask: list[bool], ids: list[int], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, noisy in zip(ids, mask):
            fh.write(json.dumps({"id": sid, "noisy": bool(noisy)}) + "\n")


def load_noise_mask(path) -> dict[int, bool]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out[int(rec["id"])] = bool(rec["noisy"])
            except (json.JSONDecodeError, KeyError, TypeError) as e:
                raise ParseError(f"bad mask record: {e}", lineno) from e
    return out


def import_embeddings(features_path, labels_path,
                      num_classes: Optional[int] = None) -> Dataset:
    """Build a Dataset from externally computed embeddings.

    `features_path` holds one JSON array per line; `labels_path` one integer
    per line.  Row counts must match.  true_label is absent (real-data mode).
    """
    rows = []
    dim = None
    with open(features_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                feats = as_vec(json.loads(line), "features")
            except (json.JSONDecodeError, InvalidInputError) as e:
                raise ParseError(f"bad feature row: {e}", lineno) from e
            if dim is None:
                dim = feats.size
            elif feats.size != dim:
                raise ParseError(f"feature dim {feats.size} inconsistent with {dim}",
                                 lineno)
            rows.append(feats)
    labels = []
    with open(labels_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError as e:
                raise ParseError(f"bad label {line!r}", lineno) from e
    if len(rows) != len(labels):
        raise ParseError(
            f"feature rows ({len(rows)}) and label rows ({len(labels)}) differ", None)
    if not rows:
        raise ParseError("embedding file contains no rows", None)
    k = num_classes if num_classes is not None else 1 + max(labels)
    samples = [Sample(i, rows[i], labels[i], None) for i in range(len(rows))]
    return Dataset(samples, k, dim)
