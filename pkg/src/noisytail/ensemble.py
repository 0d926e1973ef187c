"""Stage-2 training: three expert heads over a frozen backbone.

Each expert optimizes a soft cross-entropy whose logits are shifted by an
increasing power of the (soft) class counts: no shift for the head expert,
+ln(n) for the balanced expert, +2 ln(n) for the tail expert.  The shifts
act only during training; prediction fuses the experts' raw-probability
outputs.  Evaluation breaks accuracy down into many/medium/few-shot class
subgroups by training-set class size.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .datagen import Dataset
from .errors import (
    DegenerateCountError,
    InvalidInputError,
    InvalidSpecError,
    ParseError,
)
from .numerics import (
    Mlp,
    SgdMomentum,
    as_vec,
    backward_batch,
    forward_batch,
    init_mlp,
    make_rng,
    mlp_from_state,
    mlp_state,
    softmax,
    softmax_rows,
)
from .refurbish import ClassStats, SoftLabel
from .stage1 import Prediction, Stage1Model

COUNT_FLOOR = 1e-3  # applied to soft counts before ln(n)


@dataclass
class SoftClassStats:
    """Class sizes accumulated from soft labels: n_k = sum_i y_i[k]."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = as_vec(self.counts, "counts")
        if np.any(self.counts < 0):
            raise InvalidInputError("soft counts must be nonnegative")

    @property
    def num_classes(self) -> int:
        return self.counts.size


def soft_class_counts(soft_labels: list[SoftLabel]) -> SoftClassStats:
    """Sum per-class probability mass; one-hot corpora give hard counts."""
    if not soft_labels:
        raise InvalidInputError("soft_labels must be non-empty")
    k = soft_labels[0].weights.size
    counts = np.zeros(k)
    for sl in soft_labels:
        if sl.weights.size != k:
            raise InvalidInputError("inconsistent soft-label lengths")
        counts += sl.weights
    return SoftClassStats(counts)


@dataclass
class Stage2Config:
    """Expert-head training settings (reference regimen: batch 512)."""

    epochs: int = 200
    batch_size: int = 512
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    fusion: str = "prob_mean"  # or "logit_mean", for ablation

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidSpecError("bad epochs/batch_size")
        if self.lr <= 0 or not (0.0 <= self.momentum < 1.0) or self.weight_decay < 0:
            raise InvalidSpecError("bad optimizer settings")
        if self.fusion not in ("prob_mean", "logit_mean"):
            raise InvalidSpecError(f"unknown fusion rule {self.fusion!r}")


@dataclass
class SubgroupThresholds:
    """Shot-subgroup boundaries on absolute training-set class counts:
    many-shot strictly above `many_min`, few-shot strictly below `few_max`."""

    many_min: int = 100
    few_max: int = 20

    def __post_init__(self):
        if self.few_max > self.many_min:
            raise InvalidSpecError("few_max must be <= many_min")


@dataclass
class EnsembleModel:
    backbone: Mlp
    experts: list[Mlp]

    def __post_init__(self):
        if len(self.experts) != 3:
            raise InvalidInputError("exactly three expert heads are required")
        for e in self.experts:
            if e.in_dim != self.backbone.out_dim:
                raise InvalidInputError("expert input dim must match backbone output")

    @property
    def num_classes(self) -> int:
        return self.experts[0].out_dim


# ---------------------------------------------------------------------------
# Expert losses
# ---------------------------------------------------------------------------

def _soft_ce_shifted(logits: np.ndarray, soft: np.ndarray,
                     shift: np.ndarray) -> tuple[float, np.ndarray]:
    z = logits + shift
    q = softmax(z)
    with np.errstate(divide="ignore"):
        loss = -float(np.sum(soft * np.log(np.maximum(q, 1e-300))))
    return loss, q - soft


def _validate_pair(logits, soft_label: SoftLabel) -> tuple[np.ndarray, np.ndarray]:
    z = as_vec(logits, "logits")
    y = soft_label.weights
    if y.size != z.size:
        raise InvalidInputError("logits and soft label lengths differ")
    return z, y


def _validate_counts(counts: SoftClassStats, k: int) -> np.ndarray:
    if counts.num_classes != k:
        raise InvalidInputError("count vector length does not match logits")
    if np.any(counts.counts <= 0):
        raise DegenerateCountError("class counts must be strictly positive")
    return counts.counts


def e1_loss(logits, soft_label: SoftLabel) -> tuple[float, np.ndarray]:
    """Plain soft cross-entropy; gradient wrt logits is softmax(z) - y."""
    z, y = _validate_pair(logits, soft_label)
    return _soft_ce_shifted(z, y, np.zeros_like(z))


def e2_loss(logits, soft_label: SoftLabel,
            counts: SoftClassStats) -> tuple[float, np.ndarray]:
    """Balanced-softmax style: logits shifted by +ln(n_k) during the loss."""
    z, y = _validate_pair(logits, soft_label)
    n = _validate_counts(counts, z.size)
    return _soft_ce_shifted(z, y, np.log(n))


def e3_loss(logits, soft_label: SoftLabel,
            counts: SoftClassStats) -> tuple[float, np.ndarray]:
    """Tail-focused variant: shift +ln(n_k^2), twice the balanced shift."""
    z, y = _validate_pair(logits, soft_label)
    n = _validate_counts(counts, z.size)
    return _soft_ce_shifted(z, y, 2.0 * np.log(n))


def _expert_batch(logits: np.ndarray, Y: np.ndarray,
                  shift: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean shifted soft-CE over a batch, gradient of the mean wrt logits."""
    q = softmax_rows(logits + shift)
    with np.errstate(divide="ignore"):
        losses = -np.sum(Y * np.log(np.maximum(q, 1e-300)), axis=1)
    return float(losses.mean()), (q - Y) / logits.shape[0]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def train_stage2(ds: Dataset, soft_labels: list[SoftLabel],
                 stage1_model: Stage1Model, cfg: Stage2Config
                 ) -> tuple[EnsembleModel, list[dict]]:
    """Train the three heads jointly over the frozen stage-1 encoder.

    Soft class counts are computed once before training (floored at
    COUNT_FLOOR so ln(n) stays finite); each head receives only its own
    loss gradient, summed per batch.  The backbone is copied from the
    stage-1 model and never updated.
    """
    n = len(ds)
    if len(soft_labels) != n:
        raise InvalidInputError(
            f"soft label count {len(soft_labels)} != dataset size {n}")
    if cfg.batch_size > n:
        raise InvalidSpecError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")

    k = ds.num_classes
    for sl in soft_labels:
        if sl.weights.size != k:
            raise InvalidInputError("soft label length does not match num_classes")

    rng = make_rng(cfg.seed)
    backbone = stage1_model.encoder.copy()
    experts = [init_mlp([backbone.out_dim, k], rng) for _ in range(3)]
    model = EnsembleModel(backbone, experts)

    counts = soft_class_counts(soft_labels)
    n_floor = np.maximum(counts.counts, COUNT_FLOOR)
    shifts = [np.zeros(k), np.log(n_floor), 2.0 * np.log(n_floor)]

    # frozen backbone: features can be precomputed once
    V, _ = forward_batch(backbone, ds.feature_matrix())
    Y = np.stack([sl.weights for sl in soft_labels])

    opt = SgdMomentum([p for e in experts for p in e.params()], lr=cfg.lr,
                      momentum=cfg.momentum, weight_decay=cfg.weight_decay)

    log = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads = []
            for e_i, (expert, shift) in enumerate(zip(experts, shifts)):
                logits, cache = forward_batch(expert, V[idx])
                loss, g_logits = _expert_batch(logits, Y[idx], shift)
                g, _ = backward_batch(expert, cache, g_logits)
                grads.extend(g.params())
                sums[e_i] += loss
            opt.step(grads)
            n_batches += 1
        log.append({"epoch": epoch,
                    "e1": sums[0] / n_batches,
                    "e2": sums[1] / n_batches,
                    "e3": sums[2] / n_batches})
    return model, log


# ---------------------------------------------------------------------------
# Prediction and evaluation
# ---------------------------------------------------------------------------

def _expert_logits(model: EnsembleModel, X: np.ndarray) -> list[np.ndarray]:
    v, _ = forward_batch(model.backbone, X)
    return [forward_batch(e, v)[0] for e in model.experts]


def ensemble_predict_batch(model: EnsembleModel, X: np.ndarray,
                           fusion: str = "prob_mean") -> np.ndarray:
    """Fused class probabilities for a feature matrix."""
    logits = _expert_logits(model, X)
    if fusion == "logit_mean":
        return softmax_rows(np.mean(logits, axis=0))
    if fusion != "prob_mean":
        raise InvalidSpecError(f"unknown fusion rule {fusion!r}")
    return np.mean([softmax_rows(z) for z in logits], axis=0)


def ensemble_predict(model: EnsembleModel, features,
                     fusion: str = "prob_mean") -> Prediction:
    """Fuse the three experts; raw logits only, the count shifts are
    training-time reweightings."""
    x = as_vec(features, "features")
    if x.size != model.backbone.in_dim:
        raise InvalidInputError(
            f"feature dim {x.size} != backbone input dim {model.backbone.in_dim}")
    probs = ensemble_predict_batch(model, x[None, :], fusion)[0]
    # log-probabilities act as the logits so argmax and softmax stay consistent
    logits = np.log(np.maximum(probs, 1e-300))
    return Prediction(logits, probs, int(np.argmax(probs)))


def subgroup_of(count: float, thresholds: SubgroupThresholds) -> str:
    if count > thresholds.many_min:
        return "many"
    if count < thresholds.few_max:
        return "few"
    return "medium"


@dataclass
class EvalReport:
    overall_accuracy: float
    subgroup_accuracy: dict          # ensemble accuracy per subgroup (None if empty)
    expert_overall: list[float]
    expert_subgroup: list[dict]
    subgroup_classes: dict           # subgroup -> sorted class indices
    subgroup_counts: dict            # subgroup -> test sample count
    confusion: np.ndarray            # ensemble counts[true, predicted]
    thresholds: SubgroupThresholds
    fusion: str

    def to_json_dict(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "subgroup_accuracy": self.subgroup_accuracy,
            "expert_overall": self.expert_overall,
            "expert_subgroup": self.expert_subgroup,
            "subgroup_classes": self.subgroup_classes,
            "subgroup_counts": self.subgroup_counts,
            "confusion": self.confusion.tolist(),
            "thresholds": asdict(self.thresholds),
            "fusion": self.fusion,
        }


def _subgroup_accuracy(correct: np.ndarray, labels: np.ndarray,
                       classes: set[int]) -> Optional[float]:
    mask = np.isin(labels, sorted(classes))
    if not mask.any():
        return None
    return float(correct[mask].mean())


def evaluate(model: EnsembleModel, test_ds: Dataset, train_counts: ClassStats,
             thresholds: SubgroupThresholds,
             fusion: str = "prob_mean") -> EvalReport:
    """Accuracy report over a clean test split.

    Subgroup membership (many/medium/few) is decided by *training-set*
    class sizes, not test counts.  Per-expert accuracies use each head's
    raw logits alone.
    """
    k = test_ds.num_classes
    if train_counts.num_classes != k:
        raise InvalidInputError("training counts do not match test num_classes")
    labels = test_ds.observed_labels()
    present = np.unique(labels)
    absent = [int(c) for c in present if train_counts.counts[c] == 0]
    if absent:
        raise InvalidInputError(f"classes {absent} absent from training counts")

    groups: dict[str, set[int]] = {"many": set(), "medium": set(), "few": set()}
    for c in range(k):
        groups[subgroup_of(float(train_counts.counts[c]), thresholds)].add(c)

    X = test_ds.feature_matrix()
    expert_logits = _expert_logits(model, X)
    fused = ensemble_predict_batch(model, X, fusion)
    fused_pred = np.argmax(fused, axis=1)
    fused_correct = (fused_pred == labels).astype(float)

    expert_overall, expert_subgroup = [], []
    for z in expert_logits:
        pred = np.argmax(z, axis=1)
        correct = (pred == labels).astype(float)
        expert_overall.append(float(correct.mean()))
        expert_subgroup.append({
            g: _subgroup_accuracy(correct, labels, cls)
            for g, cls in groups.items()
        })

    confusion = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(labels, fused_pred):
        confusion[t, p] += 1

    return EvalReport(
        overall_accuracy=float(fused_correct.mean()),
        subgroup_accuracy={g: _subgroup_accuracy(fused_correct, labels, cls)
                           for g, cls in groups.items()},
        expert_overall=expert_overall,
        expert_subgroup=expert_subgroup,
        subgroup_classes={g: sorted(cls) for g, cls in groups.items()},
        subgroup_counts={g: int(np.isin(labels, sorted(cls)).sum())
                         for g, cls in groups.items()},
        confusion=confusion,
        thresholds=thresholds,
        fusion=fusion,
    )


def report_csv(report: EvalReport, model_names: Optional[list[str]] = None) -> str:
    """Four-row accuracy table: model, many, medium, few, all."""
    names = model_names or ["expert1", "expert2", "expert3", "ensemble"]

    def fmt(v):
        return "" if v is None else f"{v:.4f}"

    lines = ["model,many,medium,few,all"]
    for i in range(3):
        sub = report.expert_subgroup[i]
        lines.append(",".join([names[i], fmt(sub["many"]), fmt(sub["medium"]),
                               fmt(sub["few"]), fmt(report.expert_overall[i])]))
    sub = report.subgroup_accuracy
    lines.append(",".join([names[3], fmt(sub["many"]), fmt(sub["medium"]),
                           fmt(sub["few"]), fmt(report.overall_accuracy)]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def backbone_hash(net: Mlp) -> str:
    payload = json.dumps(mlp_state(net), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def stage2_checkpoint_dict(model: EnsembleModel, cfg: Stage2Config,
                           stage1_checkpoint_name: str) -> dict:
    return {
        "kind": "stage2",
        "config": asdict(cfg),
        "backbone_hash": backbone_hash(model.backbone),
        "stage1_checkpoint": stage1_checkpoint_name,
        "experts": [mlp_state(e) for e in model.experts],
    }


def save_stage2_checkpoint(model: EnsembleModel, cfg: Stage2Config,
                           stage1_checkpoint_name: str, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stage2_checkpoint_dict(model, cfg, stage1_checkpoint_name),
                  fh, sort_keys=True)
        fh.write("\n")


def load_stage2_checkpoint(path, backbone: Mlp
                           ) -> tuple[EnsembleModel, Stage2Config]:
    """Rebuild the ensemble from its checkpoint plus the referenced backbone.

    The stored hash must match the supplied backbone's weights.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            state = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"malformed checkpoint JSON ({e.msg})", e.lineno) from e
    if state.get("kind") != "stage2":
        raise ParseError("not a stage-2 checkpoint", None)
    if backbone_hash(backbone) != state["backbone_hash"]:
        raise InvalidInputError(
            "backbone weights do not match the checkpoint's backbone_hash; "
            f"expected the encoder from {state.get('stage1_checkpoint')!r}")
    experts = [mlp_from_state(s) for s in state["experts"]]
    return EnsembleModel(backbone.copy(), experts), Stage2Config(**state["config"])
