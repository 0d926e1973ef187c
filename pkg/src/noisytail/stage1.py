"""Stage-1 training: contrastive representation learning plus a
pre-screening classifier.

A single shared encoder serves both branches of the contrastive pair; the
query branch is evaluated under stop-gradient (values only, no parameter
updates flow through it) while the key branch receives the contrastive
gradients.  A FIFO feature queue supplies extra negatives.  The classifier
head is trained on detached encoder features with a noise-tolerant
cross-entropy (`banc_loss`), so labels never influence the representation.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from .datagen import Dataset
from .errors import InvalidInputError, InvalidSpecError, ParseError
from .numerics import (
    Mlp,
    SgdMomentum,
    as_vec,
    backward_batch,
    forward_batch,
    init_mlp,
    l2_normalize,
    make_rng,
    mlp_from_state,
    mlp_state,
    softmax,
    softmax_rows,
)

SCE_LOG_ZERO = -4.0  # conventional clamp for log(0) in the symmetric term


@dataclass
class Stage1Config:
    """Hyperparameters for stage 1.

    Defaults follow the reference regimen (lr 0.02, momentum 0.9, weight
    decay 5e-4, batch 128, 200 epochs, tau 0.2, alpha 0.2, c 6); desk-scale
    runs override epochs/batch via the pipeline profile.
    """

    tau: float = 0.2
    alpha: float = 0.2
    c: float = 6.0
    queue_capacity: int = 1024
    embed_dim: int = 32
    repr_dim: int = 32
    encoder_hidden: int = 64
    proj_hidden: int = 64
    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 5e-4
    aug_noise_stddev: float = 0.1
    aug_dropout_prob: float = 0.1
    seed: int = 0
    include_positive: bool = False  # InfoNCE-style denominator, for ablation
    activation: str = "tanh"
    init_scale: float = 1.0

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidSpecError("tau must be positive")
        if not (0.0 <= self.alpha <= 1.0):
            raise InvalidSpecError("alpha must be in [0, 1]")
        if self.c < 0:
            raise InvalidSpecError("c must be >= 0")
        if self.queue_capacity < 1:
            raise InvalidSpecError("queue_capacity must be >= 1")
        for name in ("embed_dim", "repr_dim", "encoder_hidden", "proj_hidden",
                     "batch_size"):
            if getattr(self, name) < 1:
                raise InvalidSpecError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise InvalidSpecError("epochs must be >= 0")
        if self.lr <= 0 or not (0.0 <= self.momentum < 1.0) or self.weight_decay < 0:
            raise InvalidSpecError("bad optimizer settings")
        if self.aug_noise_stddev < 0 or not (0.0 <= self.aug_dropout_prob <= 1.0):
            raise InvalidSpecError("bad augmentation settings")
        if self.init_scale <= 0:
            raise InvalidSpecError("init_scale must be positive")


@dataclass
class Prediction:
    """Classifier output for one sample; probs = softmax(logits) and
    predicted_class = argmax with ties broken toward the lowest index."""

    logits: np.ndarray
    probs: np.ndarray
    predicted_class: int


def prediction_from_logits(logits: np.ndarray) -> Prediction:
    logits = as_vec(logits, "logits")
    return Prediction(logits, softmax(logits), int(np.argmax(logits)))


@dataclass
class Stage1Model:
    encoder: Mlp
    projection: Mlp
    classifier: Mlp

    def __post_init__(self):
        if self.classifier.in_dim != self.encoder.out_dim:
            raise InvalidInputError("classifier input dim must match encoder output dim")
        if self.projection.in_dim != self.encoder.out_dim:
            raise InvalidInputError("projection input dim must match encoder output dim")

    @property
    def num_classes(self) -> int:
        return self.classifier.out_dim


class FeatureQueue:
    """FIFO ring buffer of unit-norm embeddings used as extra negatives."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidSpecError("queue capacity must be >= 1")
        self._capacity = capacity
        self._buf: deque[np.ndarray] = deque(maxlen=capacity)

    @property
    def capacity(self) -> int:
        return self._capacity

    def __len__(self) -> int:
        return len(self._buf)

    def push(self, z: np.ndarray) -> None:
        z = as_vec(z, "embedding")
        self._buf.append(l2_normalize(z))

    def push_batch(self, Z: np.ndarray) -> None:
        for row in np.asarray(Z, dtype=np.float64):
            self.push(row)

    def entries(self) -> list[np.ndarray]:
        """Oldest-to-newest snapshot."""
        return [z.copy() for z in self._buf]

    def as_matrix(self) -> Optional[np.ndarray]:
        if not self._buf:
            return None
        return np.stack(list(self._buf))


# ---------------------------------------------------------------------------
# Augmentation (feature-space stand-in for image augmentations)
# ---------------------------------------------------------------------------

def augment(features: np.ndarray, cfg: Stage1Config,
            rng: np.random.Generator) -> np.ndarray:
    """Additive Gaussian noise followed by independent coordinate zeroing."""
    x = np.asarray(features, dtype=np.float64)
    out = x + rng.normal(0.0, cfg.aug_noise_stddev, size=x.shape)
    keep = rng.random(x.shape) >= cfg.aug_dropout_prob
    return out * keep


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def _check_prob_vector(p: np.ndarray, name: str = "probs") -> np.ndarray:
    p = as_vec(p, name)
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise InvalidInputError(f"{name} is not a probability vector")
    return p


def _check_onehot(y: np.ndarray, k: int) -> np.ndarray:
    y = as_vec(y, "onehot")
    if y.size != k:
        raise InvalidInputError(f"onehot length {y.size} != {k}")
    if not np.all((y == 0.0) | (y == 1.0)) or y.sum() != 1.0:
        raise InvalidInputError("onehot must have exactly one entry equal to 1")
    return y


def contrastive_loss(zq: np.ndarray, zk: np.ndarray, negatives,
                     tau: float, include_positive: bool = False
                     ) -> tuple[float, np.ndarray, np.ndarray]:
    """Queue-based contrastive loss for one anchor.

    loss = -(zq.zk)/tau + logsumexp_j((zq.z_j)/tau) over the negative set
    (optionally also the positive).  zq is treated as a constant
    (stop-gradient); returns (loss, grad wrt zk, grads wrt negatives).
    Because the positive is excluded from the denominator by default, the
    loss is not bounded below by zero.
    """
    if tau <= 0:
        raise InvalidSpecError("tau must be positive")
    zq = as_vec(zq, "zq")
    zk = as_vec(zk, "zk")
    negs = np.asarray(negatives, dtype=np.float64)
    if negs.ndim == 1:
        negs = negs[None, :]
    if negs.size == 0:
        raise InvalidInputError("contrastive loss requires at least one negative")
    if negs.shape[1] != zq.size or zk.size != zq.size:
        raise InvalidInputError("embedding dimensions do not match")

    s_pos = float(zq @ zk) / tau
    s_neg = (negs @ zq) / tau
    den = np.concatenate(([s_pos], s_neg)) if include_positive else s_neg
    m = den.max()
    e = np.exp(den - m)
    lse = m + np.log(e.sum())
    loss = -s_pos + lse

    p = e / e.sum()
    if include_positive:
        grad_zk = (-1.0 + p[0]) * zq / tau
        p_neg = p[1:]
    else:
        grad_zk = -zq / tau
        p_neg = p
    grad_negs = p_neg[:, None] * zq[None, :] / tau
    return float(loss), grad_zk, grad_negs


def sce_loss(probs: np.ndarray, onehot: np.ndarray,
             log_zero: float = SCE_LOG_ZERO) -> tuple[float, np.ndarray]:
    """Symmetric cross-entropy with log(0) clamped to `log_zero`.

    Returns the loss and its gradient with respect to the underlying
    logits (probs being their softmax image).
    """
    p = _check_prob_vector(probs)
    y = _check_onehot(onehot, p.size)
    log_y = np.where(y > 0, 0.0, log_zero)
    with np.errstate(divide="ignore"):
        ce = -float(np.log(p @ y))  # only the labeled entry enters the sum
    reverse = -float(np.sum(log_y * p))
    grad = (p - y) - p * (log_y - float(log_y @ p))
    return ce + reverse, grad


def banc_loss(probs: np.ndarray, onehot: np.ndarray,
              c: float) -> tuple[float, np.ndarray]:
    """Noise-tolerant balanced cross-entropy: cross-entropy plus a linear
    penalty c on the probability mass assigned off-label.

    loss = -sum_k y_k log p_k + c * sum_k (1-y_k) p_k.  With c=0 this is
    exactly cross-entropy.  Returns (loss, gradient wrt logits).
    """
    if c < 0:
        raise InvalidSpecError("c must be >= 0")
    p = _check_prob_vector(probs)
    y = _check_onehot(onehot, p.size)
    p_y = float(p @ y)
    with np.errstate(divide="ignore"):
        ce = -math.log(p_y) if p_y > 0 else math.inf
    loss = ce + c * (1.0 - p_y)
    grad = (p - y) + c * p * (p_y - y)
    return loss, grad


def cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    p = _check_prob_vector(probs)
    y = _check_onehot(onehot, p.size)
    p_y = float(p @ y)
    return -math.log(p_y) if p_y > 0 else math.inf


def stage1_loss(con: float, banc: float, alpha: float) -> float:
    """Blend of the contrastive and classifier terms: (1-alpha)*con + alpha*banc."""
    if not (0.0 <= alpha <= 1.0):
        raise InvalidSpecError("alpha must be in [0, 1]")
    return (1.0 - alpha) * con + alpha * banc


# ---------------------------------------------------------------------------
# Batched internals
# ---------------------------------------------------------------------------

def _banc_batch(logits: np.ndarray, Y: np.ndarray, c: float
                ) -> tuple[float, np.ndarray]:
    """Mean loss over the batch and the gradient of that mean wrt logits."""
    P = softmax_rows(logits)
    p_y = np.sum(P * Y, axis=1)
    ce = -np.log(np.maximum(p_y, 1e-300))
    losses = ce + c * (1.0 - p_y)
    grad = ((P - Y) + c * P * (p_y[:, None] - Y)) / logits.shape[0]
    return float(losses.mean()), grad


def _contrastive_batch(Zq: np.ndarray, Zk: np.ndarray,
                       queue_mat: Optional[np.ndarray], tau: float,
                       include_positive: bool) -> tuple[float, np.ndarray]:
    """Mean contrastive loss over a batch of anchor/key pairs.

    Negatives for anchor i are the other in-batch keys plus the queue
    snapshot.  Returns the mean loss and the gradient of that mean with
    respect to the key embeddings (queue entries are constants, and the
    query side is a constant by stop-gradient).
    """
    b = Zq.shape[0]
    n_queue = 0 if queue_mat is None else queue_mat.shape[0]
    if (b - 1) + n_queue < 1:
        raise InvalidInputError("contrastive loss requires at least one negative")
    S = (Zq @ Zk.T) / tau
    pos = np.diag(S).copy()
    blocks = [S]
    if n_queue:
        blocks.append((Zq @ queue_mat.T) / tau)
    den = np.concatenate(blocks, axis=1)
    if not include_positive:
        den[np.arange(b), np.arange(b)] = -np.inf

    m = den.max(axis=1, keepdims=True)
    e = np.exp(den - m)
    z = e.sum(axis=1)
    lse = m[:, 0] + np.log(z)
    losses = -pos + lse

    P = e / z[:, None]
    Pb = P[:, :b]  # coefficients on in-batch keys
    G_Zk = (Pb.T @ Zq) / tau
    G_Zk -= Zq / tau  # the positive term: dloss_i/dzk_i has -zq_i/tau
    return float(losses.mean()), G_Zk / b


def _normalize_backward(raw: np.ndarray, unit: np.ndarray,
                        grad_unit: np.ndarray) -> np.ndarray:
    """Backprop through row-wise L2 normalization z = u/||u||."""
    norms = np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
    inner = np.sum(grad_unit * unit, axis=1, keepdims=True)
    return (grad_unit - inner * unit) / norms


def stage1_batch_gradients(model: Stage1Model, X: np.ndarray, Y: np.ndarray,
                           queue_mat: Optional[np.ndarray], cfg: Stage1Config,
                           rng: np.random.Generator,
                           query_model: Optional[Stage1Model] = None):
    """One training step's gradients, without applying them.

    The query branch runs on `query_model` (defaults to `model`) and is
    used for its values only; swapping in a frozen copy must not change
    the result, which is the stop-gradient contract.  Returns
    (grads-by-component dict, metrics dict, detached unit-norm keys).
    """
    qm = query_model if query_model is not None else model
    X_q = augment(X, cfg, rng)
    X_k = augment(X, cfg, rng)

    # query branch: values only
    vq, _ = forward_batch(qm.encoder, X_q)
    zq_raw, _ = forward_batch(qm.projection, vq)
    Zq = l2_normalize(zq_raw)

    # key branch: receives the contrastive gradient
    vk, enc_cache = forward_batch(model.encoder, X_k)
    zk_raw, proj_cache = forward_batch(model.projection, vk)
    Zk = l2_normalize(zk_raw)

    con_loss, g_Zk = _contrastive_batch(Zq, Zk, queue_mat, cfg.tau,
                                        cfg.include_positive)
    g_zk_raw = _normalize_backward(zk_raw, Zk, (1.0 - cfg.alpha) * g_Zk)
    proj_grads, g_vk = backward_batch(model.projection, proj_cache, g_zk_raw)
    enc_grads, _ = backward_batch(model.encoder, enc_cache, g_vk)

    # classifier on detached features of the raw inputs
    v_detached, _ = forward_batch(model.encoder, X)
    logits, clf_cache = forward_batch(model.classifier, v_detached)
    banc_mean, g_logits = _banc_batch(logits, Y, cfg.c)
    clf_grads, _ = backward_batch(model.classifier, clf_cache,
                                  cfg.alpha * g_logits)

    grads = {"encoder": enc_grads, "projection": proj_grads, "classifier": clf_grads}
    metrics = {
        "con": con_loss,
        "banc": banc_mean,
        "total": stage1_loss(con_loss, banc_mean, cfg.alpha),
    }
    return grads, metrics, Zk


# ---------------------------------------------------------------------------
# Training and inference
# ---------------------------------------------------------------------------

def build_stage1_model(feature_dim: int, num_classes: int, cfg: Stage1Config,
                       rng: np.random.Generator) -> Stage1Model:
    encoder = init_mlp([feature_dim, cfg.encoder_hidden, cfg.repr_dim], rng,
                       cfg.activation, cfg.init_scale)
    projection = init_mlp([cfg.repr_dim, cfg.proj_hidden, cfg.embed_dim], rng,
                          cfg.activation, cfg.init_scale)
    classifier = init_mlp([cfg.repr_dim, num_classes], rng, cfg.activation,
                          cfg.init_scale)
    return Stage1Model(encoder, projection, classifier)


def predict_batch(model: Stage1Model, X: np.ndarray) -> np.ndarray:
    v, _ = forward_batch(model.encoder, X)
    logits, _ = forward_batch(model.classifier, v)
    return logits


def predict(model: Stage1Model, features: np.ndarray) -> Prediction:
    """Classifier logits/probabilities for one feature vector."""
    x = as_vec(features, "features")
    if x.size != model.encoder.in_dim:
        raise InvalidInputError(
            f"feature dim {x.size} != encoder input dim {model.encoder.in_dim}")
    return prediction_from_logits(predict_batch(model, x[None, :])[0])


def predict_all(model: Stage1Model, ds: Dataset) -> list[Prediction]:
    logits = predict_batch(model, ds.feature_matrix())
    return [prediction_from_logits(row) for row in logits]


def train_stage1(ds: Dataset, cfg: Stage1Config
                 ) -> tuple[Stage1Model, list[Prediction], list[dict]]:
    """Joint contrastive + classifier training over the noisy dataset.

    Per batch: two augmented views are formed; the query side is evaluated
    under stop-gradient; key embeddings receive the contrastive gradient
    and are enqueued after the step.  The classifier head sees detached
    features only.  Returns the model, a Prediction per training sample in
    dataset order, and a per-epoch loss log.
    """
    n = len(ds)
    if n < 2:
        raise InvalidSpecError("training requires at least 2 samples")
    if cfg.batch_size > n:
        raise InvalidSpecError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")

    rng = make_rng(cfg.seed)
    model = build_stage1_model(ds.feature_dim, ds.num_classes, cfg, rng)
    X = ds.feature_matrix()
    labels = ds.observed_labels()
    Y = np.zeros((n, ds.num_classes))
    Y[np.arange(n), labels] = 1.0

    params = (model.encoder.params() + model.projection.params()
              + model.classifier.params())
    opt = SgdMomentum(params, lr=cfg.lr, momentum=cfg.momentum,
                      weight_decay=cfg.weight_decay)
    queue = FeatureQueue(cfg.queue_capacity)

    log = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_metrics = {"con": 0.0, "banc": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads, metrics, keys = stage1_batch_gradients(
                model, X[idx], Y[idx], queue.as_matrix(), cfg, rng)
            flat = (grads["encoder"].params() + grads["projection"].params()
                    + grads["classifier"].params())
            opt.step(flat)
            queue.push_batch(keys)
            for k in epoch_metrics:
                epoch_metrics[k] += metrics[k]
            n_batches += 1
        log.append({"epoch": epoch,
                    **{k: v / n_batches for k, v in epoch_metrics.items()}})

    return model, predict_all(model, ds), log


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def stage1_checkpoint_dict(model: Stage1Model, cfg: Stage1Config) -> dict:
    return {
        "kind": "stage1",
        "config": asdict(cfg),
        "encoder": mlp_state(model.encoder),
        "projection": mlp_state(model.projection),
        "classifier": mlp_state(model.classifier),
    }


def save_stage1_checkpoint(model: Stage1Model, cfg: Stage1Config, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stage1_checkpoint_dict(model, cfg), fh, sort_keys=True)
        fh.write("\n")


def load_stage1_checkpoint(path) -> tuple[Stage1Model, Stage1Config]:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            state = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"malformed checkpoint JSON ({e.msg})", e.lineno) from e
    if state.get("kind") != "stage1":
        raise ParseError("not a stage-1 checkpoint", None)
    model = Stage1Model(
        encoder=mlp_from_state(state["encoder"]),
        projection=mlp_from_state(state["projection"]),
        classifier=mlp_from_state(state["classifier"]),
    )
    return model, Stage1Config(**state["config"])


def save_predictions(ids: list[int], preds: list[Prediction], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, p in zip(ids, preds):
            fh.write(json.dumps({
                "id": sid,
                "logits": p.logits.tolist(),
                "probs": p.probs.tolist(),
                "predicted_class": p.predicted_class,
            }) + "\n")


def load_predictions(path) -> dict[int, Prediction]:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pred = Prediction(
                    logits=as_vec(rec["logits"], "logits"),
                    probs=as_vec(rec["probs"], "probs"),
                    predicted_class=int(rec["predicted_class"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, InvalidInputError) as e:
                raise ParseError(f"bad prediction record: {e}", lineno) from e
            out[int(rec["id"])] = pred
    return out


def align_predictions(ds: Dataset, preds_by_id: dict[int, Prediction]
                      ) -> list[Prediction]:
    """Order a prediction map to match the dataset; ids must correspond 1:1."""
    if len(preds_by_id) != len(ds):
        raise InvalidInputError(
            f"prediction count {len(preds_by_id)} != dataset size {len(ds)}")
    out = []
    for s in ds.samples:
        if s.id not in preds_by_id:
            raise InvalidInputError(f"no prediction for sample id {s.id}")
        out.append(preds_by_id[s.id])
    return out
