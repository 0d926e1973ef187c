"""Minimal dense numerics used by every other module.

Vectors are plain 1-D float64 numpy arrays.  The multilayer perceptron
carries hand-coded gradients (no autodiff graph), and `finite_diff_grad`
is the independent oracle every analytic gradient in the package is
tested against.  All arithmetic is 64-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericError

Vec = np.ndarray

REL_ERR_FLOOR = 1e-8


def as_vec(values, name: str = "vector") -> Vec:
    """Coerce to a finite 1-D float64 array, validating shape and entries."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return v


def make_rng(seed: int) -> np.random.Generator:
    """Seeded counter-based generator; equal seeds yield identical streams."""
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)


def softmax(logits: Vec) -> Vec:
    """Max-shifted softmax, stable for logit magnitudes up to ~1e4."""
    z = as_vec(logits, "logits")
    if z.size == 0:
        raise InvalidInputError("softmax of empty vector")
    e = np.exp(z - z.max())
    return e / e.sum()


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise max-shifted softmax for a 2-D batch of logits."""
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def l2_normalize(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Scale to unit L2 norm (rows of a matrix when axis=-1 on 2-D input)."""
    n = np.linalg.norm(v, axis=axis, keepdims=True)
    return v / np.maximum(n, 1e-12)


def relative_error(a: float, b: float) -> float:
    """|a-b| / max(1e-8, |a|, |b|); the floor guards tiny denominators."""
    return abs(a - b) / max(REL_ERR_FLOOR, abs(a), abs(b))


# ---------------------------------------------------------------------------
# Multilayer perceptron with manual backprop
# ---------------------------------------------------------------------------

_ACTIVATIONS = {
    # value and derivative expressed through the post-activation a
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "logistic": (lambda z: 1.0 / (1.0 + np.exp(-z)), lambda a: a * (1.0 - a)),
}


@dataclass
class Mlp:
    """Fully connected net: affine + smooth activation per hidden layer,
    final layer affine.  weights[l] has shape (dims[l+1], dims[l])."""

    layer_dims: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        dims = list(self.layer_dims)
        if len(dims) < 2 or any(d <= 0 for d in dims):
            raise InvalidInputError(f"bad layer dims {dims}")
        if self.activation not in _ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise InvalidInputError("parameter count does not match layer dims")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
                raise InvalidInputError(
                    f"layer {l}: weight shape {w.shape} / bias shape {b.shape} "
                    f"inconsistent with dims {dims}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidInputError(f"layer {l}: non-finite parameters")

    @property
    def in_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def out_dim(self) -> int:
        return self.layer_dims[-1]

    def params(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed order (weights then bias per layer)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp(
            layer_dims=list(self.layer_dims),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            activation=self.activation,
        )


@dataclass
class MlpGrads:
    """Parameter gradients mirroring an Mlp's weight/bias lists."""

    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.d_weights, self.d_biases):
            out.extend((w, b))
        return out


def init_mlp(layer_dims: list[int], rng: np.random.Generator,
             activation: str = "tanh", weight_scale: float = 1.0) -> Mlp:
    """Random init: N(0, (weight_scale/sqrt(fan_in))^2) weights, zero biases.

    weight_scale < 1 keeps first-layer preactivations out of the saturated
    region when inputs have above-unit variance.
    """
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        weights.append(rng.normal(0.0, weight_scale / math.sqrt(fan_in),
                                  size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(list(layer_dims), weights, biases, activation)


def forward_batch(net: Mlp, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Batched forward pass.  Returns (outputs, cache of per-layer inputs).

    X is (N, in_dim); the cache stores each layer's input matrix plus, for
    hidden layers, the post-activation needed by the derivative.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != net.in_dim:
        raise InvalidInputError(
            f"input shape {X.shape} incompatible with first layer dim {net.in_dim}"
        )
    act, _ = _ACTIVATIONS[net.activation]
    cache = [X]
    a = X
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if l == last else act(z)
        cache.append(a)
    return a, cache


def backward_batch(net: Mlp, cache: list[np.ndarray],
                   upstream: np.ndarray) -> tuple[MlpGrads, np.ndarray]:
    """Gradients of sum_n (output_n . upstream_n) from a forward cache.

    Parameter gradients are summed over the batch; also returns the
    gradient with respect to the input matrix.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != (cache[0].shape[0], net.out_dim):
        raise InvalidInputError(
            f"upstream shape {upstream.shape} incompatible with output dim {net.out_dim}"
        )
    _, dact = _ACTIVATIONS[net.activation]
    d_weights = [np.empty(0)] * len(net.weights)
    d_biases = [np.empty(0)] * len(net.biases)
    delta = upstream
    for l in range(len(net.weights) - 1, -1, -1):
        a_in = cache[l]
        d_weights[l] = delta.T @ a_in
        d_biases[l] = delta.sum(axis=0)
        delta = delta @ net.weights[l]
        if l > 0:
            delta = delta * dact(cache[l])
    return MlpGrads(d_weights, d_biases), delta


def mlp_forward(net: Mlp, x: Vec) -> Vec:
    """Single-vector forward pass."""
    x = as_vec(x, "input")
    y, _ = forward_batch(net, x[None, :])
    return y[0]


def mlp_backward(net: Mlp, x: Vec, upstream_grad: Vec) -> tuple[MlpGrads, Vec]:
    """Gradients of (output . upstream_grad) wrt all parameters and the input."""
    x = as_vec(x, "input")
    g = as_vec(upstream_grad, "upstream_grad")
    if g.size != net.out_dim:
        raise InvalidInputError(
            f"upstream_grad length {g.size} != output dim {net.out_dim}"
        )
    _, cache = forward_batch(net, x[None, :])
    grads, gx = backward_batch(net, cache, g[None, :])
    return grads, gx[0]


# ---------------------------------------------------------------------------
# Finite-difference oracle and gradient checking
# ---------------------------------------------------------------------------

def finite_diff_grad(f, x: Vec, eps: float = 1e-5) -> Vec:
    """Central-difference gradient estimate of a scalar function."""
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    x = as_vec(x, "x")
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += eps
        xm[i] -= eps
        fp, fm = float(f(xp)), float(f(xm))
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"non-finite function value near coordinate {i}")
        g[i] = (fp - fm) / (2.0 * eps)
    return g


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_coordinate: int
    passed: bool


def gradient_check(f, x: Vec, analytic_grad: Vec, eps: float = 1e-5,
                   tol: float = 1e-4) -> GradCheckReport:
    """Compare an analytic gradient against finite differences coordinate-wise."""
    numeric = finite_diff_grad(f, x, eps)
    analytic = as_vec(analytic_grad, "analytic_grad")
    if analytic.size != numeric.size:
        raise InvalidInputError("gradient length mismatch")
    errs = [relative_error(a, n) for a, n in zip(analytic, numeric)]
    worst = int(np.argmax(errs)) if errs else 0
    worst_err = errs[worst] if errs else 0.0
    return GradCheckReport(worst_err, worst, worst_err < tol)


# ---------------------------------------------------------------------------
# SGD with momentum + weight decay
# ---------------------------------------------------------------------------

@dataclass
class SgdMomentum:
    """In-place SGD over a fixed parameter list: v = mu*v + (g + wd*p); p -= lr*v."""

    params: list[np.ndarray]
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidInputError("lr must be positive")
        if not self.velocity:
            self.velocity = [np.zeros_like(p) for p in self.params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise InvalidInputError("gradient list does not match parameter list")
        for p, v, g in zip(self.params, self.velocity, grads):
            np.multiply(v, self.momentum, out=v)
            v += g + self.weight_decay * p
            p -= self.lr * v


# ---------------------------------------------------------------------------
# Serialization helpers (JSON-safe nested lists)
# ---------------------------------------------------------------------------

def mlp_state(net: Mlp) -> dict:
    """JSON-serializable snapshot: layer dims plus flat weight/bias arrays."""
    return {
        "layer_dims": list(net.layer_dims),
        "activation": net.activation,
        "weights": [w.ravel().tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def mlp_from_state(state: dict) -> Mlp:
    dims = [int(d) for d in state["layer_dims"]]
    weights = []
    for l, flat in enumerate(state["weights"]):
        weights.append(np.asarray(flat, dtype=np.float64).reshape(dims[l + 1], dims[l]))
    biases = [np.asarray(b, dtype=np.float64) for b in state["biases"]]
    return Mlp(dims, weights, biases, state.get("activation", "tanh"))
