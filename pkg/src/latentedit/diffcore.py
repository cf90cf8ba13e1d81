"""Small differentiable feed-forward models with hand-written reverse mode.

A model is a stack of dense layers ``h <- act(W h + b)`` plus an optional
linear shortcut from the input to the output (used by the nonlinear
generator).  Everything operates on numpy arrays; a 1-D input is one point,
a 2-D input is a batch of row vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DegenerateData, DimensionMismatch, NonFiniteLoss

FORMAT_VERSION = 1
ACTIVATIONS = ("identity", "tanh", "sigmoid")
FD_STEP = 1e-5

_SIG_HI = 1.0 - 2.0**-53
_SIG_LO = np.finfo(float).tiny


def sigmoid(u):
    u = np.asarray(u, dtype=float)
    e = np.exp(-np.abs(u))
    s = np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    # keep classifier scores strictly inside (0, 1)
    return np.clip(s, _SIG_LO, _SIG_HI)


def _sigmoid_prime(u):
    e = np.exp(-np.abs(u))
    return e / (1.0 + e) ** 2


def _activate(name, u):
    if name == "identity":
        return u
    if name == "tanh":
        return np.tanh(u)
    return sigmoid(u)


def _activate_prime(name, u):
    if name == "identity":
        return np.ones_like(u)
    if name == "tanh":
        return 1.0 - np.tanh(u) ** 2
    return _sigmoid_prime(u)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        w, b = _frozen(self.weight), _frozen(self.bias)
        if w.ndim != 2 or b.shape != (w.shape[0],):
            raise DimensionMismatch(f"layer weight {w.shape} incompatible with bias {b.shape}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("layer parameters must be finite")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class DiffModel:
    layers: tuple[Layer, ...]
    skip: np.ndarray | None = field(default=None)

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise DimensionMismatch("a model needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.shape[0] != nxt.weight.shape[1]:
                raise DimensionMismatch(
                    f"layer output {prev.weight.shape[0]} feeds input {nxt.weight.shape[1]}"
                )
        object.__setattr__(self, "layers", layers)
        if self.skip is not None:
            s = _frozen(self.skip)
            if s.shape != (layers[-1].weight.shape[0], layers[0].weight.shape[1]):
                raise DimensionMismatch(f"skip matrix has shape {s.shape}")
            if not np.all(np.isfinite(s)):
                raise ValueError("skip parameters must be finite")
            object.__setattr__(self, "skip", s)

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def is_classifier(self) -> bool:
        return self.output_dim == 1 and self.layers[-1].activation == "sigmoid" and self.skip is None

    def scaled_output(self, c: float) -> "DiffModel":
        """Copy with the final layer's weight and bias multiplied by ``c``."""
        last = self.layers[-1]
        new_last = Layer(last.weight * c, last.bias * c, last.activation)
        return DiffModel(self.layers[:-1] + (new_last,), self.skip)


def _as_batch(model: DiffModel, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != model.input_dim:
        raise DimensionMismatch(f"expected input dim {model.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(xb)):
        raise ValueError("input contains non-finite values")
    return xb, single


def _trace(model: DiffModel, xb):
    """Forward pass keeping pre-activations for the backward sweep."""
    pre, post = [], [xb]
    h = xb
    for layer in model.layers:
        u = h @ layer.weight.T + layer.bias
        h = _activate(layer.activation, u)
        pre.append(u)
        post.append(h)
    out = h if model.skip is None else h + xb @ model.skip.T
    return pre, post, out


def forward(model: DiffModel, x):
    xb, single = _as_batch(model, x)
    out = _trace(model, xb)[2]
    return out[0] if single else out


def logit(model: DiffModel, x):
    """Final-layer pre-activation of a scalar model (the classifier logit)."""
    xb, single = _as_batch(model, x)
    pre = _trace(model, xb)[0]
    u = pre[-1][:, 0]
    return u[0] if single else u


def _backward(model, pre, post, delta, want_params=False):
    """Reverse sweep given ``delta`` = dL/d(last pre-activation)."""
    grads = []
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        if want_params:
            grads.append((delta.T @ post[i], delta.sum(axis=0)))
        g = delta @ layer.weight
        if i > 0:
            delta = g * _activate_prime(model.layers[i - 1].activation, pre[i - 1])
    grads.reverse()
    return g, grads


def vjp(model: DiffModel, x, cotangent):
    """Vector-Jacobian product ``cotangent^T d model(x) / dx``, by reverse accumulation."""
    xb, single = _as_batch(model, x)
    ct = np.asarray(cotangent, dtype=float)
    ct = ct[None, :] if ct.ndim == 1 else ct
    if ct.shape != (xb.shape[0], model.output_dim):
        raise DimensionMismatch(f"cotangent shape {ct.shape} does not match output")
    pre, post, _ = _trace(model, xb)
    delta = ct * _activate_prime(model.layers[-1].activation, pre[-1])
    g, _ = _backward(model, pre, post, delta)
    if model.skip is not None:
        g = g + ct @ model.skip
    return g[0] if single else g


def grad_input(model: DiffModel, x, output_index: int = 0):
    """Gradient of one scalar output with respect to the input."""
    if not 0 <= output_index < model.output_dim:
        raise DimensionMismatch(f"output index {output_index} out of range")
    xb, single = _as_batch(model, x)
    ct = np.zeros((xb.shape[0], model.output_dim))
    ct[:, output_index] = 1.0
    g = vjp(model, xb, ct)
    return g[0] if single else g


# --- training ---------------------------------------------------------------


@dataclass(frozen=True)
class Architecture:
    hidden: tuple[int, ...] = (16,)
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.hidden) > 2:
            raise ValueError("at most two hidden layers are supported")
        if self.activation not in ("tanh", "sigmoid"):
            raise ValueError("hidden activation must be tanh or sigmoid")


@dataclass(frozen=True)
class TrainHyper:
    learning_rate: float = 0.5
    epochs: int = 600
    seed: int = 0
    holdout_fraction: float = 0.2


@dataclass(frozen=True)
class TrainResult:
    model: DiffModel
    train_accuracy: float
    holdout_accuracy: float
    final_loss: float


def init_classifier(input_dim: int, arch: Architecture, rng) -> DiffModel:
    dims = (input_dim,) + tuple(arch.hidden) + (1,)
    layers = []
    for i, (n_in, n_out) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        w = rng.normal(scale=1.0 / np.sqrt(n_in), size=(n_out, n_in))
        layers.append(Layer(w, np.zeros(n_out), "sigmoid" if last else arch.activation))
    return DiffModel(tuple(layers))


def bce(scores, labels) -> float:
    s = np.clip(scores, 1e-15, 1 - 1e-15)
    return float(-np.mean(labels * np.log(s) + (1 - labels) * np.log(1 - s)))


def accuracy(model: DiffModel, X, y) -> float:
    if len(y) == 0:
        return float("nan")
    pred = (forward(model, X)[:, 0] > 0.5).astype(int)
    return float(np.mean(pred == y))


def train_classifier(X, y, arch: Architecture = Architecture(), hyper: TrainHyper = TrainHyper()) -> TrainResult:
    """Full-batch gradient descent on binary cross-entropy.

    A seeded ``holdout_fraction`` of the rows is kept aside and only used
    to report ``holdout_accuracy``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionMismatch("X must be (n, d) with one label per row")
    if len(y) == 0 or np.all(y == y[0]):
        raise DegenerateData("training data must contain both labels")

    rng = np.random.default_rng(hyper.seed)
    order = rng.permutation(len(y))
    n_hold = int(round(hyper.holdout_fraction * len(y)))
    hold, train = order[:n_hold], order[n_hold:]
    Xt, yt = X[train], y[train]
    if np.all(yt == yt[0]):
        raise DegenerateData("training split contains a single class")

    model = init_classifier(X.shape[1], arch, rng)
    weights = [np.array(l.weight) for l in model.layers]
    biases = [np.array(l.bias) for l in model.layers]
    acts = [l.activation for l in model.layers]
    n = len(yt)
    loss = float("nan")
    for _ in range(hyper.epochs):
        model = DiffModel(tuple(Layer(w, b, a) for w, b, a in zip(weights, biases, acts)))
        pre, post, out = _trace(model, Xt)
        s = out[:, 0]
        loss = bce(s, yt)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss became {loss}")
        delta = ((s - yt) / n)[:, None]
        _, grads = _backward(model, pre, post, delta, want_params=True)
        for i, (gw, gb) in enumerate(grads):
            weights[i] -= hyper.learning_rate * gw
            biases[i] -= hyper.learning_rate * gb
    model = DiffModel(tuple(Layer(w, b, a) for w, b, a in zip(weights, biases, acts)))
    if not all(np.all(np.isfinite(w)) for w in weights):
        raise NonFiniteLoss("parameters diverged")
    return TrainResult(
        model=model,
        train_accuracy=accuracy(model, Xt, yt),
        holdout_accuracy=accuracy(model, X[hold], y[hold]) if n_hold else float("nan"),
        final_loss=bce(forward(model, Xt)[:, 0], yt),
    )


# --- gradient checking ------------------------------------------------------


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    probe_count: int


def relative_error(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def fd_jacobian(model: DiffModel, x, step: float = FD_STEP):
    """Central-difference Jacobian, shape (output_dim, input_dim)."""
    x = np.asarray(x, dtype=float)
    eye = np.eye(len(x)) * step
    plus = forward(model, x + eye)
    minus = forward(model, x - eye)
    return ((plus - minus) / (2 * step)).T


def gradient_check(model: DiffModel, probes: int = 32, seed: int = 0) -> GradCheckReport:
    """Compare reverse-mode Jacobians with central differences at random points."""
    if probes < 1:
        raise ValueError("probes must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(probes):
        x = rng.standard_normal(model.input_dim)
        rev = np.stack([grad_input(model, x, j) for j in range(model.output_dim)])
        worst = max(worst, float(relative_error(rev, fd_jacobian(model, x)).max()))
    return GradCheckReport(max_relative_error=worst, probe_count=probes)


# --- serialization ----------------------------------------------------------


def model_to_dict(model: DiffModel) -> dict:
    # float repr is the shortest string that round-trips exactly
    return {
        "format_version": FORMAT_VERSION,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "layers": [
            {
                "in": l.weight.shape[1],
                "out": l.weight.shape[0],
                "weight": l.weight.ravel().tolist(),
                "bias": l.bias.tolist(),
                "activation": l.activation,
            }
            for l in model.layers
        ],
        "skip": None if model.skip is None else model.skip.ravel().tolist(),
    }


def model_from_dict(d: dict) -> DiffModel:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {d.get('format_version')!r}")
    layers = tuple(
        Layer(
            np.array(l["weight"], dtype=float).reshape(l["out"], l["in"]),
            np.array(l["bias"], dtype=float),
            l["activation"],
        )
        for l in d["layers"]
    )
    skip = None
    if d.get("skip") is not None:
        skip = np.array(d["skip"], dtype=float).reshape(d["output_dim"], d["input_dim"])
    return DiffModel(layers, skip)


def dumps_model(model: DiffModel) -> str:
    return json.dumps(model_to_dict(model))


def loads_model(text: str) -> DiffModel:
    return model_from_dict(json.loads(text))


def linear_model(weight: Sequence[Sequence[float]], bias: Sequence[float], activation: str = "identity") -> DiffModel:
    """Single-layer model; handy for closed-form checks."""
    return DiffModel((Layer(np.atleast_2d(weight), np.atleast_1d(bias), activation),))
