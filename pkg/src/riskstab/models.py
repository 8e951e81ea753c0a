"""Hypothesis classes: logistic regression and feedforward ReLU networks.

Both families are stored the same way, as a chain of affine layers
``(W, b)`` with ``W`` of shape ``(fan_in, fan_out)``; logistic regression is
the one-layer case. The training objective is mean binary cross-entropy
plus ``l2_lambda * ||W||^2`` summed over weight matrices (biases are not
penalized).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from .data import RiskDataset, Scaler, expanded_dim, polynomial_expand
from .errors import ConfigurationError, ParseError, ShapeError, SizeError

LOGISTIC = "logistic"
MLP = "mlp"

PROB_CLAMP = 1e-12
DEFAULT_L2 = 1e-4


@dataclass(frozen=True)
class ModelSpec:
    name: str
    family: str
    hidden_widths: tuple = ()
    feature_expansion: str = "none"
    optimizer: str = "lbfgs"
    l2_lambda: float = DEFAULT_L2
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if self.family == LOGISTIC and self.hidden_widths:
            raise ConfigurationError(f"{self.name}: logistic models take no hidden layers")
        if self.family == MLP and not self.hidden_widths:
            raise ConfigurationError(f"{self.name}: an mlp needs at least one hidden layer")
        if self.family not in (LOGISTIC, MLP):
            raise ConfigurationError(f"{self.name}: unknown family {self.family!r}")
        if any(w < 1 for w in self.hidden_widths):
            raise ConfigurationError(f"{self.name}: hidden widths must be positive")
        if self.feature_expansion not in ("none", "poly2"):
            raise ConfigurationError(f"{self.name}: unknown feature expansion {self.feature_expansion!r}")
        if self.optimizer not in ("lbfgs", "sgd"):
            raise ConfigurationError(f"{self.name}: unknown optimizer {self.optimizer!r}")
        if not self.l2_lambda >= 0:
            raise ConfigurationError(f"{self.name}: l2_lambda must be >= 0")
        if self.activation != "relu":
            raise ConfigurationError(f"{self.name}: only relu activation is supported")

    def with_lambda(self, l2_lambda: float) -> "ModelSpec":
        return replace(self, l2_lambda=float(l2_lambda))


PRESETS = {
    "Log-LBFGS": ModelSpec("Log-LBFGS", LOGISTIC, optimizer="lbfgs"),
    "Log-G": ModelSpec("Log-G", LOGISTIC, optimizer="lbfgs"),
    "Log-SGD": ModelSpec("Log-SGD", LOGISTIC, optimizer="sgd"),
    "Log-Poly": ModelSpec("Log-Poly", LOGISTIC, feature_expansion="poly2", optimizer="lbfgs"),
    "NN-1L": ModelSpec("NN-1L", MLP, hidden_widths=(40,), optimizer="sgd"),
    "NN-2L": ModelSpec("NN-2L", MLP, hidden_widths=(180, 180), optimizer="sgd"),
    "NN-G": ModelSpec("NN-G", MLP, hidden_widths=(180, 180), optimizer="sgd"),
}

SIMULATION_PRESETS = ("Log-LBFGS", "Log-SGD", "Log-Poly", "NN-1L", "NN-2L")


def get_preset(name: str) -> ModelSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown model preset {name!r}; choose from {', '.join(PRESETS)}"
        ) from None


def layer_shapes(spec: ModelSpec, input_dim: int):
    """``[(fan_in, fan_out), ...]`` from the (expanded) input to the single output."""
    if input_dim < 1:
        raise ShapeError("input_dim must be >= 1")
    dims = [expanded_dim(input_dim, spec.feature_expansion), *spec.hidden_widths, 1]
    return list(zip(dims[:-1], dims[1:]))


def param_count(spec: ModelSpec, input_dim: int) -> int:
    return sum(fi * fo + fo for fi, fo in layer_shapes(spec, input_dim))


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: ModelSpec
    layers: tuple
    input_dim: int
    scaler: Optional[Scaler] = None
    converged: bool = True
    n_iter: int = 0
    trace: tuple = field(default=())

    def __post_init__(self):
        frozen = []
        for W, b in self.layers:
            W = np.array(W, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            W.setflags(write=False)
            b.setflags(write=False)
            frozen.append((W, b))
        expected = layer_shapes(self.spec, self.input_dim)
        got = [(W.shape, b.shape) for W, b in frozen]
        if got != [((fi, fo), (fo,)) for fi, fo in expected]:
            raise ShapeError(f"layer shapes {got} do not chain as {expected}")
        object.__setattr__(self, "layers", tuple(frozen))

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in self.layers)

    def design(self, features) -> np.ndarray:
        """Raw features -> network input (scaling, then expansion)."""
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ShapeError(f"model expects (n, {self.input_dim}) features, got {x.shape}")
        if self.scaler is not None:
            x = self.scaler.transform(x)
        if self.spec.feature_expansion == "poly2":
            x = polynomial_expand(x, 2)
        return x

    def flat_params(self) -> np.ndarray:
        return flatten(self.layers)


def flatten(layers) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in layers])


def unflatten(theta, shapes):
    layers, k = [], 0
    for fi, fo in shapes:
        W = theta[k:k + fi * fo].reshape(fi, fo)
        k += fi * fo
        b = theta[k:k + fo]
        k += fo
        layers.append((W, b))
    return layers


def logits(layers, z) -> np.ndarray:
    h = z
    for W, b in layers[:-1]:
        h = np.maximum(h @ W + b, 0.0)
    W, b = layers[-1]
    return (h @ W + b)[:, 0]


def bce(p, y) -> float:
    """Mean binary cross-entropy with ``p`` clamped inside the logs only."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(-y * np.log(p) - (1.0 - y) * np.log1p(-p)))


def penalty(layers, l2_lambda) -> float:
    return l2_lambda * sum(float(np.sum(W * W)) for W, _ in layers)


def forward_backward(layers, z, y, l2_lambda):
    """Objective value and per-layer ``(dW, db)`` gradients on design matrix ``z``."""
    n = z.shape[0]
    acts = [z]
    pre = []
    h = z
    for W, b in layers[:-1]:
        a = h @ W + b
        pre.append(a)
        h = np.maximum(a, 0.0)
        acts.append(h)
    W, b = layers[-1]
    out = (h @ W + b)[:, 0]
    p = expit(out)
    value = bce(p, y) + penalty(layers, l2_lambda)

    delta = ((p - y) / n)[:, None]
    grads = [None] * len(layers)
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads[k] = (acts[k].T @ delta + 2.0 * l2_lambda * W, delta.sum(axis=0))
        if k:
            delta = (delta @ W.T) * (pre[k - 1] > 0.0)
    return value, grads


def predict(model: FittedModel, features) -> np.ndarray:
    """Predicted risks in (0, 1) for raw (unscaled, unexpanded) features."""
    return expit(logits(model.layers, model.design(features)))


def _check_data(dataset: RiskDataset):
    if dataset.n == 0:
        raise SizeError("loss is undefined on an empty dataset")


def loss(model: FittedModel, dataset: RiskDataset, l2_lambda: float) -> float:
    _check_data(dataset)
    p = predict(model, dataset.features)
    return bce(p, dataset.labels) + penalty(model.layers, l2_lambda)


def loss_gradient(model: FittedModel, dataset: RiskDataset, l2_lambda: float):
    """Exact gradient of :func:`loss`, shaped like ``model.layers``."""
    _check_data(dataset)
    z = model.design(dataset.features)
    _, grads = forward_backward(model.layers, z, dataset.labels.astype(np.float64), l2_lambda)
    return grads


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_parameters(spec: ModelSpec, input_dim: int, seed: int, scaler: Optional[Scaler] = None) -> FittedModel:
    """Starting point of a fit.

    MLPs: Glorot-uniform weights, zero biases. Logistic + SGD: every
    parameter i.i.d. N(0, 0.01) (sd 0.1). Logistic + L-BFGS: all zeros,
    independent of ``seed``.
    """
    shapes = layer_shapes(spec, input_dim)
    rng = np.random.default_rng(seed)
    layers = []
    if spec.family == MLP:
        for fi, fo in shapes:
            bound = glorot_bound(fi, fo)
            layers.append((rng.uniform(-bound, bound, size=(fi, fo)), np.zeros(fo)))
    elif spec.optimizer == "sgd":
        for fi, fo in shapes:
            layers.append((rng.normal(0.0, 0.1, size=(fi, fo)), rng.normal(0.0, 0.1, size=fo)))
    else:
        layers = [(np.zeros((fi, fo)), np.zeros(fo)) for fi, fo in shapes]
    return FittedModel(spec, tuple(layers), input_dim, scaler=scaler)


# ------------------------------------------------------------- serialization

_MAGIC = "# riskstab fitted-model v1"


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def dumps_model(model: FittedModel) -> str:
    """Plain-text archive: ``key = value`` header, then row-major layer blocks."""
    s = model.spec
    lines = [
        _MAGIC,
        f"name = {s.name}",
        f"family = {s.family}",
        f"hidden_widths = {' '.join(map(str, s.hidden_widths))}",
        f"feature_expansion = {s.feature_expansion}",
        f"optimizer = {s.optimizer}",
        f"l2_lambda = {s.l2_lambda!r}",
        f"activation = {s.activation}",
        f"input_dim = {model.input_dim}",
        f"converged = {str(model.converged).lower()}",
        f"n_iter = {model.n_iter}",
    ]
    if model.scaler is not None:
        lines.append(f"scaler.means = {_floats(model.scaler.means)}")
        lines.append(f"scaler.std_devs = {_floats(model.scaler.std_devs)}")
    for k, (W, b) in enumerate(model.layers):
        lines.append(f"layer {k} weight {W.shape[0]} {W.shape[1]}")
        lines.extend(_floats(row) for row in W)
        lines.append(f"layer {k} bias {b.shape[0]}")
        lines.append(_floats(b))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> FittedModel:
    lines = io.StringIO(text).read().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ParseError("not a riskstab model file")
    header = {}
    i = 1
    while i < len(lines) and not lines[i].startswith("layer "):
        key, _, value = lines[i].partition("=")
        header[key.strip()] = value.strip()
        i += 1
    try:
        spec = ModelSpec(
            name=header["name"],
            family=header["family"],
            hidden_widths=tuple(int(w) for w in header["hidden_widths"].split()),
            feature_expansion=header["feature_expansion"],
            optimizer=header["optimizer"],
            l2_lambda=float(header["l2_lambda"]),
            activation=header["activation"],
        )
        input_dim = int(header["input_dim"])
    except KeyError as exc:
        raise ParseError(f"model header is missing {exc.args[0]!r}") from None
    scaler = None
    if "scaler.means" in header:
        scaler = Scaler(
            np.array(header["scaler.means"].split(), dtype=float),
            np.array(header["scaler.std_devs"].split(), dtype=float),
        )
    layers = []
    while i < len(lines):
        parts = lines[i].split()
        rows, cols = int(parts[3]), int(parts[4])
        W = np.array([lines[i + 1 + r].split() for r in range(rows)], dtype=float).reshape(rows, cols)
        i += 1 + rows
        b = np.array(lines[i + 1].split(), dtype=float)
        i += 2
        layers.append((W, b))
    return FittedModel(
        spec,
        tuple(layers),
        input_dim,
        scaler=scaler,
        converged=header.get("converged", "true") == "true",
        n_iter=int(header.get("n_iter", 0)),
    )
