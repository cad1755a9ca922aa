"""Classifiers, gradients and autoencoder hooks.

Built-in models are small dense networks evaluated with numpy. They expose
exact vector-Jacobian products, so the solver never needs finite differences
for them. Anything else (an external process, an arbitrary callable) falls
back to :func:`finite_diff_gradient`.
"""
from __future__ import annotations

import abc
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, UnsupportedGradientError

PROB = "prob"
LOGIT = "logit"

RELU = "relu"
IDENTITY = "identity"
_ACT_ALIASES = {"relu": RELU, "id": IDENTITY, "identity": IDENTITY}

# log-probabilities stand in for logits of probability-only black boxes
_LOG_FLOOR = 1e-300


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Classifier(abc.ABC):
    """Anything that maps a feature vector to one score per class.

    Subclasses set ``n_classes``, ``n_features`` and ``score_semantics``
    (``"prob"`` or ``"logit"``) and implement :meth:`predict_batch`.
    """

    n_classes: int
    n_features: int
    score_semantics: str = PROB
    differentiable: bool = False

    @abc.abstractmethod
    def predict_batch(self, V: np.ndarray) -> np.ndarray:
        """Scores for each row of `V`, shape (len(V), n_classes)."""

    def predict(self, v) -> np.ndarray:
        return self.predict_batch(np.asarray(v, dtype=np.float64)[None, :])[0]

    def logits_batch(self, V: np.ndarray) -> np.ndarray:
        scores = self.predict_batch(V)
        if self.score_semantics == LOGIT:
            return scores
        return np.log(np.maximum(scores, _LOG_FLOOR))

    def logits(self, v) -> np.ndarray:
        return self.logits_batch(np.asarray(v, dtype=np.float64)[None, :])[0]


class CallableClassifier(Classifier):
    """Wrap a plain ``f(batch) -> scores`` function as a black-box classifier."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], n_features: int, n_classes: int,
                 score_semantics: str = PROB):
        self.fn = fn
        self.n_features = n_features
        self.n_classes = n_classes
        self.score_semantics = score_semantics

    def predict_batch(self, V):
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        out = np.asarray(self.fn(V), dtype=np.float64)
        if out.shape != (V.shape[0], self.n_classes):
            raise DimensionError(f"callable returned shape {out.shape}, expected {(V.shape[0], self.n_classes)}")
        return out


@dataclass(frozen=True, eq=False)
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = IDENTITY


class MLPClassifier(Classifier):
    """Dense feed-forward network; softmax is applied last under ``prob`` semantics."""

    differentiable = True

    def __init__(self, layers: Sequence, score_semantics: str = PROB):
        if not layers:
            raise DimensionError("an MLP needs at least one layer")
        if score_semantics not in (PROB, LOGIT):
            raise ValueError(f"unknown score semantics {score_semantics!r}")
        built = []
        for layer in layers:
            if not isinstance(layer, Layer):
                w, b, act = layer
                layer = Layer(w, b, act)
            w = np.array(layer.weight, dtype=np.float64, ndmin=2)
            b = np.array(layer.bias, dtype=np.float64).reshape(-1)
            act = _ACT_ALIASES.get(layer.activation)
            if act is None:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if b.shape[0] != w.shape[0]:
                raise DimensionError(f"bias length {b.shape[0]} does not match weight rows {w.shape[0]}")
            if built and built[-1].weight.shape[0] != w.shape[1]:
                raise DimensionError(
                    f"layer {len(built)} expects {w.shape[1]} inputs, previous layer emits {built[-1].weight.shape[0]}"
                )
            w.setflags(write=False)
            b.setflags(write=False)
            built.append(Layer(w, b, act))
        self.layers = tuple(built)
        self.n_features = built[0].weight.shape[1]
        self.n_classes = built[-1].weight.shape[0]
        self.score_semantics = score_semantics

    def _check(self, V):
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        if V.shape[1] != self.n_features:
            raise DimensionError(f"model expects {self.n_features} features, got {V.shape[1]}")
        return V

    def _forward(self, V):
        """Return final pre-softmax outputs and the pre-activations of every layer."""
        pre = []
        h = V
        for layer in self.layers:
            a = h @ layer.weight.T + layer.bias
            pre.append(a)
            h = np.maximum(a, 0.0) if layer.activation == RELU else a
        return h, pre

    def logits_batch(self, V):
        return self._forward(self._check(V))[0]

    def predict_batch(self, V):
        z = self.logits_batch(V)
        return softmax(z) if self.score_semantics == PROB else z

    def vjp(self, v, cotangent, space: str = "scores") -> np.ndarray:
        """Gradient of ``cotangent . out(v)`` where out is the declared scores or the logits."""
        V = self._check(v)
        z, pre = self._forward(V)
        g = np.asarray(cotangent, dtype=np.float64)[None, :]
        if space == "scores" and self.score_semantics == PROB:
            p = softmax(z)
            g = p * g - p * (p * g).sum(axis=1, keepdims=True)
        for layer, a in zip(reversed(self.layers), reversed(pre)):
            if layer.activation == RELU:
                g = g * (a > 0)
            g = g @ layer.weight
        return g[0]

    def to_dict(self) -> dict:
        inv = {RELU: "relu", IDENTITY: "id"}
        return {
            "layers": [
                {"w": l.weight.tolist(), "b": l.bias.tolist(), "act": inv[l.activation]} for l in self.layers
            ],
            "score_semantics": self.score_semantics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MLPClassifier":
        layers = [(l["w"], l["b"], l.get("act", "id")) for l in data["layers"]]
        return cls(layers, data.get("score_semantics", PROB))


def linear_softmax(weights, bias) -> MLPClassifier:
    return MLPClassifier([(weights, bias, IDENTITY)], PROB)


def load_model(path) -> MLPClassifier:
    with open(path, encoding="utf-8") as fh:
        return MLPClassifier.from_dict(json.load(fh))


def save_model(model: MLPClassifier, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()), encoding="utf-8")


def linear_softmax_predict(weights, bias, v) -> np.ndarray:
    return linear_softmax(weights, bias).predict(v)


def mlp_predict(layers, v) -> np.ndarray:
    return MLPClassifier(layers, PROB).predict(v)


@dataclass(frozen=True)
class ScalarFn:
    """``out[i]`` or ``out[i] - out[j]`` where out is the declared scores or the logits."""

    i: int
    j: int | None = None
    space: str = "scores"

    def __post_init__(self):
        if self.space not in ("scores", "logits"):
            raise ValueError(f"unknown space {self.space!r}")

    def cotangent(self, n_classes: int) -> np.ndarray:
        c = np.zeros(n_classes)
        c[self.i] += 1.0
        if self.j is not None:
            c[self.j] -= 1.0
        return c

    def outputs(self, classifier: Classifier, V) -> np.ndarray:
        if self.space == "logits":
            return classifier.logits_batch(V)
        return classifier.predict_batch(V)

    def __call__(self, classifier: Classifier, V) -> np.ndarray:
        out = self.outputs(classifier, np.atleast_2d(V))
        return out @ self.cotangent(out.shape[1])


def score(i: int, space: str = "scores") -> ScalarFn:
    return ScalarFn(i, None, space)


def score_diff(i: int, j: int, space: str = "scores") -> ScalarFn:
    return ScalarFn(i, j, space)


def analytic_gradient(classifier: Classifier, v, scalar_fn: ScalarFn) -> np.ndarray:
    if not getattr(classifier, "differentiable", False):
        raise UnsupportedGradientError(f"{type(classifier).__name__} has no analytic gradient")
    return classifier.vjp(v, scalar_fn.cotangent(classifier.n_classes), scalar_fn.space)


def finite_diff_gradient(classifier: Classifier, v, scalar_fn: ScalarFn, h: float = 1e-3,
                         lower=None, upper=None) -> np.ndarray:
    """Central differences, one coordinate at a time, in a single batched call.

    Sample points are clamped to ``[lower, upper]`` and each difference is
    divided by the displacement actually realized, so coordinates sitting on
    a bound degrade to one-sided differences instead of leaving the domain.
    """
    if not h > 0:
        raise ValueError("h must be positive")
    v = np.asarray(v, dtype=np.float64)
    n = v.shape[0]
    lo = np.full(n, -np.inf) if lower is None else np.broadcast_to(np.asarray(lower, dtype=np.float64), (n,))
    hi = np.full(n, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, dtype=np.float64), (n,))
    plus = np.minimum(v + h, hi)
    minus = np.maximum(v - h, lo)
    step = plus - minus
    idx = np.arange(n)
    P = np.repeat(v[None, :], n, axis=0)
    M = P.copy()
    P[idx, idx] = plus
    M[idx, idx] = minus
    vals = scalar_fn(classifier, np.vstack([P, M]))
    grad = np.zeros(n)
    ok = step > 0
    grad[ok] = (vals[:n][ok] - vals[n:][ok]) / step[ok]
    return grad


class AutoencoderHook:
    """Reconstruction map used by the ``gamma * ||delta - AE(delta)||^2`` penalty.

    The default gradient is a central finite difference of the penalty, which
    works for any reconstruct function; subclasses with a Jacobian override it.
    """

    def __init__(self, reconstruct: Callable[[np.ndarray], np.ndarray] | None = None, h: float = 1e-4):
        self._fn = reconstruct
        self.h = h

    def reconstruct(self, v) -> np.ndarray:
        if self._fn is None:
            raise NotImplementedError
        out = np.asarray(self._fn(np.asarray(v, dtype=np.float64)), dtype=np.float64)
        if out.shape != np.shape(v) or not np.all(np.isfinite(out)):
            raise DimensionError("autoencoder output must be finite and match the input dimension")
        return out

    def penalty(self, v) -> float:
        r = np.asarray(v) - self.reconstruct(v)
        return float(r @ r)

    def penalty_grad(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        g = np.empty_like(v)
        for j in range(v.shape[0]):
            e = np.zeros_like(v)
            e[j] = self.h
            g[j] = (self.penalty(v + e) - self.penalty(v - e)) / (2 * self.h)
        return g


class IdentityAutoencoder(AutoencoderHook):
    def reconstruct(self, v):
        return np.array(v, dtype=np.float64)

    def penalty(self, v):
        return 0.0

    def penalty_grad(self, v):
        return np.zeros(np.shape(v))


class ModelAutoencoder(AutoencoderHook):
    """Autoencoder backed by a built-in network with ``logit`` semantics (raw outputs)."""

    def __init__(self, model: MLPClassifier):
        super().__init__()
        if model.score_semantics != LOGIT or model.n_classes != model.n_features:
            raise DimensionError("autoencoder model must map n features to n raw outputs")
        self.model = model

    def reconstruct(self, v):
        return self.model.predict(v)

    def penalty_grad(self, v):
        v = np.asarray(v, dtype=np.float64)
        r = v - self.model.predict(v)
        return 2.0 * (r - self.model.vjp(v, r, "scores"))
