"""Shared value types: feature vectors, domains, instances, configs and paths.

Feature vectors are plain 1-D float64 numpy arrays marked read-only; the
helpers here validate them once at the boundary so the numerical code can
stay free of defensive checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DimensionError, InvalidInstanceError

SUPPORT_TOL = 1e-9
DOMAIN_TOL = 1e-9

UNIT_BOX = "unit_box"
NON_NEGATIVE = "non_negative"


def feature_vector(values) -> np.ndarray:
    """Return `values` as an immutable, finite, 1-D float64 array."""
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"feature vector must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature vector contains NaN or Inf")
    arr.setflags(write=False)
    return arr


def support(v, tol: float = SUPPORT_TOL) -> frozenset[int]:
    """Indices whose magnitude exceeds `tol`."""
    if tol < 0:
        raise ValueError("tol must be non-negative")
    return frozenset(int(j) for j in np.flatnonzero(np.abs(np.asarray(v)) > tol))


def componentwise_leq(a, b, tol: float = 0.0) -> bool:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a <= b + tol))


def classified_as(scores, t0: int) -> bool:
    """Strict argmax test; an exact tie with another class counts as a miss."""
    scores = np.asarray(scores)
    others = np.delete(scores, t0)
    return bool(scores[t0] > others.max())


def margin(scores, t0: int) -> float:
    """score[t0] minus the best competing score."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] < 2:
        raise InvalidInstanceError("score vector must have at least two classes")
    return float(scores[t0] - np.delete(scores, t0).max())


@dataclass(frozen=True)
class Domain:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in (UNIT_BOX, NON_NEGATIVE):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("domain dimension must be positive")

    @property
    def lower(self) -> np.ndarray:
        return np.zeros(self.n)

    @property
    def upper(self) -> np.ndarray:
        hi = 1.0 if self.kind == UNIT_BOX else np.inf
        return np.full(self.n, hi)

    def contains(self, v, tol: float = DOMAIN_TOL) -> bool:
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (self.n,):
            return False
        if np.any(v < -tol):
            return False
        return self.kind == NON_NEGATIVE or bool(np.all(v <= 1.0 + tol))

    @classmethod
    def unit_box(cls, n: int) -> "Domain":
        return cls(UNIT_BOX, n)

    @classmethod
    def non_negative(cls, n: int) -> "Domain":
        return cls(NON_NEGATIVE, n)


@dataclass(frozen=True, eq=False)
class ExplainInstance:
    x0: np.ndarray
    t0: int
    domain: Domain

    def __post_init__(self):
        object.__setattr__(self, "x0", feature_vector(self.x0))
        if self.t0 < 0:
            raise InvalidInstanceError("t0 must be a non-negative class index")
        if self.x0.shape[0] != self.domain.n:
            raise DimensionError(f"x0 has {self.x0.shape[0]} features, domain has {self.domain.n}")
        if not self.domain.contains(self.x0):
            raise InvalidInstanceError("x0 lies outside its domain")

    @property
    def n_features(self) -> int:
        return self.domain.n


@dataclass(frozen=True)
class SolverConfig:
    """Every scalar of the single-explanation objective and its optimizer."""

    c: float = 10.0
    beta: float = 0.1
    alpha: float = 0.0
    kappa: float = 0.1
    gamma: float = 0.0
    eta: float = 0.0
    max_iters: int = 1000
    step_size: float = 0.01
    c_search_factor: float = 10.0
    c_search_rounds: int = 9

    def __post_init__(self):
        for name in ("c", "beta", "alpha", "kappa", "gamma", "eta"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite non-negative number, got {value!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.c_search_factor > 1:
            raise ValueError("c_search_factor must exceed 1")
        if self.c_search_rounds < 0:
            raise ValueError("c_search_rounds must be >= 0")

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class PathConfig:
    n_steps: int
    beta_schedule: tuple[float, ...]
    base: SolverConfig = field(default_factory=SolverConfig)
    epsilon_diag: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "beta_schedule", tuple(float(b) for b in self.beta_schedule))
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if len(self.beta_schedule) != self.n_steps:
            raise ValueError(
                f"beta_schedule has {len(self.beta_schedule)} entries, expected {self.n_steps}"
            )
        if any(b < 0 for b in self.beta_schedule):
            raise ValueError("beta_schedule entries must be non-negative")
        if any(a > b for a, b in zip(self.beta_schedule, self.beta_schedule[1:])):
            raise ValueError("beta_schedule must be non-decreasing")
        if self.epsilon_diag is not None and not self.epsilon_diag > 0:
            raise ValueError("epsilon_diag must be positive when set")

    @classmethod
    def from_schedule(cls, beta_schedule: Sequence[float], base: SolverConfig | None = None,
                      epsilon_diag: float | None = None) -> "PathConfig":
        return cls(len(beta_schedule), tuple(beta_schedule), base or SolverConfig(), epsilon_diag)


@dataclass(frozen=True, eq=False)
class PathStep:
    delta: np.ndarray
    margin: float
    l1_norm: float
    support_size: int
    stalled: bool = False
    c_used: float | None = None
    iterations: int = 0
    objective: float | None = None
    # per-segment binary mask, only for superpixel paths
    mask: np.ndarray | None = None

    @classmethod
    def build(cls, delta, scores, t0: int, **kw) -> "PathStep":
        delta = feature_vector(delta)
        return cls(
            delta=delta,
            margin=margin(scores, t0),
            l1_norm=float(np.abs(delta).sum()),
            support_size=len(support(delta)),
            **kw,
        )


@dataclass(frozen=True, eq=False)
class PathExplanation:
    instance: ExplainInstance
    steps: tuple[PathStep, ...]
    method: str = "psem"
    score_semantics: str = "prob"

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def deltas(self) -> list[np.ndarray]:
        return [s.delta for s in self.steps]

    def __len__(self) -> int:
        return len(self.steps)
