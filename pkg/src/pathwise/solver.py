"""Single-explanation solver.

Minimizes ``c*f_kappa(delta) + beta*||delta||_1 + smooth quadratic terms`` over
the box ``0 <= delta <= upper`` with accelerated proximal gradient (FISTA).
The same routine serves the plain pertinent-positive problem (quadratic term
``alpha*||delta||^2``) and one step of the path (quadratic term
``eta*||delta - anchor||^2`` with ``upper == anchor``).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import partial
from typing import Callable, Protocol, Sequence

import numpy as np

from .core import ExplainInstance, SolverConfig, classified_as, feature_vector, margin
from .errors import InfeasiblePPError, InvalidBoundError, InvalidInstanceError, NumericError
from .models import AutoencoderHook, Classifier, ScalarFn, analytic_gradient, finite_diff_gradient

logger = logging.getLogger(__name__)

PP = "pp"
PATH_STEP = "path_step"

GradientProvider = Callable[[Classifier, np.ndarray, ScalarFn], np.ndarray]


class Penalty(Protocol):
    """Extra smooth term added to the objective."""

    def value(self, delta: np.ndarray) -> float: ...

    def grad(self, delta: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class AutoencoderPenalty:
    ae: AutoencoderHook
    gamma: float

    def value(self, delta):
        return self.gamma * self.ae.penalty(delta) if self.gamma else 0.0

    def grad(self, delta):
        return self.gamma * self.ae.penalty_grad(delta) if self.gamma else np.zeros_like(delta)


def default_gradient_provider(classifier: Classifier, lower=None, upper=None, h: float = 1e-3) -> GradientProvider:
    """Analytic gradients for built-in networks, clamped central differences otherwise."""
    if getattr(classifier, "differentiable", False):
        return analytic_gradient
    return partial(finite_diff_gradient, h=h, lower=lower, upper=upper)


def hinge_loss(scores, t0: int, kappa: float) -> float:
    """``max(max_{i != t0} s_i - s_t0, -kappa)``."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape[0] < 2:
        raise InvalidInstanceError("hinge loss needs at least two classes")
    return max(-margin(scores, t0), -kappa)


def runner_up(scores, t0: int) -> int:
    """Strongest competing class; the lowest index wins ties."""
    masked = np.array(scores, dtype=np.float64)
    masked[t0] = -np.inf
    return int(np.argmax(masked))


def hinge_gradient(classifier: Classifier, v, t0: int, kappa: float, provider: GradientProvider,
                   scores=None) -> np.ndarray:
    # the clamp test happens in declared score space, the descent direction in logit space
    if scores is None:
        scores = classifier.predict(v)
    if margin(scores, t0) >= kappa:
        return np.zeros(np.shape(v))
    j = runner_up(scores, t0)
    return provider(classifier, v, ScalarFn(j, t0, "logits"))


@dataclass(frozen=True, eq=False)
class SubproblemSpec:
    instance: ExplainInstance
    upper_bound: np.ndarray
    config: SolverConfig
    mode: str = PP
    anchor: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "upper_bound", feature_vector(self.upper_bound))
        if self.anchor is not None:
            object.__setattr__(self, "anchor", feature_vector(self.anchor))
        if self.mode not in (PP, PATH_STEP):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.upper_bound.shape != self.instance.x0.shape:
            raise InvalidBoundError("upper bound dimension differs from the instance")
        if np.any(self.upper_bound < 0) or not self.instance.domain.contains(self.upper_bound):
            raise InvalidBoundError("upper bound must be non-negative and inside the domain")
        if self.mode == PATH_STEP and (self.anchor is None or not np.array_equal(self.anchor, self.upper_bound)):
            raise InvalidBoundError("a path step needs an anchor equal to its upper bound")

    @classmethod
    def pp(cls, instance: ExplainInstance, config: SolverConfig) -> "SubproblemSpec":
        return cls(instance, instance.x0, config, PP)

    @classmethod
    def path_step(cls, instance: ExplainInstance, previous, config: SolverConfig) -> "SubproblemSpec":
        return cls(instance, previous, config, PATH_STEP, previous)


@dataclass(frozen=True, eq=False)
class SolveResult:
    delta: np.ndarray
    feasible: bool
    margin: float
    objective: float
    iterations_used: int
    c_used: float
    step_size: float


def _quadratic(spec: SubproblemSpec, delta):
    cfg = spec.config
    if spec.mode == PP:
        return cfg.alpha * float(delta @ delta), 2.0 * cfg.alpha * delta
    diff = delta - spec.anchor
    return cfg.eta * float(diff @ diff), 2.0 * cfg.eta * diff


def _penalties(spec, ae, penalties):
    out = list(penalties)
    if ae is not None and spec.config.gamma > 0:
        out.append(AutoencoderPenalty(ae, spec.config.gamma))
    return out


def objective(spec: SubproblemSpec, delta, classifier: Classifier, ae: AutoencoderHook | None = None,
              penalties: Sequence[Penalty] = ()) -> float:
    delta = np.asarray(delta, dtype=np.float64)
    cfg = spec.config
    total = cfg.c * hinge_loss(classifier.predict(delta), spec.instance.t0, cfg.kappa)
    total += cfg.beta * float(np.abs(delta).sum())
    total += _quadratic(spec, delta)[0]
    for p in _penalties(spec, ae, penalties):
        total += p.value(delta)
    return float(total)


def prox_l1_box(z, threshold: float, upper) -> np.ndarray:
    """Exact minimizer of ``(1/2t)(d - z)^2 + beta*d`` over ``0 <= d <= upper``, per coordinate."""
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    upper = np.asarray(upper, dtype=np.float64)
    if np.any(upper < 0):
        raise InvalidBoundError("upper bound must be non-negative")
    return np.minimum(np.maximum(np.asarray(z, dtype=np.float64) - threshold, 0.0), upper)


def fista_solve(spec: SubproblemSpec, classifier: Classifier, gradient_provider: GradientProvider | None = None,
                ae: AutoencoderHook | None = None, penalties: Sequence[Penalty] = ()) -> SolveResult:
    """Accelerated proximal gradient with best-feasible-candidate tracking.

    The starting point (the upper bound) is itself a candidate. Among all
    iterates meeting the margin, the one with the smallest L1 norm is kept;
    ties go to the one closest to the anchor (path steps only), then to the
    earliest. Without any feasible iterate the last one is returned.
    """
    cfg = spec.config
    t0 = spec.instance.t0
    u = np.array(spec.upper_bound)
    extra = _penalties(spec, ae, penalties)
    if gradient_provider is None:
        gradient_provider = default_gradient_provider(
            classifier, spec.instance.domain.lower, spec.instance.domain.upper
        )

    def smooth_grad(y):
        g = np.zeros_like(y)
        if cfg.c > 0:
            g += cfg.c * hinge_gradient(classifier, y, t0, cfg.kappa, gradient_provider)
        g += _quadratic(spec, y)[1]
        for p in extra:
            g += p.grad(y)
        return g

    best = None
    best_key = None

    def consider(x, k):
        nonlocal best, best_key
        s = classifier.predict(x)
        m = margin(s, t0)
        if not (m >= cfg.kappa and classified_as(s, t0)):
            return m
        l1 = float(x.sum())
        dist = float(((x - spec.anchor) ** 2).sum()) if spec.mode == PATH_STEP else 0.0
        key = (l1, dist)
        if best_key is None or key < best_key:
            best, best_key = (x.copy(), m, k), key
        return m

    step = cfg.step_size
    x = u.copy()
    y = u.copy()
    last_margin = consider(x, 0)
    k_used = 0
    for k in range(1, cfg.max_iters + 1):
        g = smooth_grad(y)
        if not np.all(np.isfinite(g)):
            # drop momentum and retry once with a smaller step before giving up
            y = x.copy()
            step *= 0.5
            g = smooth_grad(y)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient at iteration {k}", k)
        x_new = prox_l1_box(y - step * g, step * cfg.beta, u)
        last_margin = consider(x_new, k)
        y_new = np.clip(x_new + (k - 1) / (k + 2) * (x_new - x), 0.0, u)
        k_used = k
        if np.array_equal(y, x) and np.array_equal(x_new, x):
            # exact fixed point of the prox-gradient map with no momentum left
            break
        x, y = x_new, y_new

    if best is not None:
        delta, m, _ = best
        feasible = True
    else:
        delta, m, feasible = x, last_margin, False
    delta = feature_vector(delta)
    return SolveResult(
        delta=delta,
        feasible=feasible,
        margin=float(m),
        objective=objective(spec, delta, classifier, ae, penalties),
        iterations_used=k_used,
        c_used=cfg.c,
        step_size=step,
    )


def _c_search(spec, classifier, gradient_provider, ae, penalties):
    cfg = spec.config
    c = cfg.c
    result = None
    best_margin = -np.inf
    for round_ in range(cfg.c_search_rounds + 1):
        attempt = SubproblemSpec(spec.instance, spec.upper_bound, cfg.with_(c=c), spec.mode, spec.anchor)
        result = fista_solve(attempt, classifier, gradient_provider, ae, penalties)
        if result.feasible:
            return result, result.margin
        best_margin = max(best_margin, result.margin)
        logger.debug("no feasible candidate at c=%g (round %d), best margin %.4g", c, round_, best_margin)
        c *= cfg.c_search_factor
    return result, best_margin


def solve_with_c_search(spec: SubproblemSpec, classifier: Classifier,
                        gradient_provider: GradientProvider | None = None,
                        ae: AutoencoderHook | None = None, penalties: Sequence[Penalty] = ()) -> SolveResult:
    """Run FISTA, multiplying c until a feasible candidate appears; returns the last attempt otherwise."""
    return _c_search(spec, classifier, gradient_provider, ae, penalties)[0]


def solve_pp(instance: ExplainInstance, classifier: Classifier, config: SolverConfig,
             ae: AutoencoderHook | None = None, gradient_provider: GradientProvider | None = None,
             penalties: Sequence[Penalty] = ()) -> SolveResult:
    """Pertinent positive for `instance` with escalating c."""
    result, best_margin = _c_search(SubproblemSpec.pp(instance, config), classifier, gradient_provider, ae,
                                    penalties)
    if not result.feasible:
        raise InfeasiblePPError(
            f"no explanation reaches margin {config.kappa} after {config.c_search_rounds + 1} c values",
            best_margin=best_margin,
            c_used=result.c_used,
        )
    return result
