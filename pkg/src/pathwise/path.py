"""Path-sufficient explanations: a monotone sequence of sufficient sub-inputs.

One forward sweep: step ``i`` solves the path subproblem with the previous
explanation as both the upper bound and the proximity anchor, so every
returned step is componentwise below its predecessor by construction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import (
    DOMAIN_TOL,
    SUPPORT_TOL,
    ExplainInstance,
    PathConfig,
    PathExplanation,
    PathStep,
    classified_as,
    componentwise_leq,
    margin,
    support,
)
from .errors import InternalConsistencyError, VacuousInstanceError
from .models import AutoencoderHook, Classifier
from .solver import GradientProvider, Penalty, SubproblemSpec, solve_with_c_search

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Violation:
    step: int
    kind: str
    detail: str = ""


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    step_sq_dist: list[float] = field(default_factory=list)
    epsilon_exceeded: list[int] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds_at(self, step: int) -> set[str]:
        return {v.kind for v in self.violations if v.step == step}

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "violations": [vars(v) for v in self.violations],
            "step_sq_dist": self.step_sq_dist,
            "epsilon_exceeded": self.epsilon_exceeded,
        }


def validate_path(path: PathExplanation, classifier: Classifier, epsilon_diag: float | None = None) -> ValidationReport:
    """Check monotonicity, domain membership, prediction and support nesting.

    Steps are numbered from 1; step 0 is the input itself. Never raises.
    """
    inst = path.instance
    report = ValidationReport()
    prev = inst.x0
    prev_mask = None
    for i, step in enumerate(path.steps, start=1):
        d = step.delta
        if d.shape != prev.shape:
            report.violations.append(Violation(i, "dimension", f"{d.shape} vs {prev.shape}"))
            continue
        if not componentwise_leq(d, prev, DOMAIN_TOL):
            j = int(np.argmax(d - prev))
            report.violations.append(Violation(i, "monotonicity", f"coordinate {j} grew by {d[j] - prev[j]:.3g}"))
        if not inst.domain.contains(d):
            report.violations.append(Violation(i, "domain"))
        if not support(d, SUPPORT_TOL) <= support(prev, SUPPORT_TOL):
            extra = sorted(support(d) - support(prev))
            report.violations.append(Violation(i, "support", f"new features {extra[:10]}"))
        scores = classifier.predict(d)
        if not classified_as(scores, inst.t0):
            report.violations.append(
                Violation(i, "prediction", f"argmax {int(np.argmax(scores))} != {inst.t0}")
            )
        if step.mask is not None:
            if prev_mask is not None and np.any(step.mask > prev_mask):
                report.violations.append(Violation(i, "mask_monotonicity"))
            prev_mask = step.mask
        sq = float(((d - prev) ** 2).sum())
        report.step_sq_dist.append(sq)
        if epsilon_diag is not None and sq > epsilon_diag:
            report.epsilon_exceeded.append(i)
        prev = d
    return report


def check_vacuous(instance: ExplainInstance, classifier: Classifier, kappa: float) -> np.ndarray:
    scores = classifier.predict(instance.x0)
    if not classified_as(scores, instance.t0) or margin(scores, instance.t0) < kappa:
        raise VacuousInstanceError(
            f"x0 is not classified as {instance.t0} with margin {kappa} "
            f"(margin {margin(scores, instance.t0):.4g}); the path would be empty"
        )
    return scores


def solve_psem(instance: ExplainInstance, classifier: Classifier, path_config: PathConfig,
               ae: AutoencoderHook | None = None, gradient_provider: GradientProvider | None = None,
               penalties: Sequence[Penalty] = ()) -> PathExplanation:
    base = path_config.base
    check_vacuous(instance, classifier, base.kappa)
    prev = instance.x0
    steps = []
    for i, beta in enumerate(path_config.beta_schedule, start=1):
        spec = SubproblemSpec.path_step(instance, prev, base.with_(beta=beta))
        result = solve_with_c_search(spec, classifier, gradient_provider, ae, penalties)
        if result.feasible:
            delta = result.delta
        else:
            logger.info("step %d: no feasible candidate, carrying the previous explanation", i)
            delta = prev
        stalled = not result.feasible or np.array_equal(delta, prev)
        steps.append(
            PathStep.build(
                delta,
                classifier.predict(delta),
                instance.t0,
                stalled=stalled,
                c_used=result.c_used,
                iterations=result.iterations_used,
                objective=result.objective if result.feasible else None,
            )
        )
        prev = delta
    path = PathExplanation(instance, tuple(steps), "psem", classifier.score_semantics)
    report = validate_path(path, classifier, path_config.epsilon_diag)
    if not report.ok:
        raise InternalConsistencyError(f"path failed validation: {report.violations}")
    return path
