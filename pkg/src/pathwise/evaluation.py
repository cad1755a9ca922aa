"""Baselines (Input Reduction, CEM-PP beta sweep) and path-consistency metrics."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import SUPPORT_TOL, ExplainInstance, PathStep, SolverConfig, classified_as, support
from .models import AutoencoderHook, Classifier
from .solver import SolveResult, SubproblemSpec, solve_with_c_search

METRICS = ("n_features", "feature_consistency", "prediction_consistency")
METRIC_LABELS = {
    "n_features": "Number of Features",
    "feature_consistency": "Feature Consistency",
    "prediction_consistency": "Prediction Consistency",
}


@dataclass
class InputReductionResult:
    removed: list[int]
    trace: list[np.ndarray]
    final: np.ndarray

    @property
    def empty(self) -> bool:
        return not support(self.final)


def input_reduction(instance: ExplainInstance, classifier: Classifier) -> InputReductionResult:
    """Greedily zero one feature at a time while the prediction stays `t0`.

    Each round removes the feature whose removal keeps the class and leaves
    the highest t0 score; the lowest index wins ties. Stops when no single
    removal keeps the class, which may leave an empty vector.
    """
    t0 = instance.t0
    current = np.array(instance.x0)
    removed, trace = [], []
    while True:
        candidates = sorted(support(current))
        if not candidates:
            break
        trial = np.repeat(current[None, :], len(candidates), axis=0)
        trial[np.arange(len(candidates)), candidates] = 0.0
        scores = classifier.predict_batch(trial)
        keep = [k for k in range(len(candidates)) if classified_as(scores[k], t0)]
        if not keep:
            break
        k = max(keep, key=lambda k: (scores[k][t0], -k))
        current = trial[k]
        removed.append(candidates[k])
        trace.append(current.copy())
    return InputReductionResult(removed, trace, current)


def cem_pp_beta_path(instance: ExplainInstance, classifier: Classifier, beta_list: Sequence[float],
                     config: SolverConfig, ae: AutoencoderHook | None = None) -> list[SolveResult]:
    """Independent pertinent-positive solves, one per beta; infeasible ones are kept and flagged."""
    if not beta_list:
        raise ValueError("beta_list must not be empty")
    return [
        solve_with_c_search(SubproblemSpec.pp(instance, config.with_(beta=b)), classifier, ae=ae)
        for b in beta_list
    ]


def _support_of(step) -> frozenset[int]:
    if isinstance(step, PathStep):
        if step.mask is not None:
            return frozenset(int(j) for j in np.flatnonzero(step.mask > 0))
        return support(step.delta, SUPPORT_TOL)
    if isinstance(step, SolveResult):
        return support(step.delta, SUPPORT_TOL)
    if isinstance(step, (set, frozenset)):
        return frozenset(step)
    return support(step, SUPPORT_TOL)


def _vector_of(step) -> np.ndarray:
    if isinstance(step, (PathStep, SolveResult)):
        return step.delta
    return np.asarray(step, dtype=np.float64)


def feature_count(step) -> int:
    """Support size; enabled segments for mask steps."""
    return len(_support_of(step))


def feature_consistency(path: Sequence) -> list[float]:
    """Percentage of each step's support already present one step earlier (indices 2..N).

    An empty support counts as fully consistent.
    """
    supports = [_support_of(s) for s in path]
    out = []
    for prev, cur in zip(supports, supports[1:]):
        out.append(100.0 if not cur else 100.0 * len(cur & prev) / len(cur))
    return out


def prediction_consistency(path: Sequence, classifier: Classifier, t0: int) -> list[float]:
    return [100.0 if classified_as(classifier.predict(_vector_of(s)), t0) else 0.0 for s in path]


@dataclass
class PathMetrics:
    method: str
    n_features: list[float]
    feature_consistency: list[float]
    prediction_consistency: list[float]

    def to_dict(self) -> dict:
        return {m: getattr(self, m) for m in ("method",) + METRICS}


def path_metrics(path: Sequence, classifier: Classifier, t0: int, method: str) -> PathMetrics:
    return PathMetrics(
        method,
        [float(feature_count(s)) for s in path],
        feature_consistency(path),
        prediction_consistency(path, classifier, t0),
    )


@dataclass
class MetricsReport:
    per_path: list[PathMetrics]
    # method -> metric -> list of (mean, se) per path index; feature consistency starts at index 2
    aggregate: dict[str, dict[str, list[tuple[float, float]]]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "per_path": [p.to_dict() for p in self.per_path],
                "aggregate": {
                    method: {
                        metric: [{"mean": m, "se": s} for m, s in cells] for metric, cells in by_metric.items()
                    }
                    for method, by_metric in self.aggregate.items()
                },
                "counts": self.counts,
            },
            indent=2,
        )

    def to_csv(self) -> str:
        """Table layout: one row per (metric, method), one column per path index."""
        width = max((len(c) for by in self.aggregate.values() for c in by.values()), default=0)
        width = max(width, max((len(by.get("n_features", [])) for by in self.aggregate.values()), default=0))
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["metric", "method"] + [str(i) for i in range(1, width + 1)])
        for metric in METRICS:
            for method, by_metric in self.aggregate.items():
                cells = [format_cell(m, s) for m, s in by_metric.get(metric, [])]
                if metric == "feature_consistency":
                    cells = ["--"] + cells
                cells += [""] * (width - len(cells))
                writer.writerow([METRIC_LABELS[metric], method] + cells)
        return buf.getvalue()


def format_cell(mean: float, se: float) -> str:
    head = "100" if mean == 100.0 else f"{mean:.1f}"
    return f"{head} ({se:.1f})"


def mean_se(values: Iterable[float]) -> tuple[float, float]:
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(arr.mean()), se


def aggregate(reports: Sequence[PathMetrics]) -> MetricsReport:
    """Per-method, per-index mean and standard error (sample std over sqrt(M))."""
    if not reports:
        raise ValueError("need at least one path to aggregate")
    by_method: dict[str, list[PathMetrics]] = {}
    for r in reports:
        by_method.setdefault(r.method, []).append(r)
    agg = {}
    for method, group in by_method.items():
        agg[method] = {}
        for metric in METRICS:
            series = [getattr(r, metric) for r in group]
            length = max(len(s) for s in series)
            agg[method][metric] = [
                mean_se(s[i] for s in series if i < len(s)) for i in range(length)
            ]
    return MetricsReport(list(reports), agg, {m: len(g) for m, g in by_method.items()})


def load_external_paths(path) -> list[tuple[str, int, list[np.ndarray]]]:
    """Read externally computed paths (for example a LIME sweep) to score with the same metrics.

    Format: ``{"method": "lime", "paths": [{"instance": 0, "steps": [[...], ...]}, ...]}``.
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    method = data.get("method", "external")
    return [
        (method, int(p["instance"]), [np.asarray(s, dtype=np.float64) for s in p["steps"]])
        for p in data["paths"]
    ]
