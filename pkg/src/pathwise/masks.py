"""Superpixel-mask paths for images.

Instead of shrinking pixel intensities, each step switches whole segments
off. The per-segment indicators are relaxed to ``[0, prev]``, optimized with
the same FISTA machinery as the pixel-space solver (the image model is
composed with :func:`apply_mask`, so the optimizer just sees a classifier over
``n_segments`` features), thresholded, and then segments are added back in
order of their relaxed value until the original class returns.

One segmentation is computed up front and reused for every step.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    Domain,
    ExplainInstance,
    PathConfig,
    PathExplanation,
    PathStep,
    SolverConfig,
    classified_as,
    feature_vector,
)
from .errors import (
    DimensionError,
    InternalConsistencyError,
    MaskInfeasibleError,
    ParseError,
    VacuousInstanceError,
)
from .models import Classifier, ScalarFn, finite_diff_gradient
from .path import validate_path
from .solver import SubproblemSpec, solve_with_c_search

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class Segmentation:
    labels: np.ndarray
    n_segments: int
    height: int | None = None
    width: int | None = None

    def __post_init__(self):
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")
        if labels.size == 0:
            raise DimensionError("segmentation has no pixels")
        if labels.min() < 0 or labels.max() >= self.n_segments:
            raise ValueError(f"labels must lie in [0, {self.n_segments})")
        if np.unique(labels).size != self.n_segments:
            raise ValueError("every segment id must occur at least once")
        if self.height is not None and self.width is not None and self.height * self.width != labels.size:
            raise DimensionError("label count does not match height*width")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n_pixels(self) -> int:
        return int(self.labels.size)

    def pixel_labels(self, n_values: int) -> np.ndarray:
        """Segment id for every entry of a flattened image with ``n_values`` entries (channel-last)."""
        if n_values % self.n_pixels:
            raise DimensionError(f"image with {n_values} values does not fit {self.n_pixels} labelled pixels")
        channels = n_values // self.n_pixels
        return self.labels if channels == 1 else np.repeat(self.labels, channels)

    def to_dict(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "n_segments": self.n_segments,
            "labels": self.labels.tolist(),
        }


@dataclass(frozen=True, eq=False)
class MaskVector:
    m: np.ndarray
    binary: bool = False

    def __post_init__(self):
        m = feature_vector(self.m)
        if np.any(m < 0) or np.any(m > 1):
            raise ValueError("mask entries must lie in [0, 1]")
        if self.binary and not np.all((m == 0) | (m == 1)):
            raise ValueError("binary mask must contain only 0 and 1")
        object.__setattr__(self, "m", m)

    @classmethod
    def ones(cls, n: int) -> "MaskVector":
        return cls(np.ones(n), True)

    @property
    def enabled(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.m > 0)]


@dataclass
class AttributePenaltyConfig:
    """Monotone-attribute penalty ``weight * sum_j max(g_j(new) - g_j(prev), 0)``.

    Each entry of `attribute_classifiers` is ``(classifier, positive_class)``;
    g_j is that classifier's declared score for the positive class.
    """

    attribute_classifiers: list = field(default_factory=list)
    weight: float = 0.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("attribute penalty weight must be non-negative")

    @property
    def active(self) -> bool:
        return self.weight > 0 and bool(self.attribute_classifiers)


@dataclass(frozen=True, eq=False)
class MaskStepResult:
    mask: MaskVector
    relaxed: np.ndarray
    re_added: list[int]
    c_used: float
    iterations: int
    attribute_slack: list[float]


def grid_segment(height: int, width: int, cell: int) -> Segmentation:
    if height < 1 or width < 1:
        raise DimensionError("image dimensions must be positive")
    if cell < 1:
        raise ValueError("cell must be >= 1")
    cols = math.ceil(width / cell)
    rows_idx = np.arange(height)[:, None] // cell
    cols_idx = np.arange(width)[None, :] // cell
    labels = rows_idx * cols + cols_idx
    return Segmentation(labels.reshape(-1), math.ceil(height / cell) * cols, height, width)


def load_segmentation(path) -> Segmentation:
    """Read a label map: a JSON object with a ``labels`` list, or a JSON header line followed by integers."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
        labels = data["labels"]
    except (json.JSONDecodeError, KeyError, TypeError):
        header, _, body = text.partition("\n")
        try:
            data = json.loads(header)
            labels = [int(tok) for tok in body.replace(",", " ").split()]
        except (json.JSONDecodeError, ValueError) as exc:
            raise ParseError(f"{path}: not a segmentation label map") from exc
    try:
        return Segmentation(labels, int(data["n_segments"]), data.get("height"), data.get("width"))
    except (KeyError, ValueError, DimensionError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_segmentation(seg: Segmentation, path) -> None:
    Path(path).write_text(json.dumps(seg.to_dict()), encoding="utf-8")


def apply_mask(x0, seg: Segmentation, mask) -> np.ndarray:
    x0 = np.asarray(x0, dtype=np.float64)
    m = mask.m if isinstance(mask, MaskVector) else np.asarray(mask, dtype=np.float64)
    if m.shape[-1] != seg.n_segments:
        raise DimensionError(f"mask has {m.shape[-1]} entries, segmentation has {seg.n_segments}")
    return x0 * m[..., seg.pixel_labels(x0.shape[0])]


class MaskedClassifier(Classifier):
    """`base` evaluated on ``apply_mask(x0, seg, m)``: a classifier over segment indicators."""

    def __init__(self, base: Classifier, x0, seg: Segmentation):
        self.base = base
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.seg = seg
        self._labels = seg.pixel_labels(self.x0.shape[0])
        self.n_features = seg.n_segments
        self.n_classes = base.n_classes
        self.score_semantics = base.score_semantics
        self.differentiable = getattr(base, "differentiable", False)

    def images(self, M) -> np.ndarray:
        return apply_mask(self.x0, self.seg, np.atleast_2d(M))

    def predict_batch(self, M):
        return self.base.predict_batch(self.images(M))

    def logits_batch(self, M):
        return self.base.logits_batch(self.images(M))

    def vjp(self, m, cotangent, space="scores"):
        g_img = self.base.vjp(self.images(m)[0], cotangent, space)
        return np.bincount(self._labels, weights=g_img * self.x0, minlength=self.n_features)


class _AttributePenalty:
    """Penalty term over mask coordinates for the solver."""

    def __init__(self, attr: AttributePenaltyConfig, x0, seg, prev_mask):
        self.weight = attr.weight
        self.terms = []
        for clf, pos in attr.attribute_classifiers:
            masked = MaskedClassifier(clf, x0, seg)
            ref = float(masked.predict(prev_mask)[pos])
            self.terms.append((masked, ScalarFn(pos), ref))

    def excess(self, m) -> list[float]:
        return [max(float(masked.predict(m)[fn.i]) - ref, 0.0) for masked, fn, ref in self.terms]

    def value(self, m):
        return self.weight * sum(self.excess(m))

    def grad(self, m):
        g = np.zeros(np.shape(m))
        for masked, fn, ref in self.terms:
            if float(masked.predict(m)[fn.i]) - ref <= 0:
                continue
            if masked.differentiable:
                g += masked.vjp(m, fn.cotangent(masked.n_classes), "scores")
            else:
                g += finite_diff_gradient(masked, m, fn, lower=0.0, upper=1.0)
        return self.weight * g


def threshold_and_repair(relaxed, prev_mask, x0, seg: Segmentation, classifier: Classifier, t0: int,
                         ranking=None, threshold: float = DEFAULT_THRESHOLD) -> tuple[MaskVector, list[int]]:
    """Threshold the relaxed mask, then re-enable segments until `t0` is predicted again.

    Returns the binary mask and the segments re-enabled, in order. Candidates
    are segments that are on in `prev_mask`; the highest ranking value goes
    first, the lowest id on ties.
    """
    relaxed = np.asarray(relaxed, dtype=np.float64)
    prev = prev_mask.m if isinstance(prev_mask, MaskVector) else np.asarray(prev_mask, dtype=np.float64)
    ranking = relaxed if ranking is None else np.asarray(ranking, dtype=np.float64)
    mask = ((relaxed >= threshold) & (prev > 0)).astype(np.float64)
    # stable sort on -ranking keeps lower ids first among equal values
    order = [int(j) for j in np.argsort(-ranking, kind="stable") if prev[j] > 0]
    re_added = []
    while not classified_as(classifier.predict(apply_mask(x0, seg, mask)), t0):
        pending = [j for j in order if mask[j] == 0]
        if not pending:
            raise MaskInfeasibleError("every segment of the previous mask is on and the class is still not recovered")
        mask[pending[0]] = 1.0
        re_added.append(pending[0])
    return MaskVector(mask, binary=True), re_added


def solve_mask_step(x0, seg: Segmentation, prev_mask: MaskVector, classifier: Classifier, config: SolverConfig,
                    attr: AttributePenaltyConfig | None = None, t0: int | None = None,
                    threshold: float = DEFAULT_THRESHOLD) -> MaskStepResult:
    x0 = np.asarray(x0, dtype=np.float64)
    if t0 is None:
        t0 = int(np.argmax(classifier.predict(x0)))
    prev = prev_mask.m
    if not classified_as(classifier.predict(apply_mask(x0, seg, prev)), t0):
        raise MaskInfeasibleError(f"the previous mask no longer yields class {t0}")

    masked = MaskedClassifier(classifier, x0, seg)
    inst = ExplainInstance(np.ones(seg.n_segments), t0, Domain.unit_box(seg.n_segments))
    penalties = []
    attr_term = None
    if attr is not None and attr.active:
        attr_term = _AttributePenalty(attr, x0, seg, prev)
        penalties.append(attr_term)
    spec = SubproblemSpec.path_step(inst, prev, config)
    result = solve_with_c_search(spec, masked, penalties=penalties)
    relaxed = np.array(result.delta)
    mask, re_added = threshold_and_repair(relaxed, prev_mask, x0, seg, classifier, t0, threshold=threshold)
    slack = attr_term.excess(mask.m) if attr_term is not None else []
    return MaskStepResult(mask, relaxed, re_added, result.c_used, result.iterations_used, slack)


def solve_psem_masks(x0, classifier: Classifier, path_config: PathConfig, seg: Segmentation,
                     attr: AttributePenaltyConfig | None = None, t0: int | None = None,
                     domain: Domain | None = None, threshold: float = DEFAULT_THRESHOLD,
                     ) -> tuple[PathExplanation, list[MaskStepResult | None]]:
    """Path of masked images; returns the path and per-step diagnostics (None for stalled steps)."""
    x0 = feature_vector(x0)
    if t0 is None:
        t0 = int(np.argmax(classifier.predict(x0)))
    instance = ExplainInstance(x0, t0, domain or Domain.unit_box(x0.shape[0]))
    if not classified_as(classifier.predict(x0), t0):
        raise VacuousInstanceError(f"x0 is not classified as {t0}")
    prev = MaskVector.ones(seg.n_segments)
    steps = []
    details: list[MaskStepResult | None] = []
    for i, beta in enumerate(path_config.beta_schedule, start=1):
        try:
            res = solve_mask_step(x0, seg, prev, classifier, path_config.base.with_(beta=beta), attr, t0, threshold)
        except MaskInfeasibleError as exc:
            logger.info("mask step %d stalled: %s", i, exc)
            res = None
        mask = prev if res is None else res.mask
        image = apply_mask(x0, seg, mask)
        steps.append(
            PathStep.build(
                image,
                classifier.predict(image),
                t0,
                stalled=res is None or np.array_equal(mask.m, prev.m),
                c_used=None if res is None else res.c_used,
                iterations=0 if res is None else res.iterations,
                mask=mask.m,
            )
        )
        details.append(res)
        prev = mask
    path = PathExplanation(instance, tuple(steps), "psem-masks", classifier.score_semantics)
    report = validate_path(path, classifier, path_config.epsilon_diag)
    if not report.ok:
        raise InternalConsistencyError(f"mask path failed validation: {report.violations}")
    return path, details
