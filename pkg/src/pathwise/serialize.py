"""Result documents (schema ``pathwise/1``) and their inverse."""
from __future__ import annotations

import json
import platform
from dataclasses import asdict

import numpy as np

from . import __version__
from .core import Domain, ExplainInstance, PathConfig, PathExplanation, PathStep, SolverConfig
from .solver import SolveResult

SCHEMA = "pathwise/1"


def versions() -> dict:
    return {"pathwise": __version__, "numpy": np.__version__, "python": platform.python_version()}


def instance_to_dict(inst: ExplainInstance) -> dict:
    return {"x0": inst.x0.tolist(), "t0": inst.t0, "domain": inst.domain.kind}


def instance_from_dict(d: dict) -> ExplainInstance:
    x0 = np.asarray(d["x0"], dtype=np.float64)
    return ExplainInstance(x0, int(d["t0"]), Domain(d["domain"], x0.shape[0]))


def step_to_dict(step: PathStep, index: int) -> dict:
    out = {
        "index": index,
        "delta": step.delta.tolist(),
        "margin": step.margin,
        "l1_norm": step.l1_norm,
        "support_size": step.support_size,
        "stalled": step.stalled,
        "c_used": step.c_used,
        "iterations": step.iterations,
        "objective": step.objective,
    }
    if step.mask is not None:
        out["mask"] = step.mask.tolist()
    return out


def step_from_dict(d: dict) -> PathStep:
    mask = d.get("mask")
    return PathStep(
        delta=np.asarray(d["delta"], dtype=np.float64),
        margin=d["margin"],
        l1_norm=d["l1_norm"],
        support_size=d["support_size"],
        stalled=d["stalled"],
        c_used=d.get("c_used"),
        iterations=d.get("iterations", 0),
        objective=d.get("objective"),
        mask=None if mask is None else np.asarray(mask, dtype=np.float64),
    )


def solver_config_to_dict(cfg: SolverConfig) -> dict:
    return asdict(cfg)


def path_config_to_dict(cfg: PathConfig) -> dict:
    return {
        "n_steps": cfg.n_steps,
        "beta_schedule": list(cfg.beta_schedule),
        "epsilon_diag": cfg.epsilon_diag,
        "base": solver_config_to_dict(cfg.base),
    }


def path_to_dict(path: PathExplanation, config: dict | None = None, validation: dict | None = None,
                 **extra) -> dict:
    doc = {
        "schema": SCHEMA,
        "method": path.method,
        "score_semantics": path.score_semantics,
        "instance": instance_to_dict(path.instance),
        "steps": [step_to_dict(s, i) for i, s in enumerate(path.steps, start=1)],
    }
    if config is not None:
        doc["config"] = config
    if validation is not None:
        doc["validation"] = validation
    doc.update(extra)
    doc["versions"] = versions()
    return doc


def path_from_dict(doc: dict) -> PathExplanation:
    if doc.get("schema") != SCHEMA:
        raise ValueError(f"unsupported schema {doc.get('schema')!r}")
    return PathExplanation(
        instance_from_dict(doc["instance"]),
        tuple(step_from_dict(s) for s in doc["steps"]),
        doc.get("method", "psem"),
        doc.get("score_semantics", "prob"),
    )


def solve_result_to_dict(r: SolveResult) -> dict:
    return {
        "delta": r.delta.tolist(),
        "feasible": r.feasible,
        "margin": r.margin,
        "objective": r.objective,
        "iterations_used": r.iterations_used,
        "c_used": r.c_used,
        "step_size": r.step_size,
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def load_path(path) -> PathExplanation:
    with open(path, encoding="utf-8") as fh:
        return path_from_dict(json.load(fh))
