"""Command-line entry point: load a model and data, explain, write results.

Examples::

    pathwise --mode psem --data builtin:tabular --out runs/tab
    pathwise --mode psem-masks --data builtin:digits --segment-cell 4 --out runs/img
    pathwise --mode metrics --data builtin:text --out runs/metrics
    pathwise --mode psem --external-cmd "python3 my_model.py" --data x.json --out runs/ext

Configuration precedence is flags, then ``--config`` JSON, then ``--preset``.
Each instance gets ``<out>/<id>/result.json`` plus a rendering (word list,
per-step CSV or one PGM per step). Failures are reported as JSON on stderr and
in ``<out>/error.json`` (or the instance's ``error.json``) with exit status 1.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import os
import shlex
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from . import evaluation, io, presets, serialize
from .core import ExplainInstance, PathConfig, SolverConfig, margin, support
from .errors import InfeasiblePPError, NumericError, PathwiseError, ProcessError, ProtocolError
from .external import ExternalClassifier, ExternalModelSpec
from .masks import grid_segment, load_segmentation, solve_psem_masks
from .models import Classifier, ModelAutoencoder, load_model
from .path import solve_psem, validate_path
from .solver import solve_pp

logger = logging.getLogger("pathwise")

MODES = ("pp", "psem", "psem-masks", "input-reduction", "betapath", "metrics")
FORMATS = ("csv", "jsonl", "pgm", "vector")
BUILTINS = ("tabular", "text", "digits")
_EXT_FORMATS = {".csv": "csv", ".jsonl": "jsonl", ".pgm": "pgm", ".json": "vector"}
_SOLVER_FLAGS = {"c": "c", "kappa": "kappa", "eta": "eta", "gamma": "gamma", "max_iters": "max_iters",
                 "step_size": "step_size"}
NO_WORDS = "NO WORDS SELECTED"


class UsageError(PathwiseError, ValueError):
    """Inconsistent flags, such as mask mode on non-image data."""


def data_dir() -> Path:
    return Path(str(resources.files("pathwise") / "data"))


@dataclass
class RunConfig:
    mode: str
    classifier: Classifier
    dataset: io.Dataset
    path_config: PathConfig
    out: Path
    data_kind: str
    preset: str
    seed: int = 0
    jobs: int = 1
    segment_cell: int = 2
    seg_map: Path | None = None
    autoencoder: ModelAutoencoder | None = None
    ingest: Path | None = None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pathwise", description="Pertinent positives and monotone explanation paths.",
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--mode", choices=MODES, default="psem")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--model", help="model JSON file or builtin:{tabular,text,digits}")
    src.add_argument("--external-cmd", help="launch command of a JSON-lines model process")
    p.add_argument("--timeout-ms", type=int, default=30_000, help="per-request timeout for --external-cmd")
    p.add_argument("--data", nargs="+", help="data file(s) or builtin:{tabular,text,digits}")
    p.add_argument("--format", choices=FORMATS, help="input format (default: from the file extension)")
    p.add_argument("--vocab", help="vocabulary JSON for text data (list or {\"vocabulary\": [...]})")
    p.add_argument("--preset", choices=presets.PRESETS, default="toy")
    p.add_argument("--config", help="JSON file with solver/path fields")
    p.add_argument("--beta-schedule", help="comma-separated non-decreasing beta values")
    p.add_argument("--eta", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--c", type=float)
    p.add_argument("--steps", type=int, help="number of path steps")
    p.add_argument("--max-iters", type=int)
    p.add_argument("--step-size", type=float)
    p.add_argument("--autoencoder", help="model JSON (logit semantics, n -> n) for the gamma term")
    p.add_argument("--segment-cell", type=int, default=2, help="grid cell size in pixels for mask mode")
    p.add_argument("--seg-map", help="segmentation label map JSON for mask mode")
    p.add_argument("--ingest", help="externally computed paths JSON to score in metrics mode")
    p.add_argument("--out", default="pathwise-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    return p


def _parse_schedule(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise UsageError(f"bad --beta-schedule {text!r}") from exc


def resolve_path_config(args, file_cfg: dict | None = None) -> PathConfig:
    """Merge flags over the config file over the preset."""
    file_cfg = dict(file_cfg or {})
    base = presets.preset(args.preset)
    schedule = base.beta_schedule
    solver = {f.name: getattr(base.base, f.name) for f in fields(SolverConfig)}
    known = set(solver) | {"beta_schedule", "steps", "epsilon_diag"}
    unknown = set(file_cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    explicit = "beta_schedule" in file_cfg or bool(args.beta_schedule)
    if "beta_schedule" in file_cfg:
        schedule = tuple(float(b) for b in file_cfg.pop("beta_schedule"))
    steps = file_cfg.pop("steps", None)
    epsilon = file_cfg.pop("epsilon_diag", None)
    solver.update(file_cfg)
    for flag, name in _SOLVER_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            solver[name] = value
    if args.beta_schedule:
        schedule = _parse_schedule(args.beta_schedule)
    if args.steps is not None:
        steps = args.steps
    if steps is not None and steps != len(schedule):
        if explicit:
            raise UsageError(f"--steps {steps} disagrees with a {len(schedule)}-entry beta schedule")
        # stretch the preset's range geometrically to the requested length
        lo, hi = schedule[0], schedule[-1]
        schedule = tuple(np.geomspace(lo, hi, steps)) if lo > 0 else tuple(np.linspace(lo, hi, steps))
    if not schedule:
        raise UsageError("empty beta schedule")
    solver["beta"] = schedule[0]
    return PathConfig.from_schedule(schedule, SolverConfig(**solver), epsilon)


def _builtin(name: str) -> str:
    name = name.split(":", 1)[1]
    if name not in BUILTINS:
        raise UsageError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}")
    return name


def load_vocab(path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return list(data["vocabulary"] if isinstance(data, dict) else data)


def load_dataset(args) -> tuple[io.Dataset, str]:
    """Returns the dataset and its kind (tabular, text, image or vector)."""
    data = args.data or ["builtin:tabular"]
    if len(data) == 1 and data[0].startswith("builtin:"):
        name = _builtin(data[0])
        root = data_dir()
        if name == "tabular":
            return io.load_tabular_csv(root / "toy_tabular.csv"), "tabular"
        if name == "text":
            vocab = load_vocab(root / "text_vocab.json")
            return io.load_text_jsonl(root / "toy_text.jsonl", vocab), "text"
        return io.load_pgms(sorted((root / "digits").glob("*.pgm"))), "image"
    fmt = args.format or _EXT_FORMATS.get(Path(data[0]).suffix.lower())
    if fmt is None:
        raise UsageError(f"cannot infer the format of {data[0]}; pass --format")
    if fmt == "pgm":
        return io.load_pgms(data), "image"
    if len(data) > 1:
        raise UsageError(f"format {fmt} takes a single --data file")
    if fmt == "csv":
        return io.load_tabular_csv(data[0]), "tabular"
    if fmt == "jsonl":
        return io.load_text_jsonl(data[0], load_vocab(args.vocab) if args.vocab else None), "text"
    return io.load_vector_json(data[0]), "vector"


def load_classifier(args) -> Classifier:
    if args.external_cmd:
        return ExternalClassifier(ExternalModelSpec(tuple(shlex.split(args.external_cmd)), args.timeout_ms))
    model = args.model
    if model is None:
        data = args.data or ["builtin:tabular"]
        if not data[0].startswith("builtin:"):
            raise UsageError("--model or --external-cmd is required for non-builtin data")
        model = data[0]
    if model.startswith("builtin:"):
        model = data_dir() / f"{_builtin(model)}_model.json"
    return load_model(model)


def _read_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return cfg


def build_run_config(args) -> RunConfig:
    path_config = resolve_path_config(args, _read_config_file(args.config) if args.config else None)
    dataset, kind = load_dataset(args)
    if args.mode == "psem-masks" and kind != "image":
        raise UsageError("psem-masks needs image data (PGM)")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    classifier = load_classifier(args)
    ae = None
    if args.autoencoder:
        ae = ModelAutoencoder(load_model(args.autoencoder))
    elif path_config.base.gamma > 0:
        logger.warning("gamma=%g but no --autoencoder given; the reconstruction term is inactive",
                       path_config.base.gamma)
    return RunConfig(
        mode=args.mode,
        classifier=classifier,
        dataset=dataset,
        path_config=path_config,
        out=Path(args.out),
        data_kind=kind,
        preset=args.preset,
        seed=args.seed,
        jobs=args.jobs,
        segment_cell=args.segment_cell,
        seg_map=Path(args.seg_map) if args.seg_map else None,
        autoencoder=ae,
        ingest=Path(args.ingest) if args.ingest else None,
    )


# ---------------------------------------------------------------- rendering

def _words(dataset: io.Dataset, v) -> list[str]:
    idx = sorted(support(v), key=lambda j: (-v[j], j))
    return [dataset.feature_names[j] for j in idx]


def render_words(dataset: io.Dataset, vectors, labels) -> str:
    lines = []
    for label, v in zip(labels, vectors):
        words = _words(dataset, v)
        lines.append(f"{label}: {' '.join(words) if words else NO_WORDS}")
    return "\n".join(lines) + "\n"


def render_table(dataset: io.Dataset, vectors, labels, margins) -> str:
    names = dataset.feature_names or [f"x{j}" for j in range(len(vectors[0]))]
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step"] + names + ["margin"])
    for label, v, m in zip(labels, vectors, margins):
        w.writerow([label] + [f"{x:.6g}" for x in v] + [f"{m:.6g}"])
    return buf.getvalue()


def write_renderings(cfg: RunConfig, folder: Path, inst: ExplainInstance, vectors, margins) -> None:
    labels = ["x0"] + [f"step{i}" for i in range(1, len(vectors) + 1)]
    vectors = [inst.x0] + [np.asarray(v) for v in vectors]
    if cfg.data_kind == "text":
        io.atomic_write_text(folder / "words.txt", render_words(cfg.dataset, vectors, labels))
    elif cfg.data_kind == "image":
        h, w = cfg.dataset.image_shape
        for label, v in zip(labels, vectors):
            io.write_pgm(folder / f"{label}.pgm", v, h, w)
    else:
        margins = [margin(cfg.classifier.predict(inst.x0), inst.t0)] + list(margins)
        margins += [float("nan")] * (len(vectors) - len(margins))
        io.atomic_write_text(folder / "steps.csv", render_table(cfg.dataset, vectors, labels, margins))


# ------------------------------------------------------------------- modes

def _config_echo(cfg: RunConfig) -> dict:
    return {
        "mode": cfg.mode,
        "preset": cfg.preset,
        "seed": cfg.seed,
        "path": serialize.path_config_to_dict(cfg.path_config),
    }


def _instance_doc(cfg: RunConfig, inst: ExplainInstance, **body) -> dict:
    doc = {
        "schema": serialize.SCHEMA,
        "method": cfg.mode,
        "score_semantics": cfg.classifier.score_semantics,
        "instance": serialize.instance_to_dict(inst),
        **body,
        "config": _config_echo(cfg),
        "versions": serialize.versions(),
    }
    return doc


def _segmentation(cfg: RunConfig):
    h, w = cfg.dataset.image_shape
    seg = load_segmentation(cfg.seg_map) if cfg.seg_map else grid_segment(h, w, cfg.segment_cell)
    if seg.height not in (None, h) or seg.width not in (None, w):
        raise UsageError(f"segmentation is {seg.height}x{seg.width}, images are {h}x{w}")
    return seg


def explain_one(cfg: RunConfig, inst: ExplainInstance) -> tuple[dict, list, list]:
    """Result document, the vectors to render and their margins."""
    clf = cfg.classifier
    if cfg.mode == "psem":
        path = solve_psem(inst, clf, cfg.path_config, ae=cfg.autoencoder)
        report = validate_path(path, clf, cfg.path_config.epsilon_diag)
        doc = serialize.path_to_dict(path, _config_echo(cfg), report.to_dict())
        return doc, path.deltas, [s.margin for s in path.steps]
    if cfg.mode == "psem-masks":
        seg = _segmentation(cfg)
        path, details = solve_psem_masks(inst.x0, clf, cfg.path_config, seg, t0=inst.t0, domain=inst.domain)
        report = validate_path(path, clf, cfg.path_config.epsilon_diag)
        diag = [None if d is None else {"re_added": d.re_added, "relaxed": d.relaxed.tolist()} for d in details]
        doc = serialize.path_to_dict(path, _config_echo(cfg), report.to_dict(), segmentation=seg.to_dict(),
                                     step_diagnostics=diag)
        return doc, path.deltas, [s.margin for s in path.steps]
    if cfg.mode == "pp":
        res = solve_pp(inst, clf, cfg.path_config.base, ae=cfg.autoencoder)
        doc = _instance_doc(cfg, inst, result=serialize.solve_result_to_dict(res))
        return doc, [res.delta], [res.margin]
    if cfg.mode == "betapath":
        results = evaluation.cem_pp_beta_path(inst, clf, cfg.path_config.beta_schedule, cfg.path_config.base,
                                              ae=cfg.autoencoder)
        doc = _instance_doc(cfg, inst, beta=list(cfg.path_config.beta_schedule),
                            results=[serialize.solve_result_to_dict(r) for r in results])
        return doc, [r.delta for r in results], [r.margin for r in results]
    if cfg.mode == "input-reduction":
        red = evaluation.input_reduction(inst, clf)
        body = {
            "removed": red.removed,
            "trace": [t.tolist() for t in red.trace],
            "final": red.final.tolist(),
            "empty_selection": red.empty,
        }
        if red.empty:
            body["note"] = NO_WORDS if cfg.data_kind == "text" else "empty selection"
        if cfg.data_kind == "text":
            body["words"] = _words(cfg.dataset, red.final)
        doc = _instance_doc(cfg, inst, **body)
        return doc, [red.final], []
    raise UsageError(f"mode {cfg.mode!r} is not a per-instance mode")


def error_doc(exc: BaseException) -> dict:
    doc = {"schema": serialize.SCHEMA, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, InfeasiblePPError):
        doc.update(best_margin=exc.best_margin, c_used=exc.c_used)
    elif isinstance(exc, NumericError):
        doc["iteration"] = exc.iteration
    elif isinstance(exc, ProcessError):
        doc["returncode"] = exc.returncode
    return doc


def _run_instance(cfg: RunConfig, k: int, inst: ExplainInstance) -> tuple[int, dict | None, dict | None]:
    folder = cfg.out / f"{k:04d}"
    folder.mkdir(parents=True, exist_ok=True)
    try:
        doc, vectors, margins = explain_one(cfg, inst)
    except (PathwiseError, ValueError, ArithmeticError) as exc:
        if isinstance(exc, (ProcessError, ProtocolError)):
            # the shared model process is gone or out of sync; nothing else can succeed
            raise
        logger.error("instance %d: %s", k, exc)
        err = error_doc(exc)
        io.atomic_write_text(folder / "error.json", serialize.dumps(err))
        return k, None, err
    doc = {"id": k, **doc}
    io.atomic_write_text(folder / "result.json", serialize.dumps(doc))
    if vectors:
        write_renderings(cfg, folder, inst, vectors, margins)
    return k, doc, None


def _instances(cfg: RunConfig) -> list[ExplainInstance]:
    return cfg.dataset.instances(cfg.classifier)


def run_instances(cfg: RunConfig) -> int:
    insts = _instances(cfg)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(lambda kv: _run_instance(cfg, *kv), enumerate(insts)))
    else:
        outcomes = [_run_instance(cfg, k, inst) for k, inst in enumerate(insts)]
    failures = {k: err for k, _, err in outcomes if err is not None}
    summary = {
        "schema": serialize.SCHEMA,
        "mode": cfg.mode,
        "instances": len(insts),
        "succeeded": len(insts) - len(failures),
        "failed": {str(k): v for k, v in failures.items()},
        "config": _config_echo(cfg),
        "versions": serialize.versions(),
    }
    io.atomic_write_text(cfg.out / "summary.json", serialize.dumps(summary))
    if failures:
        sys.stderr.write(json.dumps({"error": "InstanceFailures", "failed": sorted(failures)}) + "\n")
        return 1
    return 0


def run_metrics(cfg: RunConfig) -> int:
    """PSEM and CEM-PP beta paths per instance, aggregated in the comparison table layout."""
    reports = []
    infeasible = 0

    def one(inst):
        path = solve_psem(inst, cfg.classifier, cfg.path_config, ae=cfg.autoencoder)
        cem = evaluation.cem_pp_beta_path(inst, cfg.classifier, cfg.path_config.beta_schedule, cfg.path_config.base,
                                          ae=cfg.autoencoder)
        return (evaluation.path_metrics(path.steps, cfg.classifier, inst.t0, "PSEM"),
                evaluation.path_metrics(cem, cfg.classifier, inst.t0, "CEM-PP"),
                sum(not r.feasible for r in cem))

    insts = _instances(cfg)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(one, insts))
    else:
        outcomes = [one(inst) for inst in insts]
    for psem_m, cem_m, bad in outcomes:
        reports += [psem_m, cem_m]
        infeasible += bad
    if cfg.ingest is not None:
        for method, k, steps in evaluation.load_external_paths(cfg.ingest):
            reports.append(evaluation.path_metrics(steps, cfg.classifier, insts[k].t0, method))
    report = evaluation.aggregate(reports)
    cfg.out.mkdir(parents=True, exist_ok=True)
    doc = json.loads(report.to_json())
    doc.update(schema=serialize.SCHEMA, cem_pp_infeasible_solves=infeasible, config=_config_echo(cfg),
               score_semantics=cfg.classifier.score_semantics, versions=serialize.versions())
    io.atomic_write_text(cfg.out / "metrics.json", serialize.dumps(doc))
    io.atomic_write_text(cfg.out / "metrics.csv", report.to_csv())
    sys.stdout.write(report.to_csv())
    return 0


def run(cfg: RunConfig) -> int:
    cfg.out.mkdir(parents=True, exist_ok=True)
    if not len(cfg.dataset):
        logger.warning("no instances to explain")
    if cfg.mode == "metrics":
        return run_metrics(cfg)
    return run_instances(cfg)


def _setup_logging():
    level = os.environ.get("PATHWISE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    cfg = None
    try:
        cfg = build_run_config(args)
        return run(cfg)
    except (PathwiseError, ValueError, KeyError, OSError, ArithmeticError) as exc:
        logger.debug("failure", exc_info=True)
        err = error_doc(exc)
        sys.stderr.write(json.dumps(err) + "\n")
        try:
            out.mkdir(parents=True, exist_ok=True)
            io.atomic_write_text(out / "error.json", serialize.dumps(err))
        except OSError:
            pass
        return 1
    finally:
        if cfg is not None and isinstance(cfg.classifier, ExternalClassifier):
            cfg.classifier.close()


if __name__ == "__main__":
    sys.exit(main())
