import csv
import json

import numpy as np
import pytest

from conftest import fake_model_cmd
from pathwise import presets
from pathwise.cli import NO_WORDS, build_parser, data_dir, load_vocab, main, resolve_path_config
from pathwise.io import load_pgms, load_tabular_csv, load_text_jsonl
from pathwise.models import load_model
from pathwise.path import validate_path
from pathwise.serialize import load_path

FAST = ["--max-iters", "200"]


def read(path):
    return json.loads(path.read_text())


def test_psem_on_bundled_tabular(tmp_path):
    assert main(["--mode", "psem", "--data", "builtin:tabular", "--out", str(tmp_path)] + FAST) == 0
    results = sorted(tmp_path.glob("*/result.json"))
    assert len(results) == 24
    doc = read(results[0])
    assert doc["schema"] == "pathwise/1"
    assert len(doc["steps"]) == 5
    norms = [s["l1_norm"] for s in doc["steps"]]
    assert all(a >= b for a, b in zip(norms, norms[1:]))
    assert doc["validation"]["ok"]
    assert all("c_used" in s for s in doc["steps"])
    assert doc["config"]["path"]["base"]["step_size"] == 0.01
    assert doc["score_semantics"] == "prob"
    rows = list(csv.reader((results[0].parent / "steps.csv").open()))
    assert rows[0][0] == "step" and rows[0][-1] == "margin" and len(rows) == 7
    assert read(tmp_path / "summary.json")["succeeded"] == 24


def test_result_file_round_trips_through_validation(tmp_path):
    assert main(["--data", "builtin:text", "--out", str(tmp_path)] + FAST) == 0
    clf = load_model(data_dir() / "text_model.json")
    for result in sorted(tmp_path.glob("*/result.json"))[:4]:
        doc = read(result)
        again = validate_path(load_path(result), clf)
        assert again.to_dict() == doc["validation"]


def test_metrics_mode_table(tmp_path, capsys):
    args = ["--mode", "metrics", "--data", "builtin:text", "--out", str(tmp_path)] + FAST
    assert main(args) == 0
    rows = list(csv.reader((tmp_path / "metrics.csv").open()))
    assert rows[0] == ["metric", "method", "1", "2", "3", "4", "5"]
    by_key = {(r[0], r[1]): r[2:] for r in rows[1:]}
    assert by_key[("Feature Consistency", "PSEM")] == ["--"] + ["100 (0.0)"] * 4
    assert by_key[("Prediction Consistency", "PSEM")] == ["100 (0.0)"] * 5
    doc = read(tmp_path / "metrics.json")
    assert doc["counts"] == {"PSEM": 16, "CEM-PP": 16}
    assert "Prediction Consistency" in capsys.readouterr().out


def test_input_reduction_notes_empty_selection(tmp_path):
    assert main(["--mode", "input-reduction", "--data", "builtin:text", "--out", str(tmp_path)]) == 0
    docs = [read(p) for p in sorted(tmp_path.glob("*/result.json"))]
    empty = [d for d in docs if d["empty_selection"]]
    assert empty, "the bundled text model sends the empty document to class 0"
    assert all(d["note"] == NO_WORDS and d["words"] == [] for d in empty)
    words = (tmp_path / f"{empty[0]['id']:04d}" / "words.txt").read_text()
    assert NO_WORDS in words


def test_mask_mode_writes_images(tmp_path):
    args = ["--mode", "psem-masks", "--data", "builtin:digits", "--segment-cell", "4", "--out", str(tmp_path)]
    assert main(args + FAST) == 0
    first = sorted(tmp_path.glob("0000/*.pgm"))
    assert [p.name for p in first] == ["step1.pgm", "step2.pgm", "step3.pgm", "step4.pgm", "step5.pgm", "x0.pgm"]
    doc = read(tmp_path / "0000" / "result.json")
    assert doc["segmentation"]["n_segments"] == 4
    assert doc["validation"]["ok"]


def test_mask_mode_needs_images(tmp_path, capsys):
    assert main(["--mode", "psem-masks", "--data", "builtin:tabular", "--out", str(tmp_path)]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "UsageError"
    assert read(tmp_path / "error.json")["error"] == "UsageError"


def test_bad_input_file_reports_json_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,-2\n")
    out = tmp_path / "out"
    assert main(["--data", str(bad), "--model", "builtin:tabular", "--out", str(out)]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "IngestionError" and "column 'b'" in err["message"]


def test_pp_and_betapath_modes(tmp_path):
    assert main(["--mode", "pp", "--data", "builtin:tabular", "--out", str(tmp_path / "pp")] + FAST) == 0
    doc = read(tmp_path / "pp" / "0000" / "result.json")
    assert doc["result"]["feasible"] and doc["result"]["c_used"] >= 10
    assert main(["--mode", "betapath", "--data", "builtin:tabular", "--out", str(tmp_path / "bp")] + FAST) == 0
    doc = read(tmp_path / "bp" / "0000" / "result.json")
    assert len(doc["results"]) == len(doc["beta"]) == 5


def test_parallel_jobs_match_serial(tmp_path):
    base = ["--data", "builtin:digits", "--max-iters", "100"]
    assert main(base + ["--out", str(tmp_path / "a")]) == 0
    assert main(base + ["--out", str(tmp_path / "b"), "--jobs", "3"]) == 0
    for p in sorted((tmp_path / "a").glob("*/result.json")):
        assert p.read_bytes() == (tmp_path / "b" / p.parent.name / p.name).read_bytes()


def test_external_model_run(tmp_path):
    data = tmp_path / "x.json"
    data.write_text(json.dumps([{"x0": [0.9, 0.5, 0.8]}, {"x0": [1.0, 0.2, 0.6]}]))
    out = tmp_path / "out"
    cmd = " ".join(fake_model_cmd("linear"))
    assert main(["--external-cmd", cmd, "--data", str(data), "--out", str(out), "--max-iters", "100"]) == 0
    doc = read(out / "0000" / "result.json")
    assert doc["validation"]["ok"]
    assert doc["instance"]["t0"] == 0


def test_external_crash_fails_cleanly(tmp_path, capsys):
    data = tmp_path / "x.json"
    data.write_text(json.dumps({"x0": [0.9, 0.5]}))
    cmd = " ".join(fake_model_cmd("crash"))
    assert main(["--external-cmd", cmd, "--data", str(data), "--out", str(tmp_path / "o")]) == 1
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "ProcessError" and err["returncode"] == 3


def test_config_precedence(tmp_path):
    cfg_file = {"eta": 7.0, "kappa": 0.3, "beta_schedule": [0.1, 0.2, 0.3]}
    args = build_parser().parse_args(["--preset", "heloc", "--kappa", "0.05"])
    cfg = resolve_path_config(args, cfg_file)
    assert cfg.base.kappa == 0.05
    assert cfg.base.eta == 7.0
    assert cfg.beta_schedule == (0.1, 0.2, 0.3)
    assert cfg.base.c == 10.0
    plain = resolve_path_config(build_parser().parse_args(["--preset", "heloc"]))
    assert plain.base.eta == 30.0 and plain.n_steps == 5


def test_steps_stretch_the_preset_range():
    cfg = resolve_path_config(build_parser().parse_args(["--preset", "mnist", "--steps", "3"]))
    assert cfg.beta_schedule == pytest.approx((0.0001, 0.01, 1.0))
    with pytest.raises(ValueError):
        resolve_path_config(build_parser().parse_args(["--beta-schedule", "0.1,0.2", "--steps", "3"]))


def test_unknown_config_key_rejected():
    with pytest.raises(ValueError, match="unknown config keys"):
        resolve_path_config(build_parser().parse_args([]), {"lr": 1})


def test_preset_values():
    assert presets.preset_table("mnist") == {
        "beta": [0.0001, 0.001, 0.01, 0.1, 1.0], "eta": 10.0, "N": 5, "kappa": 0.75, "gamma": 100.0, "c": 10.0,
    }
    with pytest.raises(KeyError):
        presets.preset("imagenet")


def test_bundled_assets_are_confident():
    root = data_dir()
    sets = {
        "tabular": load_tabular_csv(root / "toy_tabular.csv"),
        "text": load_text_jsonl(root / "toy_text.jsonl", load_vocab(root / "text_vocab.json")),
        "digits": load_pgms(sorted((root / "digits").glob("*.pgm"))),
    }
    assert sum(len(ds) for ds in sets.values()) >= 50
    assert len(sets["tabular"].feature_names) == 6
    assert len(sets["text"].feature_names) == 12
    assert sets["digits"].image_shape == (8, 8)
    for name, ds in sets.items():
        clf = load_model(root / f"{name}_model.json")
        for v in ds.vectors:
            p = np.sort(clf.predict(v))
            assert p[-1] - p[-2] >= presets.preset_table("toy")["kappa"]
