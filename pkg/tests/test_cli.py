import json
import subprocess
import sys

import pytest

from tumorbound import cli, io
from tumorbound.gradcheck import run_suite, summarize


def run(*args):
    return cli.main([str(a) for a in args])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("gen", "--out", d / "data", "--train", 24, "--val", 6, "--test", 6,
               "--patients", 12, "--seed", 2) == 0
    assert run("train", "--data", d / "data", "--model", d / "m.json", "--epochs", 4,
               "--batch-size", 8, "--hidden", 16, "--seed", 2) == 0
    return d


def test_gen_writes_counts_and_patients(workdir):
    ds = io.Dataset(workdir / "data")
    assert [len(ds.split(s)) for s in io.SPLITS] == [24, 6, 6]
    assert len({e["patient_id"] for e in ds.entries}) == 12
    assert ds.n_vertices == 90


def test_train_checkpoint_and_history(workdir):
    doc = json.loads((workdir / "m.json").read_text())
    assert doc["train_config"] == {"lr": 0.01, "momentum": 0.9, "weight_decay": 0.0001,
                                   "batch_size": 8, "epochs": 4}
    assert doc["dims"] == {"D": 34, "Hd": 16, "K": 3, "N": 90, "C": 32}
    hist = io.read_history(workdir / "m.history.jsonl")
    assert [h["epoch"] for h in hist] == [0, 1, 2, 3]
    assert all("wall_time" not in h for h in hist)


def test_eval_report_and_figure(workdir, capsys):
    assert run("eval", "--data", workdir / "data", "--model", workdir / "m.json",
               "--figure", workdir / "eval.png") == 0
    header = capsys.readouterr().out.splitlines()[0]
    assert header.split("\t") == ["split", "F1", "Accuracy", "AUC", "Precision", "Recall", "DSC"]
    rep = json.loads((workdir / "m.eval.json").read_text())
    assert rep["dsc"] == 100.0 and rep["n_slices"] == 6
    assert sum(map(sum, rep["confusion"])) == 6 * 90
    assert (workdir / "eval.png").read_bytes()[:4] == b"\x89PNG"


def test_perturb_zero_equals_default_and_flags_compose(workdir):
    base = [workdir / "data", "--model", workdir / "m.json"]
    run("eval", "--data", *base, "--out", workdir / "a.json")
    run("eval", "--data", *base, "--out", workdir / "b.json", "--perturb", 0)
    a = json.loads((workdir / "a.json").read_text())
    b = json.loads((workdir / "b.json").read_text())
    assert a["metrics"] == b["metrics"]
    run("eval", "--data", *base, "--out", workdir / "c.json", "--no-pyrafeat", "--no-coordpos")
    c = json.loads((workdir / "c.json").read_text())
    assert c["config"]["pyramid"] is False and c["config"]["coordpos"] is False


def test_infer_svg_has_ninety_segments(workdir):
    pid = io.Dataset(workdir / "data").split("test")[0]["patient_id"]
    idx = io.Dataset(workdir / "data").split("test")[0]["slice_index"]
    assert run("infer", "--data", workdir / "data", "--model", workdir / "m.json",
               "--slice", f"{pid}:{idx}", "--out", workdir / "o.svg", "--ppm", workdir / "o.ppm") == 0
    svg = (workdir / "o.svg").read_text()
    assert svg.split('<g id="boundary"')[1].split("</g>")[0].count("<line") == 90
    assert (workdir / "o.ppm").read_bytes().startswith(b"P6\n64 64\n255\n")
    assert run("infer", "--data", workdir / "data", "--model", workdir / "m.json",
               "--slice", "P9999:0", "--out", workdir / "x.svg") == 2
    assert run("infer", "--data", workdir / "data", "--model", workdir / "m.json",
               "--slice", "nonsense", "--out", workdir / "x.svg") == 1


def test_biomarker_report(workdir):
    assert run("biomarker", "--data", workdir / "data", "--model", workdir / "m.json",
               "--figure", workdir / "roc.png") == 0
    rep = json.loads((workdir / "m.biomarker.json").read_text())
    assert set(rep["rows"]) == {"upper_bound", "prediction"}
    assert sorted(rep["fit_patients"] + rep["held_out_patients"]) == sorted(rep["mvi"])
    for row in rep["rows"].values():
        for part in ("fit", "held_out"):
            assert -1.0 <= row[part]["j"] <= 1.0
    assert (workdir / "roc.png").read_bytes()[:4] == b"\x89PNG"


def test_split_patients_is_stratified():
    pids = [f"P{i}" for i in range(10)]
    labels = [0] * 6 + [1] * 4
    fit, held = cli.split_patients(pids, labels, 0.5, seed=0)
    assert sorted(fit + held) == sorted(pids)
    assert sum(int(p[1:]) >= 6 for p in fit) == 2
    assert cli.split_patients(pids, labels, 0.5, seed=0) == (fit, held)


def test_epochs_zero_saves_initial_parameters(workdir):
    assert run("train", "--data", workdir / "data", "--model", workdir / "z.json", "--epochs", 0) == 0
    doc = json.loads((workdir / "z.json").read_text())
    assert doc["best_epoch"] == -1
    assert (workdir / "z.history.jsonl").read_text() == ""


def test_usage_and_data_errors(workdir, tmp_path):
    with pytest.raises(SystemExit) as exc:
        run()
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run("train")
    assert exc.value.code == 1
    assert run("eval", "--data", workdir / "data", "--model", workdir / "m.json", "--n-vertices", 3) == 1
    assert run("train", "--data", workdir / "data", "--model", tmp_path / "q.json", "--lr", -1) == 1
    assert run("gen", "--out", tmp_path / "g", "--train", 0, "--val", 0, "--test", 0) == 1
    assert run("train", "--data", tmp_path / "nowhere") == 2
    assert run("eval", "--data", workdir / "data", "--model", tmp_path / "missing.json") == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"format_version": "9.0"}))
    assert run("eval", "--data", workdir / "data", "--model", bad) == 2


def test_gradcheck_passes_and_detects_fault(tmp_path, capsys):
    assert run("gradcheck", "--out", tmp_path / "g.json") == 0
    rep = json.loads((tmp_path / "g.json").read_text())
    assert rep["passed"] and max(rep["max_rel_error"].values()) < 1e-5
    assert run("gradcheck", "--inject-fault", "gelu-sign") == 3
    assert "worst:" in capsys.readouterr().err


def test_gradcheck_suite_is_tight():
    assert max(summarize(run_suite(20, seed=1)).values()) < 1e-6


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tumorbound", "gradcheck", "--instances", "2"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("tensor\tmax_rel_error\tstatus")
