import json

import jsonschema
import pytest

from conftest import DATA
from dso.cli import load_schema, run
from dso.mlp import write_jsonl_dataset
from dso.sim import campaign_dataset, default_domain, gen_kernel, sweep

DMON = """\
#Entity   SMACT  SMOCC  TENSO  DRAMA  FP64A  FP32A  FP16A  INTAC
ID
GPU 0     0.80   0.50   0.00   0.30   0.01   0.40   0.00   0.10
GPU 1     N/A    N/A    N/A    N/A    N/A    N/A    N/A    N/A
GPU 0     0.82   0.52   0.00   0.31   0.01   0.42   0.00   0.11
"""


def invoke(capsys, *argv):
    code = run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def check(doc, name):
    jsonschema.validate(doc, load_schema(name))
    assert doc["format_version"] == 1


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    k = gen_kernel(5, name="kern")
    import numpy as np

    pcsv, tcsv = sweep(k, default_domain(), 0.01, np.random.default_rng(0))
    X, Y, _ = campaign_dataset(6, 0, default_domain())
    paths = {
        "ptx": root / "k.ptx",
        "dcgm": root / "k.csv",
        "power": root / "p.csv",
        "time": root / "t.csv",
        "dataset": root / "ds.jsonl",
        "domain": root / "dom.json",
        "dmon": root / "dmon.txt",
    }
    paths["ptx"].write_text(k.ptx_source)
    paths["dcgm"].write_text(k.dcgm_log)
    paths["power"].write_text(pcsv)
    paths["time"].write_text(tcsv)
    paths["dataset"].write_text(write_jsonl_dataset(X, Y))
    paths["domain"].write_text(json.dumps(default_domain().to_dict()))
    paths["dmon"].write_text(DMON)
    paths["root"] = root
    return paths


def test_features_ptx(capsys, files):
    code, out, _ = invoke(capsys, "features", "ptx", files["ptx"])
    assert code == 0
    check(json.loads(out), "features_ptx")


def test_features_ptx_fixture_with_several_kernels(capsys):
    code, out, _ = invoke(capsys, "features", "ptx", DATA / "multi_kernel.ptx")
    assert code == 0
    doc = json.loads(out)
    check(doc, "features_ptx")
    assert len(doc["kernels"]) > 1


def test_features_dcgm(capsys, files):
    code, out, _ = invoke(capsys, "features", "dcgm", files["dcgm"])
    assert code == 0
    check(json.loads(out), "features_dcgm")


def test_fit_train_predict_optimize_chain(capsys, files):
    root = files["root"]
    code, out, _ = invoke(capsys, "fit", "--power", files["power"], "--time", files["time"],
                          "--out", root / "fit.json")
    assert code == 0 and out == ""
    fit = json.loads((root / "fit.json").read_text())
    check(fit, "fit")

    code, out, _ = invoke(capsys, "train", "--dataset", files["dataset"], "--out", root / "m.json",
                          "--grid", "0.1:4", "--epochs", 5, "--seed", 3)
    assert code == 0
    check(json.loads(out), "train")
    check(json.loads((root / "m.json").read_text()), "model")

    code, out, _ = invoke(capsys, "predict", "--model", root / "m.json", "--ptx", files["ptx"],
                          "--dcgm", files["dcgm"], "--out", root / "pred.json")
    assert code == 0
    check(json.loads((root / "pred.json").read_text()), "predict")

    for params in (root / "fit.json", root / "pred.json"):
        code, out, _ = invoke(capsys, "optimize", "--params", params, "--domain", files["domain"],
                              "--eta", 0.8, "--oracle")
        assert code == 0
        doc = json.loads(out)
        check(doc, "optimize")
        assert doc["oracle"]["agrees"] is True


def test_optimize_bare_params_default_domain(capsys, files):
    path = files["root"] / "bare.json"
    path.write_text(json.dumps(gen_kernel(2).truth.to_dict()))
    code, out, _ = invoke(capsys, "optimize", "--params", path, "--eta", 0.5, "--pmax", 250)
    assert code == 0
    doc = json.loads(out)
    check(doc, "optimize")
    assert "oracle" not in doc


def test_simulate_small(capsys, files):
    ds = files["root"] / "sim.jsonl"
    code, out, _ = invoke(capsys, "simulate", "--corpus", 5, "--test", 2, "--epochs", 2,
                          "--etas", "0,1", "--seed", 4, "--dataset-out", ds)
    assert code == 0
    doc = json.loads(out)
    check(doc, "simulate")
    assert [s["eta"] for s in doc["sweep"]] == [0.0, 1.0]
    assert len(ds.read_text().splitlines()) == 5


def test_simulate_seed_from_environment(capsys, monkeypatch):
    args = ("simulate", "--corpus", 4, "--test", 1, "--epochs", 1, "--etas", "0.5")
    monkeypatch.setenv("DSO_SEED", "9")
    _, from_env, _ = invoke(capsys, *args)
    monkeypatch.delenv("DSO_SEED")
    _, explicit, _ = invoke(capsys, *args, "--seed", 9)
    assert from_env == explicit and json.loads(explicit)["seed"] == 9
    monkeypatch.setenv("DSO_SEED", "nope")
    code, _, _ = invoke(capsys, *args)
    assert code == 2


def test_convert_dcgm(capsys, files):
    out_csv = files["root"] / "conv.csv"
    code, _, _ = invoke(capsys, "convert-dcgm", files["dmon"], "--interval", 0.5, "--gpu", 0,
                        "--out", out_csv)
    assert code == 0
    lines = out_csv.read_text().splitlines()
    assert lines[0].startswith("timestamp,SMACT") and len(lines) == 3
    code, out, _ = invoke(capsys, "features", "dcgm", out_csv)
    assert code == 0 and json.loads(out)["metrics"]["smact"] == pytest.approx(0.81)


def test_eta_out_of_range_is_usage_error(capsys, files):
    code, out, err = invoke(capsys, "--json-errors", "optimize", "--params", files["root"] / "fit.json",
                            "--eta", 1.5)
    assert code == 2 and out == ""
    doc = json.loads(err)
    check(doc, "error")
    assert doc["error"] == "EtaOutOfRange"


def test_json_errors_flag_anywhere(capsys, files):
    bad = files["root"] / "open.ptx"
    bad.write_text(".version 7.5\n.visible .entry k(\n)\n{\n\tret;\n")
    code, _, err = invoke(capsys, "features", "ptx", bad, "--json-errors")
    doc = json.loads(err)
    check(doc, "error")
    assert code == 1 and doc["error"] == "MalformedPtx"


def test_text_errors(capsys):
    code, _, err = invoke(capsys, "features", "ptx", "/nonexistent/file.ptx")
    assert code == 2 and err.startswith("dso: UsageError:")


@pytest.mark.parametrize("argv", [
    (),
    ("bogus",),
    ("train", "--dataset", "x.jsonl"),
    ("simulate", "--corpus", "0"),
])
def test_usage_errors(capsys, argv):
    code, _, err = invoke(capsys, "--json-errors", *argv)
    assert code == 2
    assert json.loads(err)["error"] == "UsageError"


def test_bad_grid(capsys, files):
    code, _, err = invoke(capsys, "--json-errors", "train", "--dataset", files["dataset"],
                          "--out", files["root"] / "x.json", "--grid", "0.1-8")
    assert code == 2 and json.loads(err)["error"] == "UsageError"


def test_module_error_exit_code(capsys, files):
    bad = files["root"] / "bad_domain.json"
    bad.write_text(json.dumps({"core_freqs_mhz": []}))
    code, _, err = invoke(capsys, "--json-errors", "optimize", "--params", files["root"] / "bare.json",
                          "--domain", bad, "--eta", 0.5)
    assert code == 1 and json.loads(err)["error"] == "InvalidDomain"


def test_output_is_canonical(capsys, files):
    _, a, _ = invoke(capsys, "features", "dcgm", files["dcgm"])
    _, b, _ = invoke(capsys, "features", "dcgm", files["dcgm"])
    assert a == b and a.endswith("\n")
    assert a == json.dumps(json.loads(a), indent=2, sort_keys=True) + "\n"
