import json

import numpy as np
import pytest

from warmdsse.cli import eval_frac, main
from warmdsse.dataset import read_dataset


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--n", "100", "--seed", "3", "--out", str(d / "a.bin")]) == 0
    assert main(["train", "--dataset", str(d / "a.bin"), "--hidden", "8", "--epochs", "5",
                 "--out", str(d / "m.json")]) == 0
    return d


def test_gen_data_count(work):
    assert len(read_dataset(work / "a.bin")) == 100


def test_gen_data_bytes_repeat(work):
    assert main(["gen-data", "--n", "100", "--seed", "3", "--out", str(work / "b.bin")]) == 0
    assert (work / "a.bin").read_bytes() == (work / "b.bin").read_bytes()


def test_missing_feeder_exit_2(tmp_path):
    assert main(["gen-data", "--n", "2", "--feeder", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x.bin")]) == 2


def test_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOPE" + bytes(200))
    assert main(["train", "--dataset", str(p), "--out", str(tmp_path / "m.json")]) == 2


def test_train_writes_trace(work):
    lines = (work / "m.json.trace.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_hinge,val_hinge"
    assert len(lines) >= 2


def test_train_single_neuron(work):
    out = work / "t1.json"
    assert main(["train", "--dataset", str(work / "a.bin"), "--hidden", "1", "--epochs", "2",
                 "--epsilon", "1/2", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["T"] == 1


def test_train_rejects_other_layout(work, tmp_path):
    from warmdsse.dataset import write_dataset

    ds = read_dataset(work / "a.bin")
    ds.fingerprint = "f" * 64
    write_dataset(ds, tmp_path / "other.bin")
    assert main(["train", "--dataset", str(tmp_path / "other.bin"), "--hidden", "2", "--epochs", "1",
                 "--out", str(tmp_path / "m.json")]) == 2
    assert main(["train", "--dataset", str(tmp_path / "other.bin"), "--hidden", "2", "--epochs", "1",
                 "--skip-layout-check", "--out", str(tmp_path / "m.json")]) == 0


def _z_file(work, noise):
    ds = read_dataset(work / "a.bin")
    p = work / f"z_{noise}.json"
    p.write_text(json.dumps({"z": ds.Z[0].tolist(), "v_true": ds.V[0].tolist()}))
    return p


@pytest.mark.parametrize("init", ["nn", "flat", "pmu"])
def test_estimate_emits_report(work, init):
    out = work / f"est_{init}.json"
    assert main(["estimate", "--model", str(work / "m.json"), "--measurements", str(_z_file(work, 0)),
                 "--init", init, "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["init"] == init
    assert {"converged", "iterations", "nu", "mu", "cost_trace"} <= set(rep)
    assert len(rep["cost_trace"]) == rep["iterations"] + 1


def test_estimate_nn_needs_model(work):
    assert main(["estimate", "--measurements", str(_z_file(work, 0)), "--init", "nn"]) == 2


def test_estimate_wrong_length(work, tmp_path):
    p = tmp_path / "z.txt"
    p.write_text("1 2 3")
    assert main(["estimate", "--measurements", str(p), "--init", "flat"]) == 2


def test_bench_repeat_and_aggregates(work):
    args = ["bench", "--model", str(work / "m.json"), "--runs", "3", "--seed", "5", "--max-iter", "15"]
    assert main(args + ["--out", str(work / "r1.json"), "--hist", str(work / "h.csv")]) == 0
    assert main(args + ["--out", str(work / "r2.json")]) == 0
    assert (work / "r1.json").read_bytes() == (work / "r2.json").read_bytes()
    rep = json.loads((work / "r1.json").read_text())
    for m, agg in rep["aggregates"].items():
        rs = [r for r in rep["records"] if r["method"] == m]
        assert agg["runs"] == len(rs)
        assert agg["divergences"] == sum(not r["converged"] for r in rs)
        assert agg["mean_iterations"] == pytest.approx(np.mean([r["iterations"] for r in rs]), rel=1e-15)
        assert agg["mean_nu"] == pytest.approx(np.mean([r["nu"] for r in rs]), rel=1e-15)
    assert (work / "h.csv").read_text().count("\n") == 51


def test_bench_unknown_method(work):
    assert main(["bench", "--methods", "nn,magic", "--model", str(work / "m.json"),
                 "--out", str(work / "x.json")]) == 2


def test_reconfig_undefined_scenario(work):
    assert main(["reconfig", "--model", str(work / "m.json"), "--scenarios", "Z",
                 "--out", str(work / "x.json")]) == 2


def test_reconfig_runs(work):
    out = work / "rc.json"
    assert main(["reconfig", "--model", str(work / "m.json"), "--scenarios", "C", "--runs", "2",
                 "--max-iter", "10", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert set(rep) == {"C"}
    assert len(rep["C"]["records"]) == 4


def test_oracle3bus(capsys):
    assert main(["oracle3bus", "--points", "10"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "theta12,theta13,err12,err13"
    assert len(out) == 12


def test_parse_errors():
    assert main([]) == 2
    assert main(["train"]) == 2
    assert eval_frac("1/4") == 0.25
    assert eval_frac("1/sqrt2") == 2**-0.5
