import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from bayesadv.cli import main
from bayesadv.dataio import batches, fit_normalize, load_dataset
from bayesadv.network import Architecture, ParamParticle, backward_flat, init_params
from bayesadv.svgd import load_checkpoint


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["gen-synth", "--samples", "600", "--features", "8", "--seed", "7",
                 "--out", str(d / "d.bin"), "--split", "0.7,0.1,0.2"]) == 0
    return d


@pytest.fixture(scope="module")
def model(data_dir):
    out = data_dir / "m.json"
    rc = main(["train", "--train", str(data_dir / "d.train.bin"), "--val", str(data_dir / "d.val.bin"),
               "--out", str(out), "--arch", "8,4", "--particles", "2", "--epochs", "2", "--batch-size", "64"])
    assert rc == 0
    return out


def test_gen_synth_outputs(data_dir, tmp_path):
    d = load_dataset(data_dir / "d.bin")
    assert d.features.shape == (600, 8)
    parts = [load_dataset(data_dir / f"d.{k}.bin") for k in ("train", "val", "test")]
    assert sum(len(p) for p in parts) == 600
    assert json.loads((data_dir / "d.bin.config.json").read_text())["seed"] == 7
    args = ["gen-synth", "--samples", "300", "--features", "4", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a.bin")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.bin")]) == 0
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert np.array_equal(load_dataset(tmp_path / "a.csv").features, load_dataset(tmp_path / "a.bin").features)


def test_invalid_flag_exits_with_usage():
    r = subprocess.run([sys.executable, "-m", "bayesadv.cli", "gen-synth", "--samples", "abc", "--out", "x.bin"],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert "usage:" in r.stderr
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus"])
    assert exc.value.code == 2


def test_config_errors_exit_2(tmp_path, data_dir):
    assert main(["gen-synth", "--samples", "10", "--sparsity", "2", "--out", str(tmp_path / "x.bin")]) == 2
    assert main(["gen-synth", "--samples", "10", "--split", "0.5,0.6", "--out", str(tmp_path / "x.bin")]) == 2
    assert main(["train", "--train", str(data_dir / "d.train.bin"), "--out", str(tmp_path / "m.json"),
                 "--lr", "-1"]) == 2
    assert not (tmp_path / "m.json").exists()


def test_data_errors_exit_3(tmp_path, data_dir, model):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nope")
    assert main(["train", "--train", str(bad), "--out", str(tmp_path / "m.json")]) == 3
    assert main(["eval", "--model", str(bad), "--data", str(data_dir / "d.test.bin")]) == 3
    assert main(["eval", "--model", str(model), "--data", str(tmp_path / "missing.bin")]) == 3
    assert main(["gen-synth", "--samples", "20", "--features", "3", "--out", str(tmp_path / "w.bin")]) == 0
    assert main(["eval", "--model", str(model), "--data", str(tmp_path / "w.bin")]) == 3


def test_train_writes_checkpoint_metrics_and_config(model):
    e = load_checkpoint(model)
    assert len(e.particles) == 2 and e.architecture.layer_widths == (8, 8, 4, 1)
    metrics = json.loads(model.with_name("m.json.metrics.json").read_text())
    assert len(metrics["train_loss"]) == 2 and 0 <= metrics["val_auc"] <= 1
    cfg = json.loads(model.with_name("m.json.config.json").read_text())
    assert cfg["command"] == "train" and cfg["train_config"]["n_particles"] == 2


def test_single_particle_gamma_zero_is_sgd(data_dir, tmp_path):
    out = tmp_path / "sgd.json"
    rc = main(["train", "--train", str(data_dir / "d.train.bin"), "--out", str(out), "--particles", "1",
               "--gamma", "0", "--optimizer", "sgd", "--lr", "0.05", "--arch", "5", "--epochs", "2",
               "--batch-size", "32", "--seed", "3"])
    assert rc == 0
    tr, _ = fit_normalize(load_dataset(data_dir / "d.train.bin"))
    arch = Architecture((8, 5, 1))
    theta = init_params(arch, (3, 0)).flat()
    rng = np.random.default_rng(3)
    for _ in range(2):
        for idx in batches(len(tr), 32, rng):
            g, _ = backward_flat(ParamParticle.from_flat(arch, theta), tr.features[idx], tr.labels[idx])
            theta = theta - 0.05 * g
    assert load_checkpoint(out).theta()[0].tobytes() == theta.tobytes()


def test_zero_budget_adv_training_equals_clean(data_dir, tmp_path):
    base = ["train", "--train", str(data_dir / "d.train.bin"), "--arch", "4", "--epochs", "1", "--particles", "2"]
    assert main(base + ["--out", str(tmp_path / "a.json")]) == 0
    assert main(base + ["--out", str(tmp_path / "b.json"), "--adv", "--epsilon", "0"]) == 0
    a, b = load_checkpoint(tmp_path / "a.json"), load_checkpoint(tmp_path / "b.json")
    assert a.theta().tobytes() == b.theta().tobytes()


def test_eval_roc_and_tables(data_dir, model, tmp_path):
    roc_path, table = tmp_path / "roc.csv", tmp_path / "t.json"
    rc = main(["eval", "--model", str(model), "--data", str(data_dir / "d.test.bin"), "--roc", str(roc_path),
               "--budgets", "0,0.05,0.1", "--steps", "3", "--transfer", "--table", str(table),
               "--out", str(tmp_path / "eval.json")])
    assert rc == 0
    rows = list(csv.DictReader(open(roc_path)))
    fpr = [float(r["fpr"]) for r in rows]
    tpr = [float(r["tpr"]) for r in rows]
    assert (fpr[0], tpr[0], fpr[-1], tpr[-1]) == (0.0, 0.0, 1.0, 1.0)
    assert all(np.diff(fpr) >= 0) and all(np.diff(tpr) >= 0)
    tables = json.loads(table.read_text())
    assert [t["attack"] for t in tables] == ["pgd", "fgsm"]
    assert tables[0]["budgets"] == [0.0, 0.05, 0.1]
    report = json.loads((tmp_path / "eval.json").read_text())
    assert 0 <= report["auc"] <= 1
    assert (tmp_path / "eval.json.config.json").exists()


def test_attack_writes_raw_units(data_dir, model, tmp_path):
    out = tmp_path / "adv.bin"
    assert main(["attack", "--model", str(model), "--data", str(data_dir / "d.test.bin"), "--out", str(out),
                 "--epsilon", "0.1", "--malware-only"]) == 0
    clean, adv = load_dataset(data_dir / "d.test.bin"), load_dataset(out)
    benign = clean.labels == 0
    assert adv.features[benign].tobytes() == clean.features[benign].tobytes()
    rep = json.loads(out.with_name("adv.bin.report.json").read_text())
    assert rep["constraint_violations"] == 0 and rep["max_linf"] <= 0.1 + 1e-9


def test_riskgap_holds(data_dir, model, tmp_path):
    out = tmp_path / "risk.json"
    rc = main(["riskgap", "--model", str(model), "--data", str(data_dir / "d.test.bin"), "--out", str(out),
               "--epsilon", "0,0.1", "--steps", "3", "--batch-size", "25"])
    assert rc == 0
    rep = json.loads(out.read_text())
    assert rep["holds"] is True
    assert [r["epsilon"] for r in rep["runs"]] == [0.0, 0.1]
    assert rep["runs"][0]["gap"] == 0.0
    assert all(r["batches_holding"] == r["batches"] == 5 for r in rep["runs"])


def test_config_file_supplies_defaults(data_dir, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"samples": 50, "features": 3, "seed": 11}))
    assert main(["--config", str(cfg), "gen-synth", "--out", str(tmp_path / "c.bin")]) == 0
    d = load_dataset(tmp_path / "c.bin")
    assert d.features.shape == (50, 3)
    assert main(["--config", str(cfg), "gen-synth", "--samples", "20", "--out", str(tmp_path / "c.bin")]) == 0
    assert len(load_dataset(tmp_path / "c.bin")) == 20


def test_lemma1_and_gen_toy(tmp_path):
    out = tmp_path / "l1.json"
    rc = main(["lemma1", "--pad-bytes", "1000", "--byte", "0xA9", "--programs", "40", "--train-programs", "60",
               "--epochs", "2", "--particles", "2", "--out", str(out)])
    assert rc == 0
    rep = json.loads(out.read_text())
    assert rep["violations"] == 0 and rep["byte"] == 0xA9 and rep["n_programs"] == 20
    assert rep["max_linf"] <= rep["upsilon_eps"]

    toy = tmp_path / "toy"
    assert main(["gen-toy", "--programs", "10", "--seed", "2", "--out-dir", str(toy)]) == 0
    assert len(list(toy.glob("*.tprg"))) == 10
    assert load_dataset(toy / "features.bin").features.shape == (10, 259)
    rc = main(["lemma1", "--program-dir", str(toy), "--train-programs", "40", "--epochs", "1", "--particles", "1",
               "--upsilon", "observed", "--out", str(tmp_path / "l2.json")])
    assert rc == 0
    assert json.loads((tmp_path / "l2.json").read_text())["n_programs"] == 5
    assert main(["lemma1", "--programs", "4", "--upsilon", "wide", "--epochs", "1",
                 "--train-programs", "10", "--out", str(tmp_path / "l3.json")]) == 2
