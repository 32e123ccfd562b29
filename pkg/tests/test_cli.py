import csv
import json

import numpy as np
import pytest

from gbs_herald.cli import main
from gbs_herald.config import ConfigError, config_hash, load_config, validate_config
from gbs_herald.targets import cat_state

TARGET = {"kind": "cat", "alpha": 1.0, "parity": "even"}


def vacuum_config(pattern=(0,)):
    return {
        "name": "vacuum",
        "target": TARGET,
        "scheme": {"kind": "non-adaptive", "patterns": [list(pattern)]},
        "circuit": {"n_modes": 2, "layers": [{"inputs": {"0": {}, "1": {}}, "gates": [], "measured": [0]}]},
    }


def tmsv_config(r=0.6):
    return {
        "name": "tmsv",
        "target": TARGET,
        "scheme": {"kind": "non-adaptive", "patterns": [[0], [1], [2], [3]]},
        "circuit": {"n_modes": 2, "layers": [{
            "inputs": {"0": {"r": r}, "1": {"r": r, "phi": np.pi}},
            "gates": [{"type": "beamsplitter", "modes": [0, 1], "theta": np.pi / 4}],
            "measured": [0]}]},
        "wigner": {"q": [-3, 3, 5], "p": [-3, 3, 5]},
        "sweep": {"eta": [1.0, 0.8]},
    }


def small_opt_config():
    return {
        "name": "small",
        "target": {"kind": "cat", "alpha": 1.0, "parity": "odd"},
        "scheme": {"kind": "non-adaptive", "n_modes": 2, "measured": [0], "patterns": [[1]], "r_max": 0.5},
        "optimizer": {"budget": 30, "restarts": 2, "polish": 1, "polish_budget": 30},
        "seed": 3,
    }


def write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_vacuum_simulate(tmp_path):
    cfg = write(tmp_path, vacuum_config())
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    s = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert s["total_probability"] == pytest.approx(1)
    c0 = cat_state(1.0, "even", 0.0, 40).amps[0]
    assert s["min_fidelity"] == pytest.approx(abs(c0) ** 2)
    assert s["config_hash"] == config_hash(vacuum_config())


def test_tmsv_branches_csv(tmp_path):
    cfg = write(tmp_path, tmsv_config())
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == 0
    r = 0.6
    got = {row["pattern"]: float(row["P"]) for row in rows(tmp_path / "o" / "branches.csv")
           if row["abort"] == "0"}
    for n in range(4):
        assert got[str(n)] == pytest.approx(np.tanh(r) ** (2 * n) / np.cosh(r) ** 2, abs=1e-10)
    assert (tmp_path / "o" / "wigner_1.csv").exists()


def test_simulate_is_byte_identical(tmp_path):
    cfg = write(tmp_path, tmsv_config())
    for d in ("a", "b"):
        assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / d)]) == 0
    for f in ("branches.csv", "summary.json", "wigner_2.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_optimize_is_byte_identical_and_reusable(tmp_path):
    cfg = write(tmp_path, small_opt_config())
    for d in ("a", "b"):
        assert main(["optimize", "--config", str(cfg), "--out-dir", str(tmp_path / d)]) == 0
    for f in ("branches.csv", "summary.json", "params.json", "trace.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    params = tmp_path / "a" / "params.json"
    assert main(["simulate", "--config", str(cfg), "--params", str(params),
                 "--out-dir", str(tmp_path / "c")]) == 0
    a = json.loads((tmp_path / "a" / "summary.json").read_text())
    c = json.loads((tmp_path / "c" / "summary.json").read_text())
    assert c["total_probability"] == pytest.approx(a["total_probability"], abs=1e-14)
    assert c["min_fidelity"] == pytest.approx(a["min_fidelity"], abs=1e-12)


def test_seed_override_changes_trace(tmp_path):
    cfg = write(tmp_path, small_opt_config())
    main(["optimize", "--config", str(cfg), "--out-dir", str(tmp_path / "a")])
    main(["optimize", "--config", str(cfg), "--seed", "11", "--out-dir", str(tmp_path / "b")])
    assert (tmp_path / "a" / "trace.csv").read_bytes() != (tmp_path / "b" / "trace.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["seed"] == 11


def test_sweep_eta_one_matches_simulate(tmp_path):
    cfg = write(tmp_path, tmsv_config())
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "s")]) == 0
    assert main(["sweep-loss", "--config", str(cfg), "--out-dir", str(tmp_path / "w")]) == 0
    sim = {r["pattern"]: r for r in rows(tmp_path / "s" / "branches.csv")}
    sweep = [r for r in rows(tmp_path / "w" / "loss_sweep.csv") if float(r["eta"]) == 1.0]
    assert sweep
    for r in sweep:
        assert r["P"] == sim[r["pattern"]]["P"] and r["F"] == sim[r["pattern"]]["F"]
    lossy = {r["pattern"]: float(r["P"]) for r in rows(tmp_path / "w" / "loss_sweep.csv")
             if float(r["eta"]) == 0.8 and r["abort"] == "0"}
    assert lossy["3"] < float(sim["3"]["P"])


def test_report(tmp_path, capsys):
    cfg = write(tmp_path, tmsv_config())
    main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)])
    assert main(["report", "--out-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "%" in out and "tmsv" in out


def test_exit_codes(tmp_path):
    bad = vacuum_config()
    bad["mystery"] = 1
    assert main(["simulate", "--config", str(write(tmp_path, bad, "bad.json"))]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["simulate", "--config", str(tmp_path / "broken.json")]) == 2
    zero = write(tmp_path, vacuum_config((1,)), "zero.json")
    assert main(["simulate", "--config", str(zero), "--out-dir", str(tmp_path / "z")]) == 4
    big = vacuum_config()
    big["target"] = {"kind": "cat", "alpha": 9.0, "parity": "even"}
    assert main(["simulate", "--config", str(write(tmp_path, big, "big.json")),
                 "--out-dir", str(tmp_path / "b")]) == 3
    assert main(["report", "--out-dir", str(tmp_path / "nothing")]) == 2


def test_config_validation(tmp_path):
    validate_config(tmsv_config())
    bad = tmsv_config()
    bad["scheme"]["colour"] = "red"
    with pytest.raises(ConfigError):
        validate_config(bad)
    cfg = load_config(write(tmp_path, tmsv_config()), seed=5)
    assert cfg.seed == 5
    assert config_hash(tmsv_config()) == config_hash(json.loads(json.dumps(tmsv_config())))


def test_shipped_configs_validate():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.json"))
    assert files
    for f in files:
        load_config(f)


def test_adaptive_warm_start_from_single_layer(tmp_path):
    target = {"kind": "cat", "alpha": 1.0, "parity": "even"}
    single = {"name": "one", "target": target, "seed": 2,
              "scheme": {"kind": "non-adaptive", "n_modes": 3, "measured": [0, 1], "patterns": [[1, 1]],
                         "r_max": 0.5},
              "optimizer": {"budget": 40, "restarts": 1, "polish": 0}}
    assert main(["optimize", "--config", str(write(tmp_path, single, "one.json")),
                 "--out-dir", str(tmp_path / "one")]) == 0
    adaptive = {"name": "two", "target": target, "seed": 2,
                "scheme": {"kind": "adaptive", "n_modes": 3, "r_max": 0.5, "primary": [[1], [1]],
                           "layout": {"first_modes": [0, 1, 2], "second_new": []}, "strategy": "joint"},
                "optimizer": {"budget": 5, "restarts": 1}}
    assert main(["optimize", "--config", str(write(tmp_path, adaptive, "two.json")),
                 "--params", str(tmp_path / "one" / "params.json"), "--out-dir", str(tmp_path / "two")]) == 0
    a = json.loads((tmp_path / "one" / "summary.json").read_text())
    b = json.loads((tmp_path / "two" / "summary.json").read_text())
    # restart 0 starts at the embedded source, and the incumbent never gets worse
    assert b["total_probability"] + b["min_fidelity"] >= a["total_probability"] + a["min_fidelity"] - 1e-12
    bad = dict(adaptive, scheme=dict(adaptive["scheme"], layout={"first_modes": [0, 1], "second_new": [2]}))
    two = json.loads((tmp_path / "two" / "params.json").read_text())
    assert "first" in two
    assert main(["optimize", "--config", str(write(tmp_path, bad, "bad.json")),
                 "--params", str(tmp_path / "two" / "params.json"), "--out-dir", str(tmp_path / "b")]) == 2
