import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nnfeedback.cli import main
from nnfeedback.config import (
    ExperimentConfig,
    SamplerSpec,
    bundled_config_path,
    dump_config,
    load_config,
)
from nnfeedback.errors import ConfigError, DimensionMismatchError


def small_lc(**training):
    d = {
        "name": "lc_small",
        "system": {"name": "lc_circuit", "params": {}},
        "network": {"L": 1},
        "training": {
            "initial_conditions": {"named": [{"name": "e1", "value": [1.0, 0.0, 0.0]}]},
            "beta": 0.1, "T": 2.0, "n_steps": 100, "max_iters": 3,
            "bb_orientation": "standard",
        },
        "evaluation": {
            "initial_conditions": {"named": [{"name": "e1", "value": [1.0, 0.0, 0.0]}]},
            "T_val": 2.0, "n_steps": 100, "baselines": ["uncontrolled", "lqr"],
        },
    }
    d["training"].update(training)
    return d


@pytest.mark.parametrize("name", ["lc_circuit", "vanderpol", "burgers"])
def test_bundled_configs_round_trip(name, tmp_path):
    cfg = load_config(bundled_config_path(name))
    dump_config(cfg, tmp_path / "c.json")
    again = load_config(tmp_path / "c.json")
    assert again.to_dict() == cfg.to_dict()


def test_lc_config_contents():
    cfg = load_config(bundled_config_path("lc_circuit"))
    system = cfg.system.build()
    ens = cfg.training.ensemble(system)
    np.testing.assert_array_equal(ens.initial_conditions, [[1.0, 0.0, 0.0]])
    assert ens.T == 20.0 and ens.beta == 0.1
    assert cfg.network.L == 1
    np.testing.assert_array_equal(system.Q, np.eye(3))


def test_vanderpol_config_contents():
    cfg = load_config(bundled_config_path("vanderpol"))
    system = cfg.system.build()
    ens = cfg.training.ensemble(system)
    assert ens.initial_conditions.shape == (10, 2)
    assert np.all(np.abs(ens.initial_conditions) <= 10.0)
    np.testing.assert_allclose(ens.weights, 0.1)
    assert np.linalg.matrix_rank(system.Q) == 1
    arch = cfg.network.architecture(system.n, system.m)
    assert arch.widths == (2, 2, 2, 1) and arch.skip_connections and arch.activation == "relu_p"
    assert ens.beta == 1e-3 and ens.T == 3.0


def test_burgers_config_contents():
    cfg = load_config(bundled_config_path("burgers"))
    runs = cfg.expand()
    assert [v for v, _ in runs] == ["linear", "cubic"]
    params = {v: c.system.params for v, c in runs}
    assert (params["linear"]["delta"], params["linear"]["p"]) == (2.0, 1)
    assert (params["cubic"]["delta"], params["cubic"]["p"]) == (0.5, 3)
    sub = runs[0][1]
    system = sub.system.build()
    assert system.n == 13
    arch = sub.network.architecture(system.n, system.m)
    assert arch.widths == (13,) * 4 + (1,) and arch.activation == "softplus"
    # without a screen the sampler keeps its raw draws
    sampler = SamplerSpec(**{**sub.training.initial_conditions["sampler"], "on_blowup": "keep"})
    Y = sampler.sample(system.n)
    assert Y.shape == (40, 13) and np.all(np.abs(Y) <= 3.0)
    ens = sub.training.ensemble(system)
    np.testing.assert_allclose(ens.weights, 1 / 40)


@pytest.mark.parametrize("patch", [
    {"system": {"name": "pendulum", "params": {}}},
    {"network": {"L": 1, "widths": [2, 1]}},
    {"network": {"L": 2, "widths": [3, 3]}},
    {"network": {"L": 1, "activation": "sigmoid"}},
    {"network": {"L": 1, "warm_start": "pse"}},
    {"bogus": 1},
])
def test_invalid_configs_raise(patch):
    d = small_lc()
    d.update(patch)
    with pytest.raises(ConfigError):
        cfg = ExperimentConfig.from_dict(d)
        cfg.network.architecture(3, 1)


def test_width_mismatch_is_dimension_error():
    cfg = ExperimentConfig.from_dict({**small_lc(), "network": {"L": 1, "widths": [2, 1]}})
    with pytest.raises(DimensionMismatchError):
        cfg.network.architecture(3, 1)


def test_variant_overrides():
    cfg = load_config(bundled_config_path("burgers"))
    cubic = cfg.variant("cubic")
    assert cubic.name == "burgers_cubic" and cubic.variants == []
    assert cfg.system.params["p"] == 1
    with pytest.raises(ConfigError):
        cfg.variant("quartic")


@given(st.integers(1, 20), st.integers(0, 2**31 - 1))
def test_sampler_is_seeded_and_bounded(count, seed):
    s = SamplerSpec(count=count, low=-2.0, high=3.0, seed=seed)
    a, b = s.sample(4), s.sample(4)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (count, 4) and a.min() >= -2.0 and a.max() < 3.0


def test_sampler_reject_and_shrink():
    # accept only states inside the unit ball
    def screen(Y):
        return np.linalg.norm(Y, axis=1) <= 1.0

    raw = SamplerSpec(count=5, low=-1.0, high=1.0, seed=3).sample(3)
    rej = SamplerSpec(count=5, low=-1.0, high=1.0, seed=3, on_blowup="reject").sample(3, screen=screen)
    assert np.all(screen(rej))
    shr = SamplerSpec(count=5, low=-1.0, high=1.0, seed=3, on_blowup="shrink").sample(3, screen=screen)
    assert np.all(screen(shr))
    # shrinking keeps the direction of every draw
    cos = np.sum(raw * shr, axis=1) / np.linalg.norm(raw, axis=1) / np.linalg.norm(shr, axis=1)
    np.testing.assert_allclose(cos, 1.0)
    with pytest.raises(ConfigError):
        SamplerSpec(count=5, low=-1.0, high=1.0, on_blowup="drop")


def test_cli_missing_config(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["train", str(tmp_path / "nope.json"), "--out-dir", str(out)]) == 2
    assert not out.exists()
    assert "error" in capsys.readouterr().err


def test_cli_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["train", str(path), "--out-dir", str(tmp_path / "out")]) == 2


def test_cli_width_mismatch(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({**small_lc(), "network": {"L": 2, "widths": [2, 2, 1]}}))
    out = tmp_path / "out"
    assert main(["train", str(path), "--out-dir", str(out)]) == 2
    assert not out.exists()


def test_cli_blowup_at_start(tmp_path):
    # the uncontrolled oscillator spirals out and escapes near t = 21
    d = {
        "name": "vdp_bad",
        "system": {"name": "vanderpol", "params": {}},
        "network": {"L": 1, "init_scale": 0.0},
        "training": {
            "initial_conditions": {"named": [{"name": "a", "value": [-7.37, -9.17]}]},
            "beta": 1e-3, "T": 25.0, "n_steps": 5000, "max_iters": 2,
        },
    }
    path = tmp_path / "c.json"
    path.write_text(json.dumps(d))
    assert main(["train", str(path), "--out-dir", str(tmp_path / "out")]) == 4


def test_cli_train_evaluate_compare(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(small_lc()))
    out = tmp_path / "out"
    assert main(["train", str(path), "--out-dir", str(out)]) == 0
    assert (out / "checkpoint.json").exists()
    report = json.loads((out / "train_report.json").read_text())
    assert report["iterations"] <= 3 and "seed" in report
    assert main(["evaluate", str(path), "--out-dir", str(out)]) == 0
    assert (out / "traj_e1_NN.csv").exists()
    assert main(["compare", str(path), "--out-dir", str(out)]) == 0
    header = (out / "table.csv").read_text().splitlines()[0]
    assert "controller" in header
    summary = json.loads((out / "summary.json").read_text())
    assert set(summary) == {"train", "evaluate", "compare"}
    assert summary["compare"]["controllers"] == ["uncontrolled", "LQR", "NN"]
    assert len(summary["train"]["learned_gain"][0]) == 3


def test_cli_evaluate_without_checkpoint(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(small_lc()))
    assert main(["evaluate", str(path), "--out-dir", str(tmp_path / "out")]) == 2
