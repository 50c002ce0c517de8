import json

import numpy as np
import pytest

import oodattack as oa

QUICK = {
    "models": ["softmax", "duq"],
    "architecture": {"hidden": [16, 16]},
    "train": {"epochs": 5},
    "attack": {"epsilon": 1.0, "iterations": 3},
    "sweep": [0.0, 1.0],
    "dump_samples": False,
}


def quick_config(tmp_path, **extra):
    cfg = dict(QUICK, output_dir=str(tmp_path / "run"))
    cfg.update(extra)
    return json.dumps(cfg)


def test_default_config_round_trips():
    text = oa.default_config()
    assert oa.normalize_config(text) == text
    assert json.loads(text)["seed"] == 2024


def test_unknown_config_key_is_rejected():
    with pytest.raises(ValueError, match="epsilom"):
        oa.normalize_config('{"attack": {"epsilom": 0.1}}')


def test_metrics():
    assert oa.entropy(np.full((1, 10), 0.1)) == pytest.approx(np.log(10), abs=1e-9)
    assert oa.entropy(np.array([0.0, 1.0])) == 0.0
    probs = np.array([[0.95, 0.05], [0.85, 0.15], [0.91, 0.09]])
    assert oa.rejection_rate(probs, 0.9) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        oa.entropy(np.array([0.5, 0.6]))


def test_projection():
    out = oa.project_linf(np.array([0.5, -0.05]), np.zeros(2), 0.1, -1.0, 1.0)
    assert out.tolist() == [0.1, -0.05]


def test_train_attack_and_checkpoint(tmp_path):
    data = oa.benchmark()
    assert data["x_train"].shape == (800, 2)
    model = oa.train_model("softmax", quick_config(tmp_path))
    assert model.family == "softmax"
    x = data["x_out"][:20]
    clean = model.predict(x)
    np.testing.assert_allclose(clean.sum(axis=1), 1.0, atol=1e-9)
    adv = model.attack(x, epsilon=1.0, iters=3)
    assert np.max(np.abs(adv - x)) <= 1.0 + 1e-9
    assert adv.min() >= -4.0 and adv.max() <= 4.0
    assert oa.entropy(model.predict(adv)) < oa.entropy(clean)

    path = str(tmp_path / "softmax.json")
    model.save(path)
    back = oa.load_model(path)
    np.testing.assert_array_equal(back.predict(x), clean)


def test_run_and_sweep(tmp_path):
    cfg = quick_config(tmp_path)
    rows = oa.run_experiment(cfg)
    assert [r["model"] for r in rows] == ["softmax", "duq"]
    header = (tmp_path / "run" / "report.csv").read_text().splitlines()[0]
    assert header == "model,dataset,epsilon,iters,tau,H_clean,H_adv,R_clean,R_adv"
    assert oa.read_report(str(tmp_path / "run" / "report.csv")) == rows

    sweep = oa.sweep_epsilon(cfg)
    for r in sweep["rows"]:
        if r["epsilon"] == 0.0:
            assert r["H_adv"] == r["H_clean"]
            assert r["R_adv"] == r["R_clean"]
