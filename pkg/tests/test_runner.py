import csv
import json
import math

import numpy as np
import pytest

from tacvi import cli, nn
from tacvi import data as D
from tacvi.runner import (ExperimentConfig, RunRecord, SGD, TrainingDiverged, build_stage1,
                          derive_seed, models_from_checkpoint, prepare_run, run_experiment,
                          sgd_step, sweep, train_stage1, train_stage2)
from tacvi.stage2 import Stage2Model, stage2_forward
from tacvi.tensor import Matrix, Tape


def tiny_config(**kw):
    base = dict(synthetic={"n": 80, "m": 2, "c": 3, "latent_dim": 2, "view_dims": [4, 5]},
                a_percent=30, b_percent=20, lr=0.05, batch_size=16, epochs_stage1=2,
                epochs_stage2=3, d_v=3, d_e=4, ta_hidden=6, cls1_hidden=5, vs_hidden=6,
                cls2_hidden=5, repeats=2, seed=3, plots=False)
    base.update(kw)
    return ExperimentConfig.from_dict(base)


def test_sgd_vanilla_step():
    g = np.array([[1.0, -2.0]])
    (p,), (v,) = sgd_step([np.zeros((1, 2))], [g], [np.zeros((1, 2))], 1.0, 0.0)
    assert np.array_equal(p, -g) and np.array_equal(v, g)


def test_sgd_zero_grad_decays_velocity():
    p0, v0 = np.ones((2, 2)), np.full((2, 2), 0.5)
    (p,), (v,) = sgd_step([p0], [np.zeros((2, 2))], [v0], 1.0, 0.9)
    assert np.array_equal(v, 0.9 * v0)
    assert np.array_equal(p, p0 - 0.9 * v0)
    (p,), _ = sgd_step([p0], [np.zeros((2, 2))], [np.zeros((2, 2))], 1.0, 0.9)
    assert np.array_equal(p, p0)


def test_sgd_two_steps_momentum():
    g = np.array([[0.3]])
    p, v = [np.zeros((1, 1))], [np.zeros((1, 1))]
    for _ in range(2):
        p, v = sgd_step(p, [g], v, 1.0, 0.9)
    assert p[0][0, 0] == pytest.approx(-(g + 1.9 * g)[0, 0], abs=1e-15)


def test_sgd_shape_mismatch():
    with pytest.raises(ValueError):
        sgd_step([np.zeros((1, 2))], [np.zeros((2, 1))], [np.zeros((1, 2))], 1.0, 0.9)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(lr=0)
    with pytest.raises(ValueError):
        tiny_config(batch_size=0)
    with pytest.raises(ValueError):
        tiny_config(alpha=-1)
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"synthetic": {}, "learning_rate": 0.1})
    with pytest.raises(ValueError):
        ExperimentConfig()


def test_config_defaults():
    cfg = ExperimentConfig(synthetic={})
    assert (cfg.lr, cfg.momentum, cfg.batch_size, cfg.repeats) == (1e-4, 0.9, 128, 10)


def test_derive_seed_streams_differ():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert len({derive_seed(0, 1), derive_seed(0, 2), derive_seed(1, 1)}) == 3


def test_stage1_training_lowers_loss():
    cfg = tiny_config(epochs_stage1=15)
    bundle, _ = prepare_run(D.generate_synthetic(D.SyntheticSpec.from_dict(
        {**cfg.synthetic, "seed": 0})), cfg, 0)
    rec = RunRecord(0)
    train_stage1(bundle, cfg, 0, rec)
    for curve in rec.stage1_losses.values():
        assert curve[-1] < curve[0]


def test_stage2_selects_best_validation_epoch():
    cfg = tiny_config(epochs_stage2=6)
    base = D.generate_synthetic(D.SyntheticSpec.from_dict({**cfg.synthetic, "seed": 0}))
    bundle, truth = prepare_run(base, cfg, 0)
    s1 = train_stage1(bundle, cfg, 0)
    _, rec = train_stage2(bundle, s1, cfg, 0, truth)
    aps = [v["ap"] for v in rec.val_metrics]
    assert len(aps) == 6 and len(rec.stage2_losses) == 6
    assert aps[rec.selected_epoch - 1] == max(aps) >= aps[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_context():
    cfg = tiny_config(lr=1e6, momentum=0.0, epochs_stage1=3)
    bundle, _ = prepare_run(D.generate_synthetic(D.SyntheticSpec.from_dict(
        {**cfg.synthetic, "seed": 0})), cfg, 0)
    with pytest.raises(TrainingDiverged, match="epoch"):
        s1 = train_stage1(bundle, cfg, 0)
        train_stage2(bundle, s1, tiny_config(lr=1e6, momentum=0.0, epochs_stage2=3), 0)


def test_disable_lta_leaves_stage1_untouched():
    cfg = tiny_config(disable_Lta=True)
    bundle, _ = prepare_run(D.generate_synthetic(D.SyntheticSpec.from_dict(
        {**cfg.synthetic, "seed": 0})), cfg, 0)
    fresh = nn.state_dict(build_stage1(bundle, cfg, 0).parameters())
    trained = nn.state_dict(train_stage1(bundle, cfg, 0).parameters())
    assert all(np.array_equal(fresh[k], trained[k]) for k in fresh)


def updated_groups(**flags):
    """Which stage-two parameter groups receive a nonzero gradient."""
    rng = np.random.default_rng(0)
    n = 6
    U = np.array([[1, 1], [1, 0], [0, 1], [1, 1], [1, 0], [0, 1]], dtype=float)
    V = [rng.normal(size=(n, 3)) * U[:, :1], rng.normal(size=(n, 2)) * U[:, 1:]]
    Y = (rng.random((n, 2)) > 0.5).astype(float)
    model = Stage2Model([3, 2], 4, 2, alpha=1.0, hidden=5, cls_hidden=5, seed=1)
    params = model.parameters()
    with Tape() as tape:
        out = stage2_forward(V, U, Y, np.ones_like(Y), model, **flags)
    tape.backward(out.loss, params)
    groups = set()
    for p in params:
        if np.any(p.grad):
            groups.add(p.name.split(".")[1].rstrip("0123456789"))
    return groups


@pytest.mark.parametrize("flags,expected", [
    ({}, {"enc", "dec", "fusion_logits", "cls"}),
    ({"use_reconstruction": False}, {"enc", "dec", "fusion_logits", "cls"}),
    ({"use_reconstruction": False, "detach_imputation": True}, {"enc", "fusion_logits", "cls"}),
    ({"impute_views": False}, {"enc", "dec", "cls"}),
    ({"impute_views": False, "use_reconstruction": False}, {"enc", "cls"}),
])
def test_ablation_update_sets(flags, expected):
    assert updated_groups(**flags) == expected


def test_disable_lre_drops_only_the_reconstruction_term():
    rng = np.random.default_rng(1)
    U = np.array([[1, 1], [1, 0], [0, 1]], dtype=float)
    V = [rng.normal(size=(3, 3)) * U[:, :1], rng.normal(size=(3, 2)) * U[:, 1:]]
    Y = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    model = Stage2Model([3, 2], 4, 2, alpha=7.0, hidden=5, cls_hidden=5, seed=1)
    full = stage2_forward(V, U, Y, np.ones_like(Y), model)
    off = stage2_forward(V, U, Y, np.ones_like(Y), model, use_reconstruction=False)
    assert off.L_c.item() == full.L_c.item() and off.loss.item() == off.L_c.item()
    assert full.loss.item() == pytest.approx(full.L_c.item() + 7.0 * full.L_re.item(), abs=1e-14)


def test_run_experiment_writes_artifacts(tmp_path):
    cfg = tiny_config(repeats=1)
    report, records = run_experiment(cfg, tmp_path)
    assert all(report["metrics"][k]["std"] == 0 for k in ("ap", "auc"))
    assert report["seeds"] == [3]
    for name in ("report.json", "report.csv", "losses.csv", "timing.json",
                 "checkpoints/run_0.json", "checkpoints/run_0.bin"):
        assert (tmp_path / name).exists(), name
    rows = list(csv.DictReader(open(tmp_path / "losses.csv")))
    assert {r["term"] for r in rows} >= {"L_ta", "L_c", "L_re", "total", "val_ap"}


def test_repeats_are_deterministic(tmp_path):
    cfg = tiny_config()
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("report.json", "checkpoints/run_0.bin", "checkpoints/run_1.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_parallel_repeats_match_sequential(tmp_path, monkeypatch):
    cfg = tiny_config()
    run_experiment(cfg, tmp_path / "seq")
    monkeypatch.setenv("TACVI_THREADS", "2")
    run_experiment(cfg, tmp_path / "par")
    for name in ("report.json", "checkpoints/run_1.bin"):
        assert (tmp_path / "seq" / name).read_bytes() == (tmp_path / "par" / name).read_bytes()


def test_checkpoint_roundtrip_reproduces_test_metrics(tmp_path):
    cfg = tiny_config(repeats=1)
    _, (rec,) = run_experiment(cfg, tmp_path)
    s1, s2, meta = models_from_checkpoint(tmp_path / "checkpoints" / "run_0.json")
    from tacvi.runner import evaluate_models, load_source
    bundle, truth = prepare_run(load_source(cfg), cfg, rec.seed)
    again = evaluate_models(bundle, s1, s2, bundle.indices(D.TEST), truth)
    assert again == rec.test_metrics


def test_sweep_single_value_table(tmp_path):
    rows = sweep(tiny_config(repeats=1), "alpha", [2.0], tmp_path)
    assert len(rows) == 4 and {r["metric"] for r in rows} == {"ap", "one_minus_hl", "one_minus_rl", "auc"}
    assert (tmp_path / "trend.csv").exists()
    with pytest.raises(ValueError):
        sweep(tiny_config(), "lr", [0.1], tmp_path)


def write_config(tmp_path, **kw):
    cfg = tiny_config(**kw).to_dict()
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_cli_train_and_evaluate(tmp_path, capsys):
    cfg_path = write_config(tmp_path, repeats=1, out_dir=str(tmp_path / "run"))
    assert cli.main(["train", "--config", str(cfg_path)]) == 0
    assert "ap" in capsys.readouterr().out
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n": 60, "m": 2, "c": 3, "latent_dim": 2, "view_dims": [4, 5]}))
    assert cli.main(["generate", "--spec", str(spec), "--out", str(tmp_path / "data")]) == 0
    capsys.readouterr()
    assert cli.main(["evaluate", "--checkpoint", str(tmp_path / "run/checkpoints/run_0.json"),
                     "--data", str(tmp_path / "data/manifest.json")]) == 0
    result = json.loads(capsys.readouterr().out)
    assert set(result) == {"ap", "one_minus_hl", "one_minus_rl", "auc"}
    assert all(0 <= v <= 1 for v in result.values() if v is not None)


def test_cli_sweep(tmp_path):
    cfg_path = write_config(tmp_path, repeats=1)
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--config", str(cfg_path), "--axis", "a_percent",
                     "--values", "10,30", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "trend.csv")))
    assert sorted({r["value"] for r in rows}) == ["10", "30"]


def test_cli_failure_exit_code_and_flag(tmp_path, capsys):
    cfg_path = write_config(tmp_path, a_percent=90, out_dir=str(tmp_path / "bad"))
    assert cli.main(["train", "--config", str(cfg_path)]) == 1
    assert "achievable maximum" in capsys.readouterr().err
    assert (tmp_path / "bad" / "FAILED").exists()


def test_cli_rejects_unknown_config_field(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"synthetic": {}, "epochs": 3}))
    assert cli.main(["train", "--config", str(path)]) == 1
