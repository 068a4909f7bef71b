import json

import numpy as np
import pytest

from pnmkit import harness
from pnmkit.harness import ConfigError
from pnmkit.optim import momentum_recovery_beta0, pn_normalization


def analytic_config(**overrides):
    cfg = {
        "problem": {"name": "rosenbrock", "theta0": [-1.2, 1.0]},
        "optimizer": {"name": "hb", "lr": 0.001, "beta1": 0.9},
        "steps": 200,
        "seeds": [1, 2, 3],
        "eval_every": 50,
    }
    cfg.update(overrides)
    return cfg


def mlp_config(**overrides):
    cfg = {
        "problem": {"name": "two_moons_mlp", "n": 120, "noise": 0.2,
                     "hidden": 8, "test_fraction": 0.5},
        "optimizer": {"name": "hb", "lr": 0.1, "beta1": 0.9, "beta3": 1.0},
        "steps": 120,
        "batch_size": 20,
        "seeds": [0, 1],
        "eval_every": 60,
    }
    cfg.update(overrides)
    return cfg


class TestConfigValidation:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="stepz"):
            harness.run(analytic_config(stepz=10))

    def test_unknown_optimizer_key(self):
        cfg = analytic_config()
        cfg["optimizer"]["learningrate"] = 0.1
        with pytest.raises(ConfigError, match="learningrate"):
            harness.run(cfg)

    def test_unknown_problem_key(self):
        cfg = analytic_config()
        cfg["problem"]["dims"] = 2
        with pytest.raises(ConfigError, match="dims"):
            harness.run(cfg)

    def test_unknown_weight_decay_key(self):
        cfg = analytic_config()
        cfg["optimizer"]["weight_decay"] = {"mode": "l2", "strength": 0.1}
        with pytest.raises(ConfigError, match="strength"):
            harness.run(cfg)

    def test_missing_required_keys(self):
        with pytest.raises(ConfigError):
            harness.run({"problem": {"name": "rosenbrock"}})

    def test_empty_seed_list(self):
        with pytest.raises(ConfigError):
            harness.run(analytic_config(seeds=[]))

    def test_unknown_optimizer_name(self):
        cfg = analytic_config()
        cfg["optimizer"]["name"] = "sgdm"
        with pytest.raises(ConfigError):
            harness.run(cfg)


class TestRun:
    def test_deterministic_problem_gives_identical_seeds(self):
        summary = harness.run(analytic_config())
        losses = [r["final_loss"] for r in summary["results"]]
        assert losses[0] == losses[1] == losses[2]

    def test_reproducible_summary_bytes(self, tmp_path):
        cfg = mlp_config()
        harness.run(cfg, tmp_path / "a")
        harness.run(cfg, tmp_path / "b")
        a_files = sorted((tmp_path / "a").iterdir())
        b_files = sorted((tmp_path / "b").iterdir())
        assert [f.name for f in a_files] == [f.name for f in b_files]
        for fa, fb in zip(a_files, b_files):
            assert fa.read_bytes() == fb.read_bytes()

    def test_parallel_seeds_change_nothing(self, tmp_path):
        cfg = mlp_config(seeds=[0, 1, 2, 3])
        harness.run(cfg, tmp_path / "serial", threads=1)
        harness.run(cfg, tmp_path / "pool", threads=4)
        for fa in sorted((tmp_path / "serial").iterdir()):
            fb = tmp_path / "pool" / fa.name
            assert fa.read_bytes() == fb.read_bytes()

    def test_trajectory_csv_schema(self, tmp_path):
        cfg = mlp_config(seeds=[0])
        harness.run(cfg, tmp_path)
        csv_files = list(tmp_path.glob("trajectory_*.csv"))
        assert len(csv_files) == 1
        lines = csv_files[0].read_text().splitlines()
        assert lines[0].startswith("# config_digest=")
        assert "prng=pcg64" in lines[0]
        assert lines[1] == "step,loss,grad_norm_sq,test_error"
        first = lines[2].split(",")
        assert first[0] == "0" and len(first) == 4

    def test_summary_embeds_provenance(self, tmp_path):
        cfg = analytic_config(seeds=[5])
        harness.run(cfg, tmp_path)
        summary = json.loads(next(tmp_path.glob("summary_*.json")).read_text())
        assert summary["prng"] == "pcg64"
        assert summary["config"] == cfg
        assert summary["config_digest"]
        assert summary["results"][0]["seed"] == 5

    def test_lr_decay_applies(self):
        # a 10x decay at step 1 must change the trajectory
        base = harness.run(analytic_config(seeds=[1]))
        decayed = harness.run(analytic_config(
            seeds=[1], lr_decay={"milestones": [1], "factor": 0.1}))
        assert base["results"][0]["final_loss"] != decayed["results"][0]["final_loss"]


class TestAggregate:
    def test_population_std_convention(self):
        agg = harness.aggregate([4.0, 5.0, 6.0])
        assert agg["mean"] == 5.0
        assert agg["std"] == pytest.approx(0.816497, abs=1e-6)


class TestSeedMajority:
    def test_counts(self):
        out = harness.seed_majority_wins([0.1, 0.2, 0.3], [0.2, 0.2, 0.5])
        assert out == {"wins": 2, "losses": 0, "ties": 1, "majority": True}


class TestLabelNoiseExperiment:
    def test_zero_rate_flagged(self):
        base = mlp_config()
        base["problem"]["label_noise"] = {"kind": "symmetric", "rate": 0.0}
        rep = harness.label_noise_experiment(
            base, {"name": "pnm", "lr": 0.5, "beta0": 1.0}, base["optimizer"])
        assert rep["no_corruption"]

    def test_reports_train_metrics(self):
        base = mlp_config()
        base["problem"]["label_noise"] = {"kind": "symmetric", "rate": 0.3}
        rep = harness.label_noise_experiment(
            base, {"name": "pnm", "lr": 0.5, "beta0": 1.0}, base["optimizer"])
        for side in ("a", "b"):
            for row in rep["per_seed"][side]:
                assert 0.0 <= row["final_corrupted_train_error"] <= 1.0
                assert 0.0 <= row["final_clean_train_error"] <= 1.0


class TestBeta0Sweep:
    def test_single_point_grid(self):
        cfg = mlp_config()
        cfg["optimizer"] = {"name": "pnm", "lr": 0.5, "beta1": 0.9}
        rep = harness.beta0_sweep(cfg, [1.0])
        assert len(rep["table"]) == 1
        assert rep["table"][0]["beta0"] == 1.0

    def test_non_pnm_base_rejected(self):
        with pytest.raises(ConfigError):
            harness.beta0_sweep(mlp_config(), [0.0, 1.0])

    def test_recovery_point_reproduces_momentum_column(self):
        # PNM at beta0 = -beta1/(1+beta1) with the compensated rate is the
        # same algorithm as Heavy Ball with beta3 = 1 - beta1, so the two
        # columns must agree exactly on shared seeds (same data, init, and
        # batch sequence).
        beta1 = 0.9
        b0 = momentum_recovery_beta0(beta1)
        lr = 0.2
        cfg = mlp_config(seeds=[0, 1, 2])
        cfg["optimizer"] = {"name": "pnm", "lr": lr * pn_normalization(b0),
                             "beta1": beta1}
        sweep = harness.beta0_sweep(cfg, [b0])
        hb_cfg = mlp_config(seeds=[0, 1, 2])
        hb_cfg["optimizer"] = {"name": "hb", "lr": lr, "beta1": beta1,
                                "beta3": 1.0 - beta1}
        hb_run = harness.run(hb_cfg)
        hb_errors = [r["final_test_error"] for r in hb_run["results"]]
        np.testing.assert_array_equal(sweep["per_seed_errors"][str(b0)], hb_errors)

    def test_empty_grid_rejected(self):
        cfg = mlp_config()
        cfg["optimizer"] = {"name": "pnm", "lr": 0.5, "beta1": 0.9}
        with pytest.raises(ConfigError):
            harness.beta0_sweep(cfg, [])


class TestLrWdGrid:
    def test_single_cell_matches_plain_run(self):
        cfg = mlp_config()
        cfg["optimizer"]["weight_decay"] = {"mode": "decoupled", "lam": 0.0}
        rep = harness.lr_wd_grid(cfg, [0.1], [1e-4])
        direct = dict(cfg)
        opt = dict(cfg["optimizer"])
        opt["lr"] = 0.1
        opt["weight_decay"] = {"mode": "decoupled", "lam": 1e-4}
        direct["optimizer"] = opt
        expected = harness.run(direct)["aggregate"]["final_test_error"]["mean"]
        assert rep["mean_test_error"][0][0] == expected

    def test_divergent_cells_marked(self):
        cfg = {
            "problem": {"name": "quadratic", "eigenvalues": [1.0, 4.0],
                         "noise_sigma2": 0.0},
            "optimizer": {"name": "sgd", "lr": 0.1},
            "steps": 400,
            "seeds": [0],
        }
        rep = harness.lr_wd_grid(cfg, [0.1, 5.0], [0.0])
        # eta * lambda_max = 20 >> 2 diverges; the stable cell stays numeric
        assert isinstance(rep["mean_test_error"][0][0], (int, float, str))
        assert rep["mean_test_error"][1][0] == "diverged"
