import numpy as np
import pytest

from cirls import errors
from cirls.simulation import (
    DgmConfig,
    compute_metrics,
    generate_dgm1,
    generate_dgm2,
    metrics_csv,
    run_study,
    strata_eta,
    summary_json,
)

DGM1, DGM2 = "nonneg_regression", "nondecreasing_strata"


class TestGenerators:
    def test_dgm1_large_n(self):
        cfg = DgmConfig(DGM1, 1.0, n=100_000, seed=3)
        d = generate_dgm1(cfg, 0)
        beta = np.linalg.lstsq(d["X"], d["y"], rcond=None)[0]
        np.testing.assert_allclose(beta, [5, 1, 1], atol=0.05)
        assert abs(np.corrcoef(d["X"][:, 1], d["X"][:, 2])[0, 1] - 0.5) < 0.02
        assert d["y"].var() == pytest.approx(50 + 1 + 1 + 2 * 0.5, rel=0.03)

    def test_dgm1_deterministic(self):
        cfg = DgmConfig(DGM1, 0.3, seed=9)
        a, b = generate_dgm1(cfg, 4), generate_dgm1(cfg, 4)
        assert a["y"].tobytes() == b["y"].tobytes()
        assert a["y"].tobytes() != generate_dgm1(cfg, 5)["y"].tobytes()

    def test_dgm2_shapes(self):
        d = generate_dgm2(DgmConfig(DGM2, 1.0, seed=1), 0)
        assert d["X"].shape == (500, 5)
        np.testing.assert_array_equal(d["X"].sum(axis=1), 1)
        assert np.all(d["y"] >= 0) and np.all(d["y"] == np.round(d["y"]))

    def test_dgm2_truth(self):
        assert np.all(strata_eta(0.0, np.arange(1, 6)) == 0)
        up = strata_eta(1.0, np.arange(1, 6))
        assert np.all(np.diff(up) > 0)
        assert up[1] - up[0] < 0.01 and up[4] - up[3] < 0.01
        assert up[2] == pytest.approx(0.5)
        assert np.all(np.diff(strata_eta(-1.0, np.arange(1, 6))) < 0)

    def test_wrong_generator(self):
        with pytest.raises(errors.InputError):
            generate_dgm2(DgmConfig(DGM1, 0.0), 0)

    def test_config_validation(self):
        with pytest.raises(errors.InputError):
            DgmConfig(DGM1, 1.5)
        with pytest.raises(errors.InputError):
            DgmConfig("other", 0.0)
        with pytest.raises(errors.InputError):
            DgmConfig(DGM1, 0.0, edf_n_sim=50)


class TestMetrics:
    def test_perfect_estimates(self):
        truth = np.array([1.0, -2.0])
        est = np.tile(truth, (10, 1))
        cis = np.stack([est - 1, est + 1], axis=-1)
        m = compute_metrics(est, np.ones_like(est), cis, truth)
        for c in m.coefs:
            assert c.sq_bias == 0 and c.se == 0 and c.rmse == 0
            assert c.coverage == 1 and c.be_coverage == 1

    def test_alternating(self):
        n = 100
        est = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)[:, None]
        cis = np.stack([est - 0.5, est + 0.5], axis=-1)
        m = compute_metrics(est, np.ones_like(est), cis, np.zeros(1))
        c = m.coefs[0]
        assert c.sq_bias == 0
        assert c.rmse == pytest.approx(1.0)
        assert c.se == pytest.approx(np.sqrt(n / (n - 1)))
        assert c.coverage == 0

    def test_rel_var_error_one(self):
        rng = np.random.default_rng(0)
        est = rng.normal(size=(400, 1))
        se2 = est.var(ddof=1)
        m = compute_metrics(est, np.full_like(est, se2), np.zeros((400, 1, 2)), np.zeros(1))
        assert m.coefs[0].rel_var_error == pytest.approx(1.0)

    def test_rmse_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(2, 200))
            est = rng.normal(loc=rng.normal(size=3), size=(n, 3))
            truth = rng.normal(size=3)
            m = compute_metrics(est, np.ones_like(est), np.zeros((n, 3, 2)), truth)
            for c in m.coefs:
                assert c.rmse**2 == pytest.approx(c.sq_bias + (n - 1) / n * c.se**2, abs=1e-10)

    def test_be_coverage_uses_mean(self):
        est = np.array([[2.0], [4.0]])
        cis = np.array([[[2.5, 3.5]], [[2.9, 5.0]]])
        m = compute_metrics(est, np.ones_like(est), cis, np.array([0.0]))
        assert m.coefs[0].coverage == 0 and m.coefs[0].be_coverage == 1

    def test_shape_mismatch(self):
        with pytest.raises(errors.InputError):
            compute_metrics(np.zeros((5, 2)), np.zeros((5, 2)), np.zeros((5, 2, 2)), np.zeros(3))


class TestStudy:
    def test_small_dgm1(self):
        res = run_study(DgmConfig(DGM1, -1.0, n_sim=20, seed=1, n_draws=500, edf_n_sim=100))
        main = res.constrained.coef("x1")
        assert main.coverage == 0
        assert res.constrained.mean_odf == 3.0
        assert res.deltas()["x1"]["rmse"] > 0
        assert res.constrained.n_failed == 0 and res.constrained.n_ok == 20
        assert res.constrained.edf_median == 3.0

    def test_small_dgm2(self):
        res = run_study(DgmConfig(DGM2, 1.0, n_sim=10, seed=2, n_draws=500, edf_n_sim=0))
        assert res.all_monotone
        assert np.isnan(res.constrained.edf_median)
        assert 1.0 <= res.constrained.mean_odf <= 5.0

    def test_deterministic_and_parallel(self):
        cfg = DgmConfig(DGM1, 0.0, n_sim=6, seed=3, n_draws=300, edf_n_sim=100)
        a = metrics_csv([run_study(cfg)])
        b = metrics_csv([run_study(cfg, workers=2)])
        assert a == b

    def test_csv_shape(self):
        cfg = DgmConfig(DGM1, 0.3, n_sim=4, seed=4, n_draws=200, edf_n_sim=0)
        text = metrics_csv([run_study(cfg)], "seed=4")
        lines = text.splitlines()
        assert lines[0] == "# seed=4"
        assert len(lines) == 2 + 3 * 2
        assert '"studies"' in summary_json([run_study(cfg)])
