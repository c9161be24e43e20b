"""Acceptance criteria, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (shown even when
output is captured) and then asserts.
"""
import json
import os
import time

import numpy as np
import pytest

from cirls import constraints as cn
from cirls.cli import gdp_specs, main
from cirls.core import Control, ModelSpec, fit, unconstrained_fit
from cirls.datasets import load_temperature
from cirls.dof import expected_df
from cirls.errors import MissingDataset
from cirls.inference import TmvnSpec, sample
from cirls.qp import QpProblem, solve
from cirls.simulation import DgmConfig, run_study
from oracles import kkt_enumeration, nnls, pava, plain_irls, random_constraints, random_spd, rejection_tmvn

INF = np.inf
SIM_SEED = 12345
PAPER_CHANGEPOINTS = 26


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, f"criterion {n}: {detail}"
    return report


def test_criterion_01_qp_oracle(verdict):
    rng = np.random.default_rng(1)
    worst_b = worst_obj = 0.0
    t0 = time.perf_counter()
    sols = []
    problems = []
    for _ in range(500):
        p = int(rng.integers(1, 7))
        m = int(rng.integers(0, p + 1))
        H, q = random_spd(rng, p), rng.normal(scale=3, size=p)
        C, l, u = random_constraints(rng, p, m)
        qp = QpProblem(H, q, cn.ConstraintSet(C, l, u))
        problems.append(qp)
        sols.append(solve(qp))
    elapsed = time.perf_counter() - t0
    for qp, sol in zip(problems, sols):
        b, obj = kkt_enumeration(qp.H, qp.q, qp.cs.C, qp.cs.l, qp.cs.u)
        worst_b = max(worst_b, float(np.max(np.abs(sol.beta - b))))
        worst_obj = max(worst_obj, abs(sol.objective - obj) / (1 + abs(obj)))
    ok = worst_b <= 1e-8 and worst_obj <= 1e-8 and elapsed < 5
    verdict(1, ok, f"500 QPs, max |beta diff| {worst_b:.1e}, max obj diff {worst_obj:.1e}, solve time {elapsed:.2f}s")


def test_criterion_02_unconstrained_equivalence(verdict):
    # the default deviance tolerance leaves O(1e-8) coefficient error against a
    # fully converged oracle; equivalence of the fixed points is checked at a tight tol
    rng = np.random.default_rng(2)
    tight = Control(tol=1e-12)
    worst = {"gaussian": 0.0, "poisson": 0.0, "binomial": 0.0}
    default_worst = 0.0
    for _ in range(20):
        n, p = int(rng.integers(15, 60)), int(rng.integers(1, 5))
        X = np.column_stack([np.ones(n), rng.normal(size=(n, p))])
        eta = X @ rng.normal(scale=0.4, size=p + 1)
        w = rng.uniform(0.5, 2.0, size=n)
        y = eta + rng.normal(size=n)
        sw = np.sqrt(w)
        wls = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)[0]
        worst["gaussian"] = max(worst["gaussian"], np.max(np.abs(fit(ModelSpec(X, y, "gaussian", weights=w)).beta - wls)))
        for fam, yy in (("poisson", rng.poisson(np.exp(eta))), ("binomial", rng.binomial(1, 1 / (1 + np.exp(-eta))))):
            yy = yy.astype(float)
            ref = plain_irls(X, yy, fam)
            worst[fam] = max(worst[fam], np.max(np.abs(fit(ModelSpec(X, yy, fam, control=tight)).beta - ref)))
            default_worst = max(default_worst, np.max(np.abs(fit(ModelSpec(X, yy, fam)).beta - ref)))
    ok = worst["gaussian"] <= 1e-10 and worst["poisson"] <= 1e-8 and worst["binomial"] <= 1e-8
    verdict(2, ok, "max |diff| " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
            + f" (glm families at tol 1e-12; default tol 1e-8 gives {default_worst:.1e})")


def test_criterion_03_nnls(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        p = int(rng.integers(1, 9))
        n = int(rng.integers(p + 1, 50))
        X = rng.normal(size=(n, p))
        y = X @ rng.normal(size=p) + rng.normal(size=n)
        res = fit(ModelSpec(X, y, "gaussian", cs=cn.build_nonneg(p, range(p))))
        worst = max(worst, float(np.max(np.abs(res.beta - nnls(X, y)))))
    verdict(3, worst <= 1e-8, f"100 instances, max |beta diff| {worst:.1e}")


def test_criterion_04_isotonic(verdict):
    d = load_temperature()
    n = d["year"].shape[0]
    t0 = time.perf_counter()
    res = fit(ModelSpec(np.eye(n), d["anomaly"], "gaussian", cs=cn.build_monotone_increasing(n, range(n))))
    elapsed = time.perf_counter() - t0
    dev = float(np.max(np.abs(res.mu - pava(d["anomaly"]))))
    nondecreasing = bool(np.all(np.diff(res.mu) >= -1e-12))
    changepoints = int(res.odf)
    vintage = "matches the paper" if changepoints == PAPER_CHANGEPOINTS else "vintage mismatch logged"
    ok = n == 166 and nondecreasing and dev <= 1e-6 and elapsed < 2
    verdict(4, ok, f"{n} years, nondecreasing={nondecreasing}, max |fit - PAVA| {dev:.1e}, "
                   f"changepoints {changepoints} vs {PAPER_CHANGEPOINTS} ({vintage}), {elapsed:.2f}s")


def test_criterion_05_compositional(verdict):
    try:
        specs = gdp_specs()
    except MissingDataset as e:
        verdict(5, False, f"GDP composition dataset unavailable ({e})")
        return
    sums, signs = [], []
    for sex, spec in specs.items():
        beta = fit(spec).beta
        comp = dict(zip(spec.names[1:7], beta[1:7]))
        sums.append(abs(sum(comp.values())))
        signs.append(comp["transport"] < 0 and comp["other"] > 0)
    ok = max(sums) <= 1e-10 and all(signs)
    verdict(5, ok, f"max |sum of components| {max(sums):.1e}, sign pattern holds for both sexes: {all(signs)}")


def test_criterion_06_sampler(verdict):
    t0 = time.perf_counter()
    n = 50_000

    def se(x):
        return x.std(axis=0, ddof=1) / np.sqrt(x.shape[0])

    Sigma = np.array([[1.0, 0.4, 0.1], [0.4, 1.5, -0.2], [0.1, -0.2, 0.7]])
    theta = np.array([0.5, -1.0, 2.0])
    d = sample(TmvnSpec(theta, Sigma, np.full(3, -INF), np.full(3, INF), np.eye(3), 0), n, seed=61).draws
    a_mean = bool(np.all(np.abs(d.mean(axis=0) - theta) <= 3 * se(d)))
    a_cov = float(np.linalg.norm(np.cov(d.T) - Sigma) / np.linalg.norm(Sigma))

    h = sample(TmvnSpec(np.zeros(1), np.eye(1), np.zeros(1), np.full(1, INF), np.eye(1), 1), n, seed=62).draws[:, 0]
    b_gap = abs(h.mean() - np.sqrt(2 / np.pi)) / se(h)

    S2 = np.array([[1.0, 0.5], [0.5, 1.0]])
    th2 = np.array([0.3, -0.2])
    lo, hi = np.array([0.0, -INF]), np.array([INF, INF])
    g = sample(TmvnSpec(th2, S2, lo, hi, np.eye(2), 1), n, seed=63).draws
    ref = rejection_tmvn(th2, S2, lo, hi, n, np.random.default_rng(64))
    c_gap = float(np.max(np.abs(g.mean(axis=0) - ref.mean(axis=0)) / np.sqrt(se(g) ** 2 + se(ref) ** 2)))
    elapsed = time.perf_counter() - t0
    ok = a_mean and a_cov <= 0.10 and b_gap <= 3 and c_gap <= 3 and elapsed < 30
    verdict(6, ok, f"(a) mean within 3 SE {a_mean}, cov rel. Frobenius {a_cov:.3f}; (b) half-normal gap {b_gap:.2f} SE; "
                   f"(c) vs rejection {c_gap:.2f} SE; {elapsed:.1f}s")


def test_criterion_07_dgm1(verdict):
    t0 = time.perf_counter()
    res = {g: run_study(DgmConfig("nonneg_regression", g, n_sim=200, seed=SIM_SEED))
           for g in (-1.0, -0.3, 0.0, 0.3, 1.0)}
    elapsed = time.perf_counter() - t0
    cov = {g: r.constrained.coef("x1").coverage for g, r in res.items()}
    drmse = {g: r.deltas()["x1"]["rmse"] for g, r in res.items()}
    odf = res[-1.0].constrained.mean_odf
    checks = {
        "a": cov[-1.0] == 0,
        "b": 0.90 <= cov[1.0] <= 0.99,
        "c": drmse[-1.0] > 0 and drmse[-0.3] <= 0 and drmse[0.0] <= 0,
        "d": abs(odf - 3) <= 0.1,
        "time": elapsed < 300,
    }
    verdict(7, all(checks.values()),
            f"coverage(-1)={cov[-1.0]:.3f}, coverage(1)={cov[1.0]:.3f}, RMSE delta at -1/-0.3/0 = "
            f"{drmse[-1.0]:+.4f}/{drmse[-0.3]:+.4f}/{drmse[0.0]:+.4f}, mean odf(-1)={odf:.3f}, {elapsed:.0f}s; "
            f"failed parts: {[k for k, v in checks.items() if not v]}")


def test_criterion_08_dgm2(verdict):
    t0 = time.perf_counter()
    res = {g: run_study(DgmConfig("nondecreasing_strata", g, n_sim=200, seed=SIM_SEED, edf_n_sim=0))
           for g in (-1.0, 1.0)}
    elapsed = time.perf_counter() - t0
    lo, hi = res[-1.0].constrained.mean_odf, res[1.0].constrained.mean_odf
    mono = all(r.all_monotone for r in res.values())
    ok = abs(lo - 1) <= 0.15 and 3.5 <= hi <= 4.5 and mono and elapsed < 300
    verdict(8, ok, f"mean odf(-1)={lo:.3f}, mean odf(1)={hi:.3f}, all fits nondecreasing={mono}, {elapsed:.0f}s")


def test_criterion_09_edf(verdict):
    rng = np.random.default_rng(9)
    n = 200
    X = np.column_stack([np.ones(n), rng.normal(size=(n, 2))])
    y = X @ [1.0, 0.0, 1.0] + rng.normal(size=n)
    fu = unconstrained_fit(ModelSpec(X, y, "gaussian"))
    none = expected_df(fu, cn.ConstraintSet.empty(3), n_sim=1000, seed=1).edf
    y0 = y - fu.beta[1] * X[:, 1]
    fu0 = unconstrained_fit(ModelSpec(X, y0, "gaussian"))
    n_sim = 10_000
    half = expected_df(fu0, cn.build_nonneg(3, [1]), n_sim=n_sim, seed=2).edf
    gap = abs(half - 2.5) / np.sqrt(0.25 / n_sim)
    in_range = True
    for k in range(20):
        p = int(rng.integers(2, 6))
        m = int(rng.integers(1, p + 1))
        Xk = rng.normal(size=(60, p))
        yk = Xk @ rng.normal(scale=0.1, size=p) + rng.normal(size=60)
        C, l, u = random_constraints(rng, p, m, kinds=("lo", "hi", "box"))
        fk = unconstrained_fit(ModelSpec(Xk, yk, "gaussian"))
        e = expected_df(fk, cn.ConstraintSet(C, l, u), n_sim=200, seed=k).edf
        in_range &= p - m <= e <= p
    ok = none == 3.0 and gap <= 3 and in_range
    verdict(9, ok, f"no constraints edf={none}, boundary edf={half:.4f} ({gap:.2f} MC SE from p-0.5), "
                   f"edf in [p-m, p] on 20 random fits: {in_range}")


def test_criterion_10_determinism(verdict, tmp_path):
    rng = np.random.default_rng(10)
    x1, x2 = rng.normal(size=40), rng.normal(size=40)
    y = 1 + 0.5 * x1 + x2 + rng.normal(size=40)
    data = tmp_path / "d.csv"
    data.write_text("y,x1,x2\n" + "".join(f"{a!r},{b!r},{c!r}\n" for a, b, c in zip(y.tolist(), x1.tolist(), x2.tolist())))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data_path": str(data), "model": {
        "response": "y", "predictors": ["x1", "x2"], "constraints": [{"kind": "nonneg", "indices": ["x1"]}]},
        "inference": {"n_draws": 2000, "seed": 7}, "edf": {"n_sim": 300}}))
    commands = {
        "fit": ["fit", "--config", str(cfg), "--emit-draws"],
        "edf": ["edf", "--config", str(cfg), "--n-sim", "300"],
        "simulate": ["simulate", "--dgm", "2", "--gamma-grid", "-1,1", "--n-sim", "5", "--seed", "3",
                     "--n-draws", "300"],
        "casestudy": ["casestudy", "isotonic_warming"],
    }
    same = {}
    for name, args in commands.items():
        outs = []
        for run in ("a", "b"):
            out = tmp_path / name / run
            assert main(args + ["--out", str(out)]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        same[name] = outs[0] == outs[1] and len(outs[0]) > 0
    verdict(10, all(same.values()), "byte-identical reruns: " + ", ".join(f"{k}={v}" for k, v in same.items()))


@pytest.mark.skipif(not os.environ.get("CIRLS_GDP_DATA"), reason="GDP composition data not provided")
def test_gdp_cli_matches_library():
    specs = gdp_specs()
    for spec in specs.values():
        assert abs(fit(spec).beta[1:7].sum()) <= 1e-10
