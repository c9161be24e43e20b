"""Monte Carlo comparison of constrained and unconstrained GLM fits.

Two data-generating mechanisms are available:

``nonneg_regression``
    ``y = 5 + gamma * x1 + x2 + e`` with correlated gaussian predictors and
    the constraint ``beta_1 >= 0``.
``nondecreasing_strata``
    Poisson counts over a five-level factor whose log-rate follows a
    logistic curve of amplitude ``gamma``; the five level coefficients are
    constrained to be nondecreasing.

``gamma`` slides the truth from infeasible (-1) through the boundary (0) to
feasible (+1).
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import norm

from . import constraints as cn
from .core import ModelSpec, fit, unconstrained_fit
from .dof import active_counts, observed_df
from .errors import CirlsError, InputError, TooManyFailures
from .inference import build_tmvn, sample, summarize

NONNEG_REGRESSION = "nonneg_regression"
NONDECREASING_STRATA = "nondecreasing_strata"
DGMS = (NONNEG_REGRESSION, NONDECREASING_STRATA)
STRATA_STEEPNESS = 5.0
MAX_FAILURE_SHARE = 0.01
METRIC_NAMES = ("sq_bias", "se", "rmse", "rel_var_error", "coverage", "be_coverage")


@dataclass(frozen=True)
class DgmConfig:
    dgm: str
    gamma: float
    n: int = 500
    n_sim: int = 1000
    seed: int = 0
    noise_sd2: float = 50.0
    rho: float = 0.5
    n_draws: int = 2000
    edf_n_sim: int = 100
    level: float = 0.95

    def __post_init__(self):
        if self.dgm not in DGMS:
            raise InputError(f"unknown mechanism {self.dgm!r}; expected one of {DGMS}")
        if not -1.0 <= self.gamma <= 1.0:
            raise InputError(f"gamma must lie in [-1, 1], got {self.gamma}")
        if self.n < 1 or self.n_sim < 1:
            raise InputError("n and n_sim must be at least 1")
        if self.edf_n_sim and self.edf_n_sim < 100:
            raise InputError("edf_n_sim must be 0 (skip) or at least 100")


@dataclass(frozen=True)
class CoefMetrics:
    sq_bias: float
    se: float
    rmse: float
    rel_var_error: float
    coverage: float
    be_coverage: float


@dataclass(frozen=True)
class SimMetrics:
    coefs: tuple
    names: tuple
    mean_odf: float = float("nan")
    edf_median: float = float("nan")
    edf_iqr: float = float("nan")
    n_ok: int = 0
    n_failed: int = 0

    def coef(self, name):
        return self.coefs[self.names.index(name)]


@dataclass(frozen=True)
class StudyResult:
    config: DgmConfig
    constrained: SimMetrics
    unconstrained: SimMetrics
    true_beta: np.ndarray
    constrained_estimates: np.ndarray = field(repr=False)
    unconstrained_estimates: np.ndarray = field(repr=False)
    all_monotone: bool = True

    def deltas(self):
        """Constrained minus unconstrained, per coefficient and metric."""
        out = {}
        for name, c, u in zip(self.constrained.names, self.constrained.coefs, self.unconstrained.coefs):
            out[name] = {k: getattr(c, k) - getattr(u, k) for k in METRIC_NAMES}
        return out


def _rng(seed, *tags):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *tags])))


def _derived_seed(seed, *tags):
    return int(np.random.SeedSequence([int(seed), *tags]).generate_state(1, np.uint64)[0])


def constraint_set(cfg: DgmConfig) -> cn.ConstraintSet:
    if cfg.dgm == NONNEG_REGRESSION:
        return cn.build_nonneg(3, [1])
    return cn.build_monotone_increasing(5, range(5))


def coef_names(cfg: DgmConfig) -> tuple:
    if cfg.dgm == NONNEG_REGRESSION:
        return ("intercept", "x1", "x2")
    return tuple(f"level{k}" for k in range(1, 6))


def strata_eta(gamma, levels):
    """Logistic log-rate centred on the middle level."""
    return gamma / (1.0 + np.exp(-STRATA_STEEPNESS * (np.asarray(levels, dtype=float) - 3.0)))


def generate_dgm1(cfg: DgmConfig, replicate: int) -> dict:
    if cfg.dgm != NONNEG_REGRESSION:
        raise InputError("generate_dgm1 needs the nonneg_regression mechanism")
    rng = _rng(cfg.seed, replicate)
    L = np.linalg.cholesky(np.array([[1.0, cfg.rho], [cfg.rho, 1.0]]))
    x = rng.standard_normal((cfg.n, 2)) @ L.T
    beta = np.array([5.0, cfg.gamma, 1.0])
    X = np.column_stack([np.ones(cfg.n), x])
    y = X @ beta + np.sqrt(cfg.noise_sd2) * rng.standard_normal(cfg.n)
    return {"X": X, "y": y, "true_beta": beta}


def generate_dgm2(cfg: DgmConfig, replicate: int) -> dict:
    if cfg.dgm != NONDECREASING_STRATA:
        raise InputError("generate_dgm2 needs the nondecreasing_strata mechanism")
    rng = _rng(cfg.seed, replicate)
    level = rng.integers(1, 6, size=cfg.n)
    X = (level[:, None] == np.arange(1, 6)[None, :]).astype(float)
    beta = strata_eta(cfg.gamma, np.arange(1, 6))
    y = rng.poisson(np.exp(X @ beta)).astype(float)
    return {"X": X, "y": y, "true_beta": beta}


def generate(cfg: DgmConfig, replicate: int) -> dict:
    if cfg.dgm == NONNEG_REGRESSION:
        return generate_dgm1(cfg, replicate)
    return generate_dgm2(cfg, replicate)


def _family(cfg):
    return "gaussian" if cfg.dgm == NONNEG_REGRESSION else "poisson"


def run_replicate(cfg: DgmConfig, replicate: int):
    """Fit one dataset both ways. Returns a dict of per-replicate quantities or None on failure."""
    data = generate(cfg, replicate)
    cs = constraint_set(cfg)
    names = coef_names(cfg)
    z = norm.ppf(0.5 + cfg.level / 2.0)
    try:
        spec = ModelSpec(data["X"], data["y"], _family(cfg), cs=cs, names=names)
        fc = fit(spec)
        fu = unconstrained_fit(spec)
        if not (fc.converged and fu.converged):
            return None
        draws = sample(build_tmvn(fu, cs), n_draws=cfg.n_draws, seed=_derived_seed(cfg.seed, replicate, 1))
        summ = summarize(draws, level=cfg.level)
        extra = 0.0 if fc.family.fixed_dispersion else 1.0
        odf = observed_df(fc, count_dispersion=True)
        if cfg.edf_n_sim:
            counts = active_counts(fu, cs, cfg.edf_n_sim, _derived_seed(cfg.seed, replicate, 2))
            edf = fu.p - float(np.mean(counts)) + extra
        else:
            edf = float("nan")
    except CirlsError:
        return None
    var_u = fu.dispersion * np.diag(np.linalg.inv(fu.information()))
    sd_u = np.sqrt(var_u)
    return {
        "beta_c": np.array(fc.beta),
        "var_c": summ["sd"] ** 2,
        "ci_c": np.column_stack([summ["ci_low"], summ["ci_high"]]),
        "beta_u": np.array(fu.beta),
        "var_u": var_u,
        "ci_u": np.column_stack([fu.beta - z * sd_u, fu.beta + z * sd_u]),
        "odf": odf,
        "edf": edf,
        "monotone_fit": bool(np.all(np.diff(fc.beta) >= -1e-10)) if cfg.dgm == NONDECREASING_STRATA else True,
    }


def compute_metrics(estimates, variances, cis, truth, names=None) -> SimMetrics:
    """Bias, SE, RMSE, relative variance error and the two coverages, per coefficient."""
    est = np.asarray(estimates, dtype=float)
    var = np.asarray(variances, dtype=float)
    cis = np.asarray(cis, dtype=float)
    truth = np.asarray(truth, dtype=float)
    n_sim, p = est.shape
    if var.shape != (n_sim, p) or cis.shape != (n_sim, p, 2) or truth.shape != (p,):
        raise InputError("estimates, variances, cis and truth have inconsistent shapes")
    bar = est.mean(axis=0)
    sq_bias = (bar - truth) ** 2
    se = np.sqrt(np.sum((est - bar) ** 2, axis=0) / (n_sim - 1)) if n_sim > 1 else np.zeros(p)
    rmse = np.sqrt(np.mean((est - truth) ** 2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        rve = var.mean(axis=0) / se**2
    lo, hi = cis[..., 0], cis[..., 1]
    cov = np.mean((lo <= truth) & (truth <= hi), axis=0)
    be_cov = np.mean((lo <= bar) & (bar <= hi), axis=0)
    coefs = tuple(
        CoefMetrics(float(sq_bias[j]), float(se[j]), float(rmse[j]), float(rve[j]), float(cov[j]), float(be_cov[j]))
        for j in range(p)
    )
    names = tuple(f"x{j}" for j in range(p)) if names is None else tuple(names)
    return SimMetrics(coefs=coefs, names=names, n_ok=n_sim)


def _replicate_job(args):
    cfg, rep = args
    return run_replicate(cfg, rep)


def run_study(cfg: DgmConfig, workers: int = 1) -> StudyResult:
    """Run every replicate and aggregate both variants.

    Replicates are seeded independently, so ``workers > 1`` gives the same
    result as a serial run.
    """
    jobs = [(cfg, rep) for rep in range(cfg.n_sim)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_replicate_job, jobs, chunksize=max(1, cfg.n_sim // (4 * workers))))
    else:
        results = [_replicate_job(j) for j in jobs]
    ok = [r for r in results if r is not None]
    n_failed = len(results) - len(ok)
    if n_failed > MAX_FAILURE_SHARE * cfg.n_sim:
        raise TooManyFailures(f"{n_failed} of {cfg.n_sim} replicates failed (limit {MAX_FAILURE_SHARE:.0%})")
    if not ok:
        raise TooManyFailures("no replicate could be fitted")
    truth = generate(cfg, 0)["true_beta"]
    names = coef_names(cfg)

    def stack(key):
        return np.array([r[key] for r in ok])

    odf = stack("odf")
    edf = stack("edf")
    if np.all(np.isnan(edf)):
        edf_med = edf_iqr = float("nan")
    else:
        q1, edf_med, q3 = np.quantile(edf, [0.25, 0.5, 0.75], method="linear")
        edf_iqr = q3 - q1
    con = compute_metrics(stack("beta_c"), stack("var_c"), stack("ci_c"), truth, names)
    con = SimMetrics(con.coefs, names, float(np.mean(odf)), float(edf_med), float(edf_iqr), len(ok), n_failed)
    unc = compute_metrics(stack("beta_u"), stack("var_u"), stack("ci_u"), truth, names)
    p_df = float(len(truth)) + (1.0 if cfg.dgm == NONNEG_REGRESSION else 0.0)
    unc = SimMetrics(unc.coefs, names, p_df, p_df, 0.0, len(ok), n_failed)
    return StudyResult(cfg, con, unc, truth, stack("beta_c"), stack("beta_u"),
                       all_monotone=all(r["monotone_fit"] for r in ok))


CSV_FIELDS = ("dgm", "gamma", "coef", "variant", *METRIC_NAMES,
              "mean_odf", "edf_median", "edf_iqr", "n_ok", "n_failed")


def _num(x):
    return repr(float(x))


def metrics_rows(results):
    rows = []
    for res in results:
        for variant, sm in (("constrained", res.constrained), ("unconstrained", res.unconstrained)):
            for name, cm in zip(sm.names, sm.coefs):
                row = {"dgm": res.config.dgm, "gamma": _num(res.config.gamma), "coef": name, "variant": variant}
                row.update({k: _num(getattr(cm, k)) for k in METRIC_NAMES})
                row.update(mean_odf=_num(sm.mean_odf), edf_median=_num(sm.edf_median), edf_iqr=_num(sm.edf_iqr),
                           n_ok=str(sm.n_ok), n_failed=str(sm.n_failed))
                rows.append(row)
    return rows


def metrics_csv(results, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    w.writerows(metrics_rows(results))
    return buf.getvalue()


def summary_dict(results) -> dict:
    out = []
    for res in results:
        cfg = asdict(res.config)
        out.append({
            "config": cfg,
            "true_beta": [float(b) for b in res.true_beta],
            "constrained": {"mean_odf": res.constrained.mean_odf, "edf_median": res.constrained.edf_median,
                            "edf_iqr": res.constrained.edf_iqr, "n_ok": res.constrained.n_ok,
                            "n_failed": res.constrained.n_failed},
            "deltas": res.deltas(),
        })
    return {"studies": out}


def _finite_or_none(x):
    if isinstance(x, dict):
        return {k: _finite_or_none(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_finite_or_none(v) for v in x]
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def summary_json(results) -> str:
    return json.dumps(_finite_or_none(summary_dict(results)), indent=2, sort_keys=True, allow_nan=False) + "\n"
