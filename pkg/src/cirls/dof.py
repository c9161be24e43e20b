"""Observed and expected degrees of freedom; AIC and BIC."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .constraints import DEFAULT_ACTIVE_TOL, ConstraintSet, active_set, validate
from .core import FitResult
from .errors import SingularInformation, TooFewDraws
from .qp import GoldfarbIdnani

DEFAULT_N_SIM = 1000


@dataclass(frozen=True, eq=False)
class DofReport:
    odf: float
    edf: float
    active_count_distribution: dict
    n_sim: int
    seed: int

    def to_dict(self):
        return {
            "odf": self.odf,
            "edf": self.edf,
            "active_count_distribution": {str(k): v for k, v in self.active_count_distribution.items()},
            "n_sim": self.n_sim,
            "seed": self.seed,
        }


def observed_df(fit: FitResult, count_dispersion: bool = False) -> float:
    """``p`` minus the number of active constraints.

    With ``count_dispersion`` the estimated dispersion parameter of the
    gaussian family is counted as one further degree of freedom.
    """
    extra = 1.0 if count_dispersion and not fit.family.fixed_dispersion else 0.0
    return float(fit.p - len(fit.active)) + extra


def active_counts(fit_unc: FitResult, cs: ConstraintSet, n_sim: int, seed: int,
                  tol: float = DEFAULT_ACTIVE_TOL) -> np.ndarray:
    """Number of active constraints after projecting each simulated coefficient vector."""
    p = fit_unc.p
    validate(cs, p)
    if cs.m == 0:
        return np.zeros(n_sim, dtype=int)
    M = fit_unc.information()
    try:
        L = scipy.linalg.cholesky(M, lower=True)
    except np.linalg.LinAlgError:
        raise SingularInformation("X'WX of the unconstrained fit is not positive definite") from None
    # draws ~ N(beta*, phi (X'WX)^{-1}):  beta* + sqrt(phi) L^{-T} e
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    e = rng.standard_normal((n_sim, p))
    draws = fit_unc.beta + np.sqrt(fit_unc.dispersion) * scipy.linalg.solve_triangular(L, e.T, lower=True, trans="T").T
    cb = draws @ cs.C.T
    # draws strictly inside the region project onto themselves with nothing active
    lo_ok = ~np.isfinite(cs.l) | (cb - cs.l > tol * (1 + np.abs(cs.l)))
    hi_ok = ~np.isfinite(cs.u) | (cs.u - cb > tol * (1 + np.abs(cs.u)))
    inside = lo_ok & hi_ok
    clear = np.all(inside, axis=1)
    counts = np.zeros(n_sim, dtype=int)
    solver = GoldfarbIdnani(M)
    for i in np.flatnonzero(~clear):
        # projection in the information metric: min (b - d)' M (b - d)
        sol = solver.solve(M @ draws[i], cs)
        counts[i] = len(active_set(cs, sol.beta, tol))
    return counts


def expected_df(fit_unc: FitResult, cs: ConstraintSet, n_sim: int = DEFAULT_N_SIM, seed: int = 0,
                odf: float | None = None) -> DofReport:
    """``p`` minus the expected number of active constraints, by simulation."""
    if n_sim < 100:
        raise TooFewDraws(f"expected df needs n_sim >= 100, got {n_sim}")
    counts = active_counts(fit_unc, cs, n_sim, seed)
    dist = {k: float(np.sum(counts == k)) / n_sim for k in range(cs.m + 1)}
    edf = float(fit_unc.p - np.mean(counts))
    return DofReport(
        odf=float(fit_unc.p) if odf is None else float(odf),
        edf=edf,
        active_count_distribution=dist,
        n_sim=int(n_sim),
        seed=int(seed),
    )


def loglik(fit: FitResult) -> float:
    m = fit.model
    return fit.family.loglik(m.y, fit.mu, m.prior_weights, fit.dispersion)


def information_criteria(fit: FitResult, df: float) -> dict:
    """AIC and BIC with ``df`` coefficient degrees of freedom.

    For the gaussian family the dispersion parameter adds one.
    """
    k = df + (0.0 if fit.family.fixed_dispersion else 1.0)
    ll = loglik(fit)
    n = fit.n
    return {"aic": -2.0 * ll + 2.0 * k, "bic": -2.0 * ll + np.log(n) * k, "loglik": ll}
