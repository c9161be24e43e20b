"""Simulation-based inference for constrained coefficients.

The constrained estimator of ``D beta`` is taken as a multivariate normal
centred on the unconstrained estimate, truncated to the box
``l_aug <= D beta <= u_aug``. ``D`` stacks the constraint rows on top of an
orthonormal basis of their null space, so sampled vectors map back to
coefficients through ``D^{-1}``.

Coordinates of the transformed vector fall in three groups: fixed
(equality rows), truncated (at least one finite bound) and free (null-space
rows). Fixed coordinates are conditioned on exactly, truncated ones are
drawn by coordinate-wise Gibbs sampling, and free ones are drawn exactly
from their conditional normal given the truncated block.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import log_ndtr, ndtri_exp

from .constraints import ConstraintSet, augment, validate
from .core import FitResult
from .errors import DegenerateTruncation, EmptyInterval, SingularInformation, TooFewDraws

DEFAULT_N_DRAWS = 10_000
BURN_IN = 500
THINNING = 1
N_CHAINS = 16
LOG_MASS_FLOOR = -700.0


@dataclass(frozen=True, eq=False)
class TmvnSpec:
    theta: np.ndarray
    Sigma: np.ndarray
    l_aug: np.ndarray
    u_aug: np.ndarray
    D: np.ndarray
    m: int = 0
    names: tuple | None = None

    @property
    def p(self):
        return self.theta.shape[0]


@dataclass(frozen=True, eq=False)
class CoefDraws:
    draws: np.ndarray
    seed: int
    n_draws: int
    diagnostics: dict = field(default_factory=dict)
    names: tuple | None = None


def build_tmvn(fit_unc: FitResult, cs: ConstraintSet) -> TmvnSpec:
    """Truncated normal for ``D beta`` from an unconstrained fit."""
    p = fit_unc.p
    validate(cs, p)
    aug = augment(cs)
    info = fit_unc.information()
    try:
        L = scipy.linalg.cholesky(info, lower=True)
    except np.linalg.LinAlgError:
        raise SingularInformation("X'WX of the unconstrained fit is not positive definite") from None
    V = scipy.linalg.cho_solve((L, True), np.eye(p))
    phi = fit_unc.dispersion
    if not np.isfinite(phi) or phi <= 0:
        raise SingularInformation(f"dispersion of the unconstrained fit is unusable ({phi})")
    Sigma = phi * aug.D @ V @ aug.D.T
    Sigma = 0.5 * (Sigma + Sigma.T)
    return TmvnSpec(
        theta=aug.D @ fit_unc.beta,
        Sigma=Sigma,
        l_aug=np.array(aug.l_aug),
        u_aug=np.array(aug.u_aug),
        D=np.array(aug.D),
        m=aug.m,
        names=fit_unc.model.names,
    )


def _rtruncnorm(rng, mean, sd, lo, hi):
    """Inverse-CDF draws from N(mean, sd^2) restricted to [lo, hi], vectorized.

    Works on the log-CDF scale; intervals in the upper tail are reflected so
    that both ends sit in the lower tail where log_ndtr keeps full precision.
    """
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    flip = a > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    la = log_ndtr(a2)
    lb = log_ndtr(b2)
    v = rng.random(np.shape(mean))
    with np.errstate(divide="ignore", invalid="ignore"):
        lu = lb + np.log(v + (1.0 - v) * np.exp(la - lb))
    x = ndtri_exp(lu)
    x = np.clip(x, a2, b2)
    x = np.where(flip, -x, x)
    return mean + sd * x


def _groups(spec: TmvnSpec):
    fixed = np.flatnonzero(spec.l_aug == spec.u_aug)
    bounded = np.isfinite(spec.l_aug) | np.isfinite(spec.u_aug)
    trunc = np.flatnonzero(bounded & (spec.l_aug < spec.u_aug))
    free = np.flatnonzero(~bounded)
    return fixed, trunc, free


def _condition(mean, cov, keep, given, values):
    if given.size == 0:
        return mean[keep], cov[np.ix_(keep, keep)]
    S_gg = cov[np.ix_(given, given)]
    S_kg = cov[np.ix_(keep, given)]
    K = np.linalg.solve(S_gg, S_kg.T).T
    m = mean[keep] + K @ (values - mean[given])
    c = cov[np.ix_(keep, keep)] - K @ S_kg.T
    return m, 0.5 * (c + c.T)


def _log_mass_bound(mean, cov, lo, hi):
    """Upper bound on the log probability of the box: the smallest marginal mass."""
    sd = np.sqrt(np.diag(cov))
    a = (lo - mean) / sd
    b = (hi - mean) / sd
    flip = a > 0
    a2, b2 = np.where(flip, -b, a), np.where(flip, -a, b)
    la, lb = log_ndtr(a2), log_ndtr(b2)
    with np.errstate(divide="ignore"):
        lm = lb + np.log1p(-np.exp(la - lb))
    return float(np.min(lm)) if lm.size else 0.0


def sample(spec: TmvnSpec, n_draws: int = DEFAULT_N_DRAWS, seed: int = 0,
           burn_in: int = BURN_IN, n_chains: int = N_CHAINS) -> CoefDraws:
    """Draw coefficient vectors from the truncated normal and map them back."""
    if n_draws < 1:
        raise TooFewDraws("n_draws must be at least 1")
    p = spec.p
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    fixed, trunc, free = _groups(spec)
    theta, Sigma = spec.theta, spec.Sigma
    rest = np.concatenate([trunc, free])
    mean_r, cov_r = _condition(theta, Sigma, rest, fixed, spec.l_aug[fixed])
    nt = trunc.size
    mean_t, cov_t = mean_r[:nt], cov_r[:nt, :nt]
    lo_t, hi_t = spec.l_aug[trunc], spec.u_aug[trunc]
    x = np.empty((n_draws, p))
    x[:, fixed] = spec.l_aug[fixed]
    diagnostics = {"burn_in": 0, "thinning": THINNING, "n_chains": 0,
                   "acceptance_note": "no truncated coordinates; exact multivariate normal draws"}
    if nt:
        log_mass = _log_mass_bound(mean_t, cov_t, lo_t, hi_t)
        if log_mass < LOG_MASS_FLOOR:
            raise DegenerateTruncation(
                f"feasible region has negligible probability (log-mass <= {log_mass:.1f})", log_mass
            )
        xt = _gibbs(rng, mean_t, cov_t, lo_t, hi_t, n_draws, burn_in, n_chains)
        x[:, trunc] = xt
        if nt == 1:
            note = "single truncated coordinate; exact inverse-CDF draws"
            diagnostics.update(burn_in=0, n_chains=1)
        else:
            note = "coordinate-wise Gibbs sampler over truncated coordinates (inverse-CDF conditionals)"
            diagnostics.update(burn_in=burn_in, n_chains=min(n_chains, n_draws))
        diagnostics["acceptance_note"] = note
        diagnostics["log_mass_bound"] = log_mass
    else:
        xt = np.zeros((n_draws, 0))
    if free.size:
        # conditional of the free block given the truncated draws
        S_tt = cov_r[:nt, :nt]
        S_ft = cov_r[nt:, :nt]
        S_ff = cov_r[nt:, nt:]
        if nt:
            K = np.linalg.solve(S_tt, S_ft.T).T
            cov_f = S_ff - K @ S_ft.T
            mean_f = mean_r[nt:][None, :] + (xt - mean_t[None, :]) @ K.T
        else:
            cov_f = S_ff
            mean_f = np.broadcast_to(mean_r[nt:], (n_draws, free.size))
        cov_f = 0.5 * (cov_f + cov_f.T)
        Lf = _psd_factor(cov_f)
        x[:, free] = mean_f + rng.standard_normal((n_draws, free.size)) @ Lf.T
    beta = np.linalg.solve(spec.D, x.T).T
    return CoefDraws(draws=beta, seed=int(seed), n_draws=int(n_draws), diagnostics=diagnostics, names=spec.names)


def _psd_factor(S):
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        w, U = np.linalg.eigh(S)
        return U * np.sqrt(np.clip(w, 0, None))


def _gibbs(rng, mean, cov, lo, hi, n_draws, burn_in, n_chains):
    k = mean.shape[0]
    if k == 1:
        sd = np.sqrt(cov[0, 0])
        return _rtruncnorm(rng, np.full(n_draws, mean[0]), sd, lo[0], hi[0])[:, None]
    P = np.linalg.inv(cov)
    cond_sd = 1.0 / np.sqrt(np.diag(P))
    # regression weights of each coordinate on the others
    B = -P / np.diag(P)[:, None]
    np.fill_diagonal(B, 0.0)
    chains = min(n_chains, n_draws)
    per_chain = -(-n_draws // chains)
    state = np.tile(np.clip(mean, lo, hi), (chains, 1))
    out = np.empty((per_chain, chains, k))
    for it in range(burn_in + per_chain * THINNING):
        for i in range(k):
            cm = mean[i] + (state - mean[None, :]) @ B[i]
            state[:, i] = _rtruncnorm(rng, cm, cond_sd[i], lo[i], hi[i])
        kept = it - burn_in
        if kept >= 0 and kept % THINNING == 0:
            out[kept // THINNING] = state
    # chain-major order: each chain's draws stay contiguous
    return out.transpose(1, 0, 2).reshape(-1, k)[:n_draws]


def summarize(draws: CoefDraws, level: float = 0.95) -> dict:
    """Per-coefficient mean, sd and central interval, plus the covariance."""
    X = draws.draws
    if X.shape[0] < 100:
        raise TooFewDraws(f"need at least 100 draws to summarize, got {X.shape[0]}")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(X, [alpha, 1.0 - alpha], axis=0, method="linear")
    return {
        "mean": X.mean(axis=0),
        "sd": X.std(axis=0, ddof=1),
        "ci_low": lo,
        "ci_high": hi,
        "cov": np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1]),
    }


def truncnorm_mean(theta: float, sigma: float, l: float, u: float) -> float:
    """Mean of N(theta, sigma^2) truncated to [l, u]."""
    if not l < u:
        raise EmptyInterval(f"empty truncation interval [{l}, {u}]")
    a = (l - theta) / sigma
    b = (u - theta) / sigma
    if a > 0:
        return theta - sigma * _std_truncnorm_mean(-b, -a)
    return theta + sigma * _std_truncnorm_mean(a, b)


def _std_truncnorm_mean(a, b):
    # (pdf(a) - pdf(b)) / (cdf(b) - cdf(a)) for a <= 0, evaluated in logs
    la, lb = log_ndtr(a), log_ndtr(b)
    log_z = lb + np.log1p(-np.exp(la - lb))
    log_pa = -0.5 * a * a - 0.5 * np.log(2 * np.pi) if np.isfinite(a) else -np.inf
    log_pb = -0.5 * b * b - 0.5 * np.log(2 * np.pi) if np.isfinite(b) else -np.inf
    return float(np.exp(log_pa - log_z) - np.exp(log_pb - log_z))

