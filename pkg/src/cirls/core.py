"""Constrained iteratively reweighted least squares."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import family as fam_mod
from .constraints import DEFAULT_ACTIVE_TOL, ConstraintSet, active_set, validate
from .errors import DimensionMismatch, InputError, NonFiniteDeviance, NotPositiveDefinite, RankDeficientDesign
from .qp import GoldfarbIdnani


@dataclass(frozen=True)
class Control:
    tol: float = 1e-8
    max_iter: int = 25
    active_tol: float = DEFAULT_ACTIVE_TOL


@dataclass(frozen=True, eq=False)
class ModelSpec:
    X: np.ndarray
    y: np.ndarray
    family: fam_mod.Family
    cs: ConstraintSet | None = None
    offset: np.ndarray | None = None
    weights: np.ndarray | None = None
    control: Control = field(default_factory=Control)
    names: tuple | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        n, p = X.shape
        if n < 1 or p < 1:
            raise DimensionMismatch("design matrix must have at least one row and one column")
        if y.shape[0] != n:
            raise DimensionMismatch(f"X has {n} rows but y has {y.shape[0]} entries")
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise DimensionMismatch("X and y must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "family", fam_mod.get_family(self.family))
        cs = ConstraintSet.empty(p) if self.cs is None else self.cs
        validate(cs, p)
        object.__setattr__(self, "cs", cs)
        for name in ("offset", "weights"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float).ravel()
                if v.shape[0] != n:
                    raise DimensionMismatch(f"{name} has {v.shape[0]} entries, expected {n}")
                object.__setattr__(self, name, v)
        if self.names is None:
            object.__setattr__(self, "names", tuple(f"x{j}" for j in range(p)))
        elif len(self.names) != p:
            raise DimensionMismatch(f"{len(self.names)} names for {p} coefficients")

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def prior_weights(self):
        return np.ones(self.n) if self.weights is None else self.weights

    @property
    def offset_or_zero(self):
        return np.zeros(self.n) if self.offset is None else self.offset


@dataclass(frozen=True, eq=False)
class FitResult:
    beta: np.ndarray
    eta: np.ndarray
    mu: np.ndarray
    deviance: float
    deviance_trace: tuple
    active: frozenset
    odf: float
    dispersion: float
    converged: bool
    iterations: int
    final_w: np.ndarray
    model: ModelSpec
    monotone: bool = True

    @property
    def family(self):
        return self.model.family

    @property
    def p(self):
        return self.beta.shape[0]

    @property
    def n(self):
        return self.eta.shape[0]

    def information(self):
        """``X' W X`` at the converged weights."""
        X = self.model.X
        return X.T @ (self.final_w[:, None] * X)


def _objective_terms(X, state, offset):
    Xw = X * state.w[:, None]
    return Xw.T @ X, Xw.T @ (state.z - offset)


def fit(spec: ModelSpec) -> FitResult:
    """Fit the constrained GLM by iterating QPs on the IRLS pseudo-data."""
    fam, X, y, cs = spec.family, spec.X, spec.y, spec.cs
    offset, weights, ctl = spec.offset_or_zero, spec.prior_weights, spec.control
    state = fam_mod.init_state(fam, y, weights)
    prior = frozenset()
    trace = []
    converged = False
    monotone = True
    dev_prev = None
    it = 0
    for it in range(1, ctl.max_iter + 1):
        H, q = _objective_terms(X, state, offset)
        sol = GoldfarbIdnani(H).solve(q, cs, prior_active=prior)
        prior = sol.active
        beta = np.array(sol.beta)
        eta = X @ beta + offset
        new_state = fam_mod.update_state(fam, y, eta, weights)
        dev = fam_mod.deviance(fam, y, new_state.mu, weights)
        if not np.isfinite(dev):
            raise NonFiniteDeviance(f"deviance is not finite at iteration {it}")
        if trace and dev > trace[-1] + 1e-10 * (1 + abs(dev)):
            monotone = False
        trace.append(dev)
        same_data = np.array_equal(new_state.z, state.z) and np.array_equal(new_state.w, state.w)
        state = new_state
        if same_data or (dev_prev is not None and abs(dev - dev_prev) / (0.1 + abs(dev)) < ctl.tol):
            converged = True
            break
        dev_prev = dev
    active = active_set(cs, beta, ctl.active_tol)
    odf = float(spec.p - len(active))
    df_resid = spec.n - odf
    if df_resid > 0:
        phi = fam_mod.dispersion(fam, y, state.mu, weights, df_resid)
    else:
        phi = 1.0 if fam.fixed_dispersion else float("nan")
    beta.flags.writeable = False
    return FitResult(
        beta=beta,
        eta=eta,
        mu=state.mu,
        deviance=trace[-1],
        deviance_trace=tuple(trace),
        active=active,
        odf=odf,
        dispersion=phi,
        converged=converged and monotone,
        iterations=it,
        final_w=state.w,
        model=spec,
        monotone=monotone,
    )


def unconstrained_fit(spec: ModelSpec) -> FitResult:
    """Classical IRLS fit; requires a full-rank design."""
    X = spec.X
    s = np.linalg.svd(X, compute_uv=False)
    if s[-1] <= 1e-10 * s[0] or spec.n < spec.p:
        raise RankDeficientDesign(
            f"design matrix is rank deficient (rank {int(np.sum(s > 1e-10 * s[0]))} < {spec.p}); "
            "the unconstrained model cannot be fitted"
        )
    try:
        return fit(replace(spec, cs=ConstraintSet.empty(spec.p)))
    except NotPositiveDefinite as e:
        raise RankDeficientDesign(str(e)) from None


def predict(result: FitResult, X_new, scale: str = "link", offset=None):
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != result.p:
        raise DimensionMismatch(f"X_new has {X_new.shape[1]} columns, expected {result.p}")
    eta = X_new @ result.beta
    if offset is not None:
        eta = eta + np.asarray(offset, dtype=float)
    if scale == "link":
        return eta
    if scale == "response":
        return result.family.inverse_link(eta)
    raise InputError(f"scale must be 'link' or 'response', got {scale!r}")
