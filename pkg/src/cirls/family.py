"""Exponential families with canonical links for IRLS.

Each family supplies the link, its inverse, the variance function, the
unit deviance and the log-likelihood. The module-level functions build the
IRLS pseudo-data (``z``, ``w``) from a linear predictor.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, gammaln, logit, xlogy

from .errors import InputError, NonPositiveDf, NumericOverflow, SupportViolation

ETA_CLAMP = 30.0
W_FLOOR = 1e-10
DISPERSION_FLOOR = 1e-12

_CANONICAL = {"gaussian": "identity", "poisson": "log", "binomial": "logit"}


class Family:
    """Base class; subclasses implement a single canonical pair."""

    name: str
    link_name: str
    fixed_dispersion: bool

    def link(self, mu):
        raise NotImplementedError

    def inverse_link(self, eta):
        raise NotImplementedError

    def variance(self, mu):
        raise NotImplementedError

    def link_deriv(self, mu):
        """d eta / d mu."""
        return 1.0 / self.variance(mu)

    def clamp(self, eta):
        return eta

    def pseudo_response(self, y, eta, mu, g_deriv):
        return eta + g_deriv * (y - mu)

    def check_support(self, y):
        pass

    def start_mu(self, y, weights):
        raise NotImplementedError

    def unit_deviance(self, y, mu):
        raise NotImplementedError

    def loglik(self, y, mu, weights, dispersion):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(link={self.link_name!r})"


class Gaussian(Family):
    name = "gaussian"
    link_name = "identity"
    fixed_dispersion = False

    def link(self, mu):
        return np.asarray(mu, dtype=float)

    def inverse_link(self, eta):
        return np.asarray(eta, dtype=float)

    def variance(self, mu):
        return np.ones_like(np.asarray(mu, dtype=float))

    def start_mu(self, y, weights):
        return np.array(y, dtype=float)

    def pseudo_response(self, y, eta, mu, g_deriv):
        # exact: eta + (y - mu) can differ from y by rounding
        return np.array(y, dtype=float)

    def unit_deviance(self, y, mu):
        return (y - mu) ** 2

    def loglik(self, y, mu, weights, dispersion):
        # dispersion is sigma^2
        n = np.sum(weights > 0)
        rss = np.sum(weights * (y - mu) ** 2)
        return float(
            -0.5 * (n * np.log(2 * np.pi * dispersion) - np.sum(np.log(weights[weights > 0])))
            - rss / (2 * dispersion)
        )


class Poisson(Family):
    name = "poisson"
    link_name = "log"
    fixed_dispersion = True

    def link(self, mu):
        return np.log(mu)

    def inverse_link(self, eta):
        return np.exp(eta)

    def variance(self, mu):
        return np.asarray(mu, dtype=float)

    def clamp(self, eta):
        return np.clip(eta, -ETA_CLAMP, ETA_CLAMP)

    def check_support(self, y):
        if np.any(y < 0):
            i = int(np.flatnonzero(y < 0)[0])
            raise SupportViolation(f"poisson response must be nonnegative (row {i}: {y[i]})")

    def start_mu(self, y, weights):
        return y + 0.1

    def unit_deviance(self, y, mu):
        return 2.0 * (xlogy(y, y) - xlogy(y, mu) - (y - mu))

    def loglik(self, y, mu, weights, dispersion=1.0):
        return float(np.sum(weights * (xlogy(y, mu) - mu - gammaln(y + 1))))


class Binomial(Family):
    """Responses are proportions; prior weights are the trial counts."""

    name = "binomial"
    link_name = "logit"
    fixed_dispersion = True

    def link(self, mu):
        return logit(mu)

    def inverse_link(self, eta):
        return expit(eta)

    def variance(self, mu):
        return mu * (1.0 - mu)

    def clamp(self, eta):
        return np.clip(eta, -ETA_CLAMP, ETA_CLAMP)

    def check_support(self, y):
        bad = (y < 0) | (y > 1)
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise SupportViolation(f"binomial response must be a proportion in [0, 1] (row {i}: {y[i]})")

    def start_mu(self, y, weights):
        return (weights * y + 0.5) / (weights + 1.0)

    def unit_deviance(self, y, mu):
        return 2.0 * (xlogy(y, y) - xlogy(y, mu) + xlogy(1 - y, 1 - y) - xlogy(1 - y, 1 - mu))

    def loglik(self, y, mu, weights, dispersion=1.0):
        k = weights * y
        lchoose = gammaln(weights + 1) - gammaln(k + 1) - gammaln(weights - k + 1)
        return float(np.sum(lchoose + xlogy(k, mu) + xlogy(weights - k, 1 - mu)))


_FAMILIES = {"gaussian": Gaussian, "poisson": Poisson, "binomial": Binomial}


def get_family(family: str, link: str | None = None) -> Family:
    """Look up a family by name; only canonical links are accepted."""
    if isinstance(family, Family):
        return family
    if family not in _FAMILIES:
        raise InputError(f"unknown family {family!r}; expected one of {sorted(_FAMILIES)}")
    if link is not None and link != _CANONICAL[family]:
        raise InputError(f"only the canonical link {_CANONICAL[family]!r} is supported for {family}")
    return _FAMILIES[family]()


@dataclass(frozen=True, eq=False)
class IrlsState:
    eta: np.ndarray
    mu: np.ndarray
    z: np.ndarray
    w: np.ndarray
    g_deriv: np.ndarray


def _prior(weights, n):
    return np.ones(n) if weights is None else np.asarray(weights, dtype=float)


def _state(fam, y, eta, mu, weights):
    v = fam.variance(mu)
    g_deriv = 1.0 / v
    w = np.maximum(weights * v, W_FLOOR)
    z = fam.pseudo_response(y, eta, mu, g_deriv)
    return IrlsState(eta=eta, mu=mu, z=z, w=w, g_deriv=g_deriv)


def init_state(fam: Family, y, weights=None) -> IrlsState:
    """Starting pseudo-data from the family's initial mean."""
    y = np.asarray(y, dtype=float)
    fam = get_family(fam)
    fam.check_support(y)
    weights = _prior(weights, y.shape[0])
    mu = fam.start_mu(y, weights)
    eta = fam.link(mu)
    return _state(fam, y, eta, mu, weights)


def update_state(fam: Family, y, eta, weights=None) -> IrlsState:
    """Pseudo-response and weights at linear predictor ``eta``."""
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    fam = get_family(fam)
    if not np.all(np.isfinite(eta)):
        raise NumericOverflow("non-finite linear predictor")
    eta = fam.clamp(eta)
    mu = fam.inverse_link(eta)
    return _state(fam, y, eta, mu, _prior(weights, y.shape[0]))


def deviance(fam: Family, y, mu, weights=None) -> float:
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    fam = get_family(fam)
    return float(np.sum(_prior(weights, y.shape[0]) * fam.unit_deviance(y, mu)))


def dispersion(fam: Family, y, mu, w, df_resid: float) -> float:
    """Fixed at 1 for poisson/binomial; Pearson estimate for gaussian."""
    fam = get_family(fam)
    if df_resid <= 0:
        raise NonPositiveDf(f"residual degrees of freedom must be positive, got {df_resid}")
    if fam.fixed_dispersion:
        return 1.0
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    w = np.asarray(w, dtype=float)
    phi = float(np.sum(w * (y - mu) ** 2 / fam.variance(mu)) / df_resid)
    if phi < DISPERSION_FLOOR:
        warnings.warn("dispersion estimate is numerically zero; floored at 1e-12", RuntimeWarning, stacklevel=2)
        phi = DISPERSION_FLOOR
    return phi
