"""Linear constraint systems ``l <= C @ beta <= u``.

Infinite bounds are stored as ``-np.inf`` / ``np.inf``; equality rows are
rows with ``l[i] == u[i]``. Indices are 0-based throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    InvalidBounds,
    RankDeficientConstraints,
    RunTooShort,
    TooFewIndices,
    TooManyConstraints,
    UnboundedRow,
    ZeroRow,
)

LOWER = "lower"
UPPER = "upper"

RANK_RTOL = 1e-10
DEFAULT_ACTIVE_TOL = 1e-6


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Constraint matrix ``C`` (m x p) with bound vectors ``l`` and ``u``."""

    C: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        l = np.atleast_1d(np.asarray(self.l, dtype=float)).ravel()
        u = np.atleast_1d(np.asarray(self.u, dtype=float)).ravel()
        if C.size == 0:
            C = C.reshape(0, C.shape[-1] if C.ndim == 2 else 0)
        if l.shape[0] != C.shape[0] or u.shape[0] != C.shape[0]:
            raise DimensionMismatch(
                f"C has {C.shape[0]} rows but l has {l.shape[0]} and u has {u.shape[0]} entries"
            )
        object.__setattr__(self, "C", _frozen(C))
        object.__setattr__(self, "l", _frozen(l))
        object.__setattr__(self, "u", _frozen(u))

    @classmethod
    def empty(cls, p: int) -> "ConstraintSet":
        return cls(np.zeros((0, p)), np.zeros(0), np.zeros(0))

    @property
    def m(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[1]

    @property
    def is_equality(self) -> np.ndarray:
        return self.l == self.u

    def stack(self, other: "ConstraintSet") -> "ConstraintSet":
        """Concatenate the rows of two constraint sets."""
        if other.p != self.p:
            raise DimensionMismatch(f"cannot stack constraints on {self.p} and {other.p} columns")
        return ConstraintSet(
            np.vstack([self.C, other.C]),
            np.concatenate([self.l, other.l]),
            np.concatenate([self.u, other.u]),
        )

    def is_feasible(self, beta, eps: float = 1e-8) -> bool:
        if self.m == 0:
            return True
        cb = self.C @ np.asarray(beta, dtype=float)
        lo_ok = cb >= self.l - eps * (1 + np.where(np.isfinite(self.l), np.abs(self.l), 0))
        hi_ok = cb <= self.u + eps * (1 + np.where(np.isfinite(self.u), np.abs(self.u), 0))
        return bool(np.all(lo_ok & hi_ok))


@dataclass(frozen=True, eq=False)
class AugmentedConstraints:
    """Square system ``D = [C; H]`` with bounds padded by infinities.

    Rows of ``H`` are an orthonormal basis of the null space of ``C``.
    """

    D: np.ndarray
    l_aug: np.ndarray
    u_aug: np.ndarray
    m: int

    @property
    def H(self) -> np.ndarray:
        return self.D[self.m:]


def validate(cs: ConstraintSet, p: int) -> None:
    """Raise if ``cs`` is not a well-posed constraint system on ``p`` coefficients."""
    if cs.C.shape[1] != p:
        raise DimensionMismatch(f"constraint matrix has {cs.C.shape[1]} columns, expected {p}")
    if cs.m == 0:
        return
    if np.any(np.isnan(cs.C)) or np.any(np.isinf(cs.C)):
        raise DimensionMismatch("constraint matrix has non-finite entries")
    if np.any(np.isnan(cs.l)) or np.any(np.isnan(cs.u)):
        raise InvalidBounds("bounds contain NaN")
    bad = np.flatnonzero(cs.l > cs.u)
    if bad.size:
        i = bad[0]
        raise InvalidBounds(f"row {i}: lower bound {cs.l[i]} exceeds upper bound {cs.u[i]}")
    zero = np.flatnonzero(np.all(cs.C == 0, axis=1))
    if zero.size:
        raise ZeroRow(f"row {zero[0]} of the constraint matrix is entirely zero")
    unb = np.flatnonzero(np.isneginf(cs.l) & np.isposinf(cs.u))
    if unb.size:
        raise UnboundedRow(f"row {unb[0]} has both bounds infinite")
    if np.any(np.isposinf(cs.l)) or np.any(np.isneginf(cs.u)):
        raise InvalidBounds("lower bound +inf or upper bound -inf")
    s = np.linalg.svd(cs.C, compute_uv=False)
    rank = int(np.sum(s > RANK_RTOL * s[0]))
    if rank < cs.m:
        raise RankDeficientConstraints(
            f"constraint matrix has rank {rank} < {cs.m} rows; rows must be linearly independent"
        )


def _check_indices(p, indices):
    idx = [int(i) for i in indices]
    for i in idx:
        if i < 0 or i >= p:
            raise IndexOutOfRange(f"index {i} outside 0..{p - 1}")
    if len(set(idx)) != len(idx):
        raise IndexOutOfRange(f"duplicate indices in {idx}")
    return idx


def build_nonneg(p: int, indices) -> ConstraintSet:
    """One row ``beta[j] >= 0`` per index."""
    idx = _check_indices(p, indices)
    if not idx:
        raise TooFewIndices("nonnegativity needs at least one index")
    C = np.zeros((len(idx), p))
    C[np.arange(len(idx)), idx] = 1.0
    cs = ConstraintSet(C, np.zeros(len(idx)), np.full(len(idx), np.inf))
    validate(cs, p)
    return cs


def build_sumzero(p: int, indices) -> ConstraintSet:
    """Single equality row forcing the listed coefficients to sum to zero."""
    idx = _check_indices(p, indices)
    if len(idx) < 2:
        raise TooFewIndices("a sum-to-zero constraint needs at least two coefficients")
    C = np.zeros((1, p))
    C[0, idx] = 1.0
    cs = ConstraintSet(C, [0.0], [0.0])
    validate(cs, p)
    return cs


def build_monotone_increasing(p: int, indices) -> ConstraintSet:
    """Rows ``beta[j_{k+1}] - beta[j_k] >= 0`` along the given ordered run."""
    idx = _check_indices(p, indices)
    if len(idx) < 2:
        raise RunTooShort("a monotone run needs at least two coefficients")
    k = len(idx) - 1
    C = np.zeros((k, p))
    rows = np.arange(k)
    C[rows, idx[:-1]] = -1.0
    C[rows, idx[1:]] = 1.0
    cs = ConstraintSet(C, np.zeros(k), np.full(k, np.inf))
    validate(cs, p)
    return cs


def augment(cs: ConstraintSet) -> AugmentedConstraints:
    """Complete ``C`` to an invertible ``p x p`` matrix with orthonormal null-space rows."""
    m, p = cs.m, cs.p
    if m > p:
        raise TooManyConstraints(f"{m} constraints on {p} coefficients; need m <= p")
    if m == 0:
        D = np.eye(p)
    elif m == p:
        D = np.array(cs.C)
    else:
        Q, _, _ = scipy.linalg.qr(cs.C.T, pivoting=True)
        D = np.vstack([cs.C, Q[:, m:].T])
    l_aug = np.concatenate([cs.l, np.full(p - m, -np.inf)])
    u_aug = np.concatenate([cs.u, np.full(p - m, np.inf)])
    return AugmentedConstraints(_frozen(D), _frozen(l_aug), _frozen(u_aug), m)


def active_set(cs: ConstraintSet, beta, tol: float = DEFAULT_ACTIVE_TOL) -> frozenset:
    """Rows holding with equality at ``beta`` as ``(row, side)`` pairs.

    Equality rows are reported once, on the lower side.
    """
    if cs.m == 0:
        return frozenset()
    cb = cs.C @ np.asarray(beta, dtype=float)
    out = set()
    with np.errstate(invalid="ignore"):
        at_lo = np.isfinite(cs.l) & (np.abs(cb - cs.l) <= tol * (1 + np.abs(cs.l)))
        at_hi = np.isfinite(cs.u) & (np.abs(cb - cs.u) <= tol * (1 + np.abs(cs.u)))
    for i in range(cs.m):
        if at_lo[i]:
            out.add((i, LOWER))
        elif at_hi[i]:
            out.add((i, LOWER if cs.l[i] == cs.u[i] else UPPER))
    return frozenset(out)


def from_dict(spec: dict, p: int, names=None) -> ConstraintSet:
    """Build a constraint set from its JSON form.

    ``kind`` is one of ``nonneg``, ``sumzero``, ``monotone_inc``, ``explicit``.
    ``indices`` may hold 0-based integers or coefficient names.
    """
    kind = spec.get("kind")
    if kind in ("nonneg", "sumzero", "monotone_inc"):
        if "indices" not in spec:
            raise IndexOutOfRange(f"constraint of kind {kind!r} needs 'indices'")
        idx = [_resolve_index(i, names) for i in spec["indices"]]
        builder = {
            "nonneg": build_nonneg,
            "sumzero": build_sumzero,
            "monotone_inc": build_monotone_increasing,
        }[kind]
        return builder(p, idx)
    if kind == "explicit":
        try:
            C = np.array(spec["C"], dtype=float)
            l = np.array([parse_bound(v) for v in spec["l"]])
            u = np.array([parse_bound(v) for v in spec["u"]])
        except KeyError as e:
            raise DimensionMismatch(f"explicit constraint missing field {e.args[0]!r}") from None
        cs = ConstraintSet(C, l, u)
        validate(cs, p)
        return cs
    raise DimensionMismatch(f"unknown constraint kind {kind!r}")


def to_dict(cs: ConstraintSet) -> dict:
    return {
        "kind": "explicit",
        "C": cs.C.tolist(),
        "l": [format_bound(v) for v in cs.l],
        "u": [format_bound(v) for v in cs.u],
    }


def combine(sets, p: int) -> ConstraintSet:
    out = ConstraintSet.empty(p)
    for cs in sets:
        out = out.stack(cs)
    validate(out, p)
    return out


def parse_bound(v) -> float:
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf"):
            return np.inf
        if s == "-inf":
            return -np.inf
    return float(v)


def format_bound(v: float):
    if np.isposinf(v):
        return "inf"
    if np.isneginf(v):
        return "-inf"
    return float(v)


def _resolve_index(i, names):
    if isinstance(i, str):
        if names is None or i not in names:
            raise IndexOutOfRange(f"unknown coefficient name {i!r}")
        return list(names).index(i)
    return int(i)
