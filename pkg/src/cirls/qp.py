"""Strictly convex QP ``min beta' H beta - 2 q' beta  s.t.  l <= C beta <= u``.

The solver is the dual active-set method of Goldfarb and Idnani. It starts
from the unconstrained minimum and adds violated constraints one at a time,
keeping every iterate optimal on its working set with dual-feasible
multipliers. The Cholesky factor of ``H`` is computed once; adding or
dropping a constraint updates ``J = L^{-T} Q`` and the triangular ``R`` with
Givens rotations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .constraints import LOWER, UPPER, ConstraintSet
from .errors import DimensionMismatch, Infeasible, MaxIterationsExceeded, NotPositiveDefinite

RIDGE_DELTA = 1e-10
_DEP_RTOL = 1e-12
_FEAS_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class QpProblem:
    H: np.ndarray
    q: np.ndarray
    cs: ConstraintSet


@dataclass(frozen=True, eq=False)
class QpSolution:
    beta: np.ndarray
    duals: np.ndarray
    active: frozenset
    iterations: int
    objective: float


class _Expanded:
    """One-sided rows ``n_j' x >= b_j``; equalities first."""

    def __init__(self, cs: ConstraintSet):
        normals, rhs, origin = [], [], []
        eq = np.flatnonzero(cs.is_equality)
        for i in eq:
            normals.append(cs.C[i])
            rhs.append(cs.l[i])
            origin.append((int(i), LOWER))
        for i in range(cs.m):
            if cs.l[i] == cs.u[i]:
                continue
            if np.isfinite(cs.l[i]):
                normals.append(cs.C[i])
                rhs.append(cs.l[i])
                origin.append((i, LOWER))
            if np.isfinite(cs.u[i]):
                normals.append(-cs.C[i])
                rhs.append(-cs.u[i])
                origin.append((i, UPPER))
        p = cs.p
        self.N = np.array(normals, dtype=float).reshape(-1, p).T
        self.b = np.array(rhs, dtype=float)
        self.origin = origin
        self.neq = len(eq)
        self.norms = np.linalg.norm(self.N, axis=0)
        self.index = {o: j for j, o in enumerate(origin)}

    @property
    def k(self):
        return self.b.shape[0]


def _givens(a, b):
    h = np.hypot(a, b)
    return a / h, b / h, h


class GoldfarbIdnani:
    """Solver bound to one Hessian; reusable across linear terms and constraints."""

    def __init__(self, H, ridge: bool = False):
        H = np.asarray(H, dtype=float)
        p = H.shape[0]
        if H.shape != (p, p):
            raise DimensionMismatch(f"H must be square, got shape {H.shape}")
        scale = max(np.max(np.abs(H)), np.finfo(float).tiny)
        if np.max(np.abs(H - H.T)) > 1e-10 * scale:
            raise NotPositiveDefinite("H is not symmetric")
        H = 0.5 * (H + H.T)
        if ridge:
            H = H + RIDGE_DELTA * np.trace(H) / p * np.eye(p)
        try:
            L = scipy.linalg.cholesky(H, lower=True)
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(
                "H = X'WX is not positive definite; check for collinear columns "
                "(e.g. drop the intercept when a full set of indicators is used)"
            ) from None
        if np.min(np.abs(np.diag(L))) <= 1e-14 * np.max(np.abs(np.diag(L))):
            raise NotPositiveDefinite("H is numerically singular")
        self.H = H
        self.p = p
        self.J0 = scipy.linalg.solve_triangular(L, np.eye(p), lower=True).T

    def unconstrained(self, q):
        return self.J0 @ (self.J0.T @ q)

    def solve(self, q, cs: ConstraintSet, prior_active=(), max_iter=None):
        q = np.asarray(q, dtype=float)
        p = self.p
        if q.shape != (p,) or cs.p != p:
            raise DimensionMismatch("q and constraint matrix must match the dimension of H")
        ex = _Expanded(cs)
        if max_iter is None:
            max_iter = 50 * (p + cs.m)
        state = _State(self, q, ex)
        state.start(prior_active)
        state.run(max_iter)
        return state.solution(cs)


class _State:
    def __init__(self, gi: GoldfarbIdnani, q, ex: _Expanded):
        self.gi = gi
        self.q = q
        self.ex = ex
        p = gi.p
        self.J = gi.J0.copy()
        self.R = np.zeros((p, p))
        self.A = []
        self.u = []
        self.x = gi.unconstrained(q)
        self.f = -0.5 * q @ self.x
        self.iterations = 0

    # -- factorization updates -------------------------------------------------
    def _add(self, d):
        J, qa, p = self.J, len(self.A), self.gi.p
        for j in range(p - 1, qa, -1):
            if d[j] == 0.0:
                continue
            c, s, h = _givens(d[j - 1], d[j])
            d[j - 1], d[j] = h, 0.0
            a, b = J[:, j - 1].copy(), J[:, j]
            J[:, j - 1] = c * a + s * b
            J[:, j] = c * b - s * a
        self.R[: qa + 1, qa] = d[: qa + 1]

    def _drop(self, k):
        qa = len(self.A)
        R, J = self.R, self.J
        R[:qa, k:qa - 1] = R[:qa, k + 1:qa]
        R[:, qa - 1] = 0.0
        for i in range(k, qa - 1):
            c, s, h = _givens(R[i, i], R[i + 1, i])
            a, b = R[i, i:qa - 1].copy(), R[i + 1, i:qa - 1]
            R[i, i:qa - 1] = c * a + s * b
            R[i + 1, i:qa - 1] = c * b - s * a
            R[i + 1, i] = 0.0
            a, b = J[:, i].copy(), J[:, i + 1]
            J[:, i] = c * a + s * b
            J[:, i + 1] = c * b - s * a
        R[qa - 1, :] = 0.0
        del self.A[k]
        del self.u[k]

    def _directions(self, n):
        qa = len(self.A)
        d = self.J.T @ n
        z = self.J[:, qa:] @ d[qa:]
        r = scipy.linalg.solve_triangular(self.R[:qa, :qa], d[:qa]) if qa else np.zeros(0)
        dependent = d[qa:] @ d[qa:] <= (_DEP_RTOL ** 2) * max(d @ d, np.finfo(float).tiny)
        return d, z, r, dependent

    # -- phases ------------------------------------------------------------------
    def start(self, prior_active):
        ex = self.ex
        self.sign = np.ones(ex.k)
        for j in range(ex.neq):
            n = ex.N[:, j]
            if n @ self.x - ex.b[j] > 0:
                self.sign[j] = -1.0
            self._step_in(j, equality=True)
        warm = sorted({ex.index[tuple(a)] for a in prior_active if tuple(a) in ex.index} - set(range(ex.neq)))
        if warm:
            self._warm(warm)

    def _warm(self, warm):
        """Jump to the optimum on ``equalities + warm`` if it is dual feasible."""
        ex, gi = self.ex, self.gi
        base_J, base_R = self.J.copy(), self.R.copy()
        base_A, base_u = list(self.A), list(self.u)
        x_unc = gi.unconstrained(self.q)
        cand = list(warm)
        while cand:
            self.J, self.R = base_J.copy(), base_R.copy()
            self.A, self.u = list(base_A), list(base_u)
            used = []
            for j in cand:
                d, _, _, dependent = self._directions(self._normal(j))
                if dependent:
                    continue
                self._add(d)
                self.A.append(j)
                self.u.append(0.0)
                used.append(j)
            qa = len(self.A)
            NA = np.column_stack([self._normal(j) for j in self.A])
            bA = np.array([self._rhs(j) for j in self.A])
            Rq = self.R[:qa, :qa]
            # N'G^{-1}N = R'R on the working set
            y = scipy.linalg.solve_triangular(Rq, bA - NA.T @ x_unc, trans="T")
            u = scipy.linalg.solve_triangular(Rq, y)
            ineq = np.array([j >= ex.neq for j in self.A])
            neg = np.flatnonzero(ineq & (u < 0))
            if neg.size == 0:
                self.x = x_unc + self.J[:, :qa] @ (self.R[:qa, :qa] @ u)
                self.u = list(u)
                self.f = 0.5 * self.x @ gi.H @ self.x - self.q @ self.x
                self.iterations += len(used)
                return
            worst = self.A[neg[np.argmin(u[neg])]]
            cand = [j for j in used if j != worst]
        self.J, self.R, self.A, self.u = base_J, base_R, base_A, base_u

    def _normal(self, j):
        return self.sign[j] * self.ex.N[:, j]

    def _rhs(self, j):
        return self.sign[j] * self.ex.b[j]

    def run(self, max_iter):
        ex = self.ex
        if ex.k == ex.neq:
            return
        ineq = np.arange(ex.neq, ex.k)
        while True:
            s = ex.N[:, ineq].T @ self.x - ex.b[ineq]
            tol = _FEAS_RTOL * (1.0 + np.abs(ex.b[ineq]) + ex.norms[ineq] * np.linalg.norm(self.x))
            viol = s < -tol
            if self.A:
                viol[np.array([j - ex.neq for j in self.A if j >= ex.neq], dtype=int)] = False
            if not viol.any():
                return
            scaled = np.where(viol, s / ex.norms[ineq], np.inf)
            j = int(ineq[np.argmin(scaled)])
            self._step_in(j, equality=False, max_iter=max_iter)

    def _step_in(self, j, equality, max_iter=None):
        """Make constraint ``j`` active, dropping blocking ones as needed."""
        ex, tiny = self.ex, np.finfo(float).tiny
        n, bj = self._normal(j), self._rhs(j)
        up = 0.0
        while True:
            self.iterations += 1
            if max_iter is not None and self.iterations > max_iter:
                raise MaxIterationsExceeded(f"QP did not finish within {max_iter} iterations")
            d, z, r, dependent = self._directions(n)
            t1, k = np.inf, -1
            for idx, a in enumerate(self.A):
                if a >= ex.neq and r[idx] > tiny:
                    ratio = self.u[idx] / r[idx]
                    if ratio < t1:
                        t1, k = ratio, idx
            if dependent:
                t2 = np.inf
            else:
                t2 = -(n @ self.x - bj) / (z @ n)
            if equality and t2 == np.inf:
                raise Infeasible(f"equality constraint {ex.origin[j]} is linearly dependent or inconsistent")
            t = min(t1, t2)
            if t == np.inf:
                raise Infeasible(f"constraints are infeasible (cannot satisfy {ex.origin[j]})")
            if equality:
                t = t2
            f_old = self.f
            if t2 == np.inf:
                self.u = [ui - t * ri for ui, ri in zip(self.u, r)]
                up += t
                self._drop(k)
                continue
            self.x = self.x + t * z
            self.f = self.f + t * (z @ n) * (0.5 * t + up)
            self.u = [ui - t * ri for ui, ri in zip(self.u, r)]
            up += t
            assert self.f >= f_old - 1e-9 * (1.0 + abs(f_old)), "dual objective decreased"
            if t == t2:
                self._add(d)
                self.A.append(j)
                self.u.append(up)
                return
            self._drop(k)

    def solution(self, cs: ConstraintSet) -> QpSolution:
        ex = self.ex
        duals = np.zeros(cs.m)
        active = set()
        for j, uj in zip(self.A, self.u):
            row, side = ex.origin[j]
            lam = 2.0 * uj * self.sign[j]
            duals[row] = lam if side == LOWER else -lam
            active.add((row, side))
        x = self.x
        H, q = self.gi.H, self.q
        beta = x.copy()
        beta.flags.writeable = False
        duals.flags.writeable = False
        return QpSolution(
            beta=beta,
            duals=duals,
            active=frozenset(active),
            iterations=self.iterations,
            objective=float(x @ H @ x - 2.0 * q @ x),
        )


def solve(qp: QpProblem, ridge: bool = False) -> QpSolution:
    """Global minimizer of the QP, its multipliers and working active set."""
    return GoldfarbIdnani(qp.H, ridge=ridge).solve(qp.q, qp.cs)


def solve_warm(qp: QpProblem, prior_active=(), ridge: bool = False) -> QpSolution:
    """As :func:`solve`, seeded with a guess of the active set."""
    return GoldfarbIdnani(qp.H, ridge=ridge).solve(qp.q, qp.cs, prior_active=prior_active)
