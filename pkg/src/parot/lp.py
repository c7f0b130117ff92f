"""Revised simplex solver for equality-form linear programs.

Solves ``min <c, x>  s.t.  A x = b, x >= 0`` and returns a primal vertex
together with the simplex multipliers ``y = B^-T c_B`` of the optimal basis,
which are an optimal dual solution.  ``A`` may be a dense ``ndarray`` or any
``scipy.sparse`` matrix; the basis inverse is always kept dense (``m`` is small
for every problem this package builds).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from parot.errors import DimensionError, LPNumericalError

__all__ = ["LPStatus", "StandardLP", "LPSolution", "solve"]

# pricing / pivoting / feasibility tolerances
OPT_TOL = 1e-10
PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
REFACTOR_EVERY = 100


class LPStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class StandardLP:
    """``min <cost, x>`` subject to ``constraint_matrix @ x = rhs``, ``x >= 0``."""

    cost: np.ndarray
    constraint_matrix: np.ndarray | sp.spmatrix
    rhs: np.ndarray

    def __post_init__(self):
        m, n = self.constraint_matrix.shape
        if np.shape(self.cost) != (n,) or np.shape(self.rhs) != (m,):
            raise DimensionError(
                f"inconsistent LP: A is {m}x{n}, cost {np.shape(self.cost)}, rhs {np.shape(self.rhs)}"
            )

    @property
    def shape(self):
        return self.constraint_matrix.shape


@dataclass
class LPSolution:
    primal: np.ndarray
    dual: np.ndarray
    objective: float
    status: LPStatus
    iterations: int = 0
    basis: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def optimal(self) -> bool:
        return self.status is LPStatus.OPTIMAL


class _Columns:
    """Column access and transposed products for dense or sparse ``A``."""

    def __init__(self, A):
        if sp.issparse(A):
            self.A = sp.csc_array(A, dtype=float)
            self.AT = self.A.T.tocsr()
            self.sparse = True
        else:
            self.A = np.asarray(A, dtype=float)
            self.AT = self.A.T
            self.sparse = False
        self.m, self.n = self.A.shape

    def column(self, j: int) -> np.ndarray:
        if self.sparse:
            A = self.A
            out = np.zeros(self.m)
            lo, hi = A.indptr[j], A.indptr[j + 1]
            out[A.indices[lo:hi]] = A.data[lo:hi]
            return out
        return self.A[:, j].copy()

    def submatrix(self, cols) -> np.ndarray:
        if self.sparse:
            return self.A[:, cols].toarray()
        return self.A[:, cols]

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.AT @ y

    def drop_rows(self, keep: np.ndarray) -> "_Columns":
        if self.sparse:
            return _Columns(self.A.tocsr()[keep].tocsc())
        return _Columns(self.A[keep])


class _RevisedSimplex:
    """One solve.  Columns ``0..n-1`` are structural, ``n..n+m-1`` artificial."""

    def __init__(self, cols: _Columns, b: np.ndarray, c: np.ndarray, bland_after: int):
        self.cols = cols
        self.b = b
        self.c = c
        self.n = cols.n
        self.bland_after = bland_after
        self.iterations = 0

    # -- basis bookkeeping -------------------------------------------------

    def _basis_matrix(self) -> np.ndarray:
        m = self.cols.m
        B = np.zeros((m, m))
        structural = self.basis < self.n
        if structural.any():
            B[:, structural] = self.cols.submatrix(self.basis[structural])
        art_pos = np.flatnonzero(~structural)
        B[self.basis[art_pos] - self.n, art_pos] = 1.0
        return B

    def refactor(self):
        B = self._basis_matrix()
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError as exc:
            raise LPNumericalError("singular basis during refactorization") from exc
        if not np.all(np.isfinite(self.Binv)):
            raise LPNumericalError("non-finite basis inverse")
        resid = np.abs(B @ self.Binv - np.eye(len(B))).max() if len(B) else 0.0
        if resid > 1e-6:
            raise LPNumericalError(f"ill-conditioned basis (residual {resid:.2e})")
        self.xB = self.Binv @ self.b
        self.xB[np.abs(self.xB) < 1e-13] = 0.0
        self.since_refactor = 0

    def column(self, j: int) -> np.ndarray:
        if j >= self.n:
            e = np.zeros(self.cols.m)
            e[j - self.n] = 1.0
            return e
        return self.cols.column(j)

    def pivot(self, r: int, q: int, d: np.ndarray):
        theta = self.xB[r] / d[r]
        self.xB -= theta * d
        self.xB[r] = theta
        pivot_row = self.Binv[r] / d[r]
        self.Binv -= np.outer(d, pivot_row)
        self.Binv[r] = pivot_row
        self.in_basis[self.basis[r]] = False
        self.basis[r] = q
        self.in_basis[q] = True
        self.since_refactor += 1
        self.iterations += 1
        if self.since_refactor >= REFACTOR_EVERY:
            self.refactor()

    # -- main loop ---------------------------------------------------------

    def run(self, cost_struct: np.ndarray, cost_art: np.ndarray, max_iter: int) -> LPStatus:
        """Iterate to optimality for the given column costs.

        Artificial columns never re-enter once they leave the basis.
        """
        start = self.iterations
        scale = max(1.0, float(np.abs(cost_struct).max(initial=0.0)))
        opt_tol = OPT_TOL * scale
        while True:
            if self.iterations - start > max_iter:
                raise LPNumericalError(f"iteration limit {max_iter} reached")
            bland = self.iterations - start >= self.bland_after
            cB = np.where(self.basis < self.n, cost_struct[np.minimum(self.basis, self.n - 1)],
                          cost_art[np.maximum(self.basis - self.n, 0)])
            y = self.Binv.T @ cB
            red = cost_struct - self.cols.rmatvec(y)
            red[self.in_basis[: self.n]] = 0.0
            if bland:
                cand = np.flatnonzero(red < -opt_tol)
                if cand.size == 0:
                    return LPStatus.OPTIMAL
                q = int(cand[0])
            else:
                q = int(np.argmin(red))
                if red[q] >= -opt_tol:
                    return LPStatus.OPTIMAL
            d = self.Binv @ self.cols.column(q)
            r = self._ratio_test(d, bland)
            if r < 0:
                return LPStatus.UNBOUNDED
            self.pivot(r, q, d)

    def _ratio_test(self, d: np.ndarray, bland: bool) -> int:
        pos = np.flatnonzero(d > PIVOT_TOL)
        if pos.size == 0:
            return -1
        xb = np.maximum(self.xB[pos], 0.0)
        ratios = xb / d[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, best)]
        if bland:
            return int(ties[np.argmin(self.basis[ties])])
        # largest pivot among tied rows keeps the update well conditioned
        return int(ties[np.argmax(d[ties])])


def solve(lp: StandardLP, *, max_iter: int | None = None,
          initial_basis: np.ndarray | None = None) -> LPSolution:
    """Solve ``lp`` with a two-phase revised simplex method.

    Phase I starts from the all-artificial basis.  Dantzig pricing is used
    until ``5 (m + n)`` iterations have elapsed in a phase, then Bland's rule
    takes over so that degenerate cycling cannot persist.  Redundant equality
    rows are detected at the end of Phase I and get a zero multiplier.

    ``initial_basis`` optionally names ``m`` structural columns forming a
    primal feasible basis (a crash basis); Phase I is then skipped.  A crash
    basis that turns out singular or infeasible is ignored.

    Raises :class:`LPNumericalError` on basis breakdown; infeasibility and
    unboundedness are reported through ``status``.
    """
    cols = _Columns(lp.constraint_matrix)
    m, n = cols.m, cols.n
    c = np.asarray(lp.cost, dtype=float)
    b = np.asarray(lp.rhs, dtype=float).copy()
    if not (np.all(np.isfinite(c)) and np.all(np.isfinite(b))):
        raise DimensionError("LP data must be finite")
    if max_iter is None:
        max_iter = 50 * (m + n) + 1000

    # b >= 0 so that the artificial basis is feasible
    sign = np.where(b < 0, -1.0, 1.0)
    if np.any(sign < 0):
        if cols.sparse:
            cols = _Columns(sp.diags(sign) @ cols.A)
        else:
            cols = _Columns(sign[:, None] * cols.A)
        b = sign * b

    if m == 0:
        x = np.zeros(n)
        if np.any(c < 0):
            return LPSolution(x, np.zeros(0), -np.inf, LPStatus.UNBOUNDED)
        return LPSolution(x, np.zeros(0), 0.0, LPStatus.OPTIMAL)

    bland_after = 5 * (m + n)
    simplex = _RevisedSimplex(cols, b, c, bland_after)
    if initial_basis is not None and _try_crash(simplex, np.asarray(initial_basis, dtype=int)):
        return _phase_two(simplex, cols, b, c, sign, np.ones(m, dtype=bool), max_iter)
    simplex.basis = np.arange(n, n + m)
    simplex.in_basis = np.zeros(n + m, dtype=bool)
    simplex.in_basis[n:] = True
    simplex.refactor()

    # Phase I: minimise the sum of artificials
    simplex.run(np.zeros(n), np.ones(m), max_iter)
    infeas = float(simplex.xB[simplex.basis >= n].sum())
    if infeas > FEAS_TOL * (1.0 + np.abs(b).max()):
        return LPSolution(np.zeros(n), np.zeros(m), np.nan, LPStatus.INFEASIBLE,
                          iterations=simplex.iterations)

    # drive remaining (zero-level) artificials out; rows where that fails are redundant
    keep = np.ones(m, dtype=bool)
    for r in range(m):
        j = simplex.basis[r]
        if j < n:
            continue
        row = cols.rmatvec(simplex.Binv[r])
        row[simplex.in_basis[:n]] = 0.0
        q = int(np.argmax(np.abs(row)))
        if abs(row[q]) > PIVOT_TOL:
            d = simplex.Binv @ cols.column(q)
            simplex.pivot(r, q, d)
        else:
            keep[j - n] = False

    if not keep.all():
        kept_rows = np.flatnonzero(keep)
        structural = simplex.basis < n
        new_basis = simplex.basis[structural]
        cols = cols.drop_rows(keep)
        simplex.cols = cols
        simplex.b = b[keep]
        # artificial indices are renumbered to the kept rows
        remap = -np.ones(m, dtype=int)
        remap[kept_rows] = np.arange(kept_rows.size)
        art = simplex.basis[~structural] - n
        art = art[keep[art]]
        simplex.basis = np.concatenate([new_basis, n + remap[art]]).astype(int)
        simplex.in_basis = np.zeros(n + kept_rows.size, dtype=bool)
        simplex.in_basis[simplex.basis] = True
        simplex.refactor()

    return _phase_two(simplex, cols, b, c, sign, keep, max_iter)


def _try_crash(simplex: _RevisedSimplex, basis: np.ndarray) -> bool:
    m, n = simplex.cols.m, simplex.n
    if basis.shape != (m,) or len(set(basis.tolist())) != m or basis.min() < 0 or basis.max() >= n:
        return False
    simplex.basis = basis.copy()
    simplex.in_basis = np.zeros(n + m, dtype=bool)
    simplex.in_basis[basis] = True
    try:
        simplex.refactor()
    except LPNumericalError:
        return False
    if simplex.xB.min() < -FEAS_TOL:
        return False
    simplex.xB = np.maximum(simplex.xB, 0.0)
    return True


def _phase_two(simplex, cols, b, c, sign, keep, max_iter) -> LPSolution:
    n = simplex.n
    m = keep.size
    status = simplex.run(c, np.zeros(cols.m), max_iter)
    simplex.refactor()
    x = np.zeros(n)
    structural = simplex.basis < n
    x[simplex.basis[structural]] = simplex.xB[structural]
    x[np.abs(x) < 1e-14] = 0.0
    cB = np.where(structural, c[np.minimum(simplex.basis, n - 1)], 0.0)
    y_kept = simplex.Binv.T @ cB
    y = np.zeros(m)
    y[keep] = y_kept
    y *= sign
    if status is LPStatus.UNBOUNDED:
        return LPSolution(x, y, -np.inf, status, iterations=simplex.iterations)
    return LPSolution(x, y, float(c @ x), LPStatus.OPTIMAL,
                      iterations=simplex.iterations,
                      basis=simplex.basis[structural].copy())
