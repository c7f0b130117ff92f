"""High-fidelity discrete optimal transport.

Plans are ``N_x x N_y`` arrays; whenever a plan is flattened it is stacked
column by column (``order="F"``), so entry ``(i, j)`` lands at ``i + j N_x``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from parot import lp
from parot.errors import DimensionError, LPNumericalError
from parot.family import GridMeasure

__all__ = [
    "DualPair",
    "HFSolution",
    "SinkhornResult",
    "quadratic_cost",
    "constraint_matrix",
    "vec",
    "unvec",
    "northwest_corner",
    "solve_lp",
    "solve_sinkhorn",
    "plan_cost",
    "save_plan_csv",
]

MASS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DualPair:
    """Kantorovich potentials ``(phi, psi)`` on the source and target supports."""

    phi: np.ndarray
    psi: np.ndarray

    def objective(self, mu, nu) -> float:
        return float(self.phi @ _weights(mu) + self.psi @ _weights(nu))

    def max_violation(self, C: np.ndarray) -> float:
        """``max_ij (phi_i + psi_j - C_ij)``; nonpositive for a feasible pair."""
        return float((self.phi[:, None] + self.psi[None, :] - C).max())


@dataclass(frozen=True, eq=False)
class HFSolution:
    plan: np.ndarray
    duals: DualPair
    cost: float
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class SinkhornResult:
    plan: np.ndarray
    cost: float
    iters: int
    converged: bool
    marginal_error: float


def _weights(m) -> np.ndarray:
    return m.weights if isinstance(m, GridMeasure) else np.asarray(m, dtype=float)


def quadratic_cost(support_x, support_y) -> np.ndarray:
    """``C_ij = ||y_j - x_i||^2`` for point sets given as ``(N,)`` or ``(N, d)`` arrays."""
    x = np.asarray(support_x, dtype=float)
    y = np.asarray(support_y, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    y = y[:, None] if y.ndim == 1 else y
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"supports live in R^{x.shape[1]} and R^{y.shape[1]}")
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def constraint_matrix(nx: int, ny: int) -> sp.csc_array:
    """Marginal constraint matrix: rows ``0..N_x-1`` give row sums, the rest column sums."""
    if nx < 1 or ny < 1:
        raise DimensionError("N_x and N_y must be >= 1")
    k = np.arange(nx * ny)
    i = k % nx
    j = k // nx
    rows = np.concatenate([i, nx + j])
    cols = np.concatenate([k, k])
    data = np.ones(2 * nx * ny)
    return sp.csc_array((data, (rows, cols)), shape=(nx + ny, nx * ny))


def vec(plan: np.ndarray) -> np.ndarray:
    return np.asarray(plan).ravel(order="F")


def unvec(v: np.ndarray, nx: int, ny: int) -> np.ndarray:
    return np.asarray(v).reshape((nx, ny), order="F")


def northwest_corner(mu: np.ndarray, nu: np.ndarray) -> list[tuple[int, int]]:
    """Cells of the northwest-corner basic feasible solution.

    Always returns ``N_x + N_y - 1`` cells forming a staircase spanning tree,
    including degenerate zero-mass cells.
    """
    a = np.array(mu, dtype=float)
    b = np.array(nu, dtype=float)
    nx, ny = a.size, b.size
    cells = []
    i = j = 0
    while True:
        t = min(a[i], b[j])
        cells.append((i, j))
        a[i] -= t
        b[j] -= t
        if i == nx - 1 and j == ny - 1:
            break
        if j == ny - 1 or (i < nx - 1 and a[i] <= b[j]):
            i += 1
        else:
            j += 1
    return cells


def _check_marginals(C, mu, nu):
    C = np.asarray(C, dtype=float)
    mu, nu = _weights(mu), _weights(nu)
    if C.shape != (mu.size, nu.size):
        raise DimensionError(f"cost is {C.shape}, marginals are ({mu.size}, {nu.size})")
    if abs(mu.sum() - nu.sum()) > MASS_TOL:
        raise DimensionError(f"mass imbalance {mu.sum() - nu.sum():.3e}")
    return C, mu, nu


def solve_lp(C, mu, nu) -> HFSolution:
    """Exact OT by the simplex method.

    The last column-sum constraint is redundant and is dropped before solving;
    its multiplier is reinserted as zero, which pins ``psi[-1] = 0``.  The
    northwest-corner solution serves as crash basis.
    """
    C, mu, nu = _check_marginals(C, mu, nu)
    nx, ny = C.shape
    A = constraint_matrix(nx, ny)[: nx + ny - 1]
    rhs = np.concatenate([mu, nu])[: nx + ny - 1]
    crash = np.array([i + j * nx for i, j in northwest_corner(mu, nu)])
    sol = lp.solve(lp.StandardLP(vec(C), A, rhs), initial_basis=crash)
    if not sol.optimal:
        # a balanced OT problem is always feasible and bounded
        raise LPNumericalError(f"OT linear program reported {sol.status.value}")
    y = np.append(sol.dual, 0.0)
    plan = unvec(sol.primal, nx, ny)
    return HFSolution(plan, DualPair(y[:nx], y[nx:]), plan_cost(plan, C), sol.iterations)


def plan_cost(plan: np.ndarray, C: np.ndarray) -> float:
    """Frobenius product ``<plan, C>``."""
    plan = np.asarray(plan, dtype=float)
    C = np.asarray(C, dtype=float)
    if plan.shape != C.shape:
        raise DimensionError(f"plan {plan.shape} and cost {C.shape} differ")
    return float(np.einsum("ij,ij->", plan, C))


# -- entropic solver ------------------------------------------------------------

CHECK_EVERY = 10


def _should_check(it: int) -> bool:
    return it == 1 or it % CHECK_EVERY == 0


def solve_sinkhorn(C, mu, nu, epsilon: float, max_iters: int = 10000, tol: float = 1e-7,
                   log_domain: bool | None = None) -> SinkhornResult:
    """Entropic OT by Sinkhorn iterations.

    Stops when the l1 violation of the row marginals (columns are exact after
    each sweep) drops to ``tol``, checked at the first iteration and then every
    ten.  The stabilized log-domain variant is used when
    ``epsilon < 1e-2 * max(C)`` unless ``log_domain`` forces a choice.
    Non-convergence is reported through ``converged=False``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    C, mu, nu = _check_marginals(C, mu, nu)
    cmax = float(C.max()) if C.size else 0.0
    if log_domain is None:
        log_domain = epsilon < 1e-2 * cmax
    # zero-mass atoms carry no plan entries; solve on the supports
    rows = np.flatnonzero(mu > 0)
    cols = np.flatnonzero(nu > 0)
    Cs = C[np.ix_(rows, cols)]
    a, b = mu[rows], nu[cols]
    if log_domain:
        sub, iters, err = _sinkhorn_log(Cs, a, b, epsilon, max_iters, tol)
    else:
        sub, iters, err = _sinkhorn_scaling(Cs, a, b, epsilon, max_iters, tol)
    plan = np.zeros_like(C)
    plan[np.ix_(rows, cols)] = sub
    return SinkhornResult(plan, plan_cost(plan, C), iters, err <= tol, err)


def _sinkhorn_scaling(C, a, b, eps, max_iters, tol):
    K = np.exp(-C / eps)
    v = np.ones_like(b)
    err = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        u = a / (K @ v)
        v = b / (K.T @ u)
        if _should_check(it):
            err = float(np.abs(u * (K @ v) - a).sum())
            if err <= tol:
                break
    return u[:, None] * K * v[None, :], it, err


def _sinkhorn_log(C, a, b, eps, max_iters, tol):
    loga, logb = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    M = -C / eps
    err = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        f = eps * (loga - logsumexp(M + g[None, :] / eps, axis=1))
        g = eps * (logb - logsumexp(M + f[:, None] / eps, axis=0))
        if _should_check(it):
            rows = np.exp(logsumexp(M + (f[:, None] + g[None, :]) / eps, axis=1))
            err = float(np.abs(rows - a).sum())
            if err <= tol:
                break
    return np.exp(M + (f[:, None] + g[None, :]) / eps), it, err


def save_plan_csv(plan: np.ndarray, path, threshold: float = 0.0):
    """Write nonzero plan entries row-major as ``i,j,mass`` (1-based indices)."""
    plan = np.asarray(plan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "mass"])
        for i, j in zip(*np.nonzero(np.abs(plan) > threshold)):
            w.writerow([i + 1, j + 1, repr(float(plan[i, j]))])
