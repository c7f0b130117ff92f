"""Reduced-order model over a cone of snapshot transport plans.

Offline, one high-fidelity problem is solved per training parameter.  Only
the optimal costs, the blended marginals and (optionally) per-row plan
aggregates are kept; plans themselves are discarded.  Online, the reduced
problem is a small LP in the cone coefficients ``p``::

    min  <c_hat, p>   s.t.   A_hat p = (U^T mu(alpha); V^T nu(alpha)),  p >= 0

with ``A_hat = diag(U, V)^T [mu(alpha_r); nu(alpha_r)]_r``.  Its right-hand
side is formed from the precomputed projections ``U^T mu_k`` and
``V^T nu_l``, so an online solve never touches vectors of length ``N_x``.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from parot import hf, lp
from parot.errors import (
    DependentVectorsError,
    DimensionError,
    InfeasibleError,
    LPNumericalError,
    MissingExtremePointsError,
    ModelMismatchError,
    SnapshotError,
)
from parot.family import Alpha, MeasureFamily, blend, extreme_points
from parot.reconstruct import row_aggregates

__all__ = [
    "Snapshot",
    "LPBackend",
    "SinkhornBackend",
    "ReducedModel",
    "ReducedSolution",
    "build_offline",
    "gram_schmidt",
    "dual_bases",
    "assemble_reduced",
    "solve_reduced",
    "solve_semi_reduced",
    "lift_potentials",
    "save_snapshot_csv",
]

log = logging.getLogger(__name__)

GS_REL_TOL = 1e-10
BASIS_MODES = ("gs", "ones")


# -- snapshot backends -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Snapshot:
    """What the offline phase keeps from one high-fidelity solve."""

    cost: float
    numer: np.ndarray  # (d, N_x)
    denom: np.ndarray  # (N_x,)


@dataclass(frozen=True)
class LPBackend:
    """Exact snapshots from the simplex solver."""

    name = "lp"

    def snapshot(self, C, mu, nu, target_shape=None) -> Snapshot:
        sol = hf.solve_lp(C, mu, nu)
        numer, denom = row_aggregates(sol.plan, target_shape)
        return Snapshot(sol.cost, numer, denom)


@dataclass(frozen=True)
class SinkhornBackend:
    """Entropic snapshots; the stored cost is the linear cost of the entropic plan."""

    epsilon: float
    max_iters: int = 10000
    tol: float = 1e-7
    name = "sinkhorn"

    def snapshot(self, C, mu, nu, target_shape=None) -> Snapshot:
        res = hf.solve_sinkhorn(C, mu, nu, self.epsilon, self.max_iters, self.tol)
        if not res.converged:
            log.warning("sinkhorn stopped after %d iterations, marginal error %.3e",
                        res.iters, res.marginal_error)
        numer, denom = row_aggregates(res.plan, target_shape)
        return Snapshot(res.cost, numer, denom)


# -- model -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ReducedModel:
    snapshot_alphas: tuple
    reduced_cost: np.ndarray
    stacked_marginals: np.ndarray
    U_hat: np.ndarray
    V_hat: np.ndarray
    A_hat: np.ndarray | None = None
    U_mu: np.ndarray | None = None  # N x K_x, columns U^T mu_k
    V_nu: np.ndarray | None = None  # M x K_y
    map_numer: np.ndarray | None = None  # R x d x N_x
    map_denom: np.ndarray | None = None  # R x N_x
    kx: int = 0
    ky: int = 0
    target_shape: tuple = field(default=())
    basis_mode: str = "gs"

    def __post_init__(self):
        R = len(self.snapshot_alphas)
        if self.reduced_cost.shape != (R,):
            raise DimensionError("reduced_cost must have one entry per snapshot")
        if self.stacked_marginals.shape[1] != R:
            raise DimensionError("stacked_marginals must have one column per snapshot")
        if self.U_hat.shape[0] + self.V_hat.shape[0] != self.stacked_marginals.shape[0]:
            raise DimensionError("dual bases do not match the marginal dimensions")
        if not self.target_shape:
            object.__setattr__(self, "target_shape", (self.ny,))

    @property
    def R(self) -> int:
        return len(self.snapshot_alphas)

    @property
    def nx(self) -> int:
        return self.U_hat.shape[0]

    @property
    def ny(self) -> int:
        return self.V_hat.shape[0]

    @property
    def N(self) -> int:
        return self.U_hat.shape[1]

    @property
    def M(self) -> int:
        return self.V_hat.shape[1]

    @property
    def assembled(self) -> bool:
        return self.A_hat is not None and self.U_mu is not None and self.V_nu is not None

    def training_costs(self) -> list[tuple[Alpha, float]]:
        return list(zip(self.snapshot_alphas, self.reduced_cost.tolist()))

    def check_family(self, family: MeasureFamily):
        if (family.nx, family.ny) != (self.nx, self.ny):
            raise ModelMismatchError(
                f"model supports ({self.nx}, {self.ny}), family ({family.nx}, {family.ny})")
        if (family.kx, family.ky) != (self.kx, self.ky):
            raise ModelMismatchError(
                f"model blocks ({self.kx}, {self.ky}), family ({family.kx}, {family.ky})")


@dataclass(frozen=True, eq=False)
class ReducedSolution:
    p: np.ndarray
    a: np.ndarray
    b: np.ndarray
    I_R: float
    iterations: int = 0


# -- offline -------------------------------------------------------------------------

def gram_schmidt(vectors) -> list[np.ndarray]:
    """Orthogonalize without normalizing: ``u_k = v_k - sum_z (u_z.v_k / |u_z|^2) u_z``.

    Uses the modified (sequential) update, which spans the same subspaces and
    keeps ``u_k . v_k = |u_k|^2``.
    """
    out = []
    for k, v in enumerate(vectors):
        v = np.asarray(v, dtype=float)
        u = v.copy()
        for w in out:
            u -= (w @ u) / (w @ w) * w
        if np.linalg.norm(u) < GS_REL_TOL * np.linalg.norm(v) or not np.any(v):
            raise DependentVectorsError(f"vector {k} depends on the previous ones")
        out.append(u)
    return out


def dual_bases(family: MeasureFamily, mode: str = "gs") -> tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt bases of the source and target members.

    ``mode="ones"`` also appends the all-ones vector to each basis, which
    forces the total mass of ``sum_r p_r Pi(alpha_r)`` to be one.
    """
    if mode not in BASIS_MODES:
        raise ValueError(f"unknown basis mode {mode!r}; expected one of {BASIS_MODES}")
    U = np.column_stack(gram_schmidt(family.mu_matrix.T))
    V = np.column_stack(gram_schmidt(family.nu_matrix.T))
    if mode == "ones":
        U = np.column_stack([U, np.ones(family.nx)])
        V = np.column_stack([V, np.ones(family.ny)])
    return U, V


def _check_training(family: MeasureFamily, training) -> None:
    for a in training:
        family.check(a)
    have = {a.key() for a in training}
    missing = [c for c in extreme_points(family.kx, family.ky) if c.key() not in have]
    if missing:
        raise MissingExtremePointsError(
            f"training set lacks {len(missing)} extreme point(s), e.g. {missing[0]}")


def build_offline(family: MeasureFamily, training, backend=None, C=None, *,
                  basis: str = "gs", workers: int = 1, target_shape=None) -> ReducedModel:
    """Solve every snapshot and return the assembled reduced model.

    ``C`` defaults to the squared Euclidean cost on the family supports.
    Snapshots are independent; ``workers > 1`` runs them in a thread pool.
    """
    training = list(training)
    if not training:
        raise DimensionError("training set is empty")
    _check_training(family, training)
    backend = LPBackend() if backend is None else backend
    if C is None:
        C = hf.quadratic_cost(family.support_x, family.support_y)
    if target_shape is None:
        target_shape = (family.ny,)

    def run(alpha):
        mu, nu = blend(family, alpha)
        try:
            return backend.snapshot(C, mu.weights, nu.weights, target_shape)
        except Exception as exc:  # any backend failure is reported against its alpha
            raise SnapshotError(alpha, exc) from exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            snaps = list(pool.map(run, training))
    else:
        snaps = [run(a) for a in training]

    stacked = np.column_stack(
        [np.concatenate([m.weights for m in blend(family, a)]) for a in training])
    U, V = dual_bases(family, basis)
    model = ReducedModel(
        snapshot_alphas=tuple(training),
        reduced_cost=np.array([s.cost for s in snaps]),
        stacked_marginals=stacked,
        U_hat=U,
        V_hat=V,
        map_numer=np.stack([s.numer for s in snaps]),
        map_denom=np.stack([s.denom for s in snaps]),
        kx=family.kx,
        ky=family.ky,
        target_shape=tuple(target_shape),
        basis_mode=basis,
    )
    return assemble_reduced(model, family)


def assemble_reduced(model: ReducedModel, family: MeasureFamily | None = None) -> ReducedModel:
    """Form ``A_hat`` and the member projections used for the online right-hand side.

    Without a family the projections are recovered from the extreme-point
    columns of ``stacked_marginals``.
    """
    nx = model.nx
    A_hat = np.vstack([model.U_hat.T @ model.stacked_marginals[:nx],
                       model.V_hat.T @ model.stacked_marginals[nx:]])
    if family is not None:
        model.check_family(family)
        mus, nus = family.mu_matrix, family.nu_matrix
    else:
        mus, nus = _members_from_snapshots(model)
    return replace(model, A_hat=A_hat, U_mu=model.U_hat.T @ mus, V_nu=model.V_hat.T @ nus)


def _members_from_snapshots(model: ReducedModel):
    nx = model.nx
    index = {a.key(): r for r, a in enumerate(model.snapshot_alphas)}
    mus = np.zeros((nx, model.kx))
    nus = np.zeros((model.ny, model.ky))
    for corner in extreme_points(model.kx, model.ky):
        r = index.get(corner.key())
        if r is None:
            raise MissingExtremePointsError(f"model lacks the snapshot at {corner}")
        k = int(np.argmax(corner.alpha_x))
        l = int(np.argmax(corner.alpha_y))
        mus[:, k] = model.stacked_marginals[:nx, r]
        nus[:, l] = model.stacked_marginals[nx:, r]
    return mus, nus


# -- online --------------------------------------------------------------------------

def _check_alpha(model: ReducedModel, alpha: Alpha):
    if not model.assembled:
        raise ModelMismatchError("model is not assembled")
    if (alpha.kx, alpha.ky) != (model.kx, model.ky):
        raise DimensionError(
            f"alpha has blocks ({alpha.kx}, {alpha.ky}), model has ({model.kx}, {model.ky})")


def _solve_scaled(cost, A, rhs):
    """Solve ``min c.p, A p = rhs, p >= 0`` after scaling rows to unit max-norm."""
    scale = np.abs(A).max(axis=1)
    scale = np.where(scale > 0, 1.0 / np.where(scale > 0, scale, 1.0), 1.0)
    sol = lp.solve(lp.StandardLP(cost, scale[:, None] * A, scale * rhs))
    if sol.status is lp.LPStatus.INFEASIBLE:
        raise InfeasibleError("reduced problem is infeasible; does training contain every corner?")
    if not sol.optimal:
        raise LPNumericalError(f"reduced problem reported {sol.status.value}")
    return sol.primal, scale * sol.dual, sol


def reduced_rhs(model: ReducedModel, alpha: Alpha) -> np.ndarray:
    """``(U^T mu(alpha); V^T nu(alpha))`` in ``O((N + M) K)`` operations."""
    return np.concatenate([model.U_mu @ alpha.alpha_x, model.V_nu @ alpha.alpha_y])


def solve_reduced(model: ReducedModel, family: MeasureFamily | None, alpha: Alpha) -> ReducedSolution:
    """Solve the reduced primal and return its multipliers ``(a, b)`` as well."""
    if family is not None:
        model.check_family(family)
    _check_alpha(model, alpha)
    rhs = reduced_rhs(model, alpha)
    p, y, sol = _solve_scaled(model.reduced_cost, model.A_hat, rhs)
    return ReducedSolution(p, y[: model.N], y[model.N:], float(model.reduced_cost @ p), sol.iterations)


def solve_semi_reduced(model: ReducedModel, family: MeasureFamily, alpha: Alpha):
    """Cone-restricted problem with the full marginal constraints; returns ``(p, I_RP)``."""
    model.check_family(family)
    family.check(alpha)
    mu, nu = blend(family, alpha)
    rhs = np.concatenate([mu.weights, nu.weights])
    p, _, _ = _solve_scaled(model.reduced_cost, model.stacked_marginals, rhs)
    return p, float(model.reduced_cost @ p)


def lift_potentials(model: ReducedModel, a, b) -> hf.DualPair:
    """``(U a, V b)``; not in general feasible for the full dual."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != (model.N,) or b.shape != (model.M,):
        raise DimensionError(
            f"expected coefficient vectors of length ({model.N}, {model.M}), got {a.shape}, {b.shape}")
    return hf.DualPair(model.U_hat @ a, model.V_hat @ b)


def save_snapshot_csv(model: ReducedModel, path):
    """One row per snapshot: ``r, ax_1..ax_Kx, ay_1..ay_Ky, cost``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r"] + [f"ax_{k + 1}" for k in range(model.kx)]
                   + [f"ay_{l + 1}" for l in range(model.ky)] + ["cost"])
        for r, (a, c) in enumerate(model.training_costs(), start=1):
            w.writerow([r] + [repr(float(v)) for v in a.vector()] + [repr(float(c))])
