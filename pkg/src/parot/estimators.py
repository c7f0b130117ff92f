"""A posteriori error estimators for the reduced model.

Any vector pair turns into a feasible dual pair by a c-transform, and the
objective of a feasible pair is a lower bound of the true cost ``I``.  Since
the reduced value ``I_R`` is an upper bound, the difference is a computable
bound of the reduction error.  The empirical interpolation variant evaluates
the c-transform only at a few magic columns and a few candidate rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular

from parot.errors import DimensionError, ModelMismatchError, ParotError
from parot.family import Alpha, GridMeasure, MeasureFamily, blend
from parot.hf import DualPair

__all__ = [
    "c_transform",
    "cbar_transform",
    "normalize_potentials",
    "gap_terms",
    "exact_gap_bound",
    "EIMBasis",
    "OpCount",
    "eim_offline",
    "eim_fast_gap",
    "eim_fast_term",
    "eim_from_model",
    "lipschitz_constant",
    "continuity_bound",
    "CorrectionConstants",
    "calibrate_correction",
    "EstimatorRecord",
    "save_estimator_csv",
]

FEAS_TOL = 1e-8
RESIDUAL_TOL = 1e-12
ESTIMATE_FLOOR = 1e-15


def _w(m) -> np.ndarray:
    return m.weights if isinstance(m, GridMeasure) else np.asarray(m, dtype=float)


# -- c-transforms ----------------------------------------------------------------

def c_transform(phi, C) -> np.ndarray:
    """``phi^c_j = min_i C_ij - phi_i``."""
    C = np.asarray(C, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (C.shape[0],):
        raise DimensionError(f"phi has shape {phi.shape}, cost has {C.shape}")
    return (C - phi[:, None]).min(axis=0)


def cbar_transform(psi, C) -> np.ndarray:
    """``psi^cbar_i = min_j C_ij - psi_j``."""
    C = np.asarray(C, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (C.shape[1],):
        raise DimensionError(f"psi has shape {psi.shape}, cost has {C.shape}")
    return (C - psi[None, :]).min(axis=1)


def normalize_potentials(pair: DualPair, C) -> DualPair:
    """Improve a feasible pair by two transforms, then shift so that ``min phi = 0``.

    The result satisfies ``0 <= phi <= 2|C|`` and ``-3|C| <= psi <= |C|``
    and its objective is at least that of the input.
    """
    C = np.asarray(C, dtype=float)
    viol = pair.max_violation(C)
    if viol > FEAS_TOL * (1.0 + np.abs(C).max()):
        raise ParotError(f"pair is not dual feasible (violation {viol:.3e})")
    phi = cbar_transform(pair.psi, C)
    psi = c_transform(phi, C)
    shift = phi.min()
    return DualPair(phi - shift, psi + shift)


def gap_terms(pair_hat: DualPair, C, mu, nu, I_R: float) -> tuple[float, float]:
    """Bounds of ``I_R - I`` from the two one-sided transforms of ``pair_hat``.

    The first uses ``(phi, phi^c)``, the second ``(psi^cbar, psi)``; both are
    feasible pairs whatever ``pair_hat`` is.
    """
    mu, nu = _w(mu), _w(nu)
    lower_c = pair_hat.phi @ mu + c_transform(pair_hat.phi, C) @ nu
    lower_cbar = cbar_transform(pair_hat.psi, C) @ mu + pair_hat.psi @ nu
    return float(I_R - lower_c), float(I_R - lower_cbar)


def exact_gap_bound(pair_hat: DualPair, C, mu, nu, I_R: float) -> float:
    """``min`` of the two :func:`gap_terms`; an upper bound of ``I_R - I``."""
    return min(gap_terms(pair_hat, C, mu, nu, I_R))


# -- empirical interpolation ----------------------------------------------------

@dataclass
class OpCount:
    """Tally of arithmetic operations in the fast online path."""

    ops: int = 0

    def add(self, n: int):
        self.ops += int(n)


@dataclass(frozen=True, eq=False)
class EIMBasis:
    """Interpolation data for the c-transform of reduced potentials.

    ``side="c"`` interpolates ``phi^c`` (length ``N_y``) from ``phi``;
    ``side="cbar"`` interpolates ``psi^cbar`` (length ``N_x``) from ``psi``.
    ``cost_block`` is the cost restricted to rows ``I_eim`` and columns
    ``J_eim`` (transposed for the cbar side), and ``member_proj`` optionally
    caches ``Q^T`` applied to the family members on the transformed side.
    """

    Q: np.ndarray
    J_eim: np.ndarray
    I_eim: np.ndarray
    cost_block: np.ndarray
    side: str = "c"
    member_proj: np.ndarray | None = None
    selected: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def M(self) -> int:
        return self.Q.shape[1]

    @property
    def interp_matrix(self) -> np.ndarray:
        return self.Q[self.J_eim, :]

    def interpolate(self, values_at_magic) -> np.ndarray:
        """Coefficients ``beta`` with ``Q[J] beta = values``."""
        return solve_triangular(self.interp_matrix, np.asarray(values_at_magic, dtype=float),
                                lower=True, unit_diagonal=True, check_finite=False)

    def interpolant(self, g) -> np.ndarray:
        """Full interpolant of a vector from its magic-point values."""
        return self.Q @ self.interpolate(np.asarray(g)[self.J_eim])

    def with_family(self, family: MeasureFamily) -> "EIMBasis":
        members = family.nu_matrix if self.side == "c" else family.mu_matrix
        if members.shape[0] != self.Q.shape[0]:
            raise ModelMismatchError("family does not match the interpolation basis")
        return replace(self, member_proj=self.Q.T @ members)


def eim_offline(phi_snapshots, phi_c_snapshots, M_eim: int, M_prime: int, C, *,
                side: str = "c", full_rows: bool = False,
                family: MeasureFamily | None = None) -> EIMBasis:
    """Greedy interpolation of transformed potentials.

    Each step picks the snapshot with the largest sup-norm residual, its
    largest residual entry as magic point, and appends the residual scaled
    to one there.  Stops early once every residual is below ``1e-12``.

    Candidate rows ``I_eim`` are the minimizing rows of ``C[:, j] - phi`` for
    the first ``M_prime`` snapshots in greedy order and every magic column
    ``j``; ``full_rows`` uses every row instead.  For ``side="cbar"`` the
    snapshots are target potentials and their c-bar transforms, and ``C``
    is still given as ``N_x x N_y``.
    """
    if side not in ("c", "cbar"):
        raise ValueError(f"side must be 'c' or 'cbar', got {side!r}")
    Cs = np.asarray(C, dtype=float)
    if side == "cbar":
        Cs = Cs.T
    P = np.atleast_2d(np.asarray(phi_snapshots, dtype=float))
    G = np.atleast_2d(np.asarray(phi_c_snapshots, dtype=float))
    if P.shape[0] != G.shape[0] or P.shape[0] == 0:
        raise DimensionError("need the same positive number of potentials and transforms")
    if P.shape[1] != Cs.shape[0] or G.shape[1] != Cs.shape[1]:
        raise DimensionError("snapshot lengths do not match the cost matrix")
    if not 1 <= M_eim <= G.shape[0]:
        raise DimensionError(f"M_eim must be in [1, {G.shape[0]}]")
    if M_prime < 1:
        raise DimensionError("M_prime must be >= 1")
    if not np.any(G):
        raise DimensionError("all snapshots are zero")

    ny = G.shape[1]
    Q = np.zeros((ny, 0))
    J: list[int] = []
    chosen: list[int] = []
    resid = G.copy()
    for _ in range(M_eim):
        norms = np.abs(resid).max(axis=1)
        norms[chosen] = -1.0
        s = int(np.argmax(norms))
        if norms[s] < RESIDUAL_TOL:
            break
        j = int(np.argmax(np.abs(resid[s])))
        q = resid[s] / resid[s, j]
        # exact in theory; pin the round-off so Q[J] is exactly unit lower triangular
        q[J] = 0.0
        q[j] = 1.0
        Q = np.column_stack([Q, q])
        J.append(j)
        chosen.append(s)
        # update residuals of all snapshots against the enlarged basis
        beta = solve_triangular(Q[J, :], G[:, J].T, lower=True, unit_diagonal=True)
        resid = G - (Q @ beta).T
    if not J:
        raise DimensionError("all snapshots are zero")

    # greedy picks first, then the rest by final residual size
    rest = [s for s in np.argsort(-np.abs(resid).max(axis=1), kind="stable") if s not in chosen]
    order = chosen + [int(s) for s in rest]
    if full_rows:
        rows = np.arange(Cs.shape[0])
    else:
        reps = P[order[: min(M_prime, len(order))]]
        block = Cs[:, J][None, :, :] - reps[:, :, None]  # (M', N_x, M)
        rows = np.unique(np.argmin(block, axis=1))
    J_arr = np.array(J, dtype=np.int64)
    basis = EIMBasis(Q, J_arr, rows.astype(np.int64), Cs[np.ix_(rows, J_arr)].copy(),
                     side=side, selected=np.array(chosen, dtype=np.int64))
    return basis.with_family(family) if family is not None else basis


def eim_fast_term(basis: EIMBasis, potential_rows, weights, ops: OpCount | None = None) -> float:
    """Approximate ``<phi^c, nu(alpha)>`` from ``phi`` restricted to ``I_eim``.

    ``weights`` are the block weights of ``alpha`` on the transformed side;
    ``basis.member_proj`` must be present.  Costs
    ``|I_eim| M + M^2 + K M`` operations.
    """
    if basis.member_proj is None:
        raise ModelMismatchError("basis has no member projections; call with_family first")
    vals = (basis.cost_block - np.asarray(potential_rows)[:, None]).min(axis=0)
    beta = basis.interpolate(vals)
    if not np.all(np.isfinite(beta)):
        raise ParotError("interpolation system is singular")
    proj = beta @ basis.member_proj
    if ops is not None:
        ops.add(basis.cost_block.size + basis.M ** 2 + basis.member_proj.size)
    return float(proj @ np.asarray(weights))


def eim_fast_gap(basis: EIMBasis, pair_hat: DualPair, C, family: MeasureFamily, alpha: Alpha,
                 I_R: float, *, basis_bar: EIMBasis | None = None,
                 ops: OpCount | None = None) -> float:
    """Fast approximation of :func:`exact_gap_bound`.

    With only a ``"c"``-side basis this approximates the first gap term;
    passing a ``"cbar"``-side ``basis_bar`` also approximates the second
    and returns the minimum.  The linear terms ``<phi, mu>``, ``<psi, nu>``
    are evaluated directly; only the transforms are interpolated.  ``C`` is
    used solely to check dimensions, the needed entries live in the basis.
    """
    C = np.asarray(C)
    if C.shape != (family.nx, family.ny):
        raise ModelMismatchError("cost and family disagree on dimensions")
    family.check(alpha)
    mu, nu = blend(family, alpha)
    terms = []
    for b in (basis, basis_bar):
        if b is None:
            continue
        if b.member_proj is None:
            b = b.with_family(family)
        if b.side == "c":
            approx = eim_fast_term(b, pair_hat.phi[b.I_eim], alpha.alpha_y, ops)
            terms.append(I_R - pair_hat.phi @ mu.weights - approx)
        else:
            approx = eim_fast_term(b, pair_hat.psi[b.I_eim], alpha.alpha_x, ops)
            terms.append(I_R - pair_hat.psi @ nu.weights - approx)
    return float(min(terms))


# -- continuity ---------------------------------------------------------------------

def lipschitz_constant(C_inf: float, kx: int, ky: int) -> float:
    """``|C| (2 max(K_x, K_y) + 3 min(K_x, K_y))``."""
    return float(C_inf) * (2 * max(kx, ky) + 3 * min(kx, ky))


def continuity_bound(train_costs, alpha: Alpha, I_R: float, C_inf: float, kx: int, ky: int,
                     strategy: str = "min") -> float:
    """``|I(alpha') - I_R(alpha)| + L |alpha - alpha'|`` over training points.

    ``strategy="min"`` minimizes the whole expression; ``"nearest"`` uses the
    training point closest to ``alpha`` (lowest index on ties).
    """
    train_costs = list(train_costs)
    if not train_costs:
        raise DimensionError("continuity bound needs at least one training point")
    L = lipschitz_constant(C_inf, kx, ky)
    dist = np.array([alpha.distance(a) for a, _ in train_costs])
    vals = np.array([abs(c - I_R) for _, c in train_costs]) + L * dist
    if strategy == "min":
        return float(vals.min())
    if strategy == "nearest":
        return float(vals[int(np.argmin(dist))])
    raise ValueError(f"unknown strategy {strategy!r}")


# -- calibration ---------------------------------------------------------------------

@dataclass(frozen=True)
class CorrectionConstants:
    c_max: float
    c_min: float
    c_mean: float

    def apply(self, estimate: float, which: str = "mean") -> float:
        return float(estimate) * getattr(self, f"c_{which}")


def calibrate_correction(estimated, true_errors) -> CorrectionConstants:
    """Extremes and mean of ``true / estimated`` over pairs with a nonzero estimate."""
    est = np.asarray(estimated, dtype=float)
    true = np.asarray(true_errors, dtype=float)
    if est.shape != true.shape:
        raise DimensionError("estimated and true errors differ in length")
    keep = est > ESTIMATE_FLOOR
    if not keep.any():
        raise DimensionError("no positive estimate to calibrate against")
    ratio = true[keep] / est[keep]
    return CorrectionConstants(float(ratio.max()), float(ratio.min()), float(ratio.mean()))


# -- reports -------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorRecord:
    alpha: Alpha
    I_R: float
    bound_exact: float
    bound_fast: float | None = None
    bound_continuity: float | None = None
    I_hf: float | None = None

    @property
    def true_error(self) -> float | None:
        return None if self.I_hf is None else self.I_R - self.I_hf


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def save_estimator_csv(records, path):
    records = list(records)
    if not records:
        raise DimensionError("no records to write")
    kx, ky = records[0].alpha.kx, records[0].alpha.ky
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"ax_{k + 1}" for k in range(kx)] + [f"ay_{l + 1}" for l in range(ky)]
                   + ["I_R", "bound_exact", "bound_fast", "bound_continuity", "I_hf", "true_error"])
        for r in records:
            w.writerow([repr(float(v)) for v in r.alpha.vector()]
                       + [_fmt(v) for v in (r.I_R, r.bound_exact, r.bound_fast,
                                            r.bound_continuity, r.I_hf, r.true_error)])


def eim_from_model(model, family: MeasureFamily, C, M_eim: int, M_prime: int, alphas=None,
                   full_rows: bool = False) -> tuple[EIMBasis, EIMBasis]:
    """Interpolation bases for both transforms, fed by reduced-dual solutions.

    Snapshots are the lifted reduced potentials at ``alphas`` (default: the
    training parameters of ``model``).  ``M_eim`` is capped by their number.
    """
    from parot.reduction import lift_potentials, solve_reduced

    alphas = list(model.snapshot_alphas if alphas is None else alphas)
    C = np.asarray(C, dtype=float)
    phis, psis = [], []
    for a in alphas:
        s = solve_reduced(model, family, a)
        pair = lift_potentials(model, s.a, s.b)
        phis.append(pair.phi)
        psis.append(pair.psi)
    phis, psis = np.array(phis), np.array(psis)
    phi_c = np.array([c_transform(p, C) for p in phis])
    psi_cbar = np.array([cbar_transform(p, C) for p in psis])
    m = min(M_eim, len(alphas))
    b = eim_offline(phis, phi_c, m, M_prime, C, full_rows=full_rows, family=family)
    bb = eim_offline(psis, psi_cbar, m, M_prime, C, side="cbar", full_rows=full_rows, family=family)
    return b, bb
