"""Parametrized marginal families on a product of two probability simplices.

A :class:`MeasureFamily` holds ``K_x`` source and ``K_y`` target histograms on
fixed supports; an :class:`Alpha` picks convex weights for each block and
:func:`blend` returns the corresponding pair of marginals.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from parot.errors import DimensionError, InvalidMeasureError

__all__ = [
    "GridMeasure",
    "Alpha",
    "MeasureFamily",
    "blend",
    "extreme_points",
    "training_grid",
    "random_alpha",
    "gaussian_family",
    "benchmark_grid",
    "load_family_csv",
    "save_family_csv",
]

SUM_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Probability weights over a fixed finite support."""

    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights)
        if w.ndim != 1 or w.size == 0:
            raise InvalidMeasureError("weights must be a non-empty 1-D vector")
        if not np.all(np.isfinite(w)) or w.min() < 0:
            raise InvalidMeasureError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise InvalidMeasureError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_weights(cls, weights) -> "GridMeasure":
        """Build a measure from unnormalized nonnegative weights (one renormalization)."""
        w = np.asarray(weights, dtype=float)
        total = w.sum()
        if not np.isfinite(total) or total <= 0:
            raise InvalidMeasureError("weights must have positive finite mass")
        return cls(w / total)

    def __len__(self):
        return self.weights.size


@dataclass(frozen=True)
class Alpha:
    """A point ``(alpha_x, alpha_y)`` of the parameter set."""

    alpha_x: np.ndarray
    alpha_y: np.ndarray

    def __post_init__(self):
        for name in ("alpha_x", "alpha_y"):
            a = _frozen(getattr(self, name))
            if a.ndim != 1 or a.size == 0:
                raise DimensionError(f"{name} must be a non-empty vector")
            if not np.all(np.isfinite(a)) or a.min() < 0 or abs(a.sum() - 1.0) > SUM_TOL:
                raise InvalidMeasureError(f"{name}={a.tolist()} is not on the simplex")
            object.__setattr__(self, name, a)

    @classmethod
    def of(cls, alpha_x, alpha_y) -> "Alpha":
        """Build an Alpha, renormalizing each block once."""
        ax = np.asarray(alpha_x, dtype=float)
        ay = np.asarray(alpha_y, dtype=float)
        return cls(ax / ax.sum(), ay / ay.sum())

    @property
    def kx(self) -> int:
        return self.alpha_x.size

    @property
    def ky(self) -> int:
        return self.alpha_y.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.alpha_x, self.alpha_y])

    def distance(self, other: "Alpha") -> float:
        """``||alpha - other||_inf`` over both blocks."""
        return float(np.abs(self.vector() - other.vector()).max())

    def key(self) -> tuple:
        return tuple(np.round(self.vector(), 12).tolist())

    def __repr__(self):
        fmt = lambda a: "(" + ", ".join(f"{v:.6g}" for v in a) + ")"
        return f"Alpha({fmt(self.alpha_x)}, {fmt(self.alpha_y)})"

    def __eq__(self, other):
        if not isinstance(other, Alpha):
            return NotImplemented
        return (np.array_equal(self.alpha_x, other.alpha_x)
                and np.array_equal(self.alpha_y, other.alpha_y))

    def __hash__(self):
        return hash((self.alpha_x.tobytes(), self.alpha_y.tobytes()))


@dataclass(frozen=True, eq=False)
class MeasureFamily:
    mus: tuple
    nus: tuple
    support_x: np.ndarray
    support_y: np.ndarray

    def __post_init__(self):
        mus = tuple(m if isinstance(m, GridMeasure) else GridMeasure.from_weights(m) for m in self.mus)
        nus = tuple(m if isinstance(m, GridMeasure) else GridMeasure.from_weights(m) for m in self.nus)
        if not mus or not nus:
            raise DimensionError("a family needs at least one source and one target measure")
        if len({len(m) for m in mus}) != 1 or len({len(m) for m in nus}) != 1:
            raise DimensionError("family members must share their support size")
        sx = _frozen(self.support_x)
        sy = _frozen(self.support_y)
        sx = sx[:, None] if sx.ndim == 1 else sx
        sy = sy[:, None] if sy.ndim == 1 else sy
        if sx.shape[0] != len(mus[0]) or sy.shape[0] != len(nus[0]):
            raise DimensionError("support sizes do not match the measures")
        object.__setattr__(self, "mus", mus)
        object.__setattr__(self, "nus", nus)
        object.__setattr__(self, "support_x", sx)
        object.__setattr__(self, "support_y", sy)

    @property
    def kx(self) -> int:
        return len(self.mus)

    @property
    def ky(self) -> int:
        return len(self.nus)

    @property
    def nx(self) -> int:
        return len(self.mus[0])

    @property
    def ny(self) -> int:
        return len(self.nus[0])

    @cached_property
    def mu_matrix(self) -> np.ndarray:
        """``N_x x K_x`` matrix whose columns are the source members."""
        return _frozen(np.column_stack([m.weights for m in self.mus]))

    @cached_property
    def nu_matrix(self) -> np.ndarray:
        return _frozen(np.column_stack([m.weights for m in self.nus]))

    def check(self, alpha: Alpha):
        if alpha.kx != self.kx or alpha.ky != self.ky:
            raise DimensionError(
                f"alpha has blocks ({alpha.kx}, {alpha.ky}), family has ({self.kx}, {self.ky})"
            )


def blend(family: MeasureFamily, alpha: Alpha) -> tuple[GridMeasure, GridMeasure]:
    """Return ``(mu(alpha), nu(alpha))``, the convex combinations of the members."""
    family.check(alpha)
    mu = family.mu_matrix @ alpha.alpha_x
    nu = family.nu_matrix @ alpha.alpha_y
    # renormalize once: the exact sum is 1, this only removes round-off
    return GridMeasure(mu / mu.sum()), GridMeasure(nu / nu.sum())


def extreme_points(kx: int, ky: int) -> list[Alpha]:
    """The ``K_x * K_y`` corners ``(e_k, f_l)`` of the parameter set."""
    if kx < 1 or ky < 1:
        raise DimensionError("K_x and K_y must be >= 1")
    ex, ey = np.eye(kx), np.eye(ky)
    return [Alpha(ex[k], ey[l]) for k in range(kx) for l in range(ky)]


def _simplex_lattice(k: int, resolution: int) -> list[np.ndarray]:
    steps = resolution - 1
    if k == 1:
        return [np.ones(1)]
    points = []
    # compositions of `steps` into k nonnegative parts, via bars placement
    for bars in itertools.combinations(range(steps + k - 1), k - 1):
        parts, prev = [], -1
        for bar in bars:
            parts.append(bar - prev - 1)
            prev = bar
        parts.append(steps + k - 2 - prev)
        points.append(np.array(parts, dtype=float) / steps)
    if k == 2:
        # (1 - t, t) with t increasing
        points.sort(key=lambda p: p[1])
    return points


def training_grid(kx: int, ky: int, resolution: int) -> list[Alpha]:
    """Regular lattice of the parameter set containing all its corners.

    For ``K_x = K_y = 2`` this is the ``resolution x resolution`` grid
    ``(t, s) -> ((1 - t, t), (1 - s, s))``, ``t`` varying slowest.  Larger
    blocks use the simplex lattice with spacing ``1 / (resolution - 1)``.
    """
    if resolution < 2:
        raise DimensionError("resolution must be >= 2")
    if kx < 1 or ky < 1:
        raise DimensionError("K_x and K_y must be >= 1")
    gx = _simplex_lattice(kx, resolution)
    gy = _simplex_lattice(ky, resolution)
    return [Alpha(ax, ay) for ax in gx for ay in gy]


def random_alpha(rng: np.random.Generator, kx: int, ky: int) -> Alpha:
    """Per block, ``K`` iid uniforms normalized to sum one."""
    ax = rng.random(kx)
    ay = rng.random(ky)
    return Alpha.of(ax, ay)


def benchmark_grid(n: int) -> np.ndarray:
    """Points ``-1 + 2 i / n`` for ``i = 1..n``."""
    return -1.0 + 2.0 * np.arange(1, n + 1) / n


def _gaussian(points, mean, sigma):
    g = np.exp(-((points - mean) ** 2) / (2.0 * sigma**2))
    return GridMeasure.from_weights(g)


def gaussian_family(nx: int = 100, ny: int = 100, means=(-0.5, 0.5), sigma: float = 0.5) -> MeasureFamily:
    """The 1-D benchmark: two normalized Gaussians per side on a regular grid."""
    x = benchmark_grid(nx)
    y = benchmark_grid(ny)
    return MeasureFamily(
        mus=tuple(_gaussian(x, m, sigma) for m in means),
        nus=tuple(_gaussian(y, m, sigma) for m in means),
        support_x=x,
        support_y=y,
    )


# -- CSV ---------------------------------------------------------------------

def _measure(w) -> GridMeasure:
    # keep already-normalized columns bit-exact
    if abs(w.sum() - 1.0) <= SUM_TOL and w.min() >= 0:
        return GridMeasure(w)
    return GridMeasure.from_weights(w)


def _read_block(path: Path, prefix: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.array(rows, dtype=float)
    member_cols = [i for i, h in enumerate(header) if h.startswith(prefix + "_")]
    coord_cols = [i for i, h in enumerate(header) if i not in member_cols]
    if not member_cols:
        raise DimensionError(f"{path}: no '{prefix}_k' columns in header {header}")
    order = sorted(member_cols, key=lambda i: int(header[i].split("_", 1)[1]))
    members = tuple(_measure(data[:, i]) for i in order)
    coords = data[:, coord_cols] if coord_cols else None
    return members, coords


def load_family_csv(mu_path, nu_path) -> MeasureFamily:
    """Load a family from two CSV files with headers ``mu_1..`` and ``nu_1..``.

    Columns not named ``mu_k`` / ``nu_k`` are read as support coordinates; when
    absent, the support defaults to :func:`benchmark_grid`.
    """
    mus, sx = _read_block(Path(mu_path), "mu")
    nus, sy = _read_block(Path(nu_path), "nu")
    if sx is None:
        sx = benchmark_grid(len(mus[0]))
    if sy is None:
        sy = benchmark_grid(len(nus[0]))
    return MeasureFamily(mus, nus, sx, sy)


def save_family_csv(family: MeasureFamily, mu_path, nu_path):
    for path, prefix, members, support in (
        (mu_path, "mu", family.mus, family.support_x),
        (nu_path, "nu", family.nus, family.support_y),
    ):
        d = support.shape[1]
        coord_names = ["x"] if d == 1 else [f"x{k + 1}" for k in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(coord_names + [f"{prefix}_{k + 1}" for k in range(len(members))])
            for i in range(len(members[0])):
                w.writerow([repr(float(c)) for c in support[i]]
                           + [repr(float(m.weights[i])) for m in members])
