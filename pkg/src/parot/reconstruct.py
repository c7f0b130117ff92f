"""Barycentric transport maps from plans and from reduced solutions.

Target indices follow the 1-based convention ``j = 1..N_y``.  When the target
support is a multi-dimensional grid (colour histograms), the barycentre is
taken coordinate by coordinate and the floored coordinates are folded back
into a flat 1-based index.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from parot.errors import DimensionError, ModelMismatchError

__all__ = [
    "IndexMap",
    "target_coordinates",
    "row_aggregates",
    "map_from_aggregates",
    "map_from_plan",
    "map_from_reduced",
]

# the weighted mean of a row concentrated on one target is that integer up to
# round-off; the snap keeps floor() from dropping it to the previous index
FLOOR_SNAP = 1e-9


@dataclass(frozen=True, eq=False)
class IndexMap:
    """``targets[i]`` is the 1-based target index of source atom ``i + 1``."""

    targets: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=np.int64))

    def __len__(self):
        return self.targets.size

    def __eq__(self, other):
        return isinstance(other, IndexMap) and np.array_equal(self.targets, other.targets)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["source_index", "target_index"])
            for i, t in enumerate(self.targets, start=1):
                w.writerow([i, int(t)])

    @classmethod
    def from_csv(cls, path) -> "IndexMap":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(np.array([int(r["target_index"]) for r in rows]))


def target_coordinates(target_shape) -> np.ndarray:
    """1-based grid coordinates of every target atom, shape ``(prod(shape), d)``."""
    shape = tuple(int(s) for s in np.atleast_1d(target_shape))
    grids = np.unravel_index(np.arange(int(np.prod(shape))), shape)
    return np.column_stack(grids).astype(float) + 1.0


def row_aggregates(plan: np.ndarray, target_shape=None) -> tuple[np.ndarray, np.ndarray]:
    """Per-row ``sum_j Pi_ij * coord(j)`` (shape ``(d, N_x)``) and ``sum_j Pi_ij``."""
    plan = np.asarray(plan, dtype=float)
    if target_shape is None:
        target_shape = (plan.shape[1],)
    coords = target_coordinates(target_shape)
    if coords.shape[0] != plan.shape[1]:
        raise DimensionError("target_shape does not match the plan width")
    return (plan @ coords).T.copy(), plan.sum(axis=1)


def map_from_aggregates(numer: np.ndarray, denom: np.ndarray, target_shape) -> IndexMap:
    """Floor of the mass-weighted mean target coordinate, per source row.

    Rows without mass map to themselves (clamped into the target range).
    """
    numer = np.atleast_2d(np.asarray(numer, dtype=float))
    denom = np.asarray(denom, dtype=float)
    shape = tuple(int(s) for s in np.atleast_1d(target_shape))
    n_src = denom.size
    n_tgt = int(np.prod(shape))
    has_mass = denom > 0
    safe = np.where(has_mass, denom, 1.0)
    coords = np.floor(numer / safe + FLOOR_SNAP).astype(np.int64)
    coords = np.clip(coords, 1, np.array(shape)[:, None])
    flat = np.ravel_multi_index(tuple(coords - 1), shape) + 1
    identity = np.minimum(np.arange(1, n_src + 1), n_tgt)
    return IndexMap(np.where(has_mass, flat, identity))


def map_from_plan(plan: np.ndarray, target_shape=None) -> IndexMap:
    """``T_i = floor(sum_j Pi_ij j / sum_j Pi_ij)`` for a dense plan."""
    plan = np.asarray(plan, dtype=float)
    if target_shape is None:
        target_shape = (plan.shape[1],)
    numer, denom = row_aggregates(plan, target_shape)
    return map_from_aggregates(numer, denom, target_shape)


def map_from_reduced(model, p: np.ndarray) -> IndexMap:
    """Barycentric map of the plan ``sum_r p_r Pi(alpha_r)`` from stored aggregates.

    Costs ``O(R N_x d)``; no plan is formed.
    """
    if model.map_numer is None or model.map_denom is None:
        raise ModelMismatchError("model has no map aggregates")
    p = np.asarray(p, dtype=float)
    if p.shape != (model.R,):
        raise DimensionError(f"p has shape {p.shape}, model has R={model.R}")
    if p.min(initial=0.0) < -1e-10:
        raise ValueError("p must be nonnegative")
    p = np.maximum(p, 0.0)
    numer = np.tensordot(p, model.map_numer, axes=1)  # (d, N_x)
    denom = p @ model.map_denom
    return map_from_aggregates(numer, denom, model.target_shape)
