"""Colour transfer between RGB images through reduced optimal transport.

Colours are binned on a ``bins^3`` grid (flat index ``r * bins^2 + g * bins
+ b``, all 0-based).  The squared-distance cost on this grid separates over
the three channels, so the entropic kernel is a tensor product of three
``bins x bins`` kernels and is never formed as a ``bins^3 x bins^3`` matrix.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy.special import logsumexp

from parot.errors import DimensionError, InvalidMeasureError, ModelMismatchError
from parot.family import Alpha, GridMeasure, MeasureFamily
from parot.reconstruct import IndexMap, map_from_reduced, target_coordinates
from parot.reduction import ReducedModel, Snapshot, build_offline, solve_reduced

__all__ = [
    "ImageRGB",
    "Histogram3D",
    "histogram_from_image",
    "GridCost3D",
    "cost_3d",
    "sinkhorn_3d",
    "ColorSinkhornBackend",
    "color_family",
    "build_color_model",
    "recolor",
    "transfer_pipeline",
    "read_png",
    "write_png",
    "save_histogram_csv",
]

log = logging.getLogger(__name__)

DENSE_LIMIT = 16
HIST_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ImageRGB:
    width: int
    height: int
    pixels: np.ndarray  # (height * width, 3) uint8, row-major

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 3:
            px = px.reshape(-1, 3)
        if px.ndim != 2 or px.shape[1] != 3:
            raise DimensionError("pixels must be an (n, 3) array of RGB triples")
        if px.shape[0] != self.width * self.height:
            raise DimensionError(f"{px.shape[0]} pixels for a {self.width}x{self.height} image")
        if px.size and (px.min() < 0 or px.max() > 255):
            raise DimensionError("channel values must lie in [0, 255]")
        object.__setattr__(self, "pixels", px.astype(np.uint8))

    @classmethod
    def from_array(cls, arr) -> "ImageRGB":
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise DimensionError("expected an (height, width, 3) array")
        return cls(arr.shape[1], arr.shape[0], arr.reshape(-1, 3))

    def as_array(self) -> np.ndarray:
        return self.pixels.reshape(self.height, self.width, 3)


@dataclass(frozen=True, eq=False)
class Histogram3D:
    bins_per_axis: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (self.bins_per_axis ** 3,):
            raise DimensionError("weights must have bins^3 entries")
        if w.min() < 0 or abs(w.sum() - 1.0) > HIST_TOL:
            raise InvalidMeasureError("histogram must be a probability vector")
        object.__setattr__(self, "weights", w)

    def measure(self) -> GridMeasure:
        return GridMeasure.from_weights(self.weights)


def _check_bins(bins: int):
    if not 2 <= bins <= 256:
        raise DimensionError(f"bins must be in [2, 256], got {bins}")


def pixel_bins(image: ImageRGB, bins: int) -> np.ndarray:
    """0-based flat bin index of each pixel."""
    b = (image.pixels.astype(np.int64) * bins) // 256
    return (b[:, 0] * bins + b[:, 1]) * bins + b[:, 2]


def histogram_from_image(image: ImageRGB, bins: int) -> Histogram3D:
    _check_bins(bins)
    if image.pixels.shape[0] == 0:
        raise DimensionError("image has no pixels")
    counts = np.bincount(pixel_bins(image, bins), minlength=bins ** 3).astype(float)
    return Histogram3D(bins, counts / counts.sum())


# -- cost and separable entropic solver ------------------------------------------------

@dataclass(frozen=True)
class GridCost3D:
    """Squared Euclidean cost between bin indices of a ``bins^3`` grid, accessed lazily."""

    bins: int

    @property
    def shape(self) -> tuple[int, int]:
        n = self.bins ** 3
        return (n, n)

    def max(self) -> float:
        return 3.0 * (self.bins - 1) ** 2

    def axis_cost(self) -> np.ndarray:
        t = np.arange(self.bins, dtype=float)
        return (t[:, None] - t[None, :]) ** 2

    def entry(self, i, j):
        """``C_ij`` for 0-based flat indices (scalars or arrays)."""
        a = np.stack(np.unravel_index(i, (self.bins,) * 3))
        b = np.stack(np.unravel_index(j, (self.bins,) * 3))
        return ((a - b) ** 2).sum(axis=0)

    def dense(self) -> np.ndarray:
        if self.bins > DENSE_LIMIT:
            raise MemoryError(f"refusing to materialize the cost for bins={self.bins} > {DENSE_LIMIT}")
        n = self.bins ** 3
        idx = np.arange(n)
        return self.entry(idx[:, None], idx[None, :]).astype(float)


def cost_3d(bins: int) -> GridCost3D:
    _check_bins(bins)
    return GridCost3D(bins)


def _log_apply(x: np.ndarray, logk) -> np.ndarray:
    """``log(K exp(x))`` for ``K = K_r (x) K_g (x) K_b`` given the three log kernels."""
    B = logk[0].shape[0]
    t = x.reshape(B, B, B)
    t = logsumexp(logk[0][:, :, None, None] + t[None, :, :, :], axis=1)
    t = logsumexp(logk[1][None, :, :, None] + t[:, None, :, :], axis=2)
    t = logsumexp(logk[2][None, None, :, :] + t[:, :, None, :], axis=3)
    return t.reshape(-1)


def _lin_apply(x: np.ndarray, k) -> np.ndarray:
    B = k[0].shape[0]
    t = x.reshape(B, B, B)
    t = np.einsum("ab,bcd->acd", k[0], t)
    t = np.einsum("cb,abd->acd", k[1], t)
    t = np.einsum("db,acb->acd", k[2], t)
    return t.reshape(-1)


@dataclass(frozen=True, eq=False)
class Sinkhorn3DResult:
    cost: float
    numer: np.ndarray  # (3, bins^3)
    denom: np.ndarray
    iters: int
    converged: bool
    marginal_error: float


def sinkhorn_3d(cost: GridCost3D, mu, nu, eps_rel: float = 1e-2, max_iters: int = 10000,
                tol: float = 1e-7, log_domain: bool = True) -> Sinkhorn3DResult:
    """Entropic OT on the colour grid with ``epsilon = eps_rel * max(C)``.

    Returns the linear cost of the plan and its per-row barycentre
    aggregates; the plan itself is never formed.  Stopping rule as in the
    dense solver: l1 row-marginal error, checked at iteration 1 and every 10.
    """
    a = np.asarray(mu, dtype=float)
    b = np.asarray(nu, dtype=float)
    n = cost.bins ** 3
    if a.shape != (n,) or b.shape != (n,):
        raise DimensionError("histograms do not match the cost grid")
    eps = eps_rel * cost.max()
    c1 = cost.axis_cost()
    logk1 = -c1 / eps
    with np.errstate(divide="ignore"):
        loga, logb = np.log(a), np.log(b)
        logc1 = np.log(c1)
    K = [logk1] * 3
    lv = np.zeros(n)
    err = np.inf
    it = 0
    if log_domain:
        apply = lambda x, k=K: _log_apply(x, k)
    else:
        kern = [np.exp(logk1)] * 3
        with np.errstate(divide="ignore"):
            apply = lambda x, k=kern: np.log(_lin_apply(np.exp(x), k))
    with np.errstate(invalid="ignore"):
        for it in range(1, max_iters + 1):
            lu = loga - apply(lv)
            lv = logb - apply(lu)
            if it == 1 or it % 10 == 0:
                err = float(np.abs(np.exp(lu + apply(lv)) - a).sum())
                if err <= tol:
                    break
        lu = np.where(a > 0, lu, -np.inf)
        lv = np.where(b > 0, lv, -np.inf)
        denom = np.exp(lu + apply(lv))
        coords = target_coordinates((cost.bins,) * 3)
        numer = np.stack([np.exp(lu + apply(lv + np.log(coords[:, d]))) for d in range(3)])
        total = 0.0
        for d in range(3):
            # cost separates: sum over axes of the kernel weighted by that axis' cost
            kd = [logk1] * 3
            kd[d] = logk1 + logc1
            total += float(np.exp(lu + _log_apply(lv, kd))[a > 0].sum())
    denom = np.nan_to_num(denom)
    numer = np.nan_to_num(numer)
    return Sinkhorn3DResult(total, numer, denom, it, err <= tol, err)


@dataclass(frozen=True)
class ColorSinkhornBackend:
    """Snapshot backend for :func:`~parot.reduction.build_offline` on colour grids."""

    eps_rel: float = 1e-2
    max_iters: int = 10000
    tol: float = 1e-7
    log_domain: bool = True
    name = "sinkhorn3d"

    def snapshot(self, C, mu, nu, target_shape=None) -> Snapshot:
        if not isinstance(C, GridCost3D):
            raise TypeError("ColorSinkhornBackend needs a GridCost3D cost")
        res = sinkhorn_3d(C, mu, nu, self.eps_rel, self.max_iters, self.tol, self.log_domain)
        if not res.converged:
            log.warning("colour sinkhorn stopped after %d iterations, marginal error %.3e",
                        res.iters, res.marginal_error)
        return Snapshot(res.cost, res.numer, res.denom)


# -- pipeline -------------------------------------------------------------------------------

def bin_centers(bins: int) -> np.ndarray:
    """``(bins^3, 3)`` colour of each bin centre, clamped to ``[0, 255]``."""
    c = (target_coordinates((bins,) * 3) - 0.5) * (256.0 / bins)
    return np.clip(c, 0.0, 255.0)


def color_family(image: ImageRGB, palettes, bins: int) -> MeasureFamily:
    """Source histogram of ``image`` (``K_x = 1``) and one target per palette."""
    if not palettes:
        raise DimensionError("need at least one palette")
    mu = histogram_from_image(image, bins).measure()
    nus = tuple(histogram_from_image(p, bins).measure() for p in palettes)
    centers = bin_centers(bins)
    return MeasureFamily((mu,), nus, centers, centers)


def build_color_model(image: ImageRGB, palettes, bins: int = 16, resolution: int = 3,
                      backend: ColorSinkhornBackend | None = None, training=None) -> ReducedModel:
    """Offline phase over palette mixtures ``alpha_y`` on a regular lattice."""
    from parot.family import training_grid

    family = color_family(image, palettes, bins)
    if training is None:
        training = training_grid(1, family.ky, resolution)
    backend = ColorSinkhornBackend() if backend is None else backend
    return build_offline(family, training, backend, cost_3d(bins), target_shape=(bins,) * 3)


def recolor(image: ImageRGB, imap: IndexMap, bins: int) -> ImageRGB:
    """Replace every pixel by the centre of the bin its own bin is mapped to."""
    if len(imap) != bins ** 3:
        raise DimensionError("map does not match the bin grid")
    target = imap.targets[pixel_bins(image, bins)] - 1
    px = np.rint(bin_centers(bins)[target]).astype(np.uint8)
    return ImageRGB(image.width, image.height, px)


def _check_model(rom: ReducedModel, family: MeasureFamily):
    rom.check_family(family)
    if rom.target_shape != (family_bins(family),) * 3:
        raise ModelMismatchError("model was not built on this colour grid")
    # the corner snapshots must carry exactly these histograms
    nx = rom.nx
    for r, a in enumerate(rom.snapshot_alphas):
        if a.alpha_y.max() == 1.0:
            l = int(np.argmax(a.alpha_y))
            if (np.abs(rom.stacked_marginals[:nx, r] - family.mu_matrix[:, 0]).max() > HIST_TOL
                    or np.abs(rom.stacked_marginals[nx:, r] - family.nu_matrix[:, l]).max() > HIST_TOL):
                raise ModelMismatchError("model was built for different images")


def family_bins(family: MeasureFamily) -> int:
    return int(round(family.nx ** (1.0 / 3.0)))


def transfer_pipeline(image: ImageRGB, palettes, alpha_y, bins: int, rom: ReducedModel) -> ImageRGB:
    """Online phase: reduced solve at ``alpha_y``, reduced map, recolouring."""
    family = color_family(image, palettes, bins)
    if rom.kx != 1:
        raise ModelMismatchError("colour models have a single source image")
    _check_model(rom, family)
    alpha = Alpha.of([1.0], alpha_y)
    sol = solve_reduced(rom, None, alpha)
    return recolor(image, map_from_reduced(rom, sol.p), bins)


# -- I/O -------------------------------------------------------------------------------

def read_png(path) -> ImageRGB:
    with Image.open(path) as im:
        return ImageRGB.from_array(np.asarray(im.convert("RGB")))


def write_png(image: ImageRGB, path):
    Image.fromarray(image.as_array(), mode="RGB").save(path, format="PNG")


def save_histogram_csv(hist: Histogram3D, path):
    """Nonzero bins as ``i1,i2,i3,mass`` (0-based bin coordinates)."""
    B = hist.bins_per_axis
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i1", "i2", "i3", "mass"])
        for k in np.flatnonzero(hist.weights):
            i1, i2, i3 = np.unravel_index(k, (B, B, B))
            w.writerow([int(i1), int(i2), int(i3), repr(float(hist.weights[k]))])
