"""Binary container for reduced models and their interpolation bases.

Layout (all little-endian)::

    b"PAROTROM"  u32 version  u32 flags
    i64 x 7      R, N_x, N_y, N, M, K_x, K_y
    i64          d (coordinates per aggregate), i64 ndim, i64 x ndim target shape
    f64 arrays   alphas (R x (K_x+K_y)), reduced_cost, stacked_marginals,
                 U_hat, V_hat, A_hat, U_mu, V_nu, [map_numer, map_denom]
    u32          number of interpolation sections, then per section:
    b"EIMBASIS"  u32 side  i64 rows, M, |I|, |selected|, u32 has_proj
                 f64 Q, i64 J, i64 I, f64 cost_block, i64 selected, [f64 member_proj]

``flags`` bit 0 marks stored map aggregates, bit 1 the ones-augmented basis.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from parot.errors import FormatError
from parot.estimators import EIMBasis
from parot.family import Alpha
from parot.reduction import ReducedModel

__all__ = ["save_model", "load_model", "FORMAT_VERSION"]

MAGIC = b"PAROTROM"
EIM_MAGIC = b"EIMBASIS"
FORMAT_VERSION = 1
F64 = np.dtype("<f8")
I64 = np.dtype("<i8")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("file is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, shape) -> np.ndarray:
        n = int(np.prod(shape, dtype=np.int64))
        return np.frombuffer(self.take(n * dtype.itemsize), dtype=dtype).reshape(shape).astype(
            dtype.newbyteorder("="))


def _f64(a) -> bytes:
    return np.ascontiguousarray(a, dtype=F64).tobytes()


def _i64(a) -> bytes:
    return np.ascontiguousarray(a, dtype=I64).tobytes()


def save_model(model: ReducedModel, path, eim=()):
    """Write ``model`` and any interpolation bases to ``path``."""
    if not model.assembled:
        raise FormatError("only assembled models can be saved")
    has_maps = model.map_numer is not None
    flags = (1 if has_maps else 0) | (2 if model.basis_mode == "ones" else 0)
    d = model.map_numer.shape[1] if has_maps else 0
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, flags),
             struct.pack("<7q", model.R, model.nx, model.ny, model.N, model.M, model.kx, model.ky),
             struct.pack("<qq", d, len(model.target_shape)), _i64(model.target_shape)]
    alphas = np.array([a.vector() for a in model.snapshot_alphas])
    for arr in (alphas, model.reduced_cost, model.stacked_marginals, model.U_hat, model.V_hat,
                model.A_hat, model.U_mu, model.V_nu):
        parts.append(_f64(arr))
    if has_maps:
        parts += [_f64(model.map_numer), _f64(model.map_denom)]
    eim = list(eim)
    parts.append(struct.pack("<I", len(eim)))
    for b in eim:
        has_proj = b.member_proj is not None
        parts += [EIM_MAGIC, struct.pack("<I", 0 if b.side == "c" else 1),
                  struct.pack("<4q", b.Q.shape[0], b.M, b.I_eim.size, b.selected.size),
                  struct.pack("<I", int(has_proj)),
                  _f64(b.Q), _i64(b.J_eim), _i64(b.I_eim), _f64(b.cost_block), _i64(b.selected)]
        if has_proj:
            parts += [struct.pack("<q", b.member_proj.shape[1]), _f64(b.member_proj)]
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> tuple[ReducedModel, list[EIMBasis]]:
    """Inverse of :func:`save_model`."""
    r = _Reader(Path(path).read_bytes())
    if r.take(8) != MAGIC:
        raise FormatError(f"{path}: not a parot model file")
    version, flags = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    R, nx, ny, N, M, kx, ky = r.unpack("<7q")
    d, ndim = r.unpack("<qq")
    target_shape = tuple(int(v) for v in r.array(I64, (ndim,)))
    alphas = r.array(F64, (R, kx + ky))
    cost = r.array(F64, (R,))
    stacked = r.array(F64, (nx + ny, R))
    U = r.array(F64, (nx, N))
    V = r.array(F64, (ny, M))
    A_hat = r.array(F64, (N + M, R))
    U_mu = r.array(F64, (N, kx))
    V_nu = r.array(F64, (M, ky))
    numer = denom = None
    if flags & 1:
        numer = r.array(F64, (R, d, nx))
        denom = r.array(F64, (R, nx))
    model = ReducedModel(
        snapshot_alphas=tuple(Alpha(a[:kx], a[kx:]) for a in alphas),
        reduced_cost=cost, stacked_marginals=stacked, U_hat=U, V_hat=V, A_hat=A_hat,
        U_mu=U_mu, V_nu=V_nu, map_numer=numer, map_denom=denom, kx=kx, ky=ky,
        target_shape=target_shape, basis_mode="ones" if flags & 2 else "gs",
    )
    (n_eim,) = r.unpack("<I")
    bases = []
    for _ in range(n_eim):
        if r.take(8) != EIM_MAGIC:
            raise FormatError(f"{path}: corrupt interpolation section")
        (side,) = r.unpack("<I")
        rows, m, n_i, n_sel = r.unpack("<4q")
        (has_proj,) = r.unpack("<I")
        Q = r.array(F64, (rows, m))
        J = r.array(I64, (m,))
        I = r.array(I64, (n_i,))
        block = r.array(F64, (n_i, m))
        sel = r.array(I64, (n_sel,))
        proj = None
        if has_proj:
            (k,) = r.unpack("<q")
            proj = r.array(F64, (m, k))
        bases.append(EIMBasis(Q, J, I, block, side="c" if side == 0 else "cbar",
                              member_proj=proj, selected=sel))
    if r.pos != len(r.data):
        raise FormatError(f"{path}: trailing bytes")
    return model, bases
