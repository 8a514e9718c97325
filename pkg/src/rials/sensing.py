"""Gaussian measurement operator, its auxiliary twin and the D/O split.

The operator maps X in R^{n1 x n2} to ``(<A_i, X> / sqrt(m))_i``. Entries of
``A_i`` come from the measurement lane of :mod:`rials.rand_stream`, so a
dense (materialized) operator and a streamed (regenerated block by block)
operator built from the same key agree entry for entry.

Dense storage is measurements-major: an ``(m, n1, n2)`` array with each
``A_i`` contiguous.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator

import numpy as np

from .errors import CanonicalFrameRequired, DimensionMismatch, InvalidDimension, InvalidParameters
from .rand_stream import Lane, StreamKey, gaussian_grid

__all__ = [
    "ProblemDims",
    "SensingOperator",
    "AuxiliaryOperator",
    "OperatorSplit",
    "build_operator",
    "build_auxiliary",
    "apply_split",
    "project_offdiag",
    "dump_operator",
    "load_operator_dump",
    "DEFAULT_MEMORY_BUDGET",
]

DEFAULT_MEMORY_BUDGET = 2 * 1024**3
_STREAM_BLOCK_BYTES = 32 * 1024**2


@dataclass(frozen=True)
class ProblemDims:
    n1: int
    n2: int
    m: int
    rank: int = 1

    def __post_init__(self):
        for name in ("n1", "n2", "m", "rank"):
            if int(getattr(self, name)) < 1:
                raise InvalidDimension(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.rank > min(self.n1, self.n2):
            raise InvalidDimension(f"rank {self.rank} exceeds min(n1, n2) = {min(self.n1, self.n2)}")

    @property
    def dense_bytes(self) -> int:
        return self.m * self.n1 * self.n2 * 8

    def transposed(self) -> "ProblemDims":
        return ProblemDims(self.n2, self.n1, self.m, self.rank)


class SensingOperator:
    """Linear map X -> (<A_i, X> / sqrt(m))_{i <= m} with Gaussian A_i.

    Parameters
    ----------
    dims : ProblemDims
    key : StreamKey
        Root key; only ``master_seed`` and ``trial`` are used. Entry
        ``A_i[j, k]`` is the measurement-lane deviate at ``(trial, i, j, k)``.
    storage : {"dense", "streamed"}
    canonical : bool
        True when the caller guarantees the ground truth is ``e1 e1^T``.
        Required by the auxiliary operator and the D/O split.
    """

    def __init__(self, dims: ProblemDims, key: StreamKey, storage: str = "dense", canonical: bool = False,
                 *, _transposed: bool = False):
        if storage not in ("dense", "streamed"):
            raise InvalidParameters(f"unknown storage {storage!r}")
        self._base_dims = dims
        self.key = key
        self.storage = storage
        self.canonical = canonical
        self._transposed = _transposed
        self.dims = dims.transposed() if _transposed else dims
        self.scale = 1.0 / np.sqrt(dims.m)

    # -- entry generation -------------------------------------------------

    def _raw_block(self, i0: int, i1: int) -> np.ndarray:
        d = self._base_dims
        return gaussian_grid(self.key.master_seed, Lane.MEASUREMENT, self.key.trial,
                             np.arange(i0, i1), np.arange(d.n1), d.n2)

    def _block(self, i0: int, i1: int) -> np.ndarray:
        blk = self._raw_block(i0, i1)
        return np.ascontiguousarray(blk.transpose(0, 2, 1)) if self._transposed else blk

    def _block_rows(self) -> int:
        return max(1, _STREAM_BLOCK_BYTES // (8 * self.dims.n1 * self.dims.n2))

    def _assemble(self) -> np.ndarray:
        # chunked so generator temporaries stay bounded by the block size
        m, rows = self.dims.m, self._block_rows()
        out = np.empty((m, self.dims.n1, self.dims.n2))
        for i0 in range(0, m, rows):
            out[i0 : i0 + rows] = self._block(i0, min(m, i0 + rows))
        return out

    @cached_property
    def _dense(self) -> np.ndarray:
        return self._assemble()

    def blocks(self) -> Iterator[tuple[int, np.ndarray]]:
        """Yield ``(i0, A[i0:i1])`` blocks covering all measurements in order."""
        m = self.dims.m
        if self.storage == "dense":
            yield 0, self._dense
            return
        rows = self._block_rows()
        for i0 in range(0, m, rows):
            yield i0, self._block(i0, min(m, i0 + rows))

    def matrices(self) -> np.ndarray:
        """All measurement matrices as an ``(m, n1, n2)`` array (unscaled)."""
        if self.storage == "dense":
            return self._dense
        return self._assemble()

    def entry(self, i: int, j: int, k: int) -> float:
        return float(self._block(i, i + 1)[0, j, k])

    def transposed(self) -> "SensingOperator":
        """Operator with every A_i replaced by A_i^T (roles of u and v swapped)."""
        return self._clone(_transposed=not self._transposed)

    def _clone(self, **kw):
        return SensingOperator(self._base_dims, self.key, self.storage, self.canonical, **kw)

    # -- linear algebra ---------------------------------------------------

    def _check_vec(self, x, n, name):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != n:
            raise DimensionMismatch(f"{name} has leading dimension {x.shape[0]}, expected {n}")
        return x

    def forward(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape != (self.dims.n1, self.dims.n2):
            raise DimensionMismatch(f"X has shape {X.shape}, expected {(self.dims.n1, self.dims.n2)}")
        out = np.empty(self.dims.m)
        x = X.ravel()
        for i0, blk in self.blocks():
            out[i0 : i0 + len(blk)] = blk.reshape(len(blk), -1) @ x
        return out * self.scale

    def forward_rank1(self, u, v) -> np.ndarray:
        """``A(u v^T)`` without forming the outer product."""
        u = self._check_vec(u, self.dims.n1, "u")
        v = self._check_vec(v, self.dims.n2, "v")
        out = np.empty(self.dims.m)
        for i0, blk in self.blocks():
            out[i0 : i0 + len(blk)] = (blk @ v) @ u
        return out * self.scale

    def adjoint(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dims.m,):
            raise DimensionMismatch(f"z has shape {z.shape}, expected ({self.dims.m},)")
        out = np.zeros((self.dims.n1, self.dims.n2))
        for i0, blk in self.blocks():
            out += np.tensordot(z[i0 : i0 + len(blk)], blk, axes=1)
        return out * self.scale

    def left_design(self, V) -> np.ndarray:
        """Design matrix of the u-subproblem: row i is ``vec(A_i V) / sqrt(m)``.

        ``V`` may be a vector (rank one, result ``(m, n1)``) or an ``(n2, r)``
        block (result ``(m, n1 * r)``, row-major in ``(j, l)``).
        """
        V = self._check_vec(V, self.dims.n2, "V")
        width = self.dims.n1 * (1 if V.ndim == 1 else V.shape[1])
        out = np.empty((self.dims.m, width))
        for i0, blk in self.blocks():
            out[i0 : i0 + len(blk)] = (blk @ V).reshape(len(blk), -1)
        return out * self.scale

    def right_design(self, U) -> np.ndarray:
        """Design matrix of the v-subproblem: row i is ``vec(A_i^T U) / sqrt(m)``."""
        U = self._check_vec(U, self.dims.n1, "U")
        width = self.dims.n2 * (1 if U.ndim == 1 else U.shape[1])
        out = np.empty((self.dims.m, width))
        for i0, blk in self.blocks():
            prod = np.swapaxes(blk, 1, 2) @ U
            out[i0 : i0 + len(blk)] = prod.reshape(len(blk), -1)
        return out * self.scale

    def __repr__(self):
        d = self.dims
        return (f"{type(self).__name__}(n1={d.n1}, n2={d.n2}, m={d.m}, storage={self.storage!r}, "
                f"seed={self.key.master_seed}, trial={self.key.trial})")


class AuxiliaryOperator(SensingOperator):
    """Operator whose first row and first column (except entry (1,1)) are resampled.

    ``Ã_i[j, k] = A_i[j, k]`` when ``j, k`` are both nonzero or both zero
    (0-based); otherwise it is an independent deviate from the aux_resample
    lane at ``(resample_root.trial, i, j, k)``.
    """

    def __init__(self, base: SensingOperator, resample_root: StreamKey, *, _transposed: bool = False):
        super().__init__(base._base_dims, base.key, base.storage, base.canonical, _transposed=_transposed)
        self.base = base
        self.resample_root = resample_root

    def _raw_block(self, i0, i1):
        blk = self.base._raw_block(i0, i1)
        d = self._base_dims
        idx = np.arange(i0, i1)
        seed, trial = self.resample_root.master_seed, self.resample_root.trial
        row = gaussian_grid(seed, Lane.AUX_RESAMPLE, trial, idx, [0], d.n2)[:, 0, :]
        blk[:, 0, 1:] = row[:, 1:]
        if d.n1 > 1:
            col = gaussian_grid(seed, Lane.AUX_RESAMPLE, trial, idx, np.arange(1, d.n1), 1)[:, :, 0]
            blk[:, 1:, 0] = col
        return blk

    def _clone(self, **kw):
        return AuxiliaryOperator(self.base, self.resample_root, **kw)


def _offdiag_mask(n1: int, n2: int) -> np.ndarray:
    mask = np.zeros((n1, n2), dtype=bool)
    mask[0, 1:] = True
    mask[1:, 0] = True
    return mask


class OperatorSplit(SensingOperator):
    """One part of the split ``A_i = D_i + O_i`` (or ``Ã_i = D_i + Õ_i``).

    ``D`` keeps entry (1,1) and the trailing ``(n1-1) x (n2-1)`` block of
    ``A_i``; ``O`` keeps the rest of row 1 and column 1; ``O_tilde`` is the
    ``O`` part of the auxiliary matrices.
    """

    def __init__(self, which: str, parent: SensingOperator, *, _transposed: bool = False):
        if which not in ("D", "O", "O_tilde"):
            raise InvalidParameters(f"unknown split {which!r}")
        if not parent.canonical:
            raise CanonicalFrameRequired("the D/O split is defined for u* = e1, v* = e1 only")
        if which == "O_tilde" and not isinstance(parent, AuxiliaryOperator):
            raise InvalidParameters("O_tilde needs an AuxiliaryOperator parent")
        super().__init__(parent._base_dims, parent.key, parent.storage, True, _transposed=_transposed)
        self.which = which
        self.parent = parent

    def _raw_block(self, i0, i1):
        blk = self.parent._raw_block(i0, i1)
        d = self._base_dims
        mask = _offdiag_mask(d.n1, d.n2)
        if self.which == "D":
            mask = ~mask
        return np.where(mask, blk, 0.0)

    def _clone(self, **kw):
        return OperatorSplit(self.which, self.parent, **kw)


def project_offdiag(Z) -> np.ndarray:
    """Orthogonal projection onto matrices supported on row 1 and column 1, minus entry (1,1)."""
    Z = np.asarray(Z, dtype=float)
    return np.where(_offdiag_mask(*Z.shape), Z, 0.0)


def build_operator(dims: ProblemDims, seed: StreamKey, memory_budget: int = DEFAULT_MEMORY_BUDGET,
                   canonical: bool = False, storage: str | None = None) -> SensingOperator:
    """Gaussian operator, dense when ``m * n1 * n2 * 8 <= memory_budget`` unless ``storage`` forces a mode."""
    if storage is None:
        storage = "dense" if dims.dense_bytes <= memory_budget else "streamed"
    return SensingOperator(dims, seed, storage=storage, canonical=canonical)


def build_auxiliary(op: SensingOperator, resample_seed: StreamKey) -> AuxiliaryOperator:
    if not op.canonical:
        raise CanonicalFrameRequired("auxiliary operator requires the canonical frame u* = v* = e1")
    if isinstance(op, (AuxiliaryOperator, OperatorSplit)) or op._transposed:
        raise InvalidParameters("build_auxiliary expects a plain, untransposed SensingOperator")
    return AuxiliaryOperator(op, resample_seed)


def apply_split(split: OperatorSplit, u, v) -> np.ndarray:
    return split.forward_rank1(u, v)


# -- binary dump -------------------------------------------------------------

_MAGIC = b"RIALSOP1"
_HEADER = struct.Struct("<8sQQQQQB7x")


def dump_operator(op: SensingOperator, path) -> None:
    """Write header ``(magic, n1, n2, m, master_seed, trial, storage)`` then row-major float64 ``A_i``."""
    d = op.dims
    tag = 0 if op.storage == "dense" else 1
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, d.n1, d.n2, d.m, op.key.master_seed, op.key.trial, tag))
        for _, blk in op.blocks():
            fh.write(np.ascontiguousarray(blk, dtype="<f8").tobytes())


def load_operator_dump(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        magic, n1, n2, m, seed, trial, tag = _HEADER.unpack(raw)
        if magic != _MAGIC:
            raise InvalidParameters(f"{path}: not an operator dump")
        payload = np.frombuffer(fh.read(), dtype="<f8")
    if payload.size != m * n1 * n2:
        raise DimensionMismatch(f"{path}: payload has {payload.size} values, expected {m * n1 * n2}")
    header = {"n1": n1, "n2": n2, "m": m, "master_seed": seed, "trial": trial,
              "storage": "dense" if tag == 0 else "streamed"}
    return header, payload.reshape(m, n1, n2)
