"""Counter-based Gaussian streams.

Every random value in the package is a pure function of a :class:`StreamKey`.
The key is packed injectively into a 128-bit Philox4x32-10 counter, with the
64-bit master seed as the Philox key, so values can be regenerated in any
order and never depend on what else was evaluated.

Counter layout (32-bit words)::

    c0 = trial_id
    c1 = lane << 28 | i        (i < 2**28)
    c2 = j
    c3 = k >> 1

One Philox call yields 128 bits, converted by Box-Muller into two standard
normals; the parity of ``k`` selects the cosine (even) or sine (odd) branch.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidDimension, InvalidParameters

__all__ = [
    "Lane",
    "StreamKey",
    "philox4x32",
    "gaussian_at",
    "gaussian_grid",
    "sphere_sample",
    "derive_trial_id",
]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 2.0**-53

_MAX_TRIAL = 2**32
_MAX_I = 2**28
_MAX_J = 2**32
_MAX_K = 2**33
_DERIVE_TAG = 0xF


class Lane(enum.IntEnum):
    MEASUREMENT = 0
    AUX_RESAMPLE = 1
    INIT = 2
    TRIAL = 3


@dataclass(frozen=True)
class StreamKey:
    master_seed: int
    lane: Lane = Lane.MEASUREMENT
    trial: int = 0
    i: int = 0
    j: int = 0
    k: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed < 2**64:
            raise InvalidParameters(f"master_seed must fit in 64 bits, got {self.master_seed}")
        object.__setattr__(self, "lane", Lane(self.lane))
        for name, hi in (("trial", _MAX_TRIAL), ("i", _MAX_I), ("j", _MAX_J), ("k", _MAX_K)):
            val = getattr(self, name)
            if not 0 <= val < hi:
                raise InvalidParameters(f"StreamKey.{name}={val} outside [0, {hi})")

    def with_(self, **changes) -> "StreamKey":
        return replace(self, **changes)


def philox4x32(c0, c1, c2, c3, key: int):
    """Philox4x32-10 block function, vectorized over broadcastable counter words.

    ``key`` is a 64-bit integer split into two 32-bit key words (low word first).
    Returns four uint64 arrays each holding a 32-bit output word.
    """
    k0 = key & 0xFFFFFFFF
    k1 = (key >> 32) & 0xFFFFFFFF
    c0, c1, c2, c3 = np.broadcast_arrays(
        *(np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    )
    for r in range(10):
        ka = np.uint64((k0 + r * _W0) & 0xFFFFFFFF)
        kb = np.uint64((k1 + r * _W1) & 0xFFFFFFFF)
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (p1 >> _S32) ^ c1 ^ ka, p1 & _LO, (p0 >> _S32) ^ c3 ^ kb, p0 & _LO
    return c0, c1, c2, c3


def _box_muller(w0, w1, w2, w3):
    u1 = (((w0 << _S32) | w1) >> _S11).astype(np.float64) * _TWO_M53
    u2 = (((w2 << _S32) | w3) >> _S11).astype(np.float64) * _TWO_M53
    r = np.sqrt(-2.0 * np.log1p(-u1))
    phi = 2.0 * np.pi * u2
    return r * np.cos(phi), r * np.sin(phi)


def _check_lane_trial(lane, trial):
    lane = Lane(lane)
    if not 0 <= trial < _MAX_TRIAL:
        raise InvalidParameters(f"trial id {trial} outside [0, 2**32)")
    return lane


def gaussian_grid(master_seed: int, lane: Lane, trial: int, i, j, n_k: int, k0: int = 0) -> np.ndarray:
    """Standard normals on the grid ``i x j x [k0, k0 + n_k)``.

    ``i`` and ``j`` are 1-D integer index arrays; the result has shape
    ``(len(i), len(j), n_k)`` and entry ``[a, b, c]`` equals
    ``gaussian_at(StreamKey(master_seed, lane, trial, i[a], j[b], k0 + c))``.
    """
    lane = _check_lane_trial(lane, trial)
    i = np.asarray(i, dtype=np.uint64).reshape(-1, 1, 1)
    j = np.asarray(j, dtype=np.uint64).reshape(1, -1, 1)
    if n_k <= 0 or i.size == 0 or j.size == 0:
        return np.zeros((i.size, j.size, max(n_k, 0)))
    if int(i.max()) >= _MAX_I or k0 < 0 or k0 + n_k > _MAX_K:
        raise InvalidParameters("grid indices outside the addressable range")
    first = k0 >> 1
    last = (k0 + n_k - 1) >> 1
    pairs = np.arange(first, last + 1, dtype=np.uint64).reshape(1, 1, -1)
    c1 = (np.uint64(int(lane) << 28)) | i
    words = philox4x32(np.uint64(trial), c1, j, pairs, master_seed)
    z_even, z_odd = _box_muller(*words)
    out = np.empty(z_even.shape[:2] + (2 * z_even.shape[2],))
    out[..., 0::2] = z_even
    out[..., 1::2] = z_odd
    off = k0 - 2 * first
    return out[..., off : off + n_k]


def gaussian_at(key: StreamKey) -> float:
    """Single standard-normal deviate addressed by ``key``."""
    c1 = (int(key.lane) << 28) | key.i
    words = philox4x32(
        np.array([key.trial]), np.array([c1]), np.array([key.j]), np.array([key.k >> 1]), key.master_seed
    )
    z_even, z_odd = _box_muller(*words)
    return float(z_odd[0] if key.k & 1 else z_even[0])


def sphere_sample(key: StreamKey, dim: int) -> np.ndarray:
    """Uniform point on the unit sphere in R^dim (normalized Gaussian).

    Components are the deviates at ``key`` with ``k`` running over
    ``key.k, ..., key.k + dim - 1``.
    """
    if dim < 1:
        raise InvalidDimension(f"dim must be >= 1, got {dim}")
    g = gaussian_grid(key.master_seed, key.lane, key.trial, [key.i], [key.j], dim, k0=key.k)[0, 0]
    nrm = np.linalg.norm(g)
    # a zero Gaussian vector has probability zero; guard anyway
    if nrm == 0.0:
        g = np.zeros(dim)
        g[0] = 1.0
        return g
    return g / nrm


def derive_trial_id(master_seed: int, *coords: int) -> int:
    """Hash up to three nonnegative 32-bit coordinates into a 32-bit trial id.

    Used to map (cell, trial) coordinates of an experiment grid onto stream
    trial ids so that adding grid cells never perturbs existing cells.
    """
    if len(coords) > 3:
        raise InvalidParameters("at most three coordinates")
    c = list(coords) + [0] * (3 - len(coords))
    if any(not 0 <= x < 2**28 for x in c):
        raise InvalidParameters("coordinates must lie in [0, 2**28)")
    w = philox4x32(
        np.array([c[0]]), np.array([(_DERIVE_TAG << 28) | c[1]]), np.array([c[2]]), np.array([len(coords)]),
        master_seed,
    )
    return int(w[0][0])
