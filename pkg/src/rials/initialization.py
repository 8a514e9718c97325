"""Starting iterates: uniform on the sphere, or spectral (power iteration on A*(y))."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateObservation, DimensionMismatch, InvalidParameters
from .als import orthonormalize
from .rand_stream import Lane, StreamKey, gaussian_grid, sphere_sample
from .sensing import ProblemDims

__all__ = [
    "InitSpec",
    "SpectralResult",
    "random_init",
    "spectral_init",
    "random_init_block",
    "spectral_init_block",
    "INIT_RANDOM_V",
    "INIT_POWER_START",
]

# i-coordinates inside the init lane
INIT_RANDOM_V = 0
INIT_POWER_START = 1


@dataclass(frozen=True)
class InitSpec:
    kind: str = "random"
    power_iters: int = 100
    power_tol: float = 1e-10

    def __post_init__(self):
        if self.kind not in ("random", "spectral"):
            raise InvalidParameters(f"init kind must be 'random' or 'spectral', got {self.kind!r}")
        if self.power_iters < 1 or not self.power_tol > 0:
            raise InvalidParameters("power_iters >= 1 and power_tol > 0 required")


@dataclass
class SpectralResult:
    u0: np.ndarray
    v0: np.ndarray
    iterations: int
    sigma1: float
    # power iteration hit power_iters before reaching power_tol
    ill_separated: bool


def random_init(dims: ProblemDims, seed: StreamKey) -> np.ndarray:
    """v0 uniform on the unit sphere of R^{n2}, drawn from the init lane of ``seed``."""
    key = StreamKey(seed.master_seed, Lane.INIT, seed.trial, INIT_RANDOM_V, 0, 0)
    return sphere_sample(key, dims.n2)


def spectral_init(op, y, seed: StreamKey | None = None, spec: InitSpec = InitSpec("spectral")) -> SpectralResult:
    """Leading singular pair of ``M = A*(y)`` by power iteration on ``M^T M``.

    Convergence is declared when successive v-iterates differ by at most
    ``spec.power_tol`` in norm. ``u0 = M v0 / ||M v0||``, so ``<u0, M v0> >= 0``.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (op.dims.m,):
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({op.dims.m},)")
    if not np.any(y):
        raise DegenerateObservation("y = 0 carries no direction information")
    M = op.adjoint(y)
    key = seed if seed is not None else op.key
    v = sphere_sample(StreamKey(key.master_seed, Lane.INIT, key.trial, INIT_POWER_START, 0, 0), op.dims.n2)
    converged = False
    it = 0
    for it in range(1, spec.power_iters + 1):
        w = M.T @ (M @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            # start vector in the null space of M; M != 0, so fall back to its largest row
            w = M[np.argmax(np.linalg.norm(M, axis=1))]
            nrm = np.linalg.norm(w)
        w = w / nrm
        if w @ v < 0:
            w = -w
        if np.linalg.norm(w - v) <= spec.power_tol:
            v = w
            converged = True
            break
        v = w
    Mv = M @ v
    sigma1 = float(np.linalg.norm(Mv))
    u = Mv / sigma1
    if u @ (M @ v) < 0:
        v = -v
    return SpectralResult(u0=u, v0=v, iterations=it, sigma1=sigma1, ill_separated=not converged)


def random_init_block(dims: ProblemDims, seed: StreamKey, rank: int) -> np.ndarray:
    """Orthonormal ``(n2, rank)`` start block with Haar-distributed column space."""
    g = gaussian_grid(seed.master_seed, Lane.INIT, seed.trial, [INIT_RANDOM_V], np.arange(rank), dims.n2)[0].T
    return orthonormalize(g)


def spectral_init_block(op, y, rank: int, seed: StreamKey | None = None,
                        spec: InitSpec = InitSpec("spectral")) -> np.ndarray:
    """Top-``rank`` right singular subspace of ``A*(y)`` by subspace iteration."""
    y = np.asarray(y, dtype=float)
    if not np.any(y):
        raise DegenerateObservation("y = 0 carries no direction information")
    M = op.adjoint(y)
    key = seed if seed is not None else op.key
    g = gaussian_grid(key.master_seed, Lane.INIT, key.trial, [INIT_POWER_START], np.arange(rank), op.dims.n2)[0].T
    V = orthonormalize(g)
    for _ in range(spec.power_iters):
        W = orthonormalize(M.T @ (M @ V))
        if np.linalg.norm(W - V @ (V.T @ W)) <= spec.power_tol:
            V = W
            break
        V = W
    return V
