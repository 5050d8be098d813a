"""Exact simulation of the mixed process X = B^H + B on the grid.

The long-memory increments are synthesized by circulant embedding of the
stationary increment autocovariance (spectral method, exact in
distribution); the independent Brownian component is a scaled Gaussian
walk.  Every path draws from substreams derived deterministically from
(seed, component, path index), so ensembles are reproducible and
independent of scheduling.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .exceptions import NumericalError
from .parallelism import parallel_map, resolve_threads
from .quadrature import Grid

__all__ = [
    "FbmCovariance",
    "SamplePath",
    "fbm_cov",
    "fgn_autocov",
    "simulate",
    "simulate_ensemble",
    "restrict",
]

#: Substream component tags for the two independent noise sources.
FBM_STREAM = 0
BM_STREAM = 1

#: Relative eigenvalue floor below which the embedding is declared invalid.
EIG_TOL = 1e-9


def fbm_cov(s, t, h: float):
    """Covariance of the long-memory component:
    0.5 * (t**2H + s**2H - |t - s|**2H)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(s < 0.0) or np.any(t < 0.0):
        raise ValueError("times must be nonnegative")
    if not 0.0 < h <= 1.0:
        raise ValueError(f"H must be in (0, 1], got {h}")
    two_h = 2.0 * h
    out = 0.5 * (t ** two_h + s ** two_h - np.abs(t - s) ** two_h)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FbmCovariance:
    """Covariance function of the long-memory component at fixed H."""

    h: float

    def __post_init__(self):
        if not 0.0 < self.h <= 1.0:
            raise ValueError(f"H must be in (0, 1], got {self.h}")

    def at(self, s, t):
        return fbm_cov(s, t, self.h)


def fgn_autocov(k, h: float, dt: float = 1.0):
    """Autocovariance of increments at lag k (in steps of size dt):
    0.5 * dt**2H * (|k+1|**2H - 2|k|**2H + |k-1|**2H)."""
    k = np.asarray(k, dtype=float)
    if np.any(k < 0):
        raise ValueError("lag must be nonnegative")
    two_h = 2.0 * h
    out = 0.5 * dt ** two_h * (
        np.abs(k + 1) ** two_h - 2.0 * np.abs(k) ** two_h + np.abs(k - 1) ** two_h
    )
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class SamplePath:
    """One seeded realization of the component paths at the grid nodes."""

    grid: Grid
    h: float
    seed: int
    fbm: np.ndarray
    bm: np.ndarray
    mixed: np.ndarray

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.mixed)


def _substream(seed: int, component: int, path_index: int) -> np.random.Generator:
    # Stated derivation contract: substream = SeedSequence(seed, spawn_key=(component, path)).
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(component, path_index)))


@lru_cache(maxsize=32)
def _embedding_eigenvalues(n: int, h: float, dt: float):
    """Eigenvalues of the order-2n circulant embedding, or None if indefinite."""
    gamma = fgn_autocov(np.arange(n + 1), h, dt)
    row = np.concatenate([gamma[:n], gamma[n:n + 1], gamma[1:n][::-1]])
    lam = np.fft.fft(row).real
    if lam.min() < -EIG_TOL * lam.max():
        return None
    lam = np.clip(lam, 0.0, None)
    lam.setflags(write=False)
    return lam


@lru_cache(maxsize=8)
def _increment_cholesky(n: int, h: float, dt: float):
    """Dense Cholesky factor of the exact increment covariance (fallback)."""
    t = np.arange(n + 1) * dt
    cov_nodes = fbm_cov(t[:, None], t[None, :], h)
    cov_inc = (
        cov_nodes[1:, 1:] - cov_nodes[1:, :-1] - cov_nodes[:-1, 1:] + cov_nodes[:-1, :-1]
    )
    try:
        chol = np.linalg.cholesky(cov_inc)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"increment covariance not positive definite (n={n}, H={h})"
        ) from exc
    chol.setflags(write=False)
    return chol


def _fgn_increments(n: int, h: float, dt: float, rng: np.random.Generator) -> np.ndarray:
    """One exact draw of n stationary long-memory increments."""
    lam = _embedding_eigenvalues(n, h, dt)
    if lam is None:
        chol = _increment_cholesky(n, h, dt)
        return chol @ rng.standard_normal(n)
    m = 2 * n
    z = rng.standard_normal(m)
    amp = np.zeros(m, dtype=complex)
    amp[0] = np.sqrt(lam[0]) * z[0]
    amp[n] = np.sqrt(lam[n]) * z[1]
    amp[1:n] = np.sqrt(0.5 * lam[1:n]) * (z[2 : n + 1] + 1j * z[n + 1 :])
    amp[n + 1 :] = np.conj(amp[1:n][::-1])
    synth = np.fft.ifft(amp) * np.sqrt(m)
    return synth.real[:n]


def _one_path(grid: Grid, h: float, seed: int, path_index: int) -> SamplePath:
    n = grid.cells
    dt = grid.h
    rng_fbm = _substream(seed, FBM_STREAM, path_index)
    rng_bm = _substream(seed, BM_STREAM, path_index)
    if h == 1.0:
        # Degenerate covariance: the path is xi * t for one standard Gaussian.
        xi = float(rng_fbm.standard_normal())
        fbm_path = xi * grid.nodes
    else:
        incr = _fgn_increments(n, h, dt, rng_fbm)
        fbm_path = np.concatenate([[0.0], np.cumsum(incr)])
    bm_path = np.concatenate([[0.0], np.cumsum(rng_bm.standard_normal(n) * np.sqrt(dt))])
    return SamplePath(grid=grid, h=h, seed=int(seed), fbm=fbm_path, bm=bm_path, mixed=fbm_path + bm_path)


def simulate(grid: Grid, h: float, seed: int, path_index: int = 0) -> SamplePath:
    """Seeded realization of (B^H, B, X) at the grid nodes.

    Deterministic for fixed (seed, n, h, path_index); the two components
    come from disjoint substreams of the seed.
    """
    if not 0.0 < h <= 1.0:
        raise ValueError(f"H must be in (0, 1], got {h}")
    return _one_path(grid, h, seed, int(path_index))


def simulate_ensemble(grid: Grid, h: float, seed: int, n_paths: int, threads=None):
    """Stacked node values (fbm, bm, mixed), each of shape (n_paths, n + 1).

    Path p uses substreams (seed, component, p), so the ensemble content
    does not depend on chunking or worker count.
    """
    if n_paths < 1:
        raise ValueError(f"n_paths must be >= 1, got {n_paths}")
    if not 0.0 < h <= 1.0:
        raise ValueError(f"H must be in (0, 1], got {h}")
    n = grid.cells
    dt = grid.h
    lam = None if h == 1.0 else _embedding_eigenvalues(n, h, dt)

    def build_chunk(bounds):
        lo, hi = bounds
        count = hi - lo
        fbm_inc = np.empty((count, n))
        bm_inc = np.empty((count, n))
        if h == 1.0:
            for i, p in enumerate(range(lo, hi)):
                xi = float(_substream(seed, FBM_STREAM, p).standard_normal())
                fbm_inc[i] = xi * dt
                bm_inc[i] = _substream(seed, BM_STREAM, p).standard_normal(n) * np.sqrt(dt)
            return fbm_inc, bm_inc
        if lam is None:
            for i, p in enumerate(range(lo, hi)):
                fbm_inc[i] = _fgn_increments(n, h, dt, _substream(seed, FBM_STREAM, p))
                bm_inc[i] = _substream(seed, BM_STREAM, p).standard_normal(n) * np.sqrt(dt)
            return fbm_inc, bm_inc
        m = 2 * n
        z = np.empty((count, m))
        for i, p in enumerate(range(lo, hi)):
            z[i] = _substream(seed, FBM_STREAM, p).standard_normal(m)
            bm_inc[i] = _substream(seed, BM_STREAM, p).standard_normal(n) * np.sqrt(dt)
        amp = np.zeros((count, m), dtype=complex)
        amp[:, 0] = np.sqrt(lam[0]) * z[:, 0]
        amp[:, n] = np.sqrt(lam[n]) * z[:, 1]
        amp[:, 1:n] = np.sqrt(0.5 * lam[1:n]) * (z[:, 2 : n + 1] + 1j * z[:, n + 1 :])
        amp[:, n + 1 :] = np.conj(amp[:, 1:n][:, ::-1])
        fbm_inc[:] = (np.fft.ifft(amp, axis=1) * np.sqrt(m)).real[:, :n]
        return fbm_inc, bm_inc

    n_workers = resolve_threads(threads)
    chunk = max(1, -(-n_paths // n_workers))
    bounds = [(lo, min(lo + chunk, n_paths)) for lo in range(0, n_paths, chunk)]
    pieces = parallel_map(build_chunk, bounds, threads=threads)
    fbm_inc = np.vstack([p[0] for p in pieces])
    bm_inc = np.vstack([p[1] for p in pieces])
    zeros = np.zeros((n_paths, 1))
    fbm_paths = np.hstack([zeros, np.cumsum(fbm_inc, axis=1)])
    bm_paths = np.hstack([zeros, np.cumsum(bm_inc, axis=1)])
    return fbm_paths, bm_paths, fbm_paths + bm_paths


def restrict(path: SamplePath, factor: int) -> SamplePath:
    """The same realization on a grid coarsened by an integer factor.

    Used for coupled refinement studies: the coarse path is the exact
    restriction of the fine one, so residual comparisons share one sample.
    """
    factor = int(factor)
    if factor < 1 or path.grid.cells % factor != 0:
        raise ValueError(f"factor {factor} does not divide {path.grid.cells} cells")
    coarse = Grid(path.grid.horizon, path.grid.cells // factor)
    return SamplePath(
        grid=coarse,
        h=path.h,
        seed=path.seed,
        fbm=path.fbm[::factor].copy(),
        bm=path.bm[::factor].copy(),
        mixed=path.mixed[::factor].copy(),
    )
