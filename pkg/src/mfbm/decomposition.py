"""Pathwise semimartingale objects: drift derivative, martingale, innovation.

The stochastic integrals are discretized left-point (Ito-consistent) with
the kernels evaluated at cell midpoints; the innovation increments divide
martingale increments by the right-endpoint diagonal value, and the
reconstruction residual integrates the drift derivative by trapezoid on
the same decimated node subset.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .exceptions import NumericalError
from .kernel_solve import KernelField, SweepSolver
from .quadrature import Alpha, Grid
from .gaussian_paths import SamplePath

__all__ = [
    "DriftPath",
    "InnovationPath",
    "compute_phi",
    "compute_innovation",
    "decompose",
    "field_matrix",
]


@dataclass(frozen=True)
class DriftPath:
    """Drift derivative sampled on a decimated subset of nodes (index 0 first)."""

    grid: Grid
    s_subset: np.ndarray
    phi: np.ndarray
    path_ref: int

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes[self.s_subset]

    def integral(self) -> np.ndarray:
        """Cumulative trapezoid of the drift derivative along the subset."""
        steps = np.diff(self.times)
        partial = np.cumsum(0.5 * (self.phi[1:] + self.phi[:-1]) * steps)
        return np.concatenate([[0.0], partial])


@dataclass(frozen=True)
class InnovationPath:
    """Martingale, innovation process and reconstruction residual on a subset."""

    grid: Grid
    subset: np.ndarray
    m_values: np.ndarray
    bbar: np.ndarray
    residual: Optional[np.ndarray]

    @property
    def times(self) -> np.ndarray:
        return self.grid.nodes[self.subset]


def _sorted_subset(fields: Mapping[int, KernelField], grid: Grid) -> np.ndarray:
    if not fields:
        raise ValueError("need at least one solved kernel field")
    ks = sorted(int(k) for k in fields)
    if ks[0] < 1 or ks[-1] > grid.cells:
        raise ValueError("field indices outside the grid")
    for k in ks:
        if fields[k].grid is not grid and not np.array_equal(fields[k].grid.nodes, grid.nodes):
            raise ValueError(f"field at index {k} solved on a different grid")
    return np.array([0] + ks, dtype=int)


def compute_phi(path: SamplePath, fields: Mapping[int, KernelField]) -> DriftPath:
    """Drift derivative phi_s = sum_i L(m_i, s) * (X_{i+1} - X_i) over cells in [0, s].

    One solved drift-kernel field per requested node index; the value at
    s = 0 is 0 (empty integral) and is always included.
    """
    subset = _sorted_subset(fields, path.grid)
    increments = path.increments
    phi = np.zeros(len(subset))
    for pos, k in enumerate(subset[1:], start=1):
        phi[pos] = float(fields[int(k)].values @ increments[: int(k)])
    return DriftPath(grid=path.grid, s_subset=subset, phi=phi, path_ref=path.seed)


def compute_innovation(
    path: SamplePath,
    g_fields: Mapping[int, KernelField],
    drift: Optional[DriftPath] = None,
    g_diagonal: Optional[Mapping[int, float]] = None,
) -> InnovationPath:
    """Martingale M, innovation process and (given the drift) the residual.

    M_{t_k} = sum_i g(m_i, t_k) dX_i; innovation increments are
    (M_{k+1} - M_k) / g(t_{k+1}, t_{k+1}) with the diagonal value obtained
    by Nystrom interpolation.  The residual X_t - bbar_t + int_0^t phi ds
    requires `drift` on the same subset.
    """
    from .kernel_solve import nystrom_eval

    subset = _sorted_subset(g_fields, path.grid)
    increments = path.increments
    m_values = np.zeros(len(subset))
    diag = np.zeros(len(subset))
    for pos, k in enumerate(subset[1:], start=1):
        k = int(k)
        fld = g_fields[k]
        m_values[pos] = float(fld.values @ increments[:k])
        if g_diagonal is not None and k in g_diagonal:
            diag[pos] = float(g_diagonal[k])
        else:
            diag[pos] = nystrom_eval(fld, float(path.grid.nodes[k]))
    if np.any(diag[1:] <= 0.0):
        bad = subset[1:][diag[1:] <= 0.0][0]
        raise NumericalError(f"g(t, t) <= 0 at node index {bad}")
    bbar = np.concatenate([[0.0], np.cumsum(np.diff(m_values) / diag[1:])])
    residual = None
    if drift is not None:
        if not np.array_equal(drift.s_subset, subset):
            raise ValueError("drift and innovation subsets differ")
        residual = path.mixed[subset] - bbar + drift.integral()
    return InnovationPath(grid=path.grid, subset=subset, m_values=m_values, bbar=bbar, residual=residual)


def decompose(
    path: SamplePath,
    decimation: int = 8,
    sweep: Optional[SweepSolver] = None,
    threads=None,
):
    """Full decomposition of one path: returns (DriftPath, InnovationPath).

    Solves both kernel families at every `decimation`-th node (sharing one
    factorization) and assembles drift, martingale, innovation and
    residual on that subset.
    """
    decimation = int(decimation)
    n = path.grid.cells
    if decimation < 1 or n % decimation != 0:
        raise ValueError(f"decimation {decimation} does not divide {n} cells")
    if sweep is None:
        sweep = SweepSolver(path.grid, Alpha.from_h(path.h))
    indices = list(range(decimation, n + 1, decimation))
    l_fields = sweep.L_sweep(indices, threads=threads)
    g_fields = sweep.g_sweep(indices, threads=threads)
    drift = compute_phi(path, l_fields)
    innovation = compute_innovation(path, g_fields, drift=drift, g_diagonal=sweep.g_diagonal(g_fields))
    return drift, innovation


def field_matrix(fields: Mapping[int, KernelField], n_cells: int) -> np.ndarray:
    """Dense (len(fields), n_cells) matrix of field values, zero-padded.

    Row order follows ascending field index; row for index k holds the k
    midpoint values.  Lets ensembles evaluate stochastic integrals as one
    matrix product: values @ increments.T.
    """
    ks = sorted(int(k) for k in fields)
    out = np.zeros((len(ks), n_cells))
    for row, k in enumerate(ks):
        out[row, :k] = fields[k].values
    return out
