"""Nystrom solution of the second-kind integral equations on [0, s].

All four equation families share one discretization: piecewise-constant
densities on grid cells, collocation at cell midpoints, and the exact
kernel moments from :mod:`mfbm.quadrature`.  For upper limit t_k the
collocation matrix is I + coeff * W[:k, :k], the leading block of a single
full-grid matrix, which `SweepSolver` exploits to serve whole families of
upper limits from one factorization.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.linalg as sla

from .exceptions import NumericalError
from .quadrature import Alpha, Grid, WeightMatrix, build_weight_matrix, edge_fit, power_moment, riesz_moment

__all__ = [
    "KernelField",
    "SweepSolver",
    "solve_q",
    "solve_L",
    "solve_g",
    "solve_D",
    "nystrom_eval",
    "check_L_from_g",
]

#: Max-norm residual bound for the linear solve, relative to the rhs scale.
RESIDUAL_TOL = 1e-10


@dataclass
class KernelField:
    """Solution values of one integral equation at the midpoints of [0, t_k].

    kind is 'L' (drift kernel), 'G' (martingale kernel, rhs 1), 'D'
    (difference of two L kernels, aux = the second upper index) or 'Q'
    (generic right-hand side).
    """

    kind: str
    alpha: Alpha
    grid: Grid
    s_index: int
    values: np.ndarray
    aux: Optional[int] = None
    rhs: Optional[Callable] = dataclass_field(default=None, repr=False, compare=False)

    @property
    def upper_limit(self) -> float:
        return float(self.grid.nodes[self.s_index])

    @property
    def midpoints(self) -> np.ndarray:
        return self.grid.midpoints[: self.s_index]


def _solve_dense(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """LU with partial pivoting, one step of iterative refinement if needed."""
    try:
        lu, piv = sla.lu_factor(matrix, check_finite=False)
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericalError(f"collocation matrix factorization failed: {exc}") from exc
    x = sla.lu_solve((lu, piv), rhs, check_finite=False)
    scale = max(1.0, float(np.max(np.abs(rhs))) if rhs.size else 1.0)
    residual = rhs - matrix @ x
    if np.max(np.abs(residual)) > RESIDUAL_TOL * scale:
        x = x + sla.lu_solve((lu, piv), residual, check_finite=False)
        residual = rhs - matrix @ x
        if np.max(np.abs(residual)) > RESIDUAL_TOL * scale:
            raise NumericalError(
                f"linear solve residual {np.max(np.abs(residual)):.3e} "
                f"exceeds tolerance after refinement"
            )
    return x


def solve_q(
    grid: Grid,
    alpha: Alpha,
    s_index: int,
    rhs: Callable,
    weights: Optional[WeightMatrix] = None,
    kind: str = "Q",
    aux: Optional[int] = None,
) -> KernelField:
    """Solve Q(r) + coeff * int_0^s Q(tau) |r - tau|**(-a) dtau = rhs(r).

    `rhs` must accept an array of midpoints and return finite values there.
    The result carries `rhs` so the solution can be re-evaluated off-grid
    through the equation itself (see :func:`nystrom_eval`).
    """
    k = int(s_index)
    if not 1 <= k <= grid.cells:
        raise ValueError(f"s_index must be in [1, {grid.cells}], got {k}")
    if weights is None:
        weights = build_weight_matrix(grid, alpha)
    mids = grid.midpoints[:k]
    f = np.broadcast_to(np.asarray(rhs(mids), dtype=float), (k,)).copy()
    if not np.all(np.isfinite(f)):
        raise ValueError("rhs must be finite at all collocation midpoints")
    matrix = np.eye(k) + alpha.coeff * weights.entries[:k, :k]
    x = _solve_dense(matrix, f)
    return KernelField(kind=kind, alpha=alpha, grid=grid, s_index=k, values=x, aux=aux, rhs=rhs)


def _l_rhs(alpha: Alpha, s: float) -> Callable:
    def rhs(r):
        return -alpha.coeff * np.abs(s - np.asarray(r, dtype=float)) ** (-alpha.value)

    return rhs


def solve_L(grid: Grid, alpha: Alpha, s_index: int, weights: Optional[WeightMatrix] = None) -> KernelField:
    """Drift kernel on [0, t_k]: rhs(r) = -coeff * (s - r)**(-a).

    At a = 0 the solution is the constant -1/(1 + s), used as oracle.
    """
    s = float(grid.nodes[int(s_index)])
    return solve_q(grid, alpha, s_index, _l_rhs(alpha, s), weights=weights, kind="L")


def solve_g(grid: Grid, alpha: Alpha, t_index: int, weights: Optional[WeightMatrix] = None) -> KernelField:
    """Martingale kernel on [0, t_k]: rhs identically 1 (constant 1/(1+t) at a=0)."""

    def rhs(r):
        return np.ones_like(np.asarray(r, dtype=float))

    return solve_q(grid, alpha, t_index, rhs, weights=weights, kind="G")


def _tail_integral(L_t: KernelField, s_index: int, r):
    """Product integration of int_s^t L(tau, t) |r - tau|**(-a) dtau for r <= s.

    The density blows up like (t - tau)**(-a) at tau = t, so the last two
    cells use the fitted edge model: its singular part is integrated
    exactly against (t - tau)**(-a) with the smooth factor frozen at the
    cell midpoint, its constant part against the exact kernel moment.
    """
    grid, alpha = L_t.grid, L_t.alpha
    ks, kt = int(s_index), L_t.s_index
    t_node = L_t.upper_limit
    scalar = np.asarray(r).ndim == 0
    r_arr = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.zeros(r_arr.shape)
    n_edge = min(2, kt - ks)
    interior = np.arange(ks, kt - n_edge)
    if interior.size:
        mom = riesz_moment(
            grid.nodes[None, interior], grid.nodes[None, interior + 1], r_arr[:, None], alpha
        )
        out += mom @ L_t.values[interior]
    edge_cells = np.arange(kt - n_edge, kt)
    c, d = edge_fit(L_t.values[edge_cells], alpha.value, grid.h)
    for j in edge_cells:
        a, b = grid.nodes[j], grid.nodes[j + 1]
        kernel_mid = np.abs(grid.midpoints[j] - r_arr) ** (-alpha.value)
        out += c * kernel_mid * power_moment(a, b, t_node, alpha.value)
        out += d * riesz_moment(a, b, r_arr, alpha)
    return float(out[0]) if scalar else out


def solve_D(
    grid: Grid,
    alpha: Alpha,
    s_index: int,
    t_index: int,
    weights: Optional[WeightMatrix] = None,
    L_t: Optional[KernelField] = None,
) -> KernelField:
    """Difference kernel D(., s) = L(., t) - L(., s) solved on [0, s].

    Right-hand side: coeff * ((s-r)**(-a) - (t-r)**(-a)) minus the kernel
    integral of L(., t) over [s, t].  s_index == t_index returns the zero
    field (the two equations coincide).
    """
    ks, kt = int(s_index), int(t_index)
    if ks > kt:
        raise ValueError(f"need s_index <= t_index, got {ks} > {kt}")
    if ks == kt:
        return KernelField(
            kind="D", alpha=alpha, grid=grid, s_index=ks,
            values=np.zeros(ks), aux=kt, rhs=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        )
    if weights is None:
        weights = build_weight_matrix(grid, alpha)
    if L_t is None:
        L_t = solve_L(grid, alpha, kt, weights=weights)
    elif L_t.s_index != kt:
        raise ValueError("L_t field does not match t_index")
    s = float(grid.nodes[ks])
    t = float(grid.nodes[kt])

    def rhs(r):
        r = np.asarray(r, dtype=float)
        direct = alpha.coeff * ((s - r) ** (-alpha.value) - (t - r) ** (-alpha.value))
        return direct - alpha.coeff * _tail_integral(L_t, ks, r)

    return solve_q(grid, alpha, ks, rhs, weights=weights, kind="D", aux=kt)


def nystrom_eval(field: KernelField, r: float) -> float:
    """Evaluate the solved equation at an off-grid point r in [0, s].

    Uses exact kernel moments centered at r against the midpoint values:
    Q(r) = rhs(r) - coeff * sum_j Q_j * int_cell_j |r - tau|**(-a).
    Rejects points where the right-hand side is singular (r = s for the
    drift kernel with a > 0).
    """
    grid, alpha, k = field.grid, field.alpha, field.s_index
    s = field.upper_limit
    if not 0.0 <= r <= s + 1e-12 * max(s, 1.0):
        raise ValueError(f"evaluation point {r} outside [0, {s}]")
    if field.rhs is None:
        raise ValueError("field carries no right-hand side; cannot interpolate")
    if field.kind == "L" and alpha.value > 0.0 and s - r <= 1e-12 * max(s, 1.0):
        raise ValueError("drift-kernel rhs is singular at r = s")
    row = riesz_moment(grid.nodes[:k], grid.nodes[1 : k + 1], r, alpha)
    f_r = float(np.asarray(field.rhs(np.asarray(r, dtype=float))))
    return f_r - alpha.coeff * float(row @ field.values)


class SweepSolver:
    """Solve families of upper limits against one shared factorization.

    The symmetrized full-grid matrix is positive definite for this kernel
    family, and the Cholesky factor of a leading block is the leading block
    of the full Cholesky factor.  Zero-padding the right-hand sides lets a
    whole family of upper limits run as two full-size triangular solves
    (padding stays zero through back substitution), so a sweep costs one
    factorization plus level-3 solves.  Residuals are checked per column
    against the literal (unsymmetrized) blocks; failures fall back to an
    independent dense solve per index.
    """

    def __init__(self, grid: Grid, alpha: Alpha, weights: Optional[WeightMatrix] = None):
        self.grid = grid
        self.alpha = alpha
        self.weights = weights if weights is not None else build_weight_matrix(grid, alpha)
        entries = self.weights.entries
        full = np.eye(grid.cells) + alpha.coeff * 0.5 * (entries + entries.T)
        try:
            self._chol = sla.cholesky(full, lower=False, check_finite=False)
        except sla.LinAlgError:
            self._chol = None
        self._node_moments = None

    def solve_columns(self, indices, rhs_columns: np.ndarray) -> np.ndarray:
        """Solve the leading-block system for every index at once.

        `rhs_columns` has shape (cells, len(indices)); column j must be
        zero at and beyond indices[j].  Returns the solutions in the same
        zero-padded layout.
        """
        indices = np.asarray(list(indices), dtype=int)
        f = np.asarray(rhs_columns, dtype=float)
        n = self.grid.cells
        valid = np.arange(n)[:, None] < indices[None, :]
        scale = np.maximum(1.0, np.max(np.abs(f), axis=0))
        if self._chol is not None:
            z = sla.solve_triangular(self._chol, f, trans="T", lower=False, check_finite=False)
            z *= valid
            x = sla.solve_triangular(self._chol, z, trans="N", lower=False, check_finite=False)
            x *= valid
            residual = np.where(valid, f - x - self.alpha.coeff * (self.weights.entries @ x), 0.0)
            bad = np.max(np.abs(residual), axis=0) > RESIDUAL_TOL * scale
        else:
            x = np.zeros_like(f)
            bad = np.ones(len(indices), dtype=bool)
        for j in np.nonzero(bad)[0]:
            k = indices[j]
            matrix = np.eye(k) + self.alpha.coeff * self.weights.entries[:k, :k]
            x[:k, j] = _solve_dense(matrix, f[:k, j])
        return x

    def solve_values(self, s_index: int, rhs_values: np.ndarray) -> np.ndarray:
        k = int(s_index)
        padded = np.zeros((self.grid.cells, 1))
        padded[:k, 0] = np.asarray(rhs_values, dtype=float)
        return self.solve_columns([k], padded)[:k, 0]

    def L_field(self, s_index: int) -> KernelField:
        return self.L_sweep([s_index])[int(s_index)]

    def g_field(self, t_index: int) -> KernelField:
        return self.g_sweep([t_index])[int(t_index)]

    def _fields_from_columns(self, kind, indices, columns, rhs_for) -> dict:
        out = {}
        for j, k in enumerate(indices):
            out[k] = KernelField(
                kind=kind, alpha=self.alpha, grid=self.grid, s_index=k,
                values=columns[:k, j].copy(), rhs=rhs_for(k),
            )
        return out

    def L_sweep(self, indices: Iterable[int], threads=None) -> dict:
        indices = [int(i) for i in indices]
        n = self.grid.cells
        mids = self.grid.midpoints
        rhs_fns = {k: _l_rhs(self.alpha, float(self.grid.nodes[k])) for k in indices}
        f = np.zeros((n, len(indices)))
        for j, k in enumerate(indices):
            f[:k, j] = rhs_fns[k](mids[:k])
        x = self.solve_columns(indices, f)
        return self._fields_from_columns("L", indices, x, rhs_fns.__getitem__)

    def g_sweep(self, indices: Iterable[int], threads=None) -> dict:
        indices = [int(i) for i in indices]
        n = self.grid.cells
        f = np.zeros((n, len(indices)))
        for j, k in enumerate(indices):
            f[:k, j] = 1.0

        def rhs_for(_k):
            def rhs(r):
                return np.ones_like(np.asarray(r, dtype=float))

            return rhs

        x = self.solve_columns(indices, f)
        return self._fields_from_columns("G", indices, x, rhs_for)

    def g_diagonal(self, g_fields: dict) -> dict:
        """Endpoint values g(t_k, t_k) by Nystrom interpolation, per index."""
        if self._node_moments is None:
            nodes = self.grid.nodes
            self._node_moments = riesz_moment(
                nodes[None, :-1], nodes[None, 1:], nodes[1:, None], self.alpha
            )
        out = {}
        for k, fld in g_fields.items():
            row = self._node_moments[k - 1, :k]
            out[k] = 1.0 - self.alpha.coeff * float(row @ fld.values)
        return out


def check_L_from_g(
    grid: Grid,
    alpha: Alpha,
    s_index: int,
    dt: float,
    weights: Optional[WeightMatrix] = None,
) -> float:
    """Max relative mismatch between the drift kernel and its defining identity.

    The drift kernel equals the upper-limit derivative of the martingale
    kernel scaled by its diagonal value; this compares solve_L against the
    central finite difference (g(r, s+dt) - g(r, s-dt)) / (2 dt g(s, s))
    on interior midpoints r <= 0.9 s.
    """
    k = int(s_index)
    step = int(round(dt / grid.h))
    if step < 1 or abs(step * grid.h - dt) > 1e-9 * grid.h:
        raise ValueError(f"dt={dt} is not a positive multiple of the grid spacing")
    if k - step < 1 or k + step > grid.cells:
        raise ValueError("dt pushes the shifted upper limits off the grid")
    if weights is None:
        weights = build_weight_matrix(grid, alpha)
    solver = SweepSolver(grid, alpha, weights=weights)
    g_plus = solver.g_field(k + step)
    g_minus = solver.g_field(k - step)
    g_mid = solver.g_field(k)
    l_ref = solver.L_field(k)
    s = float(grid.nodes[k])
    g_ss = nystrom_eval(g_mid, s)
    if g_ss <= 0.0:
        raise NumericalError(f"g(s, s) = {g_ss} is not positive")
    n_keep = np.searchsorted(grid.midpoints[: k - step], 0.9 * s, side="right")
    fd = (g_plus.values[:n_keep] - g_minus.values[:n_keep]) / (2.0 * step * grid.h * g_ss)
    ref = l_ref.values[:n_keep]
    return float(np.max(np.abs(fd - ref) / np.abs(ref)))
