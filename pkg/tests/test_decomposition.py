import numpy as np
import pytest

from mfbm.exceptions import NumericalError
from mfbm.quadrature import Alpha, Grid
from mfbm.kernel_solve import SweepSolver
from mfbm.gaussian_paths import SamplePath, restrict, simulate
from mfbm.decomposition import compute_innovation, compute_phi, decompose, field_matrix


def _flat_path(grid, values):
    values = np.asarray(values, dtype=float)
    zeros = np.zeros_like(values)
    return SamplePath(grid=grid, h=0.85, seed=0, fbm=values, bm=zeros, mixed=values)


@pytest.fixture(scope="module")
def sweep_h1():
    return SweepSolver(Grid(1.0, 512), Alpha(0.0))


class TestDriftDerivative:
    def test_zero_path_gives_zero(self, sweep_h1):
        grid = sweep_h1.grid
        path = _flat_path(grid, np.zeros(grid.cells + 1))
        fields = sweep_h1.L_sweep([128, 256, 512])
        drift = compute_phi(path, fields)
        assert np.all(drift.phi == 0.0)
        assert drift.s_subset[0] == 0 and drift.phi[0] == 0.0

    def test_constant_kernel_closed_form(self, sweep_h1):
        grid = sweep_h1.grid
        path = simulate(grid, 1.0, 321)
        indices = list(range(8, 513, 8))
        drift = compute_phi(path, sweep_h1.L_sweep(indices))
        times = drift.times
        expected = -path.mixed[drift.s_subset] / (1.0 + times)
        assert np.max(np.abs(drift.phi - expected)) <= 1e-8 * np.max(np.abs(path.mixed))

    def test_exactly_linear_in_the_path(self, sweep_h1):
        grid = sweep_h1.grid
        rng = np.random.default_rng(0)
        x1 = np.concatenate([[0.0], np.cumsum(rng.standard_normal(grid.cells))])
        x2 = np.concatenate([[0.0], np.cumsum(rng.standard_normal(grid.cells))])
        fields = sweep_h1.L_sweep([256, 512])
        phi1 = compute_phi(_flat_path(grid, x1), fields).phi
        phi2 = compute_phi(_flat_path(grid, x2), fields).phi
        phi12 = compute_phi(_flat_path(grid, 2.0 * x1 + x2), fields).phi
        combined = 2.0 * phi1 + phi2
        scale = np.max(np.abs(combined))
        assert np.max(np.abs(phi12 - combined)) <= 1e-12 * scale

    def test_missing_field_rejected(self, sweep_h1):
        grid = sweep_h1.grid
        path = simulate(grid, 1.0, 1)
        with pytest.raises(ValueError):
            compute_phi(path, {})


class TestInnovation:
    def test_deterministic_ramp_refines_to_zero_residual(self):
        # smooth input X_t = t: all outputs finite, residual vanishes under
        # refinement
        residuals = []
        for n in (128, 512):
            grid = Grid(1.0, n)
            path = _flat_path(grid, grid.nodes.copy())
            drift, innovation = decompose(path, decimation=1)
            assert np.all(np.isfinite(innovation.bbar))
            residuals.append(float(np.max(np.abs(innovation.residual))))
        assert residuals[1] < residuals[0]
        assert residuals[1] <= 0.02

    def test_constant_kernel_reconstruction(self):
        grid = Grid(1.0, 1024)
        path = simulate(grid, 1.0, 2024)
        _, innovation = decompose(path, decimation=1)
        max_res = np.max(np.abs(innovation.residual))
        assert max_res <= 0.02 * np.max(np.abs(path.mixed))

    def test_residual_decreases_with_refinement(self):
        fine = simulate(Grid(1.0, 1024), 0.85, 11)
        coarse = restrict(fine, 2)
        _, inn_coarse = decompose(coarse, decimation=1)
        _, inn_fine = decompose(fine, decimation=1)
        res_coarse = np.max(np.abs(inn_coarse.residual))
        res_fine = np.max(np.abs(inn_fine.residual))
        assert res_fine < res_coarse
        assert res_fine <= 0.05 * np.max(np.abs(fine.mixed))

    def test_quadratic_variation_near_t(self):
        path = simulate(Grid(1.0, 1024), 0.85, 3)
        _, innovation = decompose(path, decimation=1)
        qv = float(np.sum(np.diff(innovation.bbar) ** 2))
        assert abs(qv - 1.0) <= 0.10

    def test_nonpositive_diagonal_flagged(self):
        grid = Grid(1.0, 128)
        sweep = SweepSolver(grid, Alpha.from_h(0.85))
        path = simulate(grid, 0.85, 0)
        g_fields = sweep.g_sweep([64, 128])
        with pytest.raises(NumericalError):
            compute_innovation(path, g_fields, g_diagonal={64: -0.1, 128: 0.5})

    def test_subset_mismatch_rejected(self):
        grid = Grid(1.0, 128)
        alpha = Alpha.from_h(0.85)
        sweep = SweepSolver(grid, alpha)
        path = simulate(grid, 0.85, 0)
        drift = compute_phi(path, sweep.L_sweep([64, 128]))
        with pytest.raises(ValueError):
            compute_innovation(path, sweep.g_sweep([128]), drift=drift)

    def test_decimation_must_divide(self):
        path = simulate(Grid(1.0, 128), 0.85, 0)
        with pytest.raises(ValueError):
            decompose(path, decimation=3)


class TestFieldMatrix:
    def test_layout(self):
        grid = Grid(1.0, 64)
        sweep = SweepSolver(grid, Alpha.from_h(0.85))
        fields = sweep.L_sweep([16, 64])
        mat = field_matrix(fields, 64)
        assert mat.shape == (2, 64)
        assert np.array_equal(mat[0, :16], fields[16].values)
        assert np.all(mat[0, 16:] == 0.0)
        assert np.array_equal(mat[1], fields[64].values)
