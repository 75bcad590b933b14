import numpy as np
import pytest
from scipy.special import erf

import krlx
from krlx import (ConvergenceError, DistributionField, PhaseGrid,
                  UnsupportedRegimeError, maxwellian, quadratic_potential,
                  solve_poisson_emden)
from krlx.equilibrium import _linear_free_space_solve, poisson_emden_residual
from krlx.fieldsolve import density, potential_from_density


def gaussian_exact_potential(r):
    """Closed-form free-space potential of the unit d=3 Gaussian density."""
    r = np.maximum(r, 1e-12)
    return erf(r / np.sqrt(2.0)) / (4.0 * np.pi * r)


class TestSolver:
    def test_eps_zero_single_iteration(self):
        g = PhaseGrid(1, 48, 32, 8.0, 8.0)
        eq = solve_poisson_emden(quadratic_potential(1), 0.0, g, tol=1e-9)
        assert eq.iters == 1
        # right-hand side independent of U: the state equals one linear solve
        w = np.exp(-0.5 * g.x**2)
        rho = w / (w.sum() * g.hx)
        direct = _linear_free_space_solve(rho, g.hx)
        assert np.max(np.abs(eq.U_inf.values - direct)) < 1e-14

    def test_d3_gaussian_closed_form(self):
        # eps0 = 0 with a quadratic confinement: the normalized density is the
        # unit Gaussian, whose potential is known in closed form.
        g = PhaseGrid(3, 32, 8, 8.5, 4.0)
        eq = solve_poisson_emden(quadratic_potential(3), 0.0, g)
        r = np.sqrt(g.spatial.radius_sq())
        exact = gaussian_exact_potential(np.broadcast_to(r, g.spatial.shape))
        assert np.max(np.abs(eq.U_inf.values - exact)) < 1e-4

    def test_d3_repulsive_positivity(self):
        g = PhaseGrid(3, 24, 8, 8.5, 4.0)
        eq = solve_poisson_emden(quadratic_potential(3), 0.05, g, tol=1e-8)
        assert eq.U_inf.values.min() >= -1e-10
        assert eq.residual < 10 * 1e-8

    def test_residual_certificate(self):
        g = PhaseGrid(1, 64, 32, 8.0, 8.0)
        tol = 1e-9
        eq = solve_poisson_emden(quadratic_potential(1), 0.05, g, tol=tol)
        assert eq.residual <= 10 * tol

    def test_attractive_d3_converges_small_mass(self):
        g = PhaseGrid(3, 24, 8, 8.5, 4.0)
        eq = solve_poisson_emden(quadratic_potential(3), -0.05, g, tol=1e-8)
        assert eq.iters < 50

    def test_d2_attractive_rejected(self):
        g = PhaseGrid(2, 16, 8, 8.0, 4.0)
        with pytest.raises(UnsupportedRegimeError):
            solve_poisson_emden(quadratic_potential(2), -0.05, g)

    def test_eps0_magnitude_validated(self):
        g = PhaseGrid(1, 16, 8, 8.0, 4.0)
        with pytest.raises(ValueError, match="eps0"):
            solve_poisson_emden(quadratic_potential(1), 1.5, g)

    def test_nonconvergence_carries_history(self):
        g = PhaseGrid(1, 32, 8, 8.0, 4.0)
        with pytest.raises(ConvergenceError) as ei:
            solve_poisson_emden(quadratic_potential(1), 0.3, g,
                                tol=1e-12, max_iters=1)
        assert ei.value.last_iterate is not None
        assert len(ei.value.history) == 1

    def test_contraction_iterations_monotone(self):
        g = PhaseGrid(1, 48, 16, 9.0, 4.0)
        iters = []
        for eps0 in (0.2, 0.1, 0.05):
            eq = solve_poisson_emden(quadratic_potential(1), eps0, g,
                                     tol=1e-10, theta=1.0)
            iters.append(eq.iters)
        assert iters[0] >= iters[1] >= iters[2]

    @pytest.mark.parametrize("nx", [24, 32])
    def test_lipschitz_factor_linear_in_eps(self, nx):
        # undamped map: late update ratios scale like C*eps0, C grid-stable
        g = PhaseGrid(3, nx, 8, 8.5, 4.0)
        for eps0 in (0.1, 0.05):
            eq = solve_poisson_emden(quadratic_potential(3), eps0, g,
                                     tol=1e-11, theta=1.0, max_iters=60)
            upds = [u for _, u, _ in eq.history]
            ratios = [b / a for a, b in zip(upds, upds[1:]) if a > 1e-13]
            assert ratios[-1] <= 3.0 * eps0

    def test_smoothness_proxy_uniform_in_eps(self):
        # derivative sup norms drift by < 5% across the coupling sweep
        g = PhaseGrid(3, 24, 8, 8.5, 4.0)
        sups = []
        for eps0 in (0.0, 0.05, 0.1):
            eq = solve_poisson_emden(quadratic_potential(3), eps0, g, tol=1e-9)
            U = eq.U_inf.values
            h = g.hx
            grads = np.stack(np.gradient(U, h))
            hess = [np.gradient(c, h, axis=i) for i, c in enumerate(grads)]
            sups.append((np.abs(grads).max(), np.abs(np.stack(hess)).max()))
        g1 = [s[0] for s in sups]
        g2 = [s[1] for s in sups]
        assert (max(g1) - min(g1)) / max(g1) < 0.05
        assert (max(g2) - min(g2)) / max(g2) < 0.05


class TestMaxwellian:
    def test_unit_mass(self, grid1d):
        M, Z = maxwellian(0.5 * grid1d.x**2, grid1d)
        assert M.mass == pytest.approx(1.0, abs=1e-13)
        assert Z > 0

    def test_gaussian_product_closed_form(self):
        g = PhaseGrid(2, 32, 32, 8.0, 8.0)
        xs = g.spatial.meshes()
        M, _ = maxwellian(0.5 * (xs[0] ** 2 + xs[1] ** 2), g)
        mesh = [g.broadcast_1d(g.x, k) for k in range(2)] + \
               [g.broadcast_1d(g.v, 2 + k) for k in range(2)]
        exact = np.exp(-sum(a**2 for a in mesh) / 2.0) / (2 * np.pi) ** 2
        exact = np.broadcast_to(exact, g.shape)
        rel = np.abs(M.values - exact) / exact.max()
        assert rel.max() < 1e-10

    def test_constant_shift_invariance(self, grid1d):
        M1, Z1 = maxwellian(0.5 * grid1d.x**2, grid1d)
        M2, Z2 = maxwellian(0.5 * grid1d.x**2 + 3.7, grid1d)
        assert np.max(np.abs(M1.values - M2.values)) < 1e-14
        assert Z2 == pytest.approx(Z1 * np.exp(-3.7), rel=1e-12)

    def test_nonfinite_rejected(self, grid1d):
        V = 0.5 * grid1d.x**2
        V[3] = np.inf
        with pytest.raises(ValueError, match="finite"):
            maxwellian(V, grid1d)


class TestInitialPotential:
    def test_requires_d3(self, grid1d, std_maxwellian):
        with pytest.raises(ValueError, match="d=3"):
            krlx.initial_potential(std_maxwellian)

    def test_matches_equilibrium_convolution(self):
        g = PhaseGrid(3, 24, 10, 8.5, 5.0)
        M, _ = maxwellian(0.5 * g.spatial.radius_sq(), g)
        U0, E0, rep = krlx.initial_potential(M)
        direct = potential_from_density(density(M))
        assert np.max(np.abs(U0.values - direct.values)) < 1e-12
        assert rep.sup_u >= rep.sup_grad * 0  # report fields populated
        assert np.isfinite(rep.sup_hess)

    def test_zero_datum(self):
        g = PhaseGrid(3, 16, 8, 6.0, 4.0)
        z = DistributionField(g, np.zeros(g.shape))
        U0, E0, rep = krlx.initial_potential(z)
        assert np.max(np.abs(U0.values)) == 0.0
        assert np.max(np.abs(E0.values)) == 0.0

    def test_negative_datum_rejected(self):
        g = PhaseGrid(3, 16, 8, 6.0, 4.0)
        bad = np.zeros(g.shape)
        bad[0, 0, 0, 0, 0, 0] = -1e-6
        with pytest.raises(ValueError, match="nonnegative"):
            krlx.initial_potential(DistributionField(g, bad))

    def test_newton_shell_oracle(self):
        # radial density: |dU/dr| = (mass inside r) / (4 pi r^2)
        g = PhaseGrid(3, 32, 8, 8.0, 4.0)
        xs = g.x_meshes()
        vs = g.v_meshes()
        vals = np.exp(-np.broadcast_to(sum(a**2 for a in xs), g.shape) / 1.5
                      - np.broadcast_to(sum(a**2 for a in vs), g.shape))
        f0 = DistributionField(g, vals)
        f0 = DistributionField(g, vals / f0.mass)
        U0, E0, _ = krlx.initial_potential(f0)
        rho = density(f0).values
        h = g.hx
        x = g.x
        mid = g.nx // 2
        # enclosed mass by radial quadrature of the grid density
        r_grid = np.sqrt(np.broadcast_to(g.spatial.radius_sq(), rho.shape))
        for i in (mid + 6, mid + 9, mid + 12):
            r = abs(x[i])
            m_in = float(rho[r_grid <= r].sum()) * h**3
            expected = m_in / (4 * np.pi * r**2)
            measured = abs(E0.values[0][i, mid, mid])
            assert measured == pytest.approx(expected, rel=0.08)
        # orientation: field points inward along +x for a centered blob
        assert E0.values[0][mid + 6, mid, mid] < 0
