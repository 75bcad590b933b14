import warnings

import numpy as np
import pytest

import krlx
from krlx import (DistributionField, PhaseGrid, WeightedOperatorSet, bnorm,
                  check_field_bounds, density, field_from_density,
                  h_alpha_norm, maxwellian)
from krlx.fields import SpatialField
from krlx.fieldsolve import potential_from_density
from krlx.phasecore import frac_norm, project_perp

from conftest import random_field


class TestDensity:
    def test_zero(self, grid1d):
        z = DistributionField(grid1d, np.zeros(grid1d.shape))
        assert np.max(np.abs(density(z).values)) == 0.0

    def test_mass_preserved(self, grid1d):
        f = random_field(grid1d, np.random.default_rng(0), smooth=True)
        f = DistributionField(grid1d, np.abs(f.values))
        rho = density(f)
        assert rho.values.sum() * grid1d.hx == pytest.approx(f.mass, rel=1e-13)

    def test_maxwellian_marginal_closed_form(self):
        # Gaussian v-marginal collapses to the spatial factor e^{-V}/int e^{-V}
        g = PhaseGrid(1, 128, 64, 8.0, 8.0)
        M, _ = maxwellian(0.5 * g.x**2, g)
        rho = density(M).values
        w = np.exp(-0.5 * g.x**2)
        exact = w / np.trapz(w, g.x)
        assert np.max(np.abs(rho - exact)) < 1e-8


class TestField:
    def test_zero_density(self, grid1d):
        rho = SpatialField(grid1d.spatial, np.zeros(grid1d.spatial.shape))
        E = field_from_density(rho, 1)
        assert np.max(np.abs(E.values)) == 0.0

    def test_dimension_mismatch(self, grid1d):
        rho = SpatialField(grid1d.spatial, np.zeros(grid1d.spatial.shape))
        with pytest.raises(ValueError, match="dimension"):
            field_from_density(rho, 3)

    def test_d3_radial_shell_orientation(self):
        g3 = krlx.SpatialGrid(3, 32, 8.0)
        r2 = g3.radius_sq()
        rho = SpatialField(g3, np.exp(-np.broadcast_to(r2, g3.shape) / 1.2))
        m = rho.values.sum() * g3.cell_volume
        E = field_from_density(rho, 3)
        mid = g3.nx // 2
        x = g3.x
        rgrid = np.sqrt(np.broadcast_to(r2, g3.shape))
        for i in (mid + 8, mid + 11):
            r = x[i]
            m_in = float(rho.values[rgrid <= r].sum()) * g3.cell_volume
            expected = -m_in / (4 * np.pi * r**2)
            assert E.values[0][i, mid, mid] == pytest.approx(expected, rel=0.08)

    def test_far_field_multipole(self):
        # |E| at 0.9 Lx within 5% of m / (|S^{d-1}| |x|^{d-1})
        g3 = krlx.SpatialGrid(3, 32, 8.0)
        r2 = np.broadcast_to(g3.radius_sq(), g3.shape)
        rho = SpatialField(g3, np.exp(-r2 / (2 * 0.8**2)))
        m = rho.values.sum() * g3.cell_volume
        E = field_from_density(rho, 3)
        x = g3.x
        i = int(np.argmin(np.abs(x - 0.9 * g3.Lx)))
        mid = g3.nx // 2
        expected = m / (4 * np.pi * x[i] ** 2)
        measured = abs(E.values[0][i, mid, mid])
        assert measured == pytest.approx(expected, rel=0.05)

    def test_point_symmetric_antisymmetry(self):
        g = krlx.SpatialGrid(1, 128, 8.0)
        rho = SpatialField(g, np.exp(-g.x**2))
        E = field_from_density(rho, 1).values[0]
        assert np.max(np.abs(E + E[::-1])) < 1e-10

    @pytest.mark.parametrize("d,nlist", [(1, (64, 128)), (2, (24, 48))])
    def test_divergence_consistency(self, d, nlist):
        # -div E reproduces rho in the interior at second order
        errs = []
        for n in nlist:
            g = krlx.SpatialGrid(d, n, 8.0)
            r2 = np.broadcast_to(g.radius_sq(), g.shape)
            rho = np.exp(-r2 / 1.5)
            E = field_from_density(SpatialField(g, rho), d).values
            div = np.zeros(g.shape)
            for ax in range(d):
                Em = np.moveaxis(E[ax], ax, 0)
                dm = np.moveaxis(div, ax, 0)
                dm[1:-1] += (Em[2:] - Em[:-2]) / (2 * g.hx)
            core = tuple([slice(2, -2)] * d)
            errs.append(np.max(np.abs((-div - rho)[core])))
        assert errs[0] / errs[1] > 2.5   # second-order interior convergence

    def test_potential_field_consistency(self):
        g = krlx.SpatialGrid(1, 96, 8.0)
        rho = SpatialField(g, np.exp(-g.x**2))
        U = potential_from_density(rho)
        E = field_from_density(rho, 1)
        dU = np.gradient(U.values, g.hx)
        assert np.max(np.abs(dU[2:-2] - E.values[0][2:-2])) < 1e-3


class TestHalphaAndBounds:
    def test_h0_is_l2(self):
        g = krlx.SpatialGrid(1, 64, 8.0)
        rho = SpatialField(g, np.exp(-g.x**2))
        l2 = np.sqrt((rho.values**2).sum() * g.hx)
        assert h_alpha_norm(rho, 0.0) == pytest.approx(l2, rel=1e-10)

    def test_monotone_in_alpha(self):
        g = krlx.SpatialGrid(1, 64, 8.0)
        rho = SpatialField(g, np.exp(-g.x**2) * np.sin(2 * g.x))
        vals = [h_alpha_norm(rho, a) for a in (0.0, 0.5, 1.0)]
        assert vals[0] < vals[1] < vals[2]

    def test_marginal_bound_ratios_stable(self):
        # ||int h dv||_{H^alpha} / ||h||_{B^alpha} bounded, 2x-stable under
        # refinement, for alpha in {0, 1/2, 1}
        rng = np.random.default_rng(1)
        for alpha in (0.0, 0.5, 1.0):
            ratios = {}
            for nx in (32, 64):
                g = PhaseGrid(1, nx, nx, 8.0, 8.0)
                M, _ = maxwellian(0.5 * g.x**2, g)
                ops = WeightedOperatorSet(M)
                rs = []
                for _ in range(6):
                    h = random_field(g, rng, smooth=True)
                    denom = frac_norm(h, alpha, alpha, ops)
                    rs.append(h_alpha_norm(density(h), alpha) / denom)
                ratios[nx] = max(rs)
            assert np.isfinite(ratios[64])
            assert ratios[64] < 2.0 * ratios[32] + 1e-12

    def test_check_field_bounds_report(self, grid1d, std_maxwellian, ops1d):
        rng = np.random.default_rng(2)
        samples = [random_field(grid1d, rng, smooth=True) for _ in range(8)]
        rep = check_field_bounds(samples, 1, eps=0.25, ops=ops1d)
        assert np.isfinite(rep.max_ratio)
        assert rep.max_ratio_refined < 2.0 * rep.max_ratio
        assert rep.skipped == 0

    def test_zero_sample_skipped(self, grid1d, std_maxwellian, ops1d):
        z = DistributionField(grid1d, np.zeros(grid1d.shape))
        good = random_field(grid1d, np.random.default_rng(3), smooth=True)
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            rep = check_field_bounds([z, good], 1, eps=0.25, ops=ops1d)
        assert rep.skipped == 1
        assert any("skipped" in str(w.message) for w in rec)

    def test_eps_validation(self, grid1d, ops1d):
        f = random_field(grid1d, np.random.default_rng(4))
        with pytest.raises(ValueError, match="eps"):
            check_field_bounds([f], 1, eps=0.7, ops=ops1d)

    def test_propagated_field_decay_bounded(self, std_maxwellian):
        # e^{+kappa t} ||E0(t)||_inf stays bounded on [1, 5] for zero-mass data
        g = krlx.PhaseGrid(1, 48, 48, 8.0, 8.0)
        M, _ = maxwellian(0.5 * g.x**2, g)
        from krlx.semigroup import KineticPropagator, gaussian_packet
        x = g.x
        prop = KineticPropagator(g, 0.5 * x**2, -np.stack([x]), limiter=False)
        f0 = project_perp(gaussian_packet(g, x0=1.0, v0=-0.5), M)
        ts = np.linspace(1.0, 5.0, 9)
        snaps = prop.run(f0.values, ts, prop.suggest_dt())
        kappa = 0.5
        vals = []
        for t, fv in snaps:
            E = field_from_density(density(DistributionField(g, fv)), 1)
            vals.append(np.exp(kappa * t) * E.sup)
        assert max(vals) <= 3.0 * vals[0]


class TestShortTimeFieldCheck:
    def test_requires_d3(self, grid1d, std_maxwellian):
        with pytest.raises(ValueError, match="d=3"):
            krlx.short_time_field_check(std_maxwellian, 0.55, 0.05,
                                        lambda f, ts: [f for _ in ts])

    def test_a_range(self):
        g = PhaseGrid(3, 8, 8, 4.0, 4.0)
        M, _ = maxwellian(0.5 * np.broadcast_to(g.spatial.radius_sq(),
                                                g.spatial.shape), g)
        with pytest.raises(ValueError, match="a must"):
            krlx.short_time_field_check(M, 0.9, 0.05,
                                        lambda f, ts: [f for _ in ts])

    def test_stationary_datum_degenerate(self):
        # e^{-tK0} M = M: S0 vanishes identically and the fit degenerates
        g = PhaseGrid(3, 8, 8, 4.0, 4.0)
        M, _ = maxwellian(0.5 * np.broadcast_to(g.spatial.radius_sq(),
                                                g.spatial.shape), g)
        with pytest.raises(ValueError, match="degenerate"):
            krlx.short_time_field_check(M, 0.55, 0.05,
                                        lambda f, ts: [f for _ in ts])

    def test_rough_datum_slope(self):
        # coarse smoke: slope positive and above the acceptance threshold
        g = PhaseGrid(3, 10, 10, 4.5, 4.5)
        Ve = krlx.quadratic_potential(3)
        eps0 = 0.05
        xs = g.x_meshes()
        vs = g.v_meshes()
        vals = np.broadcast_to(
            np.exp(-sum(a**2 for a in xs) / 2.0)
            * (sum(a**2 for a in vs) < 1.6**2), g.shape).astype(float)
        f0 = DistributionField(g, vals)
        f0 = DistributionField(g, vals / f0.mass)
        U0, E0, _ = krlx.initial_potential(f0)
        from krlx.semigroup import KineticPropagator
        V0 = Ve.on_grid(g.spatial) + eps0 * U0.values
        G0 = -(Ve.grad_on_grid(g.spatial) + eps0 * E0.values)
        prop = KineticPropagator(g, V0, G0, balance_force=G0)
        dt = prop.suggest_dt()

        def propagate(f, ts):
            return [DistributionField(g, v) for _, v in prop.run(f.values, ts, dt)]

        rep = krlx.short_time_field_check(f0, 0.55, 0.05, propagate,
                                          t_grid=np.geomspace(1e-3, 1.0, 6))
        assert rep.fit.slope >= rep.target - 0.15
        assert rep.fit.slope > 0
