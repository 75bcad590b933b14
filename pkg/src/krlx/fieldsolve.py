"""Velocity marginals, the self-consistent field and field-bound checks.

The field of a density is E = grad(G_d * rho), i.e. the gradient of the
free-space potential, which orients E inward for a positive density: with
repulsive coupling the resulting force pushes particles apart.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .fields import DistributionField, SpatialField
from .fitting import FitResult, fit_loglog
from .greens import free_space_potential, gradient_from_padded
from .grids import PhaseGrid
from .phasecore import CapabilityError, WeightedOperatorSet, bnorm

SPHERE_AREA = {1: 2.0, 2: 2.0 * np.pi, 3: 4.0 * np.pi}


def density(f: DistributionField) -> SpatialField:
    """Velocity marginal rho(x) = int f dv (midpoint quadrature)."""
    g = f.grid
    v_axes = tuple(range(g.d, 2 * g.d))
    rho = f.values.sum(axis=v_axes) * g.hv**g.d
    return SpatialField(g.spatial, rho)


def field_from_density(rho: SpatialField, d: int) -> SpatialField:
    """Self-consistent field E = grad(G_d * rho) of a charge density."""
    if d != rho.grid.d:
        raise ValueError(f"dimension mismatch: d={d} but density grid has d={rho.grid.d}")
    Upad = free_space_potential(rho.values, rho.grid.hx, ghost=1)
    E = gradient_from_padded(Upad, rho.grid.hx, ghost=1)
    return SpatialField(rho.grid, E)


def potential_from_density(rho: SpatialField) -> SpatialField:
    """Free-space potential U with -Lap U = rho (fourth-order convolution)."""
    Upad = free_space_potential(rho.values, rho.grid.hx, ghost=0)
    return SpatialField(rho.grid, Upad)


# ---------------------------------------------------------------------------
# spatial Sobolev norms (zero extension outside the box)

def h_alpha_norm(rho: SpatialField, alpha: float) -> float:
    """Discrete H^alpha norm via the sine-spectral calculus of (1 - Lap)."""
    g = rho.grid
    n, h = g.nx, g.hx
    k = np.arange(1, n + 1)
    lam1 = (2.0 - 2.0 * np.cos(np.pi * k / (n + 1))) / (h * h)
    lams = np.meshgrid(*([lam1] * g.d), indexing="ij", sparse=True)
    sym = 1.0 + sum(lams)
    c = sfft.dstn(rho.values, type=1, norm="ortho")
    return float(np.sqrt(np.sum(sym**alpha * c * c) * g.cell_volume))


# ---------------------------------------------------------------------------
# field bounds

@dataclass(frozen=True)
class FieldBoundReport:
    exponent: float
    ratios: tuple
    ratios_refined: tuple
    max_ratio: float
    min_ratio: float
    max_ratio_refined: float
    skipped: int


def _refine_field(f: DistributionField) -> DistributionField:
    """Halve every cell (piecewise-constant injection)."""
    g = f.grid
    vals = f.values
    for ax in range(2 * g.d):
        vals = np.repeat(vals, 2, axis=ax)
    g2 = PhaseGrid(g.d, 2 * g.nx, 2 * g.nv, g.Lx, g.Lv)
    return DistributionField(g2, vals)


def check_field_bounds(samples: Sequence[DistributionField], d: int, eps: float,
                       ops: WeightedOperatorSet) -> FieldBoundReport:
    """Ratio check ||E0||_inf / ||h0||_{B^s}, s = 1/2+eps (d=3) or eps (d<=2).

    Reports the ratio family over the samples and over one piecewise-constant
    grid refinement; boundedness under refinement is the meaningful signal
    since on a fixed grid all norms are equivalent.
    """
    if not samples:
        raise ValueError("samples must be nonempty")
    if not 0 < eps <= 0.5:
        raise ValueError(f"eps must lie in (0, 1/2], got {eps}")
    s = 0.5 + eps if d == 3 else eps

    def ratios_for(flds, opset):
        out = []
        skipped = 0
        for h0 in flds:
            denom = opset.frac_norm_part(h0, "full", s)
            if denom <= 1e-300:
                warnings.warn("zero-norm sample skipped in check_field_bounds")
                skipped += 1
                continue
            E0 = field_from_density(density(h0), d)
            out.append(E0.sup / denom)
        return out, skipped

    ratios, skipped = ratios_for(samples, ops)
    M2 = _refine_field(ops.M)
    M2 = DistributionField(M2.grid, M2.values / M2.mass)
    ops2 = WeightedOperatorSet(M2)
    ratios2, _ = ratios_for([_refine_field(h0) for h0 in samples], ops2)
    if not ratios:
        raise ValueError("all samples had zero norm")
    return FieldBoundReport(
        exponent=s,
        ratios=tuple(ratios),
        ratios_refined=tuple(ratios2),
        max_ratio=max(ratios),
        min_ratio=min(ratios),
        max_ratio_refined=max(ratios2) if ratios2 else np.nan,
        skipped=skipped,
    )


# ---------------------------------------------------------------------------
# short-time field growth of the propagated initial datum

@dataclass(frozen=True)
class ExponentReport:
    times: tuple
    sup_values: tuple
    fit: FitResult
    target: float
    frac_norm_f0: Optional[float]


def short_time_field_check(f0: DistributionField, a: float, eps: float,
                           propagate: Callable, t_grid=None,
                           ops: Optional[WeightedOperatorSet] = None) -> ExponentReport:
    """Fit the small-time growth exponent of S0(t) = (x/|x|^3) * rho of
    (e^{-tK0}-1) f0 against the target a/3 - eps.

    `propagate` maps (f0, times) to the list of propagated fields.  When an
    operator set is supplied (grids small enough for fractional calculus)
    the B^a membership of f0 is recorded; otherwise the check is skipped.
    """
    g = f0.grid
    if g.d != 3:
        raise ValueError("short_time_field_check requires d=3")
    if not 0.5 < a < 0.75:
        raise ValueError(f"a must lie in (1/2, 3/4), got {a}")
    if t_grid is None:
        t_grid = np.geomspace(1e-3, 1.0, 8)
    t_grid = np.asarray(t_grid, dtype=float)

    frac_f0 = None
    if ops is not None:
        try:
            frac_f0 = ops.frac_norm_part(f0, "full", a)
        except CapabilityError:
            frac_f0 = None
    snapshots = propagate(f0, t_grid)
    sup_vals = []
    area = SPHERE_AREA[3]
    for ft in snapshots:
        diff = DistributionField(g, ft.values - f0.values)
        E = field_from_density(density(diff), 3)
        sup_vals.append(area * E.sup)
    fit = fit_loglog(t_grid, np.asarray(sup_vals), floor=1e-14)
    if fit.degenerate:
        raise ValueError("degenerate fit: fewer than 4 usable points")
    return ExponentReport(
        times=tuple(t_grid),
        sup_values=tuple(sup_vals),
        fit=fit,
        target=a / 3.0 - eps,
        frac_norm_f0=frac_f0,
    )
