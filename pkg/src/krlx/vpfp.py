"""Nonlinear Vlasov-Poisson-Fokker-Planck runs and the Duhamel fixed point.

vpfp_run advances the self-consistent system with a predictor-corrector
field coupling on top of the Strang stepper; the face weights are balanced
around the discrete equilibrium force, so the computed Maxwellian is an
exact fixed point of the discrete nonlinear update.

picard_iterate mirrors the contraction-map construction used to build mild
solutions: the solution is split as f = M + e^{-tK}g0 + h with a derived
field split E = E_eq + F0 + G, and the pair (h, G) is iterated through the
Duhamel integral with exponentially weighted space-time norms.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate as sint

from . import fieldsolve
from .equilibrium import EquilibriumState, PotentialSpec, UnsupportedRegimeError, \
    solve_poisson_emden
from .fields import DistributionField, SpatialField
from .fitting import FitResult, fit_exp_rate
from .grids import PhaseGrid
from .phasecore import CapabilityError, WeightedOperatorSet, bnorm, frac_norm, \
    project_perp
from .semigroup import KineticPropagator, suggest_dt


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class FixedPointConfig:
    """Indices and weights of the fixed-point spaces, with their constraints."""

    eps0: float
    a: float = 0.55
    alpha: float = 0.55
    beta: float = 0.9
    delta: float = 0.15
    sigma: float = 1.0 / 12.0
    eps: float = 0.05
    gamma_y: Optional[float] = None
    max_picard: int = 12
    kappa: Optional[float] = None
    picard_tol: float = 1e-9

    def __post_init__(self):
        errs = validate_indices(self.a, self.alpha, self.beta, self.delta,
                                self.sigma, self.eps)
        if errs:
            raise ValueError("; ".join(errs))
        if self.gamma_y is None:
            object.__setattr__(self, "gamma_y", self.a / 3.0 - self.eps)
        if self.max_picard < 1:
            raise ValueError("max_picard must be >= 1")

    def validate_for_dimension(self, d: int):
        if d == 2 and self.eps0 < 0:
            raise UnsupportedRegimeError(
                "attractive coupling (eps0 < 0) is not supported in d=2")
        if abs(self.eps0) > 1:
            raise ValueError(f"|eps0| must be <= 1, got {self.eps0}")


def validate_indices(a, alpha, beta, delta, sigma, eps) -> List[str]:
    """Actionable messages for every violated index constraint."""
    errs = []
    if not 0.5 < a < 0.75:
        errs.append(f"a={a} violates 1/2 < a < 3/4")
    elif a >= 2.0 / 3.0:
        warnings.warn(f"a={a} lies in the exploratory band [2/3, 3/4); the "
                      "global theory needs a < 2/3")
    if not (0 <= alpha <= 1):
        errs.append(f"alpha={alpha} must lie in [0,1]")
    if not beta < 1:
        errs.append(f"beta={beta} violates the constraint beta < 1")
    if not 3 * alpha - 1 < beta:
        errs.append(f"beta={beta} violates 3*alpha-1 < beta (alpha={alpha})")
    if beta <= 0.5:
        errs.append(f"beta={beta} must exceed 1/2 so that delta < beta/2 - 1/4 "
                    "is satisfiable")
    elif not 0 < delta < beta / 2 - 0.25:
        errs.append(f"delta={delta} violates 0 < delta < beta/2 - 1/4 "
                    f"= {beta / 2 - 0.25}")
    if not 0 < sigma <= 0.5:
        errs.append(f"sigma={sigma} must lie in (0, 1/2]")
    if not 0 < eps <= 0.5:
        errs.append(f"eps={eps} must lie in (0, 1/2]")
    return errs


# ---------------------------------------------------------------------------
# nonlinear run

@dataclass(frozen=True)
class VPFPTrajectory:
    grid: PhaseGrid
    eps0: float
    times: tuple
    snapshots: tuple          # DistributionField at each time
    fields: tuple             # self-consistent E at each time
    eq: EquilibriumState
    dt: float


def _total_force(gradVe: np.ndarray, eps0: float, E: np.ndarray) -> np.ndarray:
    # acceleration in the v-advection: -(eps0 E + grad Ve)
    return -(gradVe + eps0 * E)


def vpfp_run(f0: DistributionField, Ve: PotentialSpec, eps0: float, T: float,
             dt: Optional[float] = None, eq: Optional[EquilibriumState] = None,
             t_grid: Optional[Sequence[float]] = None,
             limiter: bool = True) -> VPFPTrajectory:
    """Self-consistent nonlinear run with predictor-corrector field coupling."""
    grid = f0.grid
    if grid.d == 2 and eps0 < 0:
        raise UnsupportedRegimeError(
            "attractive coupling (eps0 < 0) is not supported in d=2")
    vals = f0.values
    if vals.min() < -1e-12:
        raise ValueError(f"f0 must be nonnegative, min={vals.min():.3e}")
    m0 = f0.mass
    if abs(m0 - 1.0) > 1e-12:
        warnings.warn(f"f0 mass {m0} renormalized to 1")
        vals = vals / m0
        f0 = DistributionField(grid, vals)
    if eq is None:
        eq = solve_poisson_emden(Ve, eps0, grid)
    gradVe = Ve.grad_on_grid(grid.spatial)
    G_eq = _total_force(gradVe, eps0, eq.E_inf.values)
    prop = KineticPropagator(grid, eq.V_inf.values, G_eq, limiter=limiter,
                             balance_force=G_eq)

    def field_of(fv: np.ndarray) -> np.ndarray:
        rho = fieldsolve.density(DistributionField(grid, fv))
        return fieldsolve.field_from_density(rho, grid.d).values

    if dt is None:
        E0 = field_of(f0.values)
        field_margin = 2.0 * max(float(np.abs(E0).max()),
                                 float(np.abs(eq.E_inf.values).max())) + 0.5
        dt = prop.suggest_dt(stage_cfl=0.38,
                             force=np.abs(gradVe) + abs(eps0) * field_margin)
    if t_grid is None:
        n_out = min(161, max(21, int(4 * T) + 1))
        t_grid = np.linspace(0.0, T, n_out)
    ts = np.asarray(sorted(t_grid), dtype=float)

    snaps, fields = [], []
    f = np.array(f0.values)
    t = 0.0
    E = field_of(f)
    for target in ts:
        seg = target - t
        if seg > 1e-14:
            n = max(1, int(np.ceil(seg / dt - 1e-12)))
            h = seg / n
            for _ in range(n):
                G_n = _total_force(gradVe, eps0, E)
                f_pred = prop.strang_step(f, h, G_n)
                E_pred = field_of(f_pred)
                G_half = _total_force(gradVe, eps0, 0.5 * (E + E_pred))
                f = prop.strang_step(f, h, G_half)
                E = field_of(f)
                t += h
            t = target
        if not np.all(np.isfinite(f)):
            raise FloatingPointError(f"non-finite values at t={target}")
        snaps.append(DistributionField(grid, f.copy()))
        fields.append(SpatialField(grid.spatial, E.copy()))
    return VPFPTrajectory(grid=grid, eps0=eps0, times=tuple(ts),
                          snapshots=tuple(snaps), fields=tuple(fields),
                          eq=eq, dt=float(dt))


# ---------------------------------------------------------------------------
# diagnostics

def relative_entropy(f: DistributionField, M: DistributionField) -> float:
    """H(f|M) = int f ln(f/M), with 0 ln 0 = 0 and tiny negatives clamped."""
    fv = np.maximum(f.values, 0.0)
    Mv = M.values
    mask = fv > 0
    out = np.zeros_like(fv)
    out[mask] = fv[mask] * np.log(fv[mask] / Mv[mask])
    return float(out.sum()) * f.grid.cell_volume


@dataclass(frozen=True)
class DecayReport:
    times: tuple
    b_dist: tuple
    bab_dist: Optional[tuple]
    field_dist: tuple
    entropy: tuple
    mass_error: float
    min_value: float
    linf_ratio: float
    rate_b: Optional[FitResult]
    rate_bab: Optional[FitResult]
    rate_field: Optional[FitResult]
    rate_entropy: Optional[FitResult]
    degenerate: bool
    frac_norms_available: bool


def decay_report(traj: VPFPTrajectory, eq: EquilibriumState,
                 cfg: FixedPointConfig) -> DecayReport:
    """Distance-to-equilibrium series and fitted exponential rates."""
    M = eq.M_inf
    ops = None
    frac_ok = True
    try:
        ops = WeightedOperatorSet(M)
        _ = ops.apply_power(M, "v", min(cfg.beta, 1.0))
    except CapabilityError:
        frac_ok = False
    ts = np.asarray(traj.times)
    b_dist, bab, field_dist, entropy = [], [], [], []
    for f, E in zip(traj.snapshots, traj.fields):
        diff = f - M
        b_dist.append(bnorm(diff, M))
        if frac_ok:
            bab.append(frac_norm(diff, cfg.alpha, cfg.beta, ops))
        field_dist.append((E - eq.E_inf).sup)
        entropy.append(relative_entropy(f, M))
    cons = conservation_check(traj)
    b_dist = np.array(b_dist)
    degenerate = bool(b_dist.max() < 1e-10)
    T = ts[-1]
    rates = [None] * 4
    if T >= 1.0 and not degenerate:
        series = [b_dist, np.array(bab) if frac_ok else None,
                  np.array(field_dist), np.array(entropy)]
        for i, y in enumerate(series):
            if y is None:
                continue
            rates[i] = fit_exp_rate(ts, y, window=(1.0, T), floor=1e-250)
    return DecayReport(
        times=tuple(ts), b_dist=tuple(b_dist),
        bab_dist=tuple(bab) if frac_ok else None,
        field_dist=tuple(field_dist), entropy=tuple(entropy),
        mass_error=cons.mass_drift, min_value=cons.min_value,
        linf_ratio=cons.linf_ratio,
        rate_b=rates[0], rate_bab=rates[1], rate_field=rates[2],
        rate_entropy=rates[3],
        degenerate=degenerate, frac_norms_available=frac_ok,
    )


@dataclass(frozen=True)
class ConservationReport:
    mass_drift: float
    min_value: float
    linf_ratio: float


def conservation_check(traj: VPFPTrajectory) -> ConservationReport:
    """Mass drift, global minimum, and the sup-growth ratio max f / (e^{dt} max f0)."""
    if not traj.snapshots:
        raise ValueError("trajectory is empty")
    d = traj.grid.d
    m0 = traj.snapshots[0].mass
    max0 = float(traj.snapshots[0].values.max())
    drift, minv, ratio = 0.0, np.inf, 0.0
    for t, f in zip(traj.times, traj.snapshots):
        drift = max(drift, abs(f.mass - m0))
        minv = min(minv, float(f.values.min()))
        ratio = max(ratio, float(f.values.max()) / (np.exp(d * t) * max0))
    return ConservationReport(mass_drift=float(drift), min_value=float(minv),
                              linf_ratio=float(ratio))


# ---------------------------------------------------------------------------
# Picard / Duhamel fixed point

def _dv_dot(F: np.ndarray, fv: np.ndarray, grid: PhaseGrid) -> np.ndarray:
    """sum_k F_k(x) d_{v_k} f by centered differences (zero extension)."""
    d = grid.d
    out = np.zeros_like(fv)
    for k in range(d):
        ax = d + k
        fm = np.moveaxis(fv, ax, 0)
        dm = np.zeros_like(fm)
        dm[1:-1] = (fm[2:] - fm[:-2]) / (2 * grid.hv)
        dm[0] = fm[1] / (2 * grid.hv)
        dm[-1] = -fm[-2] / (2 * grid.hv)
        out += F[k].reshape(grid.spatial.shape + (1,) * d) * np.moveaxis(dm, 0, ax)
    return out


@dataclass(frozen=True)
class PicardReport:
    mode: str
    times: tuple
    z_norms: tuple            # Z-norm of each iterate
    contraction: tuple        # q_n = |delta_{n+1}|_Z / |delta_n|_Z
    converged: bool
    non_contractive: bool
    kappa: float
    h_final: tuple            # values arrays of h at the macro times
    G_final: tuple
    base: tuple               # e^{-tK} g0 (long) or e^{-tK0} f0 (small) values
    eq: Optional[EquilibriumState]

    def assemble(self, i: int, grid: PhaseGrid,
                 M: Optional[DistributionField] = None) -> DistributionField:
        """Reassembled solution at macro time i: M + base + h (long-time mode)."""
        vals = self.base[i] + self.h_final[i]
        if M is not None:
            vals = vals + M.values
        return DistributionField(grid, vals)


def _measure_kappa(prop: KineticPropagator, M: DistributionField,
                   g0: DistributionField, dt: float, T: float = 8.0) -> float:
    ts = np.linspace(0.0, T, 33)
    lin = KineticPropagator(prop.grid, prop.V, prop.force, limiter=False,
                            balance_force=prop.force)
    snaps = lin.run(g0.values, ts, dt)
    norms = [bnorm(DistributionField(prop.grid, fv), M) for _, fv in snaps]
    fit = fit_exp_rate(np.asarray(ts), np.asarray(norms), window=(1.0, T))
    lam = -fit.slope
    if not np.isfinite(lam) or lam <= 0:
        raise RuntimeError("could not measure a positive linear decay rate")
    return float(lam)


def picard_iterate(f0: DistributionField, eq: EquilibriumState,
                   cfg: FixedPointConfig, T: float,
                   Ve: Optional[PotentialSpec] = None,
                   mode: str = "long_time",
                   n_macro: Optional[int] = None,
                   dt: Optional[float] = None,
                   U0_field: Optional[SpatialField] = None) -> PicardReport:
    """Iterate the Duhamel contraction map and report Z-norms and factors.

    long_time: split f = M + e^{-tK}g0 + h around the equilibrium generator.
    small_time (d=3): split f = e^{-tK0}f0 + g around the rough-potential
    generator built from the initial datum; T is clamped to 1.
    """
    grid = f0.grid
    cfg.validate_for_dimension(grid.d)
    eps0 = cfg.eps0
    M = eq.M_inf
    if mode not in ("long_time", "small_time"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "small_time":
        if grid.d != 3:
            raise ValueError("small_time mode is the d=3 rough-potential split")
        T = min(T, 1.0)

    ops = WeightedOperatorSet(M)   # raises CapabilityError lazily on frac use
    gradVe = Ve.grad_on_grid(grid.spatial) if Ve is not None else None

    if mode == "long_time":
        if gradVe is None:
            raise ValueError("long_time mode needs the confining potential Ve")
        G_eq = _total_force(gradVe, eps0, eq.E_inf.values)
        prop = KineticPropagator(grid, eq.V_inf.values, G_eq, balance_force=G_eq)
        datum = project_perp(f0, M)        # g0 = f0 - M for unit-mass f0
        alpha_idx, beta_idx = cfg.alpha, cfg.beta
    else:
        if U0_field is None or gradVe is None:
            raise ValueError("small_time mode needs Ve and the initial potential U0")
        E0 = fieldsolve.field_from_density(
            fieldsolve.density(f0), grid.d).values
        G0 = _total_force(gradVe, eps0, E0)
        V0 = Ve.on_grid(grid.spatial) + eps0 * U0_field.values
        prop = KineticPropagator(grid, V0, G0, balance_force=G0)
        datum = f0
        alpha_idx, beta_idx = cfg.a, 1.0

    if dt is None:
        dt = prop.suggest_dt()
    if n_macro is None:
        n_macro = max(24, min(200, int(np.ceil(T / (4 * dt)))))
    ts = np.linspace(0.0, T, n_macro + 1)
    delta = ts[1] - ts[0]

    kappa = cfg.kappa
    if kappa is None and mode == "long_time":
        kappa = _measure_kappa(prop, M, project_perp(f0, M), dt)
    elif kappa is None:
        kappa = 0.0

    base = [v for _, v in prop.run(datum.values, ts, dt)]
    F0 = []
    for bv in base:
        if mode == "long_time":
            rho = fieldsolve.density(DistributionField(grid, bv))
        else:
            rho = fieldsolve.density(DistributionField(grid, bv - f0.values))
        F0.append(fieldsolve.field_from_density(rho, grid.d).values)

    def x_weight(t):
        if mode == "long_time":
            w = t**cfg.delta / (1.0 + t**cfg.delta) if t > 0 else 0.0
            return w * np.exp(cfg.sigma * kappa * t)
        return 1.0

    def y_weight(t):
        if mode == "long_time":
            return np.exp(cfg.sigma * kappa * t)
        return t ** (-cfg.gamma_y) if t > 0 else 0.0

    def z_norm(h_list, G_list):
        zx = zy = 0.0
        for t, hv, Gv in zip(ts, h_list, G_list):
            hn = frac_norm(DistributionField(grid, hv), alpha_idx, beta_idx, ops)
            zx = max(zx, x_weight(t) * hn)
            zy = max(zy, y_weight(t) * float(np.abs(Gv).max()))
        return max(zx, zy)

    h = [np.zeros(grid.shape) for _ in ts]
    G = [np.zeros((grid.d,) + grid.spatial.shape) for _ in ts]
    z_norms = []
    qs = []
    prev_delta_z = None
    converged = False
    non_contractive = False
    bad_streak = 0

    for it in range(cfg.max_picard):
        def integrand(i):
            carrier = M.values + base[i] + h[i] if mode == "long_time" \
                else base[i] + h[i]
            return eps0 * _dv_dot(F0[i] + G[i], carrier, grid)

        h_new = [np.zeros(grid.shape)]
        I = np.zeros(grid.shape)
        q_prev = integrand(0)
        for i in range(1, len(ts)):
            q_i = integrand(i)
            stepped = prop.run(I + 0.5 * delta * q_prev, [delta], dt)[0][1]
            I = stepped + 0.5 * delta * q_i
            h_new.append(I.copy())
            q_prev = q_i
        G_new = []
        for i, hv in enumerate(h_new):
            rho = fieldsolve.density(DistributionField(grid, hv))
            G_new.append(fieldsolve.field_from_density(rho, grid.d).values)

        dz = z_norm([a - b for a, b in zip(h_new, h)],
                    [a - b for a, b in zip(G_new, G)])
        h, G = h_new, G_new
        z_norms.append(z_norm(h, G))
        if prev_delta_z is not None and prev_delta_z > 0:
            q = dz / prev_delta_z
            qs.append(q)
            if q > 1.0:
                bad_streak += 1
                if bad_streak >= 3:
                    non_contractive = True
                    break
            else:
                bad_streak = 0
        prev_delta_z = dz
        if dz < cfg.picard_tol * max(1.0, z_norms[-1]):
            converged = True
            break

    return PicardReport(
        mode=mode, times=tuple(ts), z_norms=tuple(z_norms),
        contraction=tuple(qs), converged=converged,
        non_contractive=non_contractive, kappa=float(kappa),
        h_final=tuple(h), G_final=tuple(G), base=tuple(base), eq=eq,
    )


def picard_stitched(f0: DistributionField, eq: EquilibriumState,
                    cfg: FixedPointConfig, T: float, Ve: PotentialSpec,
                    U0_field: SpatialField, **kw):
    """d=3 run stitched at t=1: rough-potential split first, equilibrium after."""
    small = picard_iterate(f0, eq, cfg, 1.0, Ve=Ve, mode="small_time",
                           U0_field=U0_field, **kw)
    f1 = DistributionField(f0.grid, small.base[-1] + small.h_final[-1])
    m1 = f1.mass
    f1 = DistributionField(f0.grid, np.maximum(f1.values, 0.0) / m1)
    long = picard_iterate(f1, eq, cfg, max(T - 1.0, 1.0), Ve=Ve,
                          mode="long_time", **kw)
    return small, long


# ---------------------------------------------------------------------------
# singular-kernel time-convolution bound

@dataclass(frozen=True)
class ConvolutionBoundReport:
    gamma1: float
    gamma2: float
    c: float
    times: tuple
    ratios: tuple
    max_ratio: float


def convolution_bound_check(gamma1: float, gamma2: float, c: float = 1.0,
                            t_grid=None) -> ConvolutionBoundReport:
    """Quadrature check that int_0^t (s^{g1-1}+1)((t-s)^{g2-1}+1)e^{-c(t-s)} ds
    stays bounded by t^{g1+g2-1}+1 (t<=1) and by a constant (t>=1)."""
    if gamma1 <= 0 or gamma1 > 1 or gamma2 <= 0:
        raise ValueError("need 0 < gamma1 <= 1 and gamma2 > 0")
    if t_grid is None:
        t_grid = np.geomspace(1e-3, 50.0, 40)
    ratios = []
    for t in t_grid:
        total = 0.0
        # four expanded pieces; algebraic endpoint weights handled by quad
        for (wa, wb) in ((gamma1 - 1, gamma2 - 1), (gamma1 - 1, 0.0),
                         (0.0, gamma2 - 1), (0.0, 0.0)):
            if wa == 0.0 and wb == 0.0:
                total += (1.0 - np.exp(-c * t)) / c
                continue
            val, _ = sint.quad(lambda s: np.exp(-c * (t - s)), 0.0, t,
                               weight="alg", wvar=(wa, wb), limit=200)
            total += val
        denom = t ** (gamma1 + gamma2 - 1.0) + 1.0 if t <= 1.0 else 1.0
        ratios.append(total / denom)
    ratios = np.array(ratios)
    return ConvolutionBoundReport(gamma1=gamma1, gamma2=gamma2, c=c,
                                  times=tuple(t_grid), ratios=tuple(ratios),
                                  max_ratio=float(ratios.max()))
