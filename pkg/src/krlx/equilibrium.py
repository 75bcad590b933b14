"""Poisson-Emden equilibria: the self-consistent potential and Maxwellian.

The stationary state of the kinetic system is M(x,v) = e^{-(v^2/2+V(x))}/Z
where V = V_e + eps0*U and U solves the nonlinear elliptic problem

    -Delta U = e^{-(V_e + eps0 U)} / int e^{-(V_e + eps0 U)} dx.

The solver runs a damped fixed-point iteration; each linear solve combines
a free-space Green-kernel convolution (supplying far-field boundary data)
with a fourth-order compact (Mehrstellen/Numerov) interior solve, so the
returned potential satisfies the discrete equation to round-off while
staying fourth-order accurate against the continuum.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import fft as sfft

from . import fieldsolve
from .fields import DistributionField, SpatialField
from .greens import _lap_std, free_space_potential
from .grids import PhaseGrid, SpatialGrid


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed; carries the last iterate and history."""

    def __init__(self, msg, last_iterate=None, history=None):
        super().__init__(msg)
        self.last_iterate = last_iterate
        self.history = history or []


class UnsupportedRegimeError(ValueError):
    """Parameter regime excluded from the analysis (attractive d=2)."""


# ---------------------------------------------------------------------------
# confining potentials

@dataclass(frozen=True)
class PotentialSpec:
    """Analytic confining potential with gradient (and optional Hessian).

    The callables receive a list of broadcastable coordinate arrays (one per
    spatial axis) and return arrays broadcast over the spatial grid; grad
    returns a list of d components, hess a d x d nested list.
    """

    d: int
    value: Callable
    grad: Callable
    hess: Optional[Callable] = None
    label: str = "custom"

    def on_grid(self, sgrid: SpatialGrid) -> np.ndarray:
        xs = sgrid.meshes()
        V = np.broadcast_to(self.value(xs), sgrid.shape).astype(float)
        if V.min() < -1e-12:
            raise ValueError(f"potential '{self.label}' must be >= 0 on the grid")
        return V

    def grad_on_grid(self, sgrid: SpatialGrid) -> np.ndarray:
        xs = sgrid.meshes()
        comps = self.grad(xs)
        return np.stack([np.broadcast_to(c, sgrid.shape).astype(float) for c in comps])


def quadratic_potential(d: int, omega2: float = 1.0) -> PotentialSpec:
    """V(x) = omega2 |x|^2 / 2."""

    def val(xs):
        return omega2 * sum(x**2 for x in xs) / 2.0

    def grad(xs):
        return [omega2 * x for x in xs]

    def hess(xs):
        z = 0.0 * sum(x for x in xs)
        return [[(omega2 + z) if i == j else z for j in range(d)] for i in range(d)]

    return PotentialSpec(d, val, grad, hess, label=f"quadratic(omega2={omega2})")


def quartic_potential(d: int, c: float = 1.0) -> PotentialSpec:
    """V(x) = c |x|^4 / 4 (gradient grows without bound)."""

    def val(xs):
        return c * sum(x**2 for x in xs) ** 2 / 4.0

    def grad(xs):
        r2 = sum(x**2 for x in xs)
        return [c * r2 * x for x in xs]

    def hess(xs):
        r2 = sum(x**2 for x in xs)
        return [[c * (r2 * (1.0 if i == j else 0.0) + 2.0 * xs[i] * xs[j])
                 for j in range(d)] for i in range(d)]

    return PotentialSpec(d, val, grad, hess, label=f"quartic(c={c})")


def double_well_potential(d: int, a: float = 0.1, b: float = 2.0) -> PotentialSpec:
    """V(x) = a (|x|^2 - b^2)^2, nonnegative with wells at |x| = b."""

    def val(xs):
        r2 = sum(x**2 for x in xs)
        return a * (r2 - b * b) ** 2

    def grad(xs):
        r2 = sum(x**2 for x in xs)
        return [4.0 * a * (r2 - b * b) * x for x in xs]

    def hess(xs):
        r2 = sum(x**2 for x in xs)
        return [[4.0 * a * ((r2 - b * b) * (1.0 if i == j else 0.0)
                            + 2.0 * xs[i] * xs[j]) for j in range(d)]
                for i in range(d)]

    return PotentialSpec(d, val, grad, hess, label=f"double_well(a={a},b={b})")


POTENTIAL_FAMILIES = {
    "quadratic": quadratic_potential,
    "quartic": quartic_potential,
    "double_well": double_well_potential,
}


# ---------------------------------------------------------------------------
# fourth-order compact free-space solver

def mehrstellen_apply(U: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order compact Laplacian A = Lap_h + (h^2/6) sum_{i<j} D_i D_j.

    Values are meaningful at cells with margin >= 1 from the array edge.
    """
    d = U.ndim
    out = _lap_std(U, h)
    if d == 1:
        return out
    up = np.pad(U, 1)
    core = [slice(1, -1)] * d

    def sh(*pairs):
        sl = list(core)
        for ax, s in pairs:
            sl[ax] = slice(1 + s, up.shape[ax] - 1 + s)
        return up[tuple(sl)]

    for i in range(d):
        for j in range(i + 1, d):
            cross = (sh((i, 1), (j, 1)) + sh((i, -1), (j, -1))
                     + sh((i, 1), (j, -1)) + sh((i, -1), (j, 1))
                     - 2.0 * (sh((i, 1)) + sh((i, -1)) + sh((j, 1)) + sh((j, -1)))
                     + 4.0 * U) / h**4
            out = out + h * h / 6.0 * cross
    return out


def mehrstellen_rhs(rho: np.ndarray, h: float) -> np.ndarray:
    """Filtered right-hand side rho + (h^2/12) Lap_h rho."""
    return rho + h * h / 12.0 * _lap_std(rho, h)


def _mehrstellen_solve_dirichlet(rho_f: np.ndarray, U_boundary: np.ndarray,
                                 h: float) -> np.ndarray:
    """Solve -A U = rho_f with the outermost cell layer fixed to U_boundary.

    Diagonalized by the type-I sine transform on the interior block.
    """
    d = rho_f.ndim
    n = rho_f.shape[0]
    m = n - 2
    Ub = np.array(U_boundary, dtype=float)
    inner = tuple([slice(1, -1)] * d)
    Ubf = Ub.copy()
    Ubf[inner] = 0.0
    Abnd = mehrstellen_apply(Ubf, h)
    rhs = -rho_f[inner] - Abnd[inner]
    k = np.arange(1, m + 1)
    lam1 = -(2.0 - 2.0 * np.cos(np.pi * k / (m + 1))) / (h * h)
    lams = np.meshgrid(*([lam1] * d), indexing="ij", sparse=True)
    sym = sum(lams)
    for i in range(d):
        for j in range(i + 1, d):
            sym = sym + h * h / 6.0 * lams[i] * lams[j]
    R = sfft.dstn(rhs, type=1)
    Uin = sfft.idstn(R / sym, type=1)
    U = Ubf
    U[inner] = Uin
    return U


def _linear_free_space_solve(rho: np.ndarray, h: float) -> np.ndarray:
    """One free-space solve: Green convolution boundary + compact interior."""
    Upad = free_space_potential(rho, h, ghost=1)
    core = tuple([slice(1, -1)] * rho.ndim)
    Ugreen = Upad[core]
    return _mehrstellen_solve_dirichlet(mehrstellen_rhs(rho, h), Ugreen, h)


def poisson_emden_residual(U: np.ndarray, rho: np.ndarray, h: float) -> float:
    """Sup norm of the fourth-order compact form of -Delta U - rho (interior)."""
    d = U.ndim
    res = mehrstellen_apply(U, h) + mehrstellen_rhs(rho, h)
    inner = tuple([slice(1, -1)] * d)
    return float(np.max(np.abs(res[inner])))


# ---------------------------------------------------------------------------
# equilibrium state

@dataclass(frozen=True)
class EquilibriumState:
    eps0: float
    U_inf: SpatialField
    V_inf: SpatialField
    M_inf: DistributionField
    E_inf: SpatialField
    Z: float
    residual: float
    iters: int
    history: tuple

    @property
    def grid(self) -> PhaseGrid:
        return self.M_inf.grid


def maxwellian(V_inf, grid: PhaseGrid):
    """Normalized Maxwellian e^{-(v^2/2 + V(x))}/Z and the quadrature Z."""
    V = V_inf.values if isinstance(V_inf, SpatialField) else np.asarray(V_inf)
    if V.shape != grid.spatial.shape:
        raise ValueError("V_inf shape does not match the spatial grid")
    if not np.all(np.isfinite(V)):
        raise ValueError("V_inf must be finite")
    Vmin = V.min()
    w_x = np.exp(-(V - Vmin)).reshape(grid.spatial.shape + (1,) * grid.d)
    w_v = np.exp(-grid.v_radius_sq() / 2.0)
    vals = w_x * w_v
    Z_shift = float(vals.sum()) * grid.cell_volume
    if Z_shift <= 0 or not np.isfinite(Z_shift):
        raise ValueError("Maxwellian normalization vanished or overflowed")
    M = DistributionField(grid, vals / Z_shift)
    Z = Z_shift * np.exp(-Vmin)
    return M, Z


def solve_poisson_emden(Ve: PotentialSpec, eps0: float, grid: PhaseGrid,
                        tol: float = 1e-7, max_iters: int = 200,
                        theta: float = 0.8) -> EquilibriumState:
    """Damped fixed-point solve of the Poisson-Emden equation.

    Iterates U <- (1-theta) U + theta G_d * [e^{-(Ve+eps0 U)} / int ...]
    until the sup-norm update drops below tol.  Raises ConvergenceError
    (carrying the last iterate and the update history) when max_iters is
    exhausted, which is the expected failure mode for strongly attractive
    couplings.
    """
    if abs(eps0) > 1.0:
        raise ValueError(f"|eps0| must be <= 1, got {eps0}")
    if grid.d == 2 and eps0 < 0:
        raise UnsupportedRegimeError(
            "attractive coupling is not supported in d=2 (solvability of the "
            "equilibrium potential is unclear in that regime)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    sgrid = grid.spatial
    h = sgrid.hx
    Vx = Ve.on_grid(sgrid)

    def normalized_density(U):
        w = np.exp(-(Vx + eps0 * U))
        C = w.sum() * sgrid.cell_volume
        return w / C

    U = np.zeros(sgrid.shape)
    history = []
    if eps0 == 0.0:
        U = _linear_free_space_solve(normalized_density(U), h)
        iters = 1
        history.append((1, float(np.max(np.abs(U))), None))
    else:
        converged = False
        for k in range(1, max_iters + 1):
            U_new = _linear_free_space_solve(normalized_density(U), h)
            U_next = (1.0 - theta) * U + theta * U_new
            update = float(np.max(np.abs(U_next - U)))
            history.append((k, update, None))
            U = U_next
            if update < tol:
                iters = k
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                f"Poisson-Emden iteration did not reach tol={tol} in "
                f"{max_iters} iterations (eps0={eps0})",
                last_iterate=U, history=history)

    rho = normalized_density(U)
    residual = poisson_emden_residual(U, rho, h)
    if grid.d == 3 and eps0 >= 0 and U.min() < -1e-10:
        raise ConvergenceError(
            f"repulsive d=3 equilibrium potential lost positivity "
            f"(min {U.min():.3e})", last_iterate=U, history=history)

    V_inf = Vx + eps0 * U
    M_inf, Z = maxwellian(V_inf, grid)
    E_inf = fieldsolve.field_from_density(fieldsolve.density(M_inf), grid.d)
    return EquilibriumState(
        eps0=eps0,
        U_inf=SpatialField(sgrid, U),
        V_inf=SpatialField(sgrid, V_inf),
        M_inf=M_inf,
        E_inf=E_inf,
        Z=Z,
        residual=residual,
        iters=iters,
        history=tuple(history),
    )


# ---------------------------------------------------------------------------
# initial-data potential (d=3)

@dataclass(frozen=True)
class W2InfReport:
    """Sup norms of U0 and its first/second derivatives (W^{2,inf} proxy)."""

    sup_u: float
    sup_grad: float
    sup_hess: float


def initial_potential(f0: DistributionField):
    """Coulomb potential / field of the initial datum: U0 with -Lap U0 = rho0.

    Returns (U0, E0, report) with E0 = grad U0, the orientation used by the
    short-time linearization, plus sup norms of U0 and its derivatives.
    """
    grid = f0.grid
    if grid.d != 3:
        raise ValueError("initial_potential requires d=3")
    if f0.values.min() < -1e-12:
        raise ValueError(f"f0 must be nonnegative, min={f0.values.min():.3e}")
    sgrid = grid.spatial
    h = sgrid.hx
    rho0 = fieldsolve.density(f0)
    Upad = free_space_potential(rho0.values, h, ghost=1)
    core = tuple([slice(1, -1)] * 3)
    U0 = Upad[core]
    grad = np.stack([
        (np.roll(Upad, -1, ax) - np.roll(Upad, 1, ax))[core] / (2 * h)
        for ax in range(3)
    ])
    sup_hess = 0.0
    for i in range(3):
        for j in range(3):
            if i == j:
                Dij = (np.roll(Upad, -1, i) + np.roll(Upad, 1, i) - 2 * Upad)[core] / h**2
            else:
                Dij = (np.roll(np.roll(Upad, -1, i), -1, j)
                       + np.roll(np.roll(Upad, 1, i), 1, j)
                       - np.roll(np.roll(Upad, -1, i), 1, j)
                       - np.roll(np.roll(Upad, 1, i), -1, j))[core] / (4 * h**2)
            sup_hess = max(sup_hess, float(np.max(np.abs(Dij))))
    report = W2InfReport(
        sup_u=float(np.max(np.abs(U0))),
        sup_grad=float(np.sqrt((grad**2).sum(axis=0)).max()),
        sup_hess=sup_hess,
    )
    return SpatialField(sgrid, U0), SpatialField(sgrid, grad), report
