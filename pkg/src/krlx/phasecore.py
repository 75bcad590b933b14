"""Weighted space B, drift-form operators and fractional calculus.

B is L^2 weighted by 1/M for a strictly positive reference equilibrium M;
<f,g> = sum f g / M * cell_volume.  The shifted generators

    Lam_v^2 = -d_v.(d_v + v) + 1,     Lam_x^2 = -d_x.(d_x + d_x V) + 1

are discretized in drift form A*A + 1: A is a forward face difference of
the ratio u = f/M with positive face weights, and A* is its exact discrete
B-adjoint.  Symmetry, the spectral floor at 1, annihilation of M and
stability of the zero-mass subspace all hold by construction.

Fractional powers use dense per-axis eigendecompositions when the weight
factorizes over axes (always true in v; in x only for separable
potentials), and a Lanczos matrix-function fallback otherwise.  Genuinely
fractional powers are offered only for grids up to MAX_FRAC_UNKNOWNS
unknowns; integer powers dispatch to direct operator applications.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .fields import DistributionField, _check_same_grid
from .grids import PhaseGrid

MAX_FRAC_UNKNOWNS = 100_000
LANCZOS_VECTORS = 200


class CapabilityError(RuntimeError):
    """The requested operation is not offered at this grid size."""


# ---------------------------------------------------------------------------
# B inner product

def b_inner(f: DistributionField, g: DistributionField, M: DistributionField) -> float:
    """Weighted scalar product <f,g> = int f g / M dx dv (midpoint quadrature)."""
    _check_same_grid(f, g)
    _check_same_grid(f, M)
    if np.any(M.values <= 0):
        raise ValueError("reference weight M must be strictly positive")
    return float(np.sum(f.values * g.values / M.values)) * f.grid.cell_volume


def bnorm(f: DistributionField, M: DistributionField) -> float:
    return np.sqrt(max(b_inner(f, f, M), 0.0))


def project_perp(f: DistributionField, M: DistributionField) -> DistributionField:
    """Orthogonal projection onto the zero-mass subspace: f - (int f) M."""
    _check_same_grid(f, M)
    mM = M.mass
    if abs(mM - 1.0) > 1e-9:
        raise ValueError(f"M must have unit mass, got {mM}")
    return DistributionField(f.grid, f.values - f.mass * M.values)


# ---------------------------------------------------------------------------
# drift-form operators

def _axis_face_weights(M: np.ndarray, axis: int) -> np.ndarray:
    """Geometric-mean face weights of M along one axis (interior faces only)."""
    a = np.moveaxis(M, axis, 0)
    return np.moveaxis(np.sqrt(a[:-1] * a[1:]), 0, axis)


def _weighted_laplacian(u: np.ndarray, w_face: np.ndarray, M: np.ndarray,
                        axis: int, h: float) -> np.ndarray:
    """M-weighted drift Laplacian along one axis: -(1/M) D^T(w_face D u) / h^2.

    Zero-flux closure at the domain faces.
    """
    um = np.moveaxis(u, axis, 0)
    wm = np.moveaxis(w_face, axis, 0)
    flux = wm * (um[1:] - um[:-1])
    div = np.zeros_like(um)
    div[:-1] += flux
    div[1:] -= flux
    out = np.moveaxis(div, 0, axis) / (np.asarray(M) * h * h)
    return -out


class WeightedOperatorSet:
    """Discrete Lam_x^2, Lam_v^2, Lam^2 acting on B, with spectral caches.

    Built from the reference equilibrium M alone; face weights are geometric
    means of adjacent cell values, which keeps every weight positive and the
    quadratic form exact under summation by parts.
    """

    def __init__(self, M: DistributionField):
        if np.any(M.values <= 0):
            raise ValueError("reference weight M must be strictly positive")
        self.M = M
        self.grid = M.grid
        d = self.grid.d
        self._faces = [
            _axis_face_weights(M.values, ax) for ax in range(2 * d)
        ]
        self._sqrtM = np.sqrt(M.values)
        self._axis_eig = {}          # axis -> (eigenvalues >= 0, Q, sqrt_w)
        self._x_separable = None

    # -- direct applications ------------------------------------------------

    def apply_lambda_sq(self, f: DistributionField, axis: str) -> DistributionField:
        """Apply Lam_x^2 or Lam_v^2 (axis in {"x","v"})."""
        _check_same_grid(f, self.M)
        if axis not in ("x", "v"):
            raise ValueError(f"axis must be 'x' or 'v', got {axis!r}")
        d = self.grid.d
        axes = range(d) if axis == "x" else range(d, 2 * d)
        u = f.values / self.M.values
        out = f.values.copy()
        for ax in axes:
            h = self.grid.axis_h(ax)
            out += self.M.values * _weighted_laplacian(u, self._faces[ax],
                                                       self.M.values, ax, h)
        return DistributionField(self.grid, out)

    def apply_lambda_sq_full(self, f: DistributionField) -> DistributionField:
        """Lam^2 = Lam_x^2 + Lam_v^2 - 1."""
        fx = self.apply_lambda_sq(f, "x")
        fv = self.apply_lambda_sq(f, "v")
        return DistributionField(self.grid, fx.values + fv.values - f.values)

    def quad_norm(self, f: DistributionField, axis: str) -> float:
        """||Lam_axis f||_B = sqrt(<Lam_axis^2 f, f>), by the quadratic form."""
        return np.sqrt(max(b_inner(self.apply_lambda_sq(f, axis), f, self.M), 0.0))

    # -- per-axis spectral data ----------------------------------------------

    def _axis_weight_1d(self, ax: int) -> np.ndarray:
        """1D weight profile along one axis (exact for product weights)."""
        other = tuple(i for i in range(2 * self.grid.d) if i != ax)
        w = self.M.values.sum(axis=other)
        return w / w.max()

    def x_separable(self) -> bool:
        """True when the x-part of M factorizes over the spatial axes."""
        if self._x_separable is None:
            d = self.grid.d
            if d == 1:
                self._x_separable = True
            else:
                alpha = self.M.values.sum(axis=tuple(range(d, 2 * d)))
                approx = np.ones_like(alpha)
                for k in range(d):
                    m1 = alpha.sum(axis=tuple(i for i in range(d) if i != k))
                    shape = [1] * d
                    shape[k] = len(m1)
                    approx = approx * m1.reshape(shape)
                approx *= alpha.sum() / approx.sum()
                self._x_separable = bool(
                    np.max(np.abs(approx - alpha)) <= 1e-10 * alpha.max()
                )
        return self._x_separable

    def _axis_eig_1d(self, ax: int):
        """Eigendecomposition of the flat-symmetrized 1D drift Laplacian."""
        if ax not in self._axis_eig:
            w = self._axis_weight_1d(ax)
            h = self.grid.axis_h(ax)
            wf = np.sqrt(w[:-1] * w[1:])
            sw = np.sqrt(w)
            diag = np.zeros_like(w)
            diag[:-1] += wf
            diag[1:] += wf
            diag = diag / (w * h * h)
            off = -wf / (sw[:-1] * sw[1:] * h * h)
            evals, Q = sla.eigh_tridiagonal(diag, off)
            evals = np.maximum(evals, 0.0)
            self._axis_eig[ax] = (evals, Q)
        return self._axis_eig[ax]

    def axis_eigenvalues(self, ax: int) -> np.ndarray:
        return self._axis_eig_1d(ax)[0]

    # -- fractional powers ----------------------------------------------------

    def apply_power(self, f: DistributionField, kind: str, gamma: float,
                    max_power: float = 2.0) -> DistributionField:
        """Apply Lam_kind^gamma by spectral calculus (kind in {"x","v","full"}).

        gamma may be any real in [-max_power, max_power]; the operators have
        spectrum >= 1 so negative powers are bounded.
        """
        if abs(gamma) > max_power:
            raise ValueError(f"power {gamma} outside [-{max_power}, {max_power}]")
        _check_same_grid(f, self.M)
        if gamma == 0.0:
            return f
        if gamma == 2.0:
            return (self.apply_lambda_sq(f, kind) if kind in ("x", "v")
                    else self.apply_lambda_sq_full(f))
        d = self.grid.d
        if self.grid.size > MAX_FRAC_UNKNOWNS:
            raise CapabilityError(
                f"fractional powers are offered only up to {MAX_FRAC_UNKNOWNS} "
                f"unknowns; grid has {self.grid.size}"
            )
        if kind == "v":
            axes = list(range(d, 2 * d))
        elif kind == "x":
            axes = list(range(d))
        elif kind == "full":
            axes = list(range(2 * d))
        else:
            raise ValueError(f"kind must be 'x', 'v' or 'full', got {kind!r}")
        needs_x = kind in ("x", "full")
        if needs_x and not self.x_separable():
            return self._apply_power_lanczos(f, kind, gamma)
        phi = f.values / self._sqrtM
        for ax in axes:
            Q = self._axis_eig_1d(ax)[1]
            phi = np.tensordot(Q.T, phi, axes=([1], [ax]))
            phi = np.moveaxis(phi, 0, ax)
        lam = np.ones((1,) * (2 * d))
        for ax in axes:
            lam = lam + self.grid.broadcast_1d(self._axis_eig_1d(ax)[0], ax)
        phi = phi * lam ** (gamma / 2.0)
        for ax in axes:
            Q = self._axis_eig_1d(ax)[1]
            phi = np.tensordot(Q, phi, axes=([1], [ax]))
            phi = np.moveaxis(phi, 0, ax)
        return DistributionField(self.grid, phi * self._sqrtM)

    def _apply_power_lanczos(self, f: DistributionField, kind: str, gamma: float):
        """Lanczos evaluation of Lam_kind^gamma for non-separable weights."""
        d = self.grid.d
        x_axes = list(range(d))

        def matvec(phi_flat):
            phi = phi_flat.reshape(self.grid.shape)
            g = phi * self._sqrtM
            u = g / self.M.values
            out = phi.copy()
            for ax in x_axes:
                h = self.grid.axis_h(ax)
                out += (self.M.values * _weighted_laplacian(
                    u, self._faces[ax], self.M.values, ax, h)) / self._sqrtM
            if kind == "full":
                for ax in range(d, 2 * d):
                    h = self.grid.axis_h(ax)
                    out += (self.M.values * _weighted_laplacian(
                        u, self._faces[ax], self.M.values, ax, h)) / self._sqrtM
            return out.ravel()

        phi0 = (f.values / self._sqrtM).ravel()
        out = _lanczos_matfunc(matvec, phi0, lambda t: t ** (gamma / 2.0),
                               m=LANCZOS_VECTORS)
        return DistributionField(self.grid, out.reshape(self.grid.shape) * self._sqrtM)

    # -- norms ---------------------------------------------------------------

    def frac_norm_part(self, f: DistributionField, kind: str, gamma: float) -> float:
        """||Lam_kind^gamma f||_B, with integer powers on the fast direct path."""
        if gamma < 0 or gamma > 2:
            raise ValueError(f"exponent {gamma} outside [0, 2]")
        if gamma == 0.0:
            return bnorm(f, self.M)
        if gamma == 1.0 and kind in ("x", "v"):
            return self.quad_norm(f, kind)
        if gamma == 1.0 and kind == "full":
            return np.sqrt(max(b_inner(self.apply_lambda_sq_full(f), f, self.M), 0.0))
        if gamma == 2.0:
            g = (self.apply_lambda_sq(f, kind) if kind in ("x", "v")
                 else self.apply_lambda_sq_full(f))
            return bnorm(g, self.M)
        return bnorm(self.apply_power(f, kind, gamma), self.M)


def frac_norm(f: DistributionField, alpha: float, beta: float,
              ops: WeightedOperatorSet) -> float:
    """Anisotropic norm ||Lam_x^alpha f||_B + ||Lam_v^beta f||_B."""
    if not (0 <= alpha <= 2 and 0 <= beta <= 2):
        raise ValueError(f"alpha, beta must lie in [0,2], got {alpha}, {beta}")
    return ops.frac_norm_part(f, "x", alpha) + ops.frac_norm_part(f, "v", beta)


def apply_lambda_sq(f: DistributionField, axis: str,
                    ops: WeightedOperatorSet) -> DistributionField:
    return ops.apply_lambda_sq(f, axis)


# ---------------------------------------------------------------------------
# Lanczos matrix function

def _lanczos_matfunc(matvec, v0: np.ndarray, fun, m: int = LANCZOS_VECTORS):
    """f(A) v0 for symmetric A via the Lanczos process (full reorthogonalization)."""
    n = v0.size
    m = min(m, n)
    beta0 = np.linalg.norm(v0)
    if beta0 == 0:
        return np.zeros_like(v0)
    Q = np.zeros((m, n))
    alphas = np.zeros(m)
    betas = np.zeros(m - 1) if m > 1 else np.zeros(0)
    Q[0] = v0 / beta0
    q = Q[0]
    r = matvec(q)
    alphas[0] = np.dot(q, r)
    r = r - alphas[0] * q
    k_used = 1
    for k in range(1, m):
        b = np.linalg.norm(r)
        if b < 1e-13 * beta0:
            break
        betas[k - 1] = b
        q = r / b
        q = q - Q[:k].T @ (Q[:k] @ q)
        q /= np.linalg.norm(q)
        Q[k] = q
        r = matvec(q)
        alphas[k] = np.dot(q, r)
        r = r - alphas[k] * q - b * Q[k - 1]
        k_used = k + 1
    T_e, T_Q = sla.eigh_tridiagonal(alphas[:k_used], betas[:k_used - 1],
                                    lapack_driver="stev")
    T_e = np.maximum(T_e, 1e-14)
    coeff = T_Q @ (fun(T_e) * T_Q[0])
    return beta0 * (Q[:k_used].T @ coeff)


# ---------------------------------------------------------------------------
# operator-norm estimation

def opnorm_estimate(apply, M: DistributionField, iters: int,
                    apply_adjoint=None, seed: int = 0) -> float:
    """B -> B operator norm estimate by power iteration on A* A.

    `apply` maps DistributionField -> DistributionField and must be linear.
    When no adjoint is provided, a dense matrix is assembled (grids up to
    4096 unknowns) and the exact weighted adjoint is used.  The estimate is
    a nondecreasing-in-iters lower bound on the true norm.  Raises on
    divergence past the overflow guard.
    """
    if iters < 10:
        raise ValueError("iters must be >= 10")
    grid = M.grid
    if apply_adjoint is None:
        n = grid.size
        if n > 4096:
            raise CapabilityError(
                "adjoint-free opnorm_estimate assembles a dense matrix and is "
                f"limited to 4096 unknowns; grid has {n}"
            )
        A = np.zeros((n, n))
        basis = np.zeros(grid.shape)
        flat = basis.ravel()
        for j in range(n):
            flat[j] = 1.0
            A[:, j] = apply(DistributionField(grid, basis)).values.ravel()
            flat[j] = 0.0
        w = (grid.cell_volume / M.values).ravel()

        def apply_mat(g):
            return DistributionField(grid, (A @ g.values.ravel()).reshape(grid.shape))

        def apply_adj(g):
            y = w * g.values.ravel()
            return DistributionField(grid, ((A.T @ y) / w).reshape(grid.shape))

        apply, apply_adjoint = apply_mat, apply_adj

    rng = np.random.default_rng(seed)
    z = DistributionField(grid, rng.standard_normal(grid.shape) * M.values)
    nz = bnorm(z, M)
    z = (1.0 / nz) * z
    est = 0.0
    for _ in range(iters):
        az = apply(z)
        naz = bnorm(az, M)
        if not np.isfinite(naz) or naz > 1e14:
            raise FloatingPointError("power iteration diverged: map appears unbounded")
        est = max(est, naz)
        z2 = apply_adjoint(az)
        nz2 = bnorm(z2, M)
        if nz2 == 0.0:
            break
        z = (1.0 / nz2) * z2
    return est
