"""Batch front door: config-driven workflows with CSV/binary artifacts.

Configs are flat ``key = value`` INI files with section headers (runs carry
about twenty parameters, so a file beats positional flags).  Every emitted
CSV embeds the fully resolved configuration as leading comment lines, and
identical config plus seed reproduces byte-identical outputs.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

USAGE = """usage: krlx {equilibrium|gap|semigroup-verify|run|picard|report} \
--config PATH [--out DIR] [--jobs N] [--seed U64]"""

COMMANDS = ("equilibrium", "gap", "semigroup-verify", "run", "picard", "report")


def _limit_threads():
    n = os.environ.get("KRLX_THREADS")
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, n)
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(int(n))
    except Exception:
        pass


# ---------------------------------------------------------------------------
# configuration

@dataclass
class SimConfig:
    d: int = 1
    nx: int = 96
    nv: int = 96
    Lx: float = 9.0
    Lv: float = 8.5
    family: str = "quadratic"
    potential_params: Dict[str, float] = field(default_factory=dict)
    eps0: float = 0.05
    T: float = 10.0
    dt: Optional[float] = None
    pe_tol: float = 1e-8
    pe_max_iters: int = 200
    pe_theta: float = 0.8
    alpha: float = 0.55
    beta: float = 0.9
    a: float = 0.55
    delta: float = 0.15
    sigma: float = 1.0 / 12.0
    eps: float = 0.05
    max_picard: int = 10
    save_fields: bool = False
    seed: int = 0
    outdir: str = "out"

    def items(self):
        base = {
            "grid.d": self.d, "grid.nx": self.nx, "grid.nv": self.nv,
            "grid.Lx": self.Lx, "grid.Lv": self.Lv,
            "potential.family": self.family,
            "model.eps0": self.eps0,
            "time.T": self.T, "time.dt": self.dt if self.dt else "auto",
            "solver.pe_tol": self.pe_tol,
            "solver.pe_max_iters": self.pe_max_iters,
            "solver.pe_theta": self.pe_theta,
            "diagnostics.alpha": self.alpha, "diagnostics.beta": self.beta,
            "diagnostics.a": self.a, "diagnostics.delta": self.delta,
            "diagnostics.sigma": self.sigma, "diagnostics.eps": self.eps,
            "diagnostics.max_picard": self.max_picard,
            "output.save_fields": self.save_fields,
            "output.seed": self.seed,
        }
        for k, v in sorted(self.potential_params.items()):
            base[f"potential.{k}"] = v
        return sorted(base.items())


class ConfigError(ValueError):
    pass


_POTENTIAL_PARAM_KEYS = {"omega2", "c", "a", "b"}


def load_config(path) -> tuple:
    """Parse and validate; returns (SimConfig, sweep dict)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    cfg = SimConfig()
    errs: List[str] = []

    def get(section, key, cast, default):
        if cp.has_option(section, key):
            raw = cp.get(section, key).strip()
            if cast is float and raw == "auto":
                return None
            try:
                if cast is bool:
                    return raw.lower() in ("1", "true", "yes", "on")
                return cast(raw)
            except ValueError:
                errs.append(f"[{section}] {key} = {raw!r} is not a valid {cast.__name__}")
                return default
        return default

    cfg.d = get("grid", "d", int, cfg.d)
    cfg.nx = get("grid", "nx", int, cfg.nx)
    cfg.nv = get("grid", "nv", int, cfg.nv)
    cfg.Lx = get("grid", "Lx", float, cfg.Lx)
    cfg.Lv = get("grid", "Lv", float, cfg.Lv)
    cfg.family = get("potential", "family", str, cfg.family)
    if cp.has_section("potential"):
        for k in cp.options("potential"):
            if k in _POTENTIAL_PARAM_KEYS:
                cfg.potential_params[k] = cp.getfloat("potential", k)
    cfg.eps0 = get("model", "eps0", float, cfg.eps0)
    cfg.T = get("time", "T", float, cfg.T)
    cfg.dt = get("time", "dt", float, cfg.dt)
    cfg.pe_tol = get("solver", "pe_tol", float, cfg.pe_tol)
    cfg.pe_max_iters = get("solver", "pe_max_iters", int, cfg.pe_max_iters)
    cfg.pe_theta = get("solver", "pe_theta", float, cfg.pe_theta)
    cfg.alpha = get("diagnostics", "alpha", float, cfg.alpha)
    cfg.beta = get("diagnostics", "beta", float, cfg.beta)
    cfg.a = get("diagnostics", "a", float, cfg.a)
    cfg.delta = get("diagnostics", "delta", float, cfg.delta)
    cfg.sigma = get("diagnostics", "sigma", float, cfg.sigma)
    cfg.eps = get("diagnostics", "eps", float, cfg.eps)
    cfg.max_picard = get("diagnostics", "max_picard", int, cfg.max_picard)
    cfg.save_fields = get("output", "save_fields", bool, cfg.save_fields)
    cfg.seed = get("output", "seed", int, cfg.seed)
    cfg.outdir = get("output", "dir", str, cfg.outdir)

    from .vpfp import validate_indices
    if cfg.d not in (1, 2, 3):
        errs.append(f"grid.d = {cfg.d} must be 1, 2 or 3")
    if cfg.nx < 8 or cfg.nv < 8:
        errs.append(f"grid nx={cfg.nx}, nv={cfg.nv} must both be >= 8")
    if cfg.family not in ("quadratic", "quartic", "double_well"):
        errs.append(f"potential.family = {cfg.family!r} must be one of "
                    "quadratic, quartic, double_well")
    if abs(cfg.eps0) > 1:
        errs.append(f"model.eps0 = {cfg.eps0} violates |eps0| <= 1")
    if cfg.d == 2 and cfg.eps0 < 0:
        errs.append(f"model.eps0 = {cfg.eps0} < 0 is the unsupported "
                    "attractive d=2 regime")
    if cfg.T <= 0:
        errs.append("time.T must be positive")
    if cfg.dt is not None and cfg.dt <= 0:
        errs.append("time.dt must be positive or 'auto'")
    errs.extend(validate_indices(cfg.a, cfg.alpha, cfg.beta, cfg.delta,
                                 cfg.sigma, cfg.eps))
    if errs:
        raise ConfigError("; ".join(errs))

    sweep = {}
    if cp.has_section("sweep"):
        for k in cp.options("sweep"):
            sweep[k] = [v.strip() for v in cp.get("sweep", k).split(",")]
    return cfg, sweep


def _potential(cfg: SimConfig):
    from . import equilibrium as eqm
    fam = eqm.POTENTIAL_FAMILIES[cfg.family]
    p = cfg.potential_params
    if cfg.family == "quadratic":
        return fam(cfg.d, omega2=p.get("omega2", 1.0))
    if cfg.family == "quartic":
        return fam(cfg.d, c=p.get("c", 1.0))
    return fam(cfg.d, a=p.get("a", 0.1), b=p.get("b", 2.0))


def _grid(cfg: SimConfig):
    from .grids import PhaseGrid
    return PhaseGrid(cfg.d, cfg.nx, cfg.nv, cfg.Lx, cfg.Lv)


# ---------------------------------------------------------------------------
# report helpers

def _write_csv(path: Path, cfg: SimConfig, header: str, rows):
    with open(path, "w") as fh:
        for k, v in cfg.items():
            fh.write(f"# {k} = {v}\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _write_summary(path: Path, cfg: SimConfig, pairs):
    lines = [f"# {k} = {v}" for k, v in cfg.items()]
    lines += [f"{k}={_fmt(v)}" for k, v in pairs]
    text = "\n".join(lines) + "\n"
    path.write_text(text)
    sys.stdout.write(text)


# ---------------------------------------------------------------------------
# workflows

def _cmd_equilibrium(cfg: SimConfig, out: Path) -> int:
    from . import equilibrium as eqm
    from .fields import write_field
    eq = eqm.solve_poisson_emden(_potential(cfg), cfg.eps0, _grid(cfg),
                                 tol=cfg.pe_tol, max_iters=cfg.pe_max_iters,
                                 theta=cfg.pe_theta)
    _write_csv(out / "equilibrium_report.csv", cfg, "iter,sup_update",
               [(k, u) for k, u, _ in eq.history])
    write_field(out / "U_inf.krlx", eq.U_inf)
    write_field(out / "M_inf.krlx", eq.M_inf)
    _write_summary(out / "equilibrium_summary.txt", cfg, [
        ("iters", eq.iters), ("residual", eq.residual), ("Z", eq.Z),
        ("U_min", float(eq.U_inf.values.min())),
        ("box_note", "truncation box is a numerical choice; fields are "
                     "implicitly zero outside"),
    ])
    return 0


def _cmd_gap(cfg: SimConfig, out: Path) -> int:
    from .witten import spectral_gap
    rep = spectral_gap(_potential(cfg), _grid(cfg).spatial)
    _write_csv(out / "witten_eigenvalues.csv", cfg, "index,eigenvalue",
               list(enumerate(rep.eigenvalues)))
    _write_summary(out / "gap_summary.txt", cfg, [
        ("gap", rep.gap), ("kappa0", rep.kappa0), ("Ce", rep.Ce),
        ("C0", rep.C0), ("kappa", rep.kappa),
        ("ground_state_error", rep.ground_state_error),
    ])
    return 0


def _cmd_semigroup_verify(cfg: SimConfig, out: Path) -> int:
    from .fields import SpatialField
    from .phasecore import project_perp
    from .semigroup import (PropagatorConfig, gaussian_packet,
                            multiscale_probes, verify_perp_decay,
                            verify_short_time_exponents, wave_probes)
    grid = _grid(cfg)
    pot = _potential(cfg)
    V = SpatialField(grid.spatial, pot.on_grid(grid.spatial))
    gradV = SpatialField(grid.spatial, pot.grad_on_grid(grid.spatial))
    from .semigroup import KineticPropagator
    prop = KineticPropagator(grid, V.values, -gradV.values)
    dt = cfg.dt or prop.suggest_dt()
    pcfg = PropagatorConfig(grid, V, dt, (cfg.T,), grad_potential=gradV)
    probes_v = multiscale_probes(grid, "v") + wave_probes(grid, "v")
    probes_x = wave_probes(grid, "x")
    rep = verify_short_time_exponents(pcfg, alpha=1.0, beta=1.0,
                                      probes=probes_v, probes_x=probes_x)
    rows = [(t, nv, nx) for t, nv, nx in zip(rep.times, rep.n_v, rep.n_x)]
    _write_csv(out / "short_time_envelopes.csv", cfg, "t,n_v,n_x", rows)

    M = prop.maxwellian_field()
    f0p = project_perp(gaussian_packet(grid, x0=1.0, v0=-0.4), M)
    drep = verify_perp_decay(pcfg, f0p, M, T=max(cfg.T, 5.0))
    _write_csv(out / "perp_decay.csv", cfg, "t,bnorm",
               list(zip(drep.times, drep.norms)))
    _write_summary(out / "semigroup_summary.txt", cfg, [
        ("v_slope", rep.v_fit.slope), ("v_target", rep.v_target),
        ("x_slope", rep.x_fit.slope), ("x_target", rep.x_target),
        ("v_residual", rep.v_fit.residual_rms),
        ("x_residual", rep.x_fit.residual_rms),
        ("lambda_fit", drep.lambda_fit),
        ("lambda_star", drep.lambda_star if drep.lambda_star else "n/a"),
        ("mass_drift", drep.mass_drift),
    ])
    return 0


def _slow_mode_datum(grid, eq):
    """Gaussian shifted along the slow relaxation eigendirection."""
    from .semigroup import gaussian_packet
    h = grid.hx
    V = eq.V_inf.values
    idx = [s // 2 for s in V.shape]
    om2 = 0.0
    for ax in range(grid.d):
        i1 = list(idx); i1[ax] += 1
        i2 = list(idx); i2[ax] -= 1
        om2 += (V[tuple(i1)] + V[tuple(i2)] - 2 * V[tuple(idx)]) / h**2
    om2 /= grid.d
    om2 = min(max(om2, 1e-3), 0.249)
    mu = (1.0 - np.sqrt(1.0 - 4.0 * om2)) / 2.0
    x0 = 1.0
    return gaussian_packet(grid, x0=x0, v0=-mu * x0,
                           sx=1.0 / np.sqrt(om2), sv=1.0)


def _cmd_run(cfg: SimConfig, out: Path) -> int:
    from . import equilibrium as eqm
    from .fields import write_field
    from .vpfp import FixedPointConfig, conservation_check, decay_report, vpfp_run
    grid = _grid(cfg)
    pot = _potential(cfg)
    eq = eqm.solve_poisson_emden(pot, cfg.eps0, grid, tol=cfg.pe_tol,
                                 max_iters=cfg.pe_max_iters, theta=cfg.pe_theta)
    f0 = _slow_mode_datum(grid, eq)
    traj = vpfp_run(f0, pot, cfg.eps0, cfg.T, dt=cfg.dt, eq=eq)
    fcfg = FixedPointConfig(eps0=cfg.eps0, a=cfg.a, alpha=cfg.alpha,
                            beta=cfg.beta, delta=cfg.delta, sigma=cfg.sigma,
                            eps=cfg.eps, max_picard=cfg.max_picard)
    rep = decay_report(traj, eq, fcfg)
    cons = conservation_check(traj)
    rows = []
    for i, t in enumerate(rep.times):
        bab = rep.bab_dist[i] if rep.bab_dist is not None else float("nan")
        rows.append((t, rep.b_dist[i], bab, rep.field_dist[i], rep.entropy[i]))
    _write_csv(out / "decay.csv", cfg, "t,b_dist,bab_dist,field_dist,entropy",
               rows)
    if cfg.save_fields:
        fdir = out / "fields"
        fdir.mkdir(exist_ok=True)
        for i, f in enumerate(traj.snapshots):
            write_field(fdir / f"f_{i:04d}.krlx", f)
        write_field(fdir / "M_inf.krlx", eq.M_inf)

    def rate(r):
        return -r.slope if r is not None and not r.degenerate else float("nan")

    def resid(r):
        return r.residual_rms if r is not None and not r.degenerate else float("nan")

    _write_summary(out / "run_summary.txt", cfg, [
        ("rate_b", rate(rep.rate_b)), ("rate_b_residual", resid(rep.rate_b)),
        ("rate_bab", rate(rep.rate_bab)),
        ("rate_field", rate(rep.rate_field)),
        ("rate_field_residual", resid(rep.rate_field)),
        ("rate_entropy", rate(rep.rate_entropy)),
        ("rate_entropy_residual", resid(rep.rate_entropy)),
        ("entropy_min", min(rep.entropy)),
        ("mass_error", cons.mass_drift), ("min_value", cons.min_value),
        ("linf_ratio", cons.linf_ratio),
        ("degenerate", rep.degenerate),
        ("frac_norms_available", rep.frac_norms_available),
        ("box_note", "truncation box is a numerical choice; fields are "
                     "implicitly zero outside"),
    ])
    return 0


def _cmd_picard(cfg: SimConfig, out: Path) -> int:
    from . import equilibrium as eqm
    from .vpfp import FixedPointConfig, picard_iterate
    grid = _grid(cfg)
    pot = _potential(cfg)
    eq = eqm.solve_poisson_emden(pot, cfg.eps0, grid, tol=cfg.pe_tol,
                                 max_iters=cfg.pe_max_iters, theta=cfg.pe_theta)
    f0 = _slow_mode_datum(grid, eq)
    fcfg = FixedPointConfig(eps0=cfg.eps0, a=cfg.a, alpha=cfg.alpha,
                            beta=cfg.beta, delta=cfg.delta, sigma=cfg.sigma,
                            eps=cfg.eps, max_picard=cfg.max_picard)
    rep = picard_iterate(f0, eq, fcfg, cfg.T, Ve=pot)
    rows = [(n + 1, z, rep.contraction[n - 1] if 0 < n <= len(rep.contraction)
             else float("nan")) for n, z in enumerate(rep.z_norms)]
    _write_csv(out / "picard.csv", cfg, "iterate,z_norm,q", rows)
    _write_summary(out / "picard_summary.txt", cfg, [
        ("converged", rep.converged),
        ("non_contractive", rep.non_contractive),
        ("kappa", rep.kappa),
        ("mean_q", float(np.mean(rep.contraction)) if rep.contraction
         else float("nan")),
    ])
    return 0


def _cmd_report(cfg: SimConfig, out: Path) -> int:
    """Recompute decay diagnostics from stored snapshot fields."""
    from . import fieldsolve
    from .fields import read_field
    from .phasecore import bnorm
    from .vpfp import relative_entropy
    fdir = out / "fields"
    snaps = sorted(fdir.glob("f_*.krlx"))
    if not snaps:
        raise ConfigError(f"no stored fields found under {fdir}")
    M = read_field(fdir / "M_inf.krlx")
    E_inf = fieldsolve.field_from_density(fieldsolve.density(M), M.grid.d)
    rows = []
    for i, p in enumerate(snaps):
        f = read_field(p)
        E = fieldsolve.field_from_density(fieldsolve.density(f), f.grid.d)
        rows.append((i, bnorm(f - M, M), (E - E_inf).sup,
                     relative_entropy(f, M)))
    _write_csv(out / "report_from_fields.csv", cfg,
               "index,b_dist,field_dist,entropy", rows)
    return 0


_DISPATCH = {
    "equilibrium": _cmd_equilibrium,
    "gap": _cmd_gap,
    "semigroup-verify": _cmd_semigroup_verify,
    "run": _cmd_run,
    "picard": _cmd_picard,
    "report": _cmd_report,
}


# ---------------------------------------------------------------------------
# entry point

def _sweep_entry(args):
    cmd, cfg, outdir = args
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    return _DISPATCH[cmd](cfg, out)


def run_subcommand(argv) -> int:
    _limit_threads()
    if not argv or argv[0] in ("-h", "--help"):
        print(USAGE)
        return 0 if argv else 1
    cmd = argv[0]
    if cmd not in COMMANDS:
        sys.stderr.write(f"unknown subcommand {cmd!r}\n{USAGE}\n")
        return 1
    ap = argparse.ArgumentParser(prog=f"krlx {cmd}")
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default=None)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int, default=None)
    try:
        ns = ap.parse_args(argv[1:])
    except SystemExit:
        return 2
    try:
        cfg, sweep = load_config(ns.config)
    except ConfigError as e:
        sys.stderr.write(f"config validation failed: {e}\n")
        return 2
    if ns.seed is not None:
        cfg.seed = ns.seed
    outdir = Path(ns.out or cfg.outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        sys.stderr.write(f"config validation failed: output directory: {e}\n")
        return 2

    try:
        if not sweep:
            return _DISPATCH[cmd](cfg, outdir)
        entries = [[]]
        for key, vals in sweep.items():
            entries = [e + [(key, v)] for e in entries for v in vals]
        tasks = []
        for i, combo in enumerate(entries):
            c = SimConfig(**{**cfg.__dict__})
            c.potential_params = dict(cfg.potential_params)
            for key, val in combo:
                if not hasattr(c, key):
                    raise ConfigError(f"[sweep] key {key!r} is not a config field")
                cur = getattr(c, key)
                setattr(c, key, type(cur)(val) if cur is not None else float(val))
            tasks.append((cmd, c, str(outdir / f"sweep_{i:03d}")))
        if ns.jobs > 1:
            with ProcessPoolExecutor(max_workers=ns.jobs) as ex:
                codes = list(ex.map(_sweep_entry, tasks))
        else:
            codes = [_sweep_entry(t) for t in tasks]
        return max(codes)
    except ConfigError as e:
        sys.stderr.write(f"config validation failed: {e}\n")
        return 2
    except Exception as e:
        sys.stderr.write(f"numerical failure: {type(e).__name__}: {e}\n")
        return 3


def main() -> None:
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
