"""Command-line entry point: ``fdelab <subcommand> [flags]``.

Settings come from an optional INI file (``--config``) with sections
``[params]``, ``[grid]``, ``[evolution]``, ``[experiment]`` and
``[output]``; flags override file values. Exit codes: 0 success, 1 solver
failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, FdeLabError, SolverError
from .evolution import EvolutionConfig, evolve_fde
from .experiments import (StabilityProbeConfig, fit_lojasiewicz, fit_lojasiewicz_points,
                          instability_certificate, lojasiewicz_cloud, nehari_identity_residual,
                          project_to_phase_set, random_positive_field, stability_probe,
                          synthetic_lojasiewicz_cloud)
from .functionals import FdeParams, chain_rule_check, tartar_gap
from .geometry import Field, build_grid
from .profiles import (is_radial, instability_threshold, minimize_rayleigh,
                       radial_profile_on_polar, shoot_radial)
from .rescaled import ShootingConfig, check_continuous_dependence, evolve_rescaled

log = logging.getLogger("fdelab")

SUBCOMMANDS = ("evolve", "profile", "rescaled", "stability-probe", "annulus", "ls-fit",
               "invariants")

# key -> (section, type)
KEYS = {
    "m": ("params", float),
    "N": ("params", int),
    "domain": ("grid", str),
    "a": ("grid", float),
    "b": ("grid", float),
    "n": ("grid", int),
    "ntheta": ("grid", int),
    "dt": ("evolution", float),
    "ds": ("evolution", float),
    "newton_tol": ("evolution", float),
    "shoot_window": ("evolution", float),
    "shoot_horizon": ("evolution", float),
    "shoot_xtol": ("evolution", float),
    "s_horizon": ("experiment", float),
    "delta": ("experiment", float),
    "epsilon": ("experiment", float),
    "samples": ("experiment", int),
    "seed": ("experiment", int),
    "method": ("experiment", str),
    "out": ("output", str),
}
DOMAINS = ("interval", "ball", "annulus", "polar")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [params]/[grid]/[evolution]/[experiment]/[output]")
    common.add_argument("--m", type=float, help="exponent m > 2")
    common.add_argument("--N", type=int, help="space dimension")
    common.add_argument("--domain", choices=DOMAINS)
    common.add_argument("--a", type=float, help="left end or inner radius")
    common.add_argument("--b", type=float, help="right end or outer radius")
    common.add_argument("--n", "--nr", dest="n", type=int, help="unknowns in the (radial) direction")
    common.add_argument("--ntheta", type=int, help="angular nodes (polar)")
    common.add_argument("--dt", type=float, help="initial physical time step")
    common.add_argument("--ds", type=float, help="rescaled time step")
    common.add_argument("--s-horizon", dest="s_horizon", type=float)
    common.add_argument("--delta", type=float, help="perturbation size (fraction of ||phi||)")
    common.add_argument("--epsilon", type=float, help="departure threshold (fraction of ||phi||)")
    common.add_argument("--samples", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--method", choices=("rayleigh", "shooting"))
    common.add_argument("--probe", action="store_true", help="annulus: also run the stability probe")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="fdelab", description="Fast diffusion numerical laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def load_settings(args: argparse.Namespace) -> dict:
    """Merge the INI file (if any) with flags; flags win."""
    values: dict = {}
    if args.config:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            read = cp.read(args.config)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if not read:
            raise ConfigError(f"cannot read config file {args.config}")
        for section in cp.sections():
            for key, raw in cp.items(section):
                if key not in KEYS or KEYS[key][0] != section:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                try:
                    values[key] = KEYS[key][1](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    for key in KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    for req in ("m", "domain"):
        if req not in values:
            raise ConfigError(f"missing required setting --{req}")
    if values["domain"] not in DOMAINS:
        raise ConfigError(f"unknown domain {values['domain']!r}")
    return values


def make_grid(cfg: dict):
    dom = cfg["domain"]
    if dom == "interval":
        if cfg.get("N", 1) != 1:
            raise ConfigError("interval domains have N = 1")
        return build_grid("interval", a=cfg.get("a", 0.0), b=cfg.get("b", 1.0), n=cfg.get("n", 256)), 1
    if dom == "ball":
        N = cfg.get("N", 3)
        return build_grid("radial", a=0.0, b=cfg.get("b", 1.0), n=cfg.get("n", 256), N=N), N
    if dom == "annulus":
        N = cfg.get("N", 2)
        return build_grid("radial", a=cfg.get("a", 1.0), b=cfg.get("b", 2.0), n=cfg.get("n", 256), N=N), N
    if cfg.get("N", 2) != 2:
        raise ConfigError("polar domains have N = 2")
    return build_grid("polar2d", a=cfg.get("a", 1.0), b=cfg.get("b", 1.1), n=cfg.get("n", 32),
                      n_theta=cfg.get("ntheta", 128)), 2


def evo_config(cfg: dict, polar: bool) -> EvolutionConfig:
    kw = {"ds": cfg.get("ds", 0.05 if polar else 0.02)}
    if "dt" in cfg:
        kw["dt_init"] = cfg["dt"]
    if "newton_tol" in cfg:
        kw["newton_tol"] = cfg["newton_tol"]
    return EvolutionConfig(**kw)


def shoot_config(cfg: dict, polar: bool) -> ShootingConfig:
    # polar grids trade separatrix precision for run time
    d = (5.0, 15.0, 1e-10) if polar else (10.0, 35.0, 1e-14)
    return ShootingConfig(window=cfg.get("shoot_window", d[0]), horizon=cfg.get("shoot_horizon", d[1]),
                          xtol=cfg.get("shoot_xtol", d[2]))


def least_energy(p, grid, cfg):
    if cfg.get("method") == "shooting":
        return shoot_radial(p, grid)
    return minimize_rayleigh(p, grid)


# -- subcommands ----------------------------------------------------------------

def cmd_evolve(p, grid, cfg, out):
    u0 = random_positive_field(grid, cfg.get("seed", 0))
    traj, est = evolve_fde(u0, p, evo_config(cfg, grid.shape == "polar2d"))
    io.write_csv(out / "trajectory.csv", io.TRAJECTORY_COLUMNS, io.trajectory_rows(traj))
    io.write_field(out / "initial.fde", u0)
    io.write_field(out / "final.fde", traj.snapshot(len(traj.snapshots) - 1), traj.times[-1])
    summary = {"extinction": est.to_dict(), "accepted_steps": traj.accepted_steps,
               "expected_exponent": 1 / (p.m - 2)}
    return summary, ["trajectory.csv", "initial.fde", "final.fde"]


def cmd_profile(p, grid, cfg, out):
    res = least_energy(p, grid, cfg)
    return res.summary(), io.write_profile(out, "profile", res)


def cmd_rescaled(p, grid, cfg, out):
    polar = grid.shape == "polar2d"
    ecfg = evo_config(cfg, polar)
    w = random_positive_field(grid, cfg.get("seed", 0))
    v0 = project_to_phase_set(w, p, ecfg)
    tr = evolve_rescaled(v0, cfg.get("s_horizon", 20.0), p, ecfg, shoot=shoot_config(cfg, polar))
    io.write_csv(out / "rescaled.csv", io.RESCALED_COLUMNS, tr.rows())
    io.write_field(out / "terminal.fde", tr.terminal(), tr.s_times[-1])
    summary = {
        "terminal_residual": tr.terminal_residual,
        "converged_candidate": tr.converged,
        "terminal_energy": float(tr.J[-1]),
        "max_ledger": float(tr.ledger.max()),
        "max_R_increase": float(np.max(np.diff(tr.R))),
        "scale_events": tr.scale_events,
    }
    return summary, ["rescaled.csv", "terminal.fde"]


def _probe_cfg(cfg, default_samples=8, default_horizon=20.0):
    return StabilityProbeConfig(delta=cfg.get("delta", 1e-2), epsilon=cfg.get("epsilon"),
                                num_samples=cfg.get("samples", default_samples),
                                s_horizon=cfg.get("s_horizon", default_horizon),
                                seed=cfg.get("seed", 0))


def cmd_probe(p, grid, cfg, out):
    polar = grid.shape == "polar2d"
    phi = radial_profile_on_polar(p, grid) if polar else least_energy(p, grid, cfg)
    rep = stability_probe(phi, _probe_cfg(cfg), p, evo_config(cfg, polar), shoot_config(cfg, polar))
    files = io.write_profile(out, "phi", phi)
    return rep.summary(), files


def cmd_annulus(p, grid, cfg, out):
    if grid.shape != "polar2d":
        raise ConfigError("annulus experiment needs --domain polar")
    s = grid.spec
    lhs, ok = instability_threshold(s.a, s.b, 2, p.m)
    rad = radial_profile_on_polar(p, grid)
    mn = minimize_rayleigh(p, grid)
    cert = instability_certificate(rad, p, evo_cfg=evo_config(cfg, True))
    summary = {
        "threshold_lhs": lhs,
        "threshold_rhs": (p.m - 2) / (p.N - 1),
        "threshold_satisfied": ok,
        "radial_energy": rad.energy,
        "minimizer_energy": mn.energy,
        "minimizer_is_radial": is_radial(mn.phi),
        "minimizer_angular_variance": mn.angular_variance,
        "certificate": cert.summary(),
    }
    files = io.write_profile(out, "radial", rad) + io.write_profile(out, "minimizer", mn)
    if cfg.get("probe"):
        rep = stability_probe(rad, _probe_cfg(cfg, 4, 10.0), p, evo_config(cfg, True),
                              shoot_config(cfg, True))
        summary["probe"] = rep.summary()
    return summary, files


def cmd_lsfit(p, grid, cfg, out):
    phi = least_energy(p, grid, cfg)
    polar = grid.shape == "polar2d"
    cloud = lojasiewicz_cloud(phi, p, n_traj=cfg.get("samples", 4), seed=cfg.get("seed", 1),
                              s_end=cfg.get("s_horizon", 20.0), evo_cfg=evo_config(cfg, polar))
    fit = fit_lojasiewicz(phi, cloud)
    synth = fit_lojasiewicz_points(*synthetic_lojasiewicz_cloud(0.3, 1.0))
    rows = ((float(j), float(g)) for t in cloud for j, g in zip(t.jprime, t.J - phi.energy))
    io.write_csv(out / "ls_cloud.csv", ("Jprime_hminus1", "J_minus_Jphi"), rows)
    return {"fit": fit.__dict__, "synthetic_theta_planted": 0.3,
            "synthetic_theta_fitted": synth.theta}, ["ls_cloud.csv"]


def cmd_invariants(p, grid, cfg, out):
    polar = grid.shape == "polar2d"
    seed = cfg.get("seed", 0)
    ecfg = evo_config(cfg, polar)
    # smooth fields keep J moderate, so the absolute identity tolerance sits above roundoff
    nehari = [nehari_identity_residual(random_positive_field(grid, seed + k), p)
              for k in range(cfg.get("samples", 50))]
    a, b = np.meshgrid(np.linspace(-2, 2, 1000), np.linspace(-2, 2, 1000))
    gap = tartar_gap(a, b, p)
    scale = (np.abs(a) + np.abs(b)) ** p.m
    tartar_min = float(np.min(gap / np.maximum(scale, 1e-300)))
    v0 = project_to_phase_set(random_positive_field(grid, seed), p, ecfg)
    tr = evolve_rescaled(v0, cfg.get("s_horizon", 5.0), p, ecfg, shoot=shoot_config(cfg, polar))
    chain = all(chain_rule_check(Field(grid, (y - x) / ecfg.ds), Field(grid, y), p)
                for x, y in zip(tr.snapshots[:-1], tr.snapshots[1:]))
    dep = check_continuous_dependence(v0, v0 * (1 + 1e-3), min(tr.s_times[-1], 5.0), p, ecfg)
    summary = {
        "nehari_constraint_max": max(c for c, _ in nehari),
        "nehari_identity_max": max(i for _, i in nehari),
        "tartar_min_relative": tartar_min,
        "ledger_max": float(tr.ledger.max()),
        "R_increase_max": float(np.max(np.diff(tr.R))),
        "chain_rule_all": chain,
        "dependence_max_ratio": dep.max_ratio,
    }
    summary["all_passed"] = bool(summary["nehari_constraint_max"] <= 1e-10
                                 and summary["nehari_identity_max"] <= 1e-8
                                 and tartar_min >= -1e-12 and summary["ledger_max"] <= 1e-10
                                 and summary["R_increase_max"] <= 1e-10 and chain
                                 and dep.passed())
    return summary, []


COMMANDS = {
    "evolve": cmd_evolve,
    "profile": cmd_profile,
    "rescaled": cmd_rescaled,
    "stability-probe": cmd_probe,
    "annulus": cmd_annulus,
    "ls-fit": cmd_lsfit,
    "invariants": cmd_invariants,
}


def run_cli(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_settings(args)
        if args.probe:
            cfg["probe"] = True
        p = FdeParams(cfg["m"], cfg.get("N", 1 if cfg["domain"] == "interval" else
                                        3 if cfg["domain"] == "ball" else 2))
        cfg["N"] = p.N
        grid, _ = make_grid(cfg)
        out = Path(cfg.get("out", "fdelab-run"))
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
        t0 = time.perf_counter()
        log.info("running %s on %s", args.command, grid.spec)
        summary, files = COMMANDS[args.command](p, grid, cfg, out)
        wall = time.perf_counter() - t0
        summary = {"command": args.command, "grid": grid.spec.to_dict(),
                   "params": {"m": p.m, "N": p.N}, **summary}
        io.write_json(out / "summary.json", summary)
        echo = {k: v for k, v in cfg.items()}
        echo["command"] = args.command
        io.write_manifest(out, echo, wall, files + ["summary.json", "manifest.json"])
        print(f"{args.command}: wrote {out}/summary.json")
        return 0
    except ConfigError as exc:
        print(f"fdelab: configuration error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except SolverError as exc:
        print(f"fdelab: solver error: {exc}", file=sys.stderr)
        return 1
    except FdeLabError as exc:
        print(f"fdelab: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
