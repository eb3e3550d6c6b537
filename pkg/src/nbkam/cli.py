"""Command-line entry point: ``nbkam <subcommand> [options]``.

Exit status is 0 on success, 1 when a check or a solve fails and 2 for usage
or configuration errors (always raised before any computation).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .action_path import PhiSolverError, phi
from .cache import CACHE_ENV
from .central_config import CentralConfigError, MinimalConfiguration, minimize_on_sphere
from .experiments import (
    ACCEPTANCE,
    CHECKS,
    ConfigError,
    ExperimentConfig,
    dump_json,
    field_csv,
    grid_points,
    make_cache,
    merge_config,
    run_acceptance,
    run_verify,
    sample_field,
)
from .homothetic import HomotheticOrbit, homothetic_report, orbit_at
from .mass_geometry import CollisionError, Configuration, Masses, rotation_tangent_basis
from .weak_kam import busemann, calibrating_curve, gradient_u

logger = logging.getLogger("nbkam")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    # the subparsers use SUPPRESS so a flag given before the subcommand is not reset
    d = (lambda v: v) if defaults else (lambda v: argparse.SUPPRESS)
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=d(None), help="experiment config (JSON)")
    p.add_argument("--cache-dir", default=d(None), help=f"phi cache directory (default: ${CACHE_ENV})")
    p.add_argument("--seed", type=int, default=d(None), help="seed for every random choice")
    p.add_argument("--threads", type=int, default=d(None), help="worker threads")
    p.add_argument("--out", default=d(None), help="write the result here instead of stdout")
    p.add_argument("-v", "--verbose", action="count", default=d(0))
    return p


def _field_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--central", help="central configuration (JSON); default: computed minimal one")
    p.add_argument("--horizon", type=float, help="horizon T of the receding target")
    p.add_argument("--nodes", type=int, help="discretization nodes K")
    p.add_argument("--invariant", action="store_true", help="infimum over the rotation subgroup")
    p.add_argument("--generators", help="skew generators of the subgroup (JSON list of matrices)")
    p.add_argument("--richardson", action="store_true", help="also evaluate at 4T for an error estimate")


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(defaults=False)
    parser = argparse.ArgumentParser(
        prog="nbkam", parents=[_global_flags(defaults=True)],
        description="Weak KAM solutions of the N-body problem: action potentials, Busemann functions, checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("central-config", parents=[common], help="minimal central configuration")
    p.add_argument("--masses", help="comma-separated masses")
    p.add_argument("--dim", type=int, help="spatial dimension")
    p.add_argument("--starts", "--seeds", dest="starts", type=int, help="number of random starts")

    p = sub.add_parser("homothetic", parents=[common], help="homothetic orbit report")
    p.add_argument("--central", help="central configuration (JSON)")
    p.add_argument("--masses")
    p.add_argument("--dim", type=int)
    p.add_argument("--nodes", type=int)
    p.add_argument("--t", type=float, help="print the orbit configuration at this time instead")
    p.add_argument("--verify", action="store_true", help="residual report (the default)")

    p = sub.add_parser("phi", parents=[common], help="action potential between two configurations")
    p.add_argument("--from", dest="source", required=True, help="start configuration (JSON)")
    p.add_argument("--to", dest="target", required=True, help="end configuration (JSON)")
    p.add_argument("--nodes", type=int)
    p.add_argument("--backend", choices=["jacobi", "time", "both"],
                   help="'both' reports the Jacobi result and its disagreement with the time-domain one")
    p.add_argument("--trajectory", action="store_true", help="include the minimizing path")

    p = sub.add_parser("busemann", parents=[common], help="Busemann value at a point")
    p.add_argument("--point", required=True, help="configuration (JSON)")
    _field_flags(p)
    p.add_argument("--gradient", action="store_true", help="also estimate Du and the eikonal residual")

    p = sub.add_parser("calibrate", parents=[common], help="calibrating curve from a point")
    p.add_argument("--point", required=True)
    _field_flags(p)
    p.add_argument("--curve", action="store_true", help="include the curve in the report")

    p = sub.add_parser("sample-field", parents=[common], help="tabulate u over a grid (CSV)")
    p.add_argument("--grid", required=True, help="grid specification (JSON)")
    _field_flags(p)
    p.add_argument("--no-gradient", action="store_true", help="skip gradient and eikonal columns")

    p = sub.add_parser("verify", parents=[common], help="run the verification suite")
    p.add_argument("--check", action="append", choices=sorted(CHECKS), help="run only these checks")
    p.add_argument("--acceptance", action="store_true",
                   help="run the acceptance criteria on their canonical problems")
    p.add_argument("--criterion", type=int, action="append", choices=sorted(ACCEPTANCE))
    p.add_argument("--timings", action="store_true", help="add wall-clock durations (not reproducible)")
    return parser


# --- input handling --------------------------------------------------------


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {what} {path}: {exc}") from None


def _read_configuration(path, what="configuration") -> Configuration:
    try:
        return Configuration.from_dict(_read_json(path, what))
    except ValueError as exc:
        raise UsageError(f"{what} {path}: {exc}") from None


def _parse_masses(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--masses expects comma-separated numbers, got {text!r}") from None


def load_config(args, point: Configuration | None = None) -> ExperimentConfig:
    """Config file, then problem implied by the point, then command-line flags."""
    doc = _read_json(args.config, "config") if getattr(args, "config", None) else {}
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    over = {
        "solver": {"nodes": getattr(args, "nodes", None), "backend": getattr(args, "backend", None)},
        "weak_kam": {"horizon": getattr(args, "horizon", None)},
        "central_config": {"seeds": getattr(args, "starts", None)},
        "rng_seed": getattr(args, "seed", None),
        "threads": getattr(args, "threads", None),
        "output": {"out": getattr(args, "out", None), "cache_dir": getattr(args, "cache_dir", None)},
    }
    if getattr(args, "invariant", False):
        over["weak_kam"]["mode"] = "invariant"
    if getattr(args, "richardson", False):
        over["weak_kam"]["richardson"] = True
    if getattr(args, "generators", None):
        gens = _read_json(args.generators, "generators")
        over["weak_kam"]["generators"] = gens.get("generators") if isinstance(gens, dict) else gens
        over["weak_kam"]["mode"] = "invariant"
    if getattr(args, "masses", None):
        over["problem"] = {"masses": _parse_masses(args.masses)}
    if getattr(args, "dim", None):
        over.setdefault("problem", {})["d"] = args.dim
    problem = doc.get("problem")
    if point is not None:
        if problem is not None:
            cfg_masses = [float(m) for m in problem.get("masses", [])]
            if cfg_masses != point.m.tolist() or problem.get("d", point.d) != point.d:
                raise ConfigError("point masses or dimension disagree with the config problem")
        over["problem"] = {"masses": point.m.tolist(), "d": point.d}
    elif problem is None and "problem" not in over:
        over["problem"] = {"masses": [1.0, 1.0]}
    return ExperimentConfig.from_dict(merge_config(doc, over))


def _orbit(args, cfg: ExperimentConfig) -> HomotheticOrbit:
    if getattr(args, "central", None):
        a = _read_configuration(args.central, "central configuration")
        if a.masses != Masses(cfg.masses) or a.d != cfg.d:
            raise ConfigError("central configuration masses or dimension disagree with the problem")
        try:
            mc = MinimalConfiguration.from_configuration(a)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return HomotheticOrbit.from_minimal(mc)
    mc = minimize_on_sphere(Masses(cfg.masses), cfg.d, seeds=cfg.cc_seeds, rng_seed=cfg.rng_seed,
                            tol=cfg.cc_tol, threads=cfg.threads)
    return HomotheticOrbit.from_minimal(mc)


def _emit(text: str, cfg_out) -> None:
    if cfg_out:
        Path(cfg_out).write_text(text)
    else:
        sys.stdout.write(text)


# --- subcommands -----------------------------------------------------------


def cmd_central_config(args) -> int:
    cfg = load_config(args)
    mc = minimize_on_sphere(Masses(cfg.masses), cfg.d, seeds=cfg.cc_seeds, rng_seed=cfg.rng_seed,
                            tol=cfg.cc_tol, threads=cfg.threads)
    _emit(dump_json(mc.to_dict()), cfg.out)
    return EXIT_OK


def cmd_homothetic(args) -> int:
    if args.central:
        a = _read_configuration(args.central, "central configuration")
        args.masses = ",".join(map(repr, a.m.tolist()))
        args.dim = a.d
    cfg = load_config(args)
    h = _orbit(args, cfg)
    if args.t is not None and not args.verify:
        if args.t < 0:
            raise UsageError("--t must be non-negative")
        _emit(dump_json(orbit_at(h, args.t).to_dict()), cfg.out)
        return EXIT_OK
    rep = homothetic_report(h, nodes=cfg.nodes)
    rep["configuration"] = h.a.to_dict()
    _emit(dump_json(rep), cfg.out)
    return EXIT_OK


def cmd_phi(args) -> int:
    x = _read_configuration(args.source, "start configuration")
    y = _read_configuration(args.target, "end configuration")
    if x.masses != y.masses or x.d != y.d:
        raise UsageError("endpoints carry different masses or dimensions")
    for name, c in (("start", x), ("end", y)):
        if not c.is_collision_free():
            raise UsageError(f"{name} configuration has a collision")
    both = args.backend == "both"
    if both:
        args.backend = "jacobi"
    cfg = load_config(args, point=x)
    res = phi(x, y, cfg.phi_options())
    doc = res.to_dict(with_trajectory=args.trajectory)
    ok = res.converged
    if both:
        other = phi(x, y, replace(cfg.phi_options(), backend="time"))
        doc["time_domain"] = other.to_dict(with_trajectory=False)
        doc["backend_disagreement"] = abs(other.phi - res.phi) / max(res.phi, 1e-300)
        ok = ok and other.converged
    _emit(dump_json(doc), cfg.out)
    return EXIT_OK if ok else EXIT_FAIL


def _prepare_field(args):
    x = _read_configuration(args.point, "point")
    cfg = load_config(args, point=x)
    if not x.is_collision_free():
        raise UsageError("point has a collision")
    spec = cfg.weak_kam_spec(_orbit(args, cfg))
    return x, cfg, spec


def cmd_busemann(args) -> int:
    x, cfg, spec = _prepare_field(args)
    cache = make_cache(cfg)
    if args.gradient:
        est = gradient_u(x, spec, cache)
        doc = est.sample.to_dict()
        doc.update(gradient_legendre=est.legendre.tolist(), gradient_disagreement=est.disagreement,
                   non_differentiable_suspect=est.suspect, eikonal_residual=est.eikonal_residual(est.sample.x))
    else:
        doc = busemann(x, spec, cache).to_dict()
    doc["mode"] = spec.mode
    doc["horizon"] = spec.horizon
    _emit(dump_json(doc), cfg.out)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    x, cfg, spec = _prepare_field(args)
    rep = calibrating_curve(x, spec, cache=make_cache(cfg))
    doc = rep.to_dict(with_curve=args.curve)
    if spec.generators is not None:
        _, rank = rotation_tangent_basis(x, spec.generators)
        doc["orbit_dimension"] = rank
    _emit(dump_json(doc), cfg.out)
    return EXIT_OK


def cmd_sample_field(args) -> int:
    pts = grid_points(_read_json(args.grid, "grid"))
    cfg = load_config(args, point=pts[0])
    spec = cfg.weak_kam_spec(_orbit(args, cfg))
    rows = sample_field(pts, spec, make_cache(cfg), gradient=not args.no_gradient, threads=cfg.threads)
    _emit(field_csv(rows, pts[0].n, pts[0].d), cfg.out)
    return EXIT_OK if all(r["status"] != "failed" for r in rows) else EXIT_FAIL


def cmd_verify(args) -> int:
    if args.acceptance or args.criterion:
        base = load_config(args) if args.config else ExperimentConfig()
        base = replace(base, rng_seed=args.seed if args.seed is not None else base.rng_seed,
                       threads=args.threads or base.threads, cache_dir=args.cache_dir or base.cache_dir)
        report = run_acceptance(args.criterion, base=base, timings=args.timings)
        out = args.out
    else:
        cfg = load_config(args)
        report = run_verify(cfg, checks=args.check, timings=args.timings)
        out = cfg.out
    for chk in report["checks"]:
        status = chk["status"].upper()
        label = f"criterion {chk['criterion']}: " if "criterion" in chk else ""
        print(f"[{status}] {label}{chk['name']}", file=sys.stderr)
    _emit(dump_json(report), out)
    return EXIT_OK if report["passed"] else EXIT_FAIL


COMMANDS = {
    "central-config": cmd_central_config,
    "homothetic": cmd_homothetic,
    "phi": cmd_phi,
    "busemann": cmd_busemann,
    "calibrate": cmd_calibrate,
    "sample-field": cmd_sample_field,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose or 0, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"nbkam {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PhiSolverError, CentralConfigError, CollisionError) as exc:
        print(f"nbkam {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
