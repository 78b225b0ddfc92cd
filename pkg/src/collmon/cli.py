"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 invalid config or input
file, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import IntegrationError, assemble, propagate
from .io import (
    ConfigError,
    ScenarioConfig,
    complex_array,
    load_config,
    load_json,
    load_rates,
    parse_config,
    rates_to_json,
    write_json,
)
from .jumps import EnsembleConfig, ensemble_average, lindblad_operators
from .operators import CompositeSpace
from .thermal import QuadratureError, energy_shifts, rate_tensor

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("COLLMON_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError("COLLMON_THREADS", f"not an integer: {env!r}") from None
        if n < 1:
            raise ConfigError("COLLMON_THREADS", "must be at least 1")
        return n
    return 1


def _out_path(args, cfg: ScenarioConfig | None, key: str, default: str) -> Path:
    name = cfg.outputs.get(key, default) if cfg is not None else default
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def _provenance(cfg: ScenarioConfig, args, **extra) -> dict:
    q = cfg.quadrature
    return {
        "version": __version__,
        "units": cfg.units,
        "config": cfg.raw,
        "resolved": {
            "quadrature": {"v_nodes": q.v_nodes, "cos_nodes": q.cos_nodes,
                           "v_max_factor": q.v_max_factor, "rtol": q.rtol,
                           "energy_tolerance": q.energy_tolerance},
            "threads": _threads(args),
            **extra,
        },
    }


def _rates_for(cfg: ScenarioConfig, args):
    """Rates and shifts from ``--rates``, the config's ``rates`` file, or computed."""
    path = args.rates if getattr(args, "rates", None) else cfg.rates_path
    if path is None:
        return rate_tensor(cfg.model, cfg.gas, cfg.quadrature, _threads(args)), \
            energy_shifts(cfg.model, cfg.gas, cfg.quadrature), "computed"
    rates, shifts = load_rates(path)
    if rates.channels.labels != cfg.channels.labels or not np.array_equal(
        rates.channels.energies, cfg.channels.energies
    ):
        raise ConfigError("rates", f"channels in {path} do not match the config")
    bad = rates.check()
    if bad:
        raise ConfigError("rates", f"{path} violates rate-tensor invariants: {', '.join(bad)} "
                                   f"(psd_min_eig={rates.psd_min_eig():.3e})")
    return rates, shifts, str(path)


def cmd_rates(args) -> int:
    cfg = load_config(args.config)
    rates = rate_tensor(cfg.model, cfg.gas, cfg.quadrature, _threads(args))
    shifts = energy_shifts(cfg.model, cfg.gas, cfg.quadrature)
    obj = rates_to_json(rates, shifts, cfg.units, _provenance(cfg, args))
    path = _out_path(args, cfg, "rates", "rates.json")
    write_json(path, obj)
    print(f"wrote {path}")
    return EXIT_OK


def evolve_record(cfg: ScenarioConfig, args):
    rates, shifts, source = _rates_for(cfg, args)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        gen = assemble(cfg.channels, shifts, rates)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    rec = propagate(gen, cfg.initial_density, cfg.t_grid, cfg.method)
    return rec, source, gen


def cmd_evolve(args) -> int:
    cfg = load_config(args.config)
    rec, source, gen = evolve_record(cfg, args)
    path = _out_path(args, cfg, "evolve", "evolve.csv")
    rec.write_csv(path, _provenance(cfg, args, rates_source=source, method=cfg.method,
                                    near_degenerate=gen.near_degenerate))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_trajectories(args) -> int:
    cfg = load_config(args.config)
    rates, shifts, source = _rates_for(cfg, args)
    ops = lindblad_operators(rates, shifts)
    seed = cfg.seed if args.seed is None else args.seed
    initial = cfg.psi0 if cfg.psi0 is not None else cfg.initial_density
    ens = EnsembleConfig(cfg.n_traj, seed, cfg.t_grid, _threads(args))
    rec = ensemble_average(ops, initial, ens)
    path = _out_path(args, cfg, "trajectories", "trajectories.csv")
    rec.write_csv(path, _provenance(cfg, args, rates_source=source, seed=seed,
                                    n_traj=cfg.n_traj, n_jump_operators=len(ops)))
    print(f"wrote {path}")
    return EXIT_OK


def _fixture_checks(obj: dict):
    from .verify import check_collision_fixture

    checks = []
    fixtures = obj.get("collision_models", [])
    if not isinstance(fixtures, list):
        raise ConfigError("verify.collision_models", "expected a list")
    for i, f in enumerate(fixtures):
        p = f"verify.collision_models[{i}]"
        try:
            ds, de = int(f["dim_sys"]), int(f["dim_env"])
            space = CompositeSpace(ds, de)
            s = complex_array(f["s"], p + ".s", (space.dim, space.dim))
            gamma = complex_array(f["gamma"], p + ".gamma", (space.dim, space.dim))
            rho_env = complex_array(f["rho_env"], p + ".rho_env", (de, de))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(p, f"invalid collision-model fixture: {exc}") from None
        checks += check_collision_fixture(space, s, gamma, rho_env, f.get("label", p))
    return checks


def cmd_verify(args) -> int:
    from .verify import builtin_checks, check_generator, check_rates, report

    checks = []
    if not args.no_builtin:
        checks += builtin_checks(quick=args.quick)
    if args.config:
        obj = load_json(args.config)
        if "channels" in obj:
            cfg = parse_config(obj, Path(args.config).resolve().parent)
            rng = np.random.default_rng(0)
            checks += check_generator(cfg.model, cfg.gas, rng, "config scenario")
        checks += _fixture_checks(obj.get("verify", {}))
    if args.rates:
        rates, _ = load_rates(args.rates)
        checks += check_rates(rates, str(args.rates))
    for c in checks:
        print(c.line())
    rep = report(checks)
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        write_json(path / "verify.json", rep)
    if not rep["passed"]:
        print(f"verification failed: {', '.join(dict.fromkeys(rep['failed']))}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collmon",
        description="Collisional decoherence of a multichannel system in a thermal gas.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="scenario JSON file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (default: $COLLMON_THREADS or 1)")
        return p

    common(sub.add_parser("rates", help="compute the rate tensor and energy shifts")) \
        .set_defaults(func=cmd_rates)
    p = common(sub.add_parser("evolve", help="propagate the master equation"))
    p.add_argument("--rates", help="rates JSON to use instead of computing")
    p.set_defaults(func=cmd_evolve)
    p = common(sub.add_parser("trajectories", help="quantum-jump ensemble average"))
    p.add_argument("--rates", help="rates JSON to use instead of computing")
    p.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
    p.set_defaults(func=cmd_trajectories)
    p = sub.add_parser("verify", help="run the invariant suites")
    p.add_argument("--config", help="scenario and/or fixture JSON")
    p.add_argument("--rates", help="rates JSON to check")
    p.add_argument("--out", default=None, help="directory for verify.json")
    p.add_argument("--threads", type=int, default=None, help=argparse.SUPPRESS)
    p.add_argument("--quick", action="store_true", help="smaller sample sizes")
    p.add_argument("--no-builtin", action="store_true", help="skip the built-in model suites")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be at least 1")
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 1 << 64:
        parser.error("--seed must be an unsigned 64-bit integer")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (QuadratureError, IntegrationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
