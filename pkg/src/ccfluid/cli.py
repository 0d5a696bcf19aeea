"""Command-line front end: config ingestion, subcommand dispatch, and
CSV/JSON artifact emission (figures rendered alongside the data files).

Exit codes: 0 success, 2 configuration/usage error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .model import ConfigError, load_config
from .dynamics import (
    AdaptationPolicy,
    IntegrationError,
    IntegratorSettings,
    simulate,
    write_trace_csv,
    write_trace_jsonl,
)
from .equilibrium import (
    BracketError,
    build_update_functions,
    long_term_equilibrium,
    solve_short_term,
)
from .stability import SweepSpec, linearize, sweep, write_sweep_csv
from .oscillation import StableConfigError, fairness_bounds

log = logging.getLogger("ccfluid")

EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_POLICY_CHOICES = ("vanilla", "smoothed", "randomized", "detect-freeze", "bbrv2", "bbrv3")


def _build_policy(args) -> AdaptationPolicy:
    variant = args.policy.replace("-", "_")
    return AdaptationPolicy(
        variant=variant,
        theta=args.theta,
        seed=args.seed,
        kappa=args.kappa,
        history_len=args.history_len,
        gain=args.gain,
    )


def _common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True,
                        help="path to the network-configuration JSON file")
    parser.add_argument("--out", default="ccfluid-out",
                        help="output directory; all artifacts are written inside it")
    parser.add_argument("--seed", type=int, default=0,
                        help="RNG seed (randomized probe scheduling), dimensionless")
    parser.add_argument("--policy", choices=_POLICY_CHOICES, default="vanilla",
                        help="min-RTT adaptation policy")
    parser.add_argument("--theta", type=float, default=1.0 / 6.0,
                        help="smoothed-update weight in (0, 1], dimensionless")
    parser.add_argument("--kappa", type=float, default=0.1,
                        help="detect-freeze threshold (stddev/mean), dimensionless")
    parser.add_argument("--history-len", type=int, default=5,
                        help="detect-freeze history length, probe measurements")
    parser.add_argument("--gain", type=float, default=1.25,
                        help="bbrv3 probing-gain multiplier >= 1, dimensionless")
    parser.add_argument("--no-plot", action="store_true",
                        help="skip figure rendering next to the data files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccfluid",
        description="Fluid-model simulator and stability analysis for "
                    "BBR/CUBIC competition at a shared bottleneck.",
    )
    parser.add_argument("--version", action="version", version=f"ccfluid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="integrate the fluid model and emit a trace")
    _common_flags(p)
    p.add_argument("--horizon", type=float, default=120.0,
                   help="simulated duration in seconds")
    p.add_argument("--dt", type=float, default=None,
                   help="integrator step in seconds (default min(1 ms, prop delay/40))")
    p.add_argument("--probe-period", type=float, default=10.0,
                   help="seconds between RTT-probing steps")
    p.add_argument("--decimate", type=int, default=20,
                   help="record every Nth integrator step, dimensionless")
    p.add_argument("--jsonl", action="store_true",
                   help="additionally write the trace as JSON lines")

    p = sub.add_parser("equilibrium",
                       help="solve the short-term equilibrium or the long-term fixed point")
    _common_flags(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--alpha", type=float,
                       help="probing strength in (0, 1.25], dimensionless")
    group.add_argument("--long-term", action="store_true",
                       help="solve the long-term fixed point of the update map")

    p = sub.add_parser("sweep", help="instability condition over a parameter grid")
    _common_flags(p)
    p.add_argument("--x", required=True, metavar="NAME:LO:HI[:STEPS]",
                   help="x axis: capacity (Mbps), prop_delay (s), "
                        "buffer (BDP multiples) or btl_delay_fraction (share of prop delay)")
    p.add_argument("--y", required=True, metavar="NAME:LO:HI[:STEPS]",
                   help="y axis, same parameter syntax and units as --x")
    p.add_argument("--steps", type=int, default=20,
                   help="default step count per axis when not given inline")

    p = sub.add_parser("bounds", help="limit-cycle fairness bounds (1 BBR vs 1 CUBIC)")
    _common_flags(p)

    p = sub.add_parser("linearize",
                       help="Jacobian, eigenvalues and center-manifold coefficient")
    _common_flags(p)
    p.add_argument("--alpha", type=float, default=None,
                   help="probing strength in (0, 1.25]; defaults to the strength "
                        "the long-term window produces")
    return parser


def _parse_axis(text: str, default_steps: int) -> SweepSpec:
    parts = text.split(":")
    if len(parts) not in (3, 4):
        raise ConfigError(f"axis {text!r} must be NAME:LO:HI[:STEPS]")
    try:
        lo, hi = float(parts[1]), float(parts[2])
        steps = int(parts[3]) if len(parts) == 4 else default_steps
    except ValueError as exc:
        raise ConfigError(f"malformed axis {text!r}: {exc}") from exc
    if steps < 1 or hi < lo:
        raise ConfigError(f"axis {text!r} needs hi >= lo and steps >= 1")
    return SweepSpec(parts[0], lo, hi, steps)


class _Run:
    """Collects output paths and writes the manifest at the end."""

    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()
        self.cfg = load_config(args.config)

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(str(p))
        return p

    def write_json(self, name: str, payload: dict) -> Path:
        p = self.path(name)
        with open(p, "w") as handle:
            json.dump(payload, handle, indent=2)
            handle.write("\n")
        return p

    def finish(self) -> None:
        manifest = {
            "subcommand": self.args.command,
            "config": self.cfg.to_dict(),
            "seed": self.args.seed,
            "policy": self.args.policy,
            "outputs": self.outputs,
            "version": __version__,
            "duration_s": time.perf_counter() - self.t0,
        }
        with open(self.out / "manifest.json", "w") as handle:
            json.dump(manifest, handle, indent=2)
            handle.write("\n")
        log.info("wrote %d artifacts to %s", len(self.outputs), self.out)


def cmd_simulate(args) -> int:
    run = _Run(args)
    policy = _build_policy(args)
    settings = IntegratorSettings(
        dt=args.dt, probe_period=args.probe_period, horizon=args.horizon
    )
    trace = simulate(run.cfg, policy, settings, decimate=args.decimate)
    write_trace_csv(trace, run.path("trace.csv"))
    if args.jsonl:
        write_trace_jsonl(trace, run.path("trace.jsonl"))
    if not args.no_plot:
        from .plots import render_trace

        render_trace(trace, run.path("trace.png"), run.cfg.capacity)
    run.finish()
    return 0


def cmd_equilibrium(args) -> int:
    run = _Run(args)
    cfg = run.cfg
    uf = build_update_functions(cfg)
    if args.long_term:
        w_bar = long_term_equilibrium(cfg, uf)
        alpha = uf.alpha_update(w_bar)
    else:
        w_bar = long_term_equilibrium(cfg, uf)
        alpha = args.alpha
    eq = solve_short_term(alpha, cfg)
    report = {
        "alpha": alpha,
        "alpha_hat": eq.alpha_hat,
        "s_eq": eq.s_eq,
        "w_max_eq": eq.w_max_eq,
        "x_btl_eq": eq.x_btl_eq,
        "branch": eq.branch,
        "w0": uf.w0,
        "w1": uf.w1,
        "w_lt": uf.w_lt,
        "w_gt": uf.w_gt,
        "w_bar": w_bar,
        "residual": abs(w_bar - uf.w_update(w_bar)) / w_bar,
    }
    run.write_json("equilibrium.json", report)
    if not args.no_plot:
        from .plots import render_update_map

        render_update_map(uf, w_bar, run.path("update_map.png"))
    run.finish()
    return 0


def cmd_sweep(args) -> int:
    run = _Run(args)
    spec_x = _parse_axis(args.x, args.steps)
    spec_y = _parse_axis(args.y, args.steps)
    cells = sweep(run.cfg, spec_x, spec_y, policy=args.policy.replace("-", "_"))
    write_sweep_csv(cells, run.path("sweep.csv"))
    failures = sum(1 for c in cells if c.verdict is None)
    if failures:
        log.warning("%d of %d sweep cells failed; see empty rows", failures, len(cells))
    if not args.no_plot:
        from .plots import render_sweep

        render_sweep(cells, run.path("sweep.png"))
    run.finish()
    return 0


def cmd_bounds(args) -> int:
    run = _Run(args)
    from .equilibrium import build_update_functions
    from .oscillation import iterate_longterm, write_longterm_csv

    uf = build_update_functions(run.cfg)
    bounds = fairness_bounds(run.cfg, uf=uf)
    run.write_json("bounds.json", bounds.to_dict())
    longterm = iterate_longterm(run.cfg, uf.w_gt, 25, uf=uf)
    write_longterm_csv(longterm, run.path("longterm.csv"))
    if not args.no_plot:
        from .plots import render_bounds

        policy = AdaptationPolicy(variant="vanilla")
        trace = simulate(run.cfg, policy, IntegratorSettings(horizon=120.0))
        render_bounds(bounds, trace, run.path("bounds.png"))
    run.finish()
    return 0


def cmd_linearize(args) -> int:
    run = _Run(args)
    cfg = run.cfg
    if args.alpha is None:
        uf = build_update_functions(cfg)
        alpha = uf.alpha_update(long_term_equilibrium(cfg, uf))
    else:
        alpha = args.alpha
    eq = solve_short_term(alpha, cfg)
    report = linearize(eq, cfg)
    payload = {"alpha": alpha, "equilibrium": eq.to_dict(), **report.to_dict()}
    run.write_json("linearization.json", payload)
    run.finish()
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "equilibrium": cmd_equilibrium,
    "sweep": cmd_sweep,
    "bounds": cmd_bounds,
    "linearize": cmd_linearize,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CCFLUID_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (IntegrationError, BracketError, StableConfigError) as exc:
        print(f"ccfluid: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigError as exc:
        print(f"ccfluid: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"ccfluid: invalid parameter: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"ccfluid: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
