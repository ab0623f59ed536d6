"""Command-line interface: ``qrisk {solve,simulate,evaluate,master,compare}``.

Exit codes: 0 ok, 2 configuration error, 3 solver failure, 4 artifact
mismatch, 5 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, load_config, parse_config, default_tree
from .dynprog.grid import RISK_NEUTRAL, RISK_SENSITIVE, Policy
from .dynprog.solver import SolverError, backward_solve
from .model import ControlDomainError, ModelError, two_level_model
from .montecarlo import (
    ControllerHandle,
    constant_controller,
    estimate_cost_rn,
    estimate_cost_rs_physical,
    estimate_cost_rs_reference,
    policy_controller,
    propagate_master,
    run_closed_loop,
    zero_controller,
)
from .operators import StateError, bloch_to_matrix, matrix_to_bloch
from .stochastic import NoiseStream, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_ARTIFACT, EXIT_NUMERIC = 0, 2, 3, 4, 5
ESTIMATORS = ("rs-ref", "rs-phys", "rn-phys", "rn-ref")

log = logging.getLogger("qrisk")


class Context:
    def __init__(self, cfg: RunConfig, out: Path, threads: int):
        self.cfg = cfg
        self.out = out
        self.threads = threads or (os.cpu_count() or 1)
        self.hash = cfg.digest()
        x, y, z = cfg.initial_state
        self.spec = two_level_model(cfg.params, pi0=bloch_to_matrix(1.0, x, y, z))

    def header(self, **extra) -> dict:
        out = {"config": self.cfg.as_dict(), "config_hash": self.hash, "seed": self.cfg.master_seed}
        out["config"].pop("outputs")
        out.update(extra)
        return out


def _parse_complex(text: str) -> complex:
    try:
        return complex(text.replace(" ", ""))
    except ValueError:
        raise ConfigError(f"cannot parse control value {text!r}") from None


def _check_compatible(ctx: Context, pol: Policy, ignore_mu: bool = False) -> None:
    mine = ctx.cfg.params.as_dict()
    theirs = pol.params.as_dict()
    if ignore_mu or pol.mode == RISK_NEUTRAL:
        mine.pop("mu")
        theirs.pop("mu")
    if mine != theirs:
        diff = sorted(k for k in mine if mine[k] != theirs[k])
        raise io.ArtifactError(f"policy was solved for a different model (fields {', '.join(diff)}); re-run solve")


def _controller(ctx: Context, args, ignore_mu: bool = False) -> tuple[ControllerHandle, str]:
    if getattr(args, "zero_control", False):
        return zero_controller(), ""
    if getattr(args, "constant", None) is not None:
        u = _parse_complex(args.constant)
        ctx.spec.check_control(u)
        return constant_controller(u), ""
    if not args.policy:
        raise ConfigError("a --policy file, --zero-control or --constant is required")
    _, pol, header = io.load_solution(args.policy)
    _check_compatible(ctx, pol, ignore_mu)
    return policy_controller(pol), header["content_sha256"]


def cmd_solve(ctx: Context, args) -> int:
    mode = args.mode
    vg, pol = backward_solve(ctx.cfg.params, ctx.cfg.dp, mode)
    path = ctx.out / f"solution-{mode}.qpol"
    digest = io.save_solution(path, vg, pol, {"config_hash": ctx.hash})
    x, y, z = ctx.cfg.initial_state
    value = float(vg.value(x, y, z, 0.0))
    print(f"content-hash: {digest}")
    print(f"value(t=0, x={x!r}, y={y!r}, z={z!r}): {value!r}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_simulate(ctx: Context, args) -> int:
    controller, pol_hash = _controller(ctx, args)
    n_paths = args.n_paths if args.n_paths is not None else 1
    seed = ctx.cfg.master_seed
    lines = (io.trajectory_line(i, run_closed_loop(ctx.spec, controller, NoiseStream(seed, i)))
             for i in range(n_paths))
    path = ctx.out / "trajectories.jsonl"
    io.write_lines(path, ctx.header(n_paths=n_paths, policy_hash=pol_hash, controller=controller.name), lines)
    print(f"wrote {path}")
    return EXIT_OK


def _estimate(ctx: Context, controller: ControllerHandle, estimator: str, spec=None, n_paths=None):
    spec = spec or ctx.spec
    n = n_paths or ctx.cfg.n_paths
    seed = ctx.cfg.master_seed
    kw = {"threads": ctx.threads, "batch_size": ctx.cfg.batch_size}
    if estimator == "rs-ref":
        rep = estimate_cost_rs_reference(spec, controller, n, seed, **kw)
    elif estimator == "rs-phys":
        rep = estimate_cost_rs_physical(spec, controller, n, seed, **kw)
    else:
        measure = "physical" if estimator == "rn-phys" else "reference"
        rep = estimate_cost_rn(spec, controller, n, seed, measure=measure, terminal=ctx.cfg.dp.rn_terminal, **kw)
    if rep.saturated:
        raise NumericalError(f"{rep.saturated} of {n} payoffs overflowed the exponent cap; "
                             f"use a smaller mu or T (mu={spec.mu}, T={spec.T})")
    return rep


def cmd_evaluate(ctx: Context, args) -> int:
    controller, pol_hash = _controller(ctx, args)
    rep = _estimate(ctx, controller, args.estimator, n_paths=args.n_paths)
    path = ctx.out / f"report-{args.estimator}.json"
    body = ctx.header(policy_hash=pol_hash, report=rep.as_dict())
    io.write_json(path, body)
    print(f"{rep.estimator}: {rep.estimate!r} +- {rep.stderr!r} (n_paths={rep.n_paths}, "
          f"saturated={rep.saturated}, {rep.wall_time:.1f}s)")
    print(f"wrote {path}")
    return EXIT_OK


def _signal_from_file(path: str):
    try:
        _, data = io.read_table(path)
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read control signal {path}: {exc}") from None
    if data.ndim != 2 or data.shape[1] != 3:
        raise ConfigError(f"{path}: expected columns t,u_r,u_i")
    t, ur, ui = data[:, 0], data[:, 1], data[:, 2]

    def signal(s: float) -> complex:
        k = max(0, int(np.searchsorted(t, s, side="right")) - 1)
        return complex(ur[k], ui[k])

    return signal


def cmd_master(ctx: Context, args) -> int:
    if args.signal:
        signal = _signal_from_file(args.signal)
        label = f"signal file {Path(args.signal).name}"
    else:
        u = _parse_complex(args.u) if args.u else 0j
        ctx.spec.check_control(u)
        signal = lambda t: u  # noqa: E731
        label = f"constant u={u!r}"
    times, states = propagate_master(ctx.spec, ctx.spec.pi0, signal)
    rows = ((t,) + tuple(matrix_to_bloch(rho)) for t, rho in zip(times, states))
    path = ctx.out / "master.csv"
    io.write_table(path, [f"config-hash: {ctx.hash}", f"control: {label}"], ["t", "n", "x", "y", "z"], rows)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_compare(ctx: Context, args) -> int:
    try:
        mus = [float(m) for m in args.mu.split(",")]
    except ValueError:
        raise ConfigError(f"--mu: cannot parse {args.mu!r}") from None
    if any(m < 0 for m in mus):
        raise ConfigError("--mu: values must be >= 0")
    ca, ha = _controller(ctx, argparse.Namespace(policy=args.policy_a), ignore_mu=True)
    cb, hb = _controller(ctx, argparse.Namespace(policy=args.policy_b), ignore_mu=True)
    rows = []
    for mu in mus:
        spec = ctx.spec.with_(mu=mu)
        row = [mu]
        slopes = []
        for c in (ca, cb):
            rep = _estimate(ctx, c, "rs-phys", spec=spec)
            row += [rep.estimate, rep.stderr]
            if mu > 0:
                slopes.append((rep.estimate - 1.0) / mu)
            else:
                slopes.append(_estimate(ctx, c, "rn-phys", spec=spec).estimate)
        rows.append(row + slopes)
    path = ctx.out / "compare.csv"
    comments = [f"config-hash: {ctx.hash}", f"policy-a: {ha}", f"policy-b: {hb}",
                "J columns use the physical-measure estimator with common random numbers",
                "slope = (J - 1)/mu for mu > 0; at mu = 0 it is the risk-neutral cost"]
    io.write_table(path, comments, ["mu", "J_a", "se_a", "J_b", "se_b", "slope_a", "slope_b"], rows)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # Subcommands accept the global flags too; suppressed defaults keep
        # them from overwriting values given before the subcommand.
        g = argparse.ArgumentParser(add_help=False)
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        g.add_argument("--config", default=d(None), help="YAML run configuration (built-in defaults if omitted)")
        g.add_argument("--out", default=d(None), help="output directory (overrides outputs.directory)")
        g.add_argument("--seed", type=int, default=d(None), help="master seed (overrides mc.master_seed)")
        g.add_argument("--threads", type=int, default=d(1), help="Monte Carlo worker threads, 0 = auto")
        g.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return g

    common = global_flags(True)
    parser = argparse.ArgumentParser(prog="qrisk", description=__doc__.splitlines()[0],
                                     parents=[global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="backward dynamic programming")
    s.add_argument("--mode", choices=(RISK_SENSITIVE, RISK_NEUTRAL), default=RISK_SENSITIVE)

    def controller_args(p):
        p.add_argument("--policy", help="solution container written by solve")
        p.add_argument("--zero-control", action="store_true", help="use u = 0 instead of a policy")
        p.add_argument("--constant", help="use a constant control, e.g. 1+0.5j")
        p.add_argument("--n-paths", type=int, help="number of paths (overrides mc.n_paths)")

    s = sub.add_parser("simulate", parents=[common], help="closed-loop trajectories")
    controller_args(s)
    s = sub.add_parser("evaluate", parents=[common], help="Monte Carlo cost estimate")
    controller_args(s)
    s.add_argument("--estimator", choices=ESTIMATORS, default="rs-ref")
    s = sub.add_parser("master", parents=[common], help="deterministic master equation")
    s.add_argument("--u", help="constant open-loop control")
    s.add_argument("--signal", help="CSV file with columns t,u_r,u_i (piecewise constant)")
    s = sub.add_parser("compare", parents=[common], help="two policies over a list of mu")
    s.add_argument("--policy-a", required=True)
    s.add_argument("--policy-b", required=True)
    s.add_argument("--mu", default="0,0.05,0.1,0.2", help="comma-separated risk parameters")
    return parser


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "evaluate": cmd_evaluate,
            "master": cmd_master, "compare": cmd_compare}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else parse_config(default_tree())
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed: must be non-negative")
            cfg = cfg.replace(master_seed=args.seed)
        if args.threads < 0:
            raise ConfigError("--threads: must be >= 0")
        if getattr(args, "n_paths", None) is not None and args.n_paths < 1:
            raise ConfigError("--n-paths: must be positive")
        out = Path(args.out or cfg.directory)
        ctx = Context(cfg, out, args.threads)
        print(f"config-hash: {ctx.hash}")
        return COMMANDS[args.command](ctx, args)
    except (ConfigError, ModelError, ControlDomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except io.ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (NumericalError, StateError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
