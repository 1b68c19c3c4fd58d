"""Command line entry point ``isac``.

Exit codes: 0 success, 2 infeasible scenario, 3 non-convergence beyond the
failure threshold, 4 configuration error.
"""
import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .exceptions import (ConfigError, Infeasible, IsacError, NonConvergence,
                         NullSpaceExhausted, SensingInfeasible)
from .scenario import builtin_config, load_config

EXIT_OK, EXIT_INFEASIBLE, EXIT_NONCONVERGENCE, EXIT_CONFIG = 0, 2, 3, 4

log = logging.getLogger("risisac")


def _config(ref):
    """A JSON path or a builtin name (``paper_defaults``, ``fig6``)."""
    if ref is None:
        return builtin_config()
    if Path(ref).is_file():
        return load_config(ref)
    try:
        return builtin_config(ref)
    except ConfigError:
        raise ConfigError(f"{ref}: no such file or builtin config") from None


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def cmd_run(args):
    cfg = _config(args.config)
    algo = harness.canonical_algorithm(args.algo)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, trace, report, _, _ = harness.solve_realization(cfg, args.seed, 0, algo, args.objective,
                                                      args.max_outer)
    row = {"seed": args.seed, "algorithm": algo, "objective": args.objective,
           "iterations": len(trace)}
    row.update(report.scalars())
    harness._write_rows(out / "results.csv", [row])
    harness.write_trace(out / f"trace_{args.seed}.csv", trace)
    plan = harness.ExperimentPlan(config=cfg, grid=(cfg.gamma_d,), n_realizations=1,
                                  algorithms=(algo,), objective=args.objective,
                                  out_dir=str(out), seed=args.seed)
    harness._write_manifest(out, plan, [], 1)
    print(f"{algo}: mse={report.total_mse:.6g} sum_rate={report.sum_rate:.6g} "
          f"pd_min={min(report.detection):.6g} iterations={len(trace)}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config(args.config)
    plan = harness.load_plan(args.plan, cfg)
    plan.out_dir = args.out
    rows = harness.run_plan(plan)
    print(f"wrote {len(rows)} rows to {Path(args.out) / 'results.csv'}")
    return EXIT_OK


def cmd_beampattern(args):
    cfg = _config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    states = {}
    channels = geometry = None
    for algo in args.algos:
        algo = harness.canonical_algorithm(algo)
        state, _, _, channels, geometry = harness.solve_realization(cfg, args.seed, 0, algo)
        states[algo] = state
    path = out / "beampattern.csv"
    harness.emit_beampattern(states, channels, geometry, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_selftest(args):
    from .selftest import run_selftest
    results = run_selftest(args.seed)
    for name, ok in results.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(results.values()) else 1


def build_parser():
    p = argparse.ArgumentParser(prog="isac", description="RIS-aided ISAC transceiver design")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="solve one channel realization")
    r.add_argument("--config", help="JSON scenario file or builtin name")
    r.add_argument("--seed", type=_seed, default=0)
    r.add_argument("--algo", default="admm", help="|".join(harness.ALGORITHMS))
    r.add_argument("--objective", default="mse", choices=("mse", "wmse", "sum-rate"))
    r.add_argument("--max-outer", type=int, default=50)
    r.add_argument("--out", default="results")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run an experiment plan")
    s.add_argument("--config", help="JSON scenario file or builtin name")
    s.add_argument("--plan", required=True)
    s.add_argument("--out", default="results")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("beampattern", help="angular response of solved designs")
    b.add_argument("--config", default="fig6", help="JSON scenario file or builtin name")
    b.add_argument("--seed", type=_seed, default=0)
    b.add_argument("--algos", nargs="+", default=["admm", "rcg", "target-dir", "user-dir"])
    b.add_argument("--out", default="results")
    b.set_defaults(func=cmd_beampattern)

    t = sub.add_parser("selftest", help="run the built-in oracle checks")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (Infeasible, SensingInfeasible, NullSpaceExhausted) as exc:
        block = getattr(exc, "block", None)
        where = f" ({block})" if block else ""
        print(f"infeasible{where}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NonConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except IsacError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
