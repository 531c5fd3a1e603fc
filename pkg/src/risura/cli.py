"""Command-line interface: ``risura {run,sweep,ctad,selftest}``."""

import argparse
import json
import logging
import sys

import numpy as np

from .config import SystemConfig, load_config

__all__ = ["main", "build_parser", "load_container", "save_container"]


def _config(args):
    cfg = load_config(args.config) if args.config else SystemConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "phase1", None):
        changes["estimator"] = args.phase1
    return cfg.with_(**changes) if changes else cfg


def load_container(path):
    """Read a coupled-tensor container.

    The container is a NumPy ``.npz`` archive holding complex arrays
    ``Y_0 .. Y_{L-1}`` (each of shape ``tau_1 x ... x tau_d x M``) and
    ``P_0 .. P_{L-1}`` (each ``M x Ng``).
    """
    with np.load(path, allow_pickle=False) as z:
        L = sum(1 for k in z.files if k.startswith("Y_"))
        if L == 0:
            raise ValueError(f"{path}: no Y_<l> arrays found")
        missing = [f"{p}_{l}" for l in range(L) for p in ("Y", "P") if f"{p}_{l}" not in z.files]
        if missing:
            raise ValueError(f"{path}: missing arrays {missing}")
        Y = [np.asarray(z[f"Y_{l}"], dtype=complex) for l in range(L)]
        P = [np.asarray(z[f"P_{l}"], dtype=complex) for l in range(L)]
    return Y, P


def save_container(path, Y_list, P_list):
    arrays = {f"Y_{l}": np.asarray(Y) for l, Y in enumerate(Y_list)}
    arrays.update({f"P_{l}": np.asarray(P) for l, P in enumerate(P_list)})
    np.savez(path, **arrays)


def _cmd_run(args):
    from .harness import run_trial

    cfg = _config(args)
    res = run_trial(cfg, cfg.seed)
    print(json.dumps(res.summary(), indent=2, default=float))
    return 1 if res.failed else 0


def _cmd_sweep(args):
    from .harness import sweep

    cfg = _config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise SystemExit("--values needs at least one value")
    rows, results = sweep(cfg, args.axis, values, args.trials, args.out, workers=args.workers,
                          plots=not args.no_plots)
    with open(args.out) as fh:
        sys.stdout.write(fh.read())
    failed = sum(r.failed for res in results for r in res)
    if failed:
        print(f"{failed} trial(s) failed", file=sys.stderr)
    return 0


def _cmd_ctad(args):
    from .ctad import run_ctad
    from .harness import schedule_from_config

    Y, P = load_container(args.input)
    cfg = _config(args)
    report = run_ctad(Y, P, K_init=args.k_init or cfg.K_init, delta=cfg.delta,
                      schedule=schedule_from_config(cfg), rng=cfg.seed, init=cfg.init)
    if args.out:
        arrays = {"G_hat": report.G_hat, "elbo_trace": np.asarray(report.elbo_trace)}
        for l, row in enumerate(report.factors):
            for i, X in enumerate(row):
                arrays[f"X_{l}_{i}"] = X
        np.savez(args.out, **arrays)
    print(json.dumps({
        "K_hat": report.K_hat,
        "iterations": report.iterations,
        "converged": report.converged,
        "beta_mean": report.beta_mean,
        "elbo_final": report.elbo_trace[-1],
        "component_power": [float(p) for p in report.component_power],
    }, indent=2))
    return 0


def _cmd_selftest(args):
    from .selftest import run_selftest

    ok = run_selftest(seed=args.seed or 0, verbose=True)
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="risura", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML config file (defaults: desk scale)")
        p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
        p.add_argument("--phase1", choices=("genie", "alternating"), help="phase-1 estimator")

    p = sub.add_parser("run", help="one end-to-end trial; prints the result as JSON")
    common(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="sweep one config field; writes CSV and plots")
    common(p)
    p.add_argument("--axis", required=True, help="config field to vary, e.g. M or power_db")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--out", default="sweep.csv")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("ctad", help="run the detector on tensors from an .npz container")
    common(p)
    p.add_argument("input", help="container with Y_0.., P_0.. arrays")
    p.add_argument("--k-init", type=int, help="column budget (default: devices.K_init)")
    p.add_argument("--out", help="write G_hat, factors and the ELBO trace to this .npz")
    p.set_defaults(func=_cmd_ctad)

    p = sub.add_parser("selftest", help="quick invariant checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
