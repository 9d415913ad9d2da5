"""Command-line front end.

Subcommands: sample, fit, evaluate, run, acf, sweep-bn. Every command takes
--config PATH plus optional --seed, --out and --threads overrides; when
--threads is absent the ESVM_THREADS environment variable is consulted.
Exit codes: 0 success, 2 configuration error, 3 numeric/pipeline failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .chains import SeedKey, save_trajectory, split_burn_in
from .config import load_experiment
from .errors import ConfigError, EsvmError
from .harness import (
    acf_dump,
    bn_sweep,
    emit_report,
    evaluate_with_parameters,
    make_functional,
    run_experiment,
    write_acf_csv,
    write_bn_sweep_csv,
)
from .samplers import SamplerConfig, sample_chain


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", required=True, help="experiment description (JSON)")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for test chains (default: ESVM_THREADS or 1)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="esvm",
                                     description="Variance-reduced MCMC estimation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, descr in [
        ("sample", "sample and persist the training trajectory"),
        ("fit", "fit control variates on the training chain"),
        ("evaluate", "score previously fitted parameters on test chains"),
        ("run", "full pipeline: sample, fit, evaluate, report"),
        ("acf", "dump the training chain's autocorrelation function"),
        ("sweep-bn", "refit at several training truncations"),
    ]:
        p = sub.add_parser(name, help=descr)
        _add_common(p)
        if name == "acf":
            p.add_argument("--max-lag", type=int, default=200)
        if name == "sweep-bn":
            p.add_argument("--bn", required=True,
                           help="comma-separated truncation points, e.g. 1,10,100")
    return parser


def _resolve_threads(args) -> int | None:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("ESVM_THREADS")
    return int(env) if env else None


def _out_dir(args, config) -> Path:
    out = Path(args.out) if args.out else Path(f"runs/{config.name}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_trajectory(config):
    sampler = SamplerConfig(kind=config.sampler_kind, gamma=config.gamma,
                            n_steps=config.n_burn + config.n_train,
                            seed=SeedKey(config.seed, 0))
    traj, stats = sample_chain(sampler, config.target, config.start_point())
    if config.n_burn:
        traj = split_burn_in(traj, config.n_burn)
    return traj, stats


def _cmd_sample(args, config) -> int:
    out = _out_dir(args, config)
    traj, stats = _train_trajectory(config)
    path = out / "train.traj"
    save_trajectory(traj, path)
    print(f"wrote {path} ({len(traj)} states, dim {traj.dim}, "
          f"acceptance {stats.rate:.3f})")
    return 0


def _cmd_fit(args, config) -> int:
    from .harness import _build_design, _fit_methods
    from .variance import LagWindow

    out = _out_dir(args, config)
    traj, _ = _train_trajectory(config)
    design = _build_design(config, traj, LagWindow(config.train_truncation))
    fits = _fit_methods(config, design)
    doc = {
        "name": config.name,
        "family": config.family.describe(),
        "methods": {m: r.to_dict() for m, r in fits.items()},
    }
    path = out / "fit.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    for m, r in fits.items():
        print(f"{m}: objective {r.objective_at_zero:.6g} -> {r.objective_at_theta:.6g} "
              f"({r.method}, {r.iterations} iterations)")
    print(f"wrote {path}")
    return 0


def _cmd_evaluate(args, config) -> int:
    out = _out_dir(args, config)
    fit_path = out / "fit.json"
    if not fit_path.exists():
        raise ConfigError(f"no fitted parameters at {fit_path}; run `esvm fit` first")
    doc = json.loads(fit_path.read_text())
    thetas = {m: np.asarray(r["theta"], dtype=np.float64)
              for m, r in doc.get("methods", {}).items()}
    report = evaluate_with_parameters(config, thetas)
    paths = emit_report(report, out)
    _print_summary(report)
    print(f"wrote {paths['report']}")
    return 0


def _cmd_run(args, config) -> int:
    out = _out_dir(args, config)
    report = run_experiment(config)
    paths = emit_report(report, out)
    _print_summary(report)
    print(f"wrote {paths['report']}")
    return 0


def _cmd_acf(args, config) -> int:
    out = _out_dir(args, config)
    traj, _ = _train_trajectory(config)
    functional = make_functional(config.functional, config.dataset, config.regression_kind)
    values = acf_dump(functional(traj.states), args.max_lag)
    path = out / "acf.csv"
    write_acf_csv(values, path)
    print(f"wrote {path}")
    return 0


def _cmd_sweep(args, config) -> int:
    out = _out_dir(args, config)
    bn_values = [int(v) for v in args.bn.split(",") if v.strip()]
    rows = bn_sweep(config, bn_values)
    path = out / "bn_sweep.csv"
    write_bn_sweep_csv(rows, path)
    for r in rows:
        print(f"b_n={r['b_n']}: mean VRF {r['mean_vrf']}")
    print(f"wrote {path}")
    return 0


def _print_summary(report) -> None:
    print(f"experiment: {report.config['name']} "
          f"[{report.config['sampler']}, n_test_chains={report.config['n_test_chains']}]")
    for m in report.methods:
        print(f"  {m.method}: mean VRF {m.mean_vrf}"
              + (f" ({m.infinite_count} flagged infinite)" if m.infinite_count else ""))


_COMMANDS = {
    "sample": _cmd_sample,
    "fit": _cmd_fit,
    "evaluate": _cmd_evaluate,
    "run": _cmd_run,
    "acf": _cmd_acf,
    "sweep-bn": _cmd_sweep,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_experiment(args.config, seed_override=args.seed,
                                 threads=_resolve_threads(args))
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except EsvmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
