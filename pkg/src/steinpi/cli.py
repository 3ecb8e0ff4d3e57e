"""Command-line entry points.

Subcommands: sample, weights, thin, ksd, wasserstein, experiment,
check-assumptions.  All randomness is seeded from configs or flags; there
is no wall-clock seeding.  Exit codes: 0 success, 1 configuration error,
2 numerical failure.  STEINPI_THREADS overrides --threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError, SteinpiError
from .experiment import (
    MethodRuntime,
    MethodSpec,
    build_target,
    parse_experiment_spec,
    run_experiment,
    write_csv,
    write_experiment_outputs,
)
from .kernels import check_theorem_assumptions, make_kernel
from .metrics import wasserstein1_1d, wasserstein1_exact
from .quantise import WeightedSample, greedy_thin_indices, ksd, optimal_weights, uniform_sample
from .targets import find_mode

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems are configuration errors
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")


def _read_points(path):
    """Points CSV with header x0..x{d-1} and an optional weight column."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in fh.read().split("\n") if line]
    except FileNotFoundError:
        raise ConfigError(f"points file not found: {path}")
    header = lines[0].split(",")
    cols = {name: i for i, name in enumerate(header)}
    data = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    if "weight" in cols:
        widx = cols["weight"]
        keep = [i for i in range(len(header)) if i != widx]
        return data[:, keep], data[:, widx]
    return data, None


def _single_runtime(cfg, seed_override=None):
    """Kernel + sampling law for the single-pipeline commands."""
    target = build_target(cfg.get("target", {}))
    init = np.asarray(cfg.get("mode_init", np.zeros(target.dim)), dtype=np.float64)
    mode = find_mode(target, init)
    method = MethodSpec(
        name="cli",
        kernel=dict(cfg.get("kernel", {"family": "langevin"})),
        sampler=dict(cfg.get("sampler", {"distribution": "p", "mechanism": "exact"})),
        post={"kind": "none"},
    )
    seed = seed_override if seed_override is not None else cfg.get("seed")
    if seed is None:
        raise ConfigError("config.seed: a seed is required (or pass --seed)")
    return target, mode, MethodRuntime(method, target, mode), int(seed)


def _cmd_sample(args):
    cfg = _load_config(args.config)
    sampler_cfg = cfg.setdefault("sampler", {})
    if args.epsilon0 is not None:
        sampler_cfg.setdefault("warmup", {})["epsilon0"] = args.epsilon0
    if args.epochs is not None or args.epoch_length is not None or args.final_length is not None:
        warm = sampler_cfg.setdefault("warmup", {})
        epochs = args.epochs if args.epochs is not None else 10
        epoch_length = args.epoch_length if args.epoch_length is not None else 1000
        final_length = args.final_length if args.final_length is not None else 100_000
        warm["epoch_lengths"] = [epoch_length] * (epochs - 1) + [final_length]
    if args.target_dist is not None:
        sampler_cfg["distribution"] = args.target_dist
    target, mode, runtime, seed = _single_runtime(cfg, args.seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, 0)))
    points, _ = runtime.draw(args.n, seed, 0, 0, rng)
    points = points[: args.n]
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "sample.csv")
    header = [f"x{i}" for i in range(points.shape[1])]
    write_csv(path, header, [tuple(row) for row in points])
    print(path)
    return 0


def _cmd_weights(args):
    cfg = _load_config(args.config)
    _, _, runtime, _ = _single_runtime(cfg, args.seed if args.seed is not None else 0)
    points, _ = _read_points(args.points)
    qp = optimal_weights(points, runtime.kernel)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "weights.csv")
    write_csv(path, ["index", "weight"], list(enumerate(qp.weights)))
    print(path)
    return 0


def _cmd_thin(args):
    cfg = _load_config(args.config)
    _, _, runtime, _ = _single_runtime(cfg, args.seed if args.seed is not None else 0)
    points, _ = _read_points(args.points)
    idx = greedy_thin_indices(points, runtime.kernel, args.m)
    out_dir = args.out_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "indices.csv")
    write_csv(path, ["index"], [(int(i),) for i in idx])
    print(path)
    return 0


def _cmd_ksd(args):
    cfg = _load_config(args.config)
    _, _, runtime, _ = _single_runtime(cfg, args.seed if args.seed is not None else 0)
    points, weights = _read_points(args.points)
    if args.weights:
        _, wcol = _read_points(args.weights)
        weights = wcol
        if weights is None:
            raise ConfigError(f"{args.weights}: no 'weight' column found")
    if weights is None:
        sample = uniform_sample(points)
    else:
        sample = WeightedSample(points=points, weights=weights)
    print(repr(ksd(sample, runtime.kernel)))
    return 0


def _cmd_wasserstein(args):
    pa, wa = _read_points(args.sample_a)
    pb, wb = _read_points(args.sample_b)
    a = uniform_sample(pa) if wa is None else WeightedSample(points=pa, weights=wa)
    b = uniform_sample(pb) if wb is None else WeightedSample(points=pb, weights=wb)
    if a.dim == 1 and b.dim == 1:
        print(repr(wasserstein1_1d(a, b)))
    else:
        print(repr(wasserstein1_exact(a, b).cost))
    return 0


def _cmd_experiment(args):
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    spec = parse_experiment_spec(cfg)
    out_dir = args.out_dir or spec.out_dir or "experiment-out"
    result = run_experiment(spec, threads=args.threads)
    summary = write_experiment_outputs(result, out_dir)
    for row in summary:
        print(f"{row.method} n={row.n} mean={row.mean:.6g} se={row.se:.6g}")
    if result.failures:
        print(f"{len(result.failures)} cell(s) failed; see failures.csv", file=sys.stderr)
    return 0


def _cmd_check_assumptions(args):
    cfg = _load_config(args.config)
    target = build_target(cfg.get("target", {}))
    init = np.asarray(cfg.get("mode_init", np.zeros(target.dim)), dtype=np.float64)
    mode = find_mode(target, init)
    kcfg = cfg.get("kernel", {"family": "langevin"})
    kernel = make_kernel(
        target,
        mode,
        family=kcfg.get("family", "langevin"),
        s=int(kcfg.get("s", 3)),
        beta=float(kcfg.get("beta", 0.5)),
    )
    report = check_theorem_assumptions(
        kernel, args.radius, args.probes, b1=args.b1, seed=args.seed or 0
    )
    print(report)
    return 0


def _build_parser():
    parser = _Parser(prog="steinpi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="seed override")
        p.add_argument("--out-dir", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads")

    p = sub.add_parser("sample", help="draw samples from p, pi or a power tilt")
    common(p)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--target", dest="target_dist", choices=["p", "pi", "power_tilt"], default=None)
    p.add_argument("--epsilon0", type=float, default=None, help="initial MALA step size")
    p.add_argument("--epochs", type=int, default=None, help="number of warm-up epochs")
    p.add_argument("--epoch-length", type=int, default=None, help="tuning epoch length")
    p.add_argument("--final-length", type=int, default=None, help="production epoch length")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("weights", help="optimal simplex weights for a chain CSV")
    common(p)
    p.add_argument("--points", required=True, help="points CSV")
    p.set_defaults(func=_cmd_weights)

    p = sub.add_parser("thin", help="greedy thinning indices for a chain CSV")
    common(p)
    p.add_argument("--points", required=True, help="points CSV")
    p.add_argument("--m", type=int, required=True, help="number of points to retain")
    p.set_defaults(func=_cmd_thin)

    p = sub.add_parser("ksd", help="kernel discrepancy of a (weighted) sample")
    common(p)
    p.add_argument("--points", required=True, help="points CSV")
    p.add_argument("--weights", default=None, help="optional weights CSV")
    p.set_defaults(func=_cmd_ksd)

    p = sub.add_parser("wasserstein", help="exact 1-Wasserstein between two sample CSVs")
    p.add_argument("sample_a")
    p.add_argument("sample_b")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=_cmd_wasserstein)

    p = sub.add_parser("experiment", help="run a declarative experiment config")
    common(p)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("check-assumptions", help="probe convergence assumptions numerically")
    common(p)
    p.add_argument("--radius", type=float, default=10.0, help="probe shell radius")
    p.add_argument("--probes", type=int, default=64, help="number of shell probes")
    p.add_argument("--b1", type=float, default=None, help="user curvature bound to locate")
    p.set_defaults(func=_cmd_check_assumptions)

    return parser


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        env_threads = os.environ.get("STEINPI_THREADS")
        if env_threads is not None and hasattr(args, "threads"):
            args.threads = int(env_threads)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (SteinpiError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
