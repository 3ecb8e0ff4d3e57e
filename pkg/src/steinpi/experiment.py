"""Declarative experiment pipelines: sample, post-process, evaluate, emit.

An experiment is described by a JSON-friendly dict: one target, a list of
methods (kernel + sampling distribution + mechanism + post-processor), a
grid of sample sizes, a replicate count and a seed.  Execution is
deterministic given the seed; replicates run on independent RNG streams so
the emitted tables are byte-identical regardless of thread count.  Wall
times are recorded but written to a separate file, outside the
determinism contract.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    EmptySummary,
    GramTooLarge,
    InsufficientReplicates,
    SteinpiError,
)
from .grid import GridSampler
from .kernels import make_kernel
from .mala import AdaptSchedule, adaptive_warmup, random_window
from .metrics import wasserstein1_1d, wasserstein1_exact
from .pi_targets import make_pi, make_power_tilt
from .quantise import (
    GRAM_GUARD,
    WeightedSample,
    greedy_thin,
    ksd,
    optimal_weights,
    uniform_sample,
)
from .targets import (
    default_mixture,
    find_mode,
    make_gaussian,
    make_gaussian_mixture,
    make_garch_posterior,
    make_regression_posterior,
    make_skew_normal_2d,
    simulate_garch_series,
)

__all__ = [
    "ExperimentSpec",
    "MethodSpec",
    "ResultRow",
    "SummaryRow",
    "ExperimentResult",
    "parse_experiment_spec",
    "build_target",
    "run_experiment",
    "summarise",
    "significant_improvement",
    "emit_plot",
    "write_csv",
    "read_csv",
    "write_experiment_outputs",
]


# ----------------------------------------------------------------------
# configuration parsing
# ----------------------------------------------------------------------


def _require(cfg, key, path):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}: required key is missing")
    return cfg[key]


def _get(cfg, key, default=None):
    return cfg.get(key, default)


def build_target(cfg, path="target"):
    """Construct a built-in target from a name plus parameter block."""
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: expected an object, got {type(cfg).__name__}")
    name = _require(cfg, "name", path)
    if name == "gaussian":
        if "mean" in cfg:
            mean = np.asarray(cfg["mean"], dtype=np.float64)
        elif "dim" in cfg:
            mean = np.zeros(int(cfg["dim"]))
        else:
            raise ConfigError(f"{path}: gaussian needs 'mean' or 'dim'")
        cov = np.asarray(cfg["cov"], dtype=np.float64) if "cov" in cfg else None
        return make_gaussian(mean, cov)
    if name == "mixture":
        if not any(k in cfg for k in ("weights", "means", "scales")):
            return default_mixture()
        return make_gaussian_mixture(
            _require(cfg, "weights", path), _require(cfg, "means", path), _require(cfg, "scales", path)
        )
    if name == "regression":
        if "t" in cfg or "y" in cfg:
            return make_regression_posterior(_require(cfg, "t", path), _require(cfg, "y", path))
        return make_regression_posterior()
    if name == "skew_normal":
        return make_skew_normal_2d()
    if name == "garch":
        if "y" in cfg:
            return make_garch_posterior(np.asarray(cfg["y"], dtype=np.float64))
        phi = _get(cfg, "phi", (0.2, 0.5, 0.3, 0.4))
        length = int(_get(cfg, "length", 50))
        sim_seed = int(_get(cfg, "sim_seed", 0))
        return make_garch_posterior(simulate_garch_series(phi, length, seed=sim_seed))
    raise ConfigError(f"{path}.name: unknown target {name!r}")


@dataclass(frozen=True)
class MethodSpec:
    """One pipeline: kernel, sampling distribution/mechanism, post-processor."""

    name: str
    kernel: dict
    sampler: dict
    post: dict


@dataclass(frozen=True)
class ExperimentSpec:
    """Parsed, validated experiment description."""

    target: dict
    methods: tuple
    ns: tuple
    replicates: int
    seed: int
    mode_init: tuple | None = None
    wasserstein: dict | None = None
    out_dir: str | None = None


_DISTRIBUTIONS = ("p", "pi", "power_tilt")
_MECHANISMS = ("exact", "mala")
_POST_KINDS = ("none", "optimal", "thin")
_FAMILIES = ("langevin", "kgm")


def parse_experiment_spec(cfg):
    """Validate a raw config dict; errors carry the offending key path."""
    if not isinstance(cfg, dict):
        raise ConfigError("config: expected a JSON object")
    target = _require(cfg, "target", "config")
    build_target(target)  # fail fast with a precise path
    seed = _require(cfg, "seed", "config")
    if not isinstance(seed, int):
        raise ConfigError("config.seed: must be an integer (wall-clock seeding is not allowed)")
    replicates = _require(cfg, "replicates", "config")
    if not isinstance(replicates, int) or replicates < 1:
        raise ConfigError("config.replicates: must be a positive integer")
    ns = _require(cfg, "ns", "config")
    if not ns or any((not isinstance(n, int)) or n < 1 for n in ns):
        raise ConfigError("config.ns: must be a nonempty list of positive integers")
    raw_methods = _require(cfg, "methods", "config")
    if not raw_methods:
        raise ConfigError("config.methods: must be a nonempty list")
    methods = []
    seen = set()
    for i, m in enumerate(raw_methods):
        path = f"config.methods[{i}]"
        name = _require(m, "name", path)
        if name in seen:
            raise ConfigError(f"{path}.name: duplicate method name {name!r}")
        seen.add(name)
        kernel = dict(_get(m, "kernel", {"family": "langevin"}))
        family = kernel.get("family", "langevin")
        if family not in _FAMILIES:
            raise ConfigError(f"{path}.kernel.family: unknown family {family!r}")
        sampler = dict(_require(m, "sampler", path))
        dist = sampler.get("distribution", "p")
        if dist not in _DISTRIBUTIONS:
            raise ConfigError(f"{path}.sampler.distribution: unknown distribution {dist!r}")
        mechanism = sampler.get("mechanism", "exact")
        if mechanism not in _MECHANISMS:
            raise ConfigError(f"{path}.sampler.mechanism: unknown mechanism {mechanism!r}")
        post = dict(_get(m, "post", {"kind": "none"}))
        kind = post.get("kind", "none")
        if kind not in _POST_KINDS:
            raise ConfigError(f"{path}.post.kind: unknown post-processor {kind!r}")
        if kind == "thin" and "m" not in post:
            raise ConfigError(f"{path}.post.m: thinning needs a size or ratio")
        methods.append(MethodSpec(name=name, kernel=kernel, sampler=sampler, post=post))
    mode_init = cfg.get("mode_init")
    return ExperimentSpec(
        target=target,
        methods=tuple(methods),
        ns=tuple(ns),
        replicates=replicates,
        seed=seed,
        mode_init=tuple(mode_init) if mode_init is not None else None,
        wasserstein=cfg.get("wasserstein"),
        out_dir=cfg.get("out_dir"),
    )


# ----------------------------------------------------------------------
# execution
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class ResultRow:
    replicate: int
    n: int
    method: str
    ksd: float
    wasserstein: float | None
    wall_time: float


@dataclass(frozen=True)
class FailureRecord:
    method: str
    replicate: int
    n: int
    message: str


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)


def _default_bounds(mode, scale=12.0):
    sig = np.sqrt(np.diag(mode.sigma))
    return [(float(x - scale * s), float(x + scale * s)) for x, s in zip(mode.x_star, sig)]


class MethodRuntime:
    """Shared per-method state: kernel, sampling law, exact sampler."""

    def __init__(self, method, target, mode):
        self.method = method
        kcfg = method.kernel
        self.kernel = make_kernel(
            target,
            mode,
            family=kcfg.get("family", "langevin"),
            s=int(kcfg.get("s", 3)),
            beta=float(kcfg.get("beta", 0.5)),
        )
        dist = method.sampler.get("distribution", "p")
        if dist == "p":
            self.law = target
        elif dist == "pi":
            self.law = make_pi(target, self.kernel)
        else:
            self.law = make_power_tilt(target, float(method.sampler.get("r", 1.0)))
        self.mechanism = method.sampler.get("mechanism", "exact")
        self.mode = mode
        if self.mechanism == "exact":
            grid_cfg = method.sampler.get("grid", {})
            bounds = grid_cfg.get("bounds") or _default_bounds(mode)
            num = grid_cfg.get("num", 2001 if len(bounds) > 1 else 20001)
            self.sampler = GridSampler(self.law, bounds, num=num)
        else:
            warm = dict(method.sampler.get("warmup", {}))
            self.schedule = AdaptSchedule(
                epsilon0=float(warm.get("epsilon0", 1.0)),
                epoch_lengths=tuple(warm.get("epoch_lengths", (1000,) * 9 + (100_000,))),
                learning_rates=tuple(
                    warm.get("learning_rates", (0.3,) * (len(warm.get("epoch_lengths", [0] * 10)) - 1))
                ),
                target_accept=float(warm.get("target_accept", 0.57)),
            )

    def draw(self, n_max, seed, method_index, replicate, rng):
        if self.mechanism == "exact":
            return self.sampler.sample(n_max, rng), None
        _, out = adaptive_warmup(
            self.mode.x_star,
            self.law,
            self.schedule,
            seed=seed,
            stream=(method_index, replicate),
        )
        return out.states, out

    def post_process(self, points, post):
        if len(points) > GRAM_GUARD:
            raise GramTooLarge(f"n = {len(points)} exceeds the dense Gram guard {GRAM_GUARD}")
        gram = self.kernel.gram(points)
        kind = post.get("kind", "none")
        if kind == "none":
            sample = uniform_sample(points)
        elif kind == "optimal":
            qp = optimal_weights(points, self.kernel, gram=gram)
            sample = WeightedSample(points=points, weights=qp.weights)
        else:
            m = post["m"]
            m = max(1, int(round(m * len(points)))) if isinstance(m, float) and m < 1 else int(m)
            sample = greedy_thin(points, self.kernel, m, gram=gram)
        return sample, gram


def _reference_sample(spec, target, mode):
    cfg = spec.wasserstein or {}
    n_ref = int(cfg.get("reference_n", 0))
    if n_ref <= 0:
        return None
    grid_cfg = cfg.get("grid", {})
    bounds = grid_cfg.get("bounds") or _default_bounds(mode)
    num = grid_cfg.get("num", 2001 if len(bounds) > 1 else 20001)
    sampler = GridSampler(target, bounds, num=num)
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(2**31,)))
    return uniform_sample(sampler.sample(n_ref, rng))


def _run_cell(spec, runtime, method_index, replicate, reference):
    """All sample sizes for one (method, replicate); returns (rows, failures)."""
    rows = []
    failures = []
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed, spawn_key=(method_index, replicate)))
    method = runtime.method
    try:
        source, chain = runtime.draw(max(spec.ns), spec.seed, method_index, replicate, rng)
    except (SteinpiError, np.linalg.LinAlgError) as exc:
        for n in spec.ns:
            failures.append(FailureRecord(method.name, replicate, n, f"sampling failed: {exc}"))
        return rows, failures
    for n in spec.ns:
        start = time.perf_counter()
        try:
            if runtime.mechanism == "exact":
                points = source[:n]
            else:
                points = random_window(source, n, rng)
            sample, _ = runtime.post_process(points, method.post)
            value = ksd(sample, runtime.kernel)
            wass = None
            if reference is not None:
                if sample.dim == 1:
                    wass = wasserstein1_1d(sample, reference)
                else:
                    wass = wasserstein1_exact(sample, reference).cost
            rows.append(
                ResultRow(
                    replicate=replicate,
                    n=n,
                    method=method.name,
                    ksd=value,
                    wasserstein=wass,
                    wall_time=time.perf_counter() - start,
                )
            )
        except (SteinpiError, np.linalg.LinAlgError) as exc:
            failures.append(FailureRecord(method.name, replicate, n, str(exc)))
    return rows, failures


def run_experiment(spec, threads=1):
    """Execute every (method, replicate, n) cell; deterministic given seed.

    Per-cell failures are recorded and the run continues.  Replicates run
    in a thread pool; rows are sorted by key before returning, so the
    output is independent of scheduling.
    """
    target = build_target(spec.target)
    init = np.asarray(spec.mode_init, dtype=np.float64) if spec.mode_init else np.zeros(target.dim)
    mode = find_mode(target, init)
    runtimes = [MethodRuntime(m, target, mode) for m in spec.methods]
    reference = _reference_sample(spec, target, mode)
    tasks = [
        (mi, replicate)
        for mi in range(len(runtimes))
        for replicate in range(spec.replicates)
    ]
    result = ExperimentResult()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(
                pool.map(lambda tr: _run_cell(spec, runtimes[tr[0]], tr[0], tr[1], reference), tasks)
            )
    else:
        outcomes = [_run_cell(spec, runtimes[mi], mi, r, reference) for mi, r in tasks]
    for rows, failures in outcomes:
        result.rows.extend(rows)
        result.failures.extend(failures)
    result.rows.sort(key=lambda r: (r.method, r.n, r.replicate))
    result.failures.sort(key=lambda r: (r.method, r.n, r.replicate))
    return result


# ----------------------------------------------------------------------
# summaries
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryRow:
    method: str
    n: int
    mean: float
    se: float
    replicates: int


def summarise(rows):
    """Per (method, n) mean and standard error of the discrepancy."""
    cells = {}
    for row in rows:
        cells.setdefault((row.method, row.n), []).append(row.ksd)
    out = []
    for (method, n), values in sorted(cells.items()):
        if len(values) < 2:
            raise InsufficientReplicates(f"cell ({method}, n={n}) has {len(values)} replicate(s)")
        arr = np.asarray(values)
        if np.all(arr == arr[0]):  # keep constant columns exact
            mean, se = float(arr[0]), 0.0
        else:
            mean = float(arr.mean())
            se = float(arr.std(ddof=1) / np.sqrt(len(values)))
        out.append(SummaryRow(method=method, n=n, mean=mean, se=se, replicates=len(values)))
    return out


def significant_improvement(summary, better, worse):
    """Non-overlapping error-bar rule, per sample size.

    True at n when mean(better) + se(better) < mean(worse) - se(worse);
    bars that touch exactly do not count.
    """
    by_key = {(s.method, s.n): s for s in summary}
    ns = sorted({s.n for s in summary if s.method in (better, worse)})
    out = {}
    for n in ns:
        a = by_key.get((better, n))
        b = by_key.get((worse, n))
        if a is None or b is None:
            continue
        out[n] = bool(a.mean + a.se < b.mean - b.se)
    return out


# ----------------------------------------------------------------------
# CSV and SVG emission
# ----------------------------------------------------------------------


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))  # shortest round-trip decimal
    return str(value)


def write_csv(path, header, rows):
    """UTF-8, LF-terminated CSV with shortest-round-trip float literals."""
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Read back a CSV written by write_csv: (header, rows of strings)."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    header = lines[0].split(",") if lines else []
    return header, [line.split(",") for line in lines[1:]]


_PALETTE = ("#7e2f8e", "#4dbeee", "#d95319", "#77ac30", "#000000", "#edb120")


def _log_ticks(lo, hi):
    start = int(np.floor(np.log10(lo)))
    stop = int(np.ceil(np.log10(hi)))
    return [10.0**k for k in range(start, stop + 1)]


def emit_plot(summary, style=None):
    """Standalone SVG of mean +/- se curves on log-log axes.

    One polyline per method, one error bar group per point; byte
    deterministic for a given summary.
    """
    if not summary:
        raise EmptySummary("no summary rows to plot")
    style = style or {}
    width = int(style.get("width", 640))
    height = int(style.get("height", 480))
    margin = 56
    methods = sorted({s.method for s in summary})
    xs = [float(s.n) for s in summary]
    lows = [max(s.mean - s.se, 1e-300) for s in summary]
    highs = [s.mean + s.se for s in summary]
    x_lo, x_hi = min(xs), max(xs)
    y_lo = min(min(lows), min(s.mean for s in summary))
    y_hi = max(max(highs), max(s.mean for s in summary))
    if x_lo == x_hi:
        x_lo, x_hi = x_lo / 2.0, x_hi * 2.0
    if y_lo == y_hi:
        y_lo, y_hi = y_lo / 2.0, y_hi * 2.0

    def sx(v):
        t = (np.log10(v) - np.log10(x_lo)) / (np.log10(x_hi) - np.log10(x_lo))
        return margin + t * (width - 2 * margin)

    def sy(v):
        t = (np.log10(v) - np.log10(y_lo)) / (np.log10(y_hi) - np.log10(y_lo))
        return height - margin - t * (height - 2 * margin)

    def f(v):
        return format(v, ".6g")

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{f(margin)}" y1="{f(height - margin)}" x2="{f(width - margin)}" '
        f'y2="{f(height - margin)}" stroke="black"/>',
        f'<line x1="{f(margin)}" y1="{f(margin)}" x2="{f(margin)}" '
        f'y2="{f(height - margin)}" stroke="black"/>',
    ]
    for tick in _log_ticks(x_lo, x_hi):
        if x_lo <= tick <= x_hi:
            parts.append(
                f'<text x="{f(sx(tick))}" y="{f(height - margin + 16)}" font-size="10" '
                f'text-anchor="middle">{format(tick, "g")}</text>'
            )
    for tick in _log_ticks(y_lo, y_hi):
        if y_lo <= tick <= y_hi:
            parts.append(
                f'<text x="{f(margin - 6)}" y="{f(sy(tick) + 3)}" font-size="10" '
                f'text-anchor="end">{format(tick, "g")}</text>'
            )
    parts.append(
        f'<text x="{f(width / 2)}" y="{f(height - 12)}" font-size="12" '
        f'text-anchor="middle">{style.get("x_label", "n")}</text>'
    )
    parts.append(
        f'<text x="14" y="{f(height / 2)}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {f(height / 2)})">{style.get("y_label", "mean KSD")}</text>'
    )
    for mi, method in enumerate(methods):
        colour = _PALETTE[mi % len(_PALETTE)]
        pts = sorted((s for s in summary if s.method == method), key=lambda s: s.n)
        coords = " ".join(f"{f(sx(s.n))},{f(sy(s.mean))}" for s in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{colour}" stroke-width="1.5"/>'
        )
        for s in pts:
            x = sx(s.n)
            top = sy(max(s.mean + s.se, 1e-300))
            bot = sy(max(s.mean - s.se, 1e-300))
            parts.append(
                f'<g class="errorbar">'
                f'<line x1="{f(x)}" y1="{f(top)}" x2="{f(x)}" y2="{f(bot)}" stroke="{colour}"/>'
                f'<line x1="{f(x - 3)}" y1="{f(top)}" x2="{f(x + 3)}" y2="{f(top)}" stroke="{colour}"/>'
                f'<line x1="{f(x - 3)}" y1="{f(bot)}" x2="{f(x + 3)}" y2="{f(bot)}" stroke="{colour}"/>'
                f"</g>"
            )
            parts.append(f'<circle cx="{f(x)}" cy="{f(sy(s.mean))}" r="2.5" fill="{colour}"/>')
        parts.append(
            f'<text x="{f(width - margin + 4)}" y="{f(margin + 14 * mi)}" font-size="11" '
            f'fill="{colour}">{method}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_experiment_outputs(result, out_dir):
    """Write results.csv, summary.csv, plot.svg, timings.csv, failures.csv.

    Everything except timings.csv (and failure messages) is byte
    deterministic for a fixed config and seed.
    """
    import os

    os.makedirs(out_dir, exist_ok=True)
    has_wass = any(r.wasserstein is not None for r in result.rows)
    header = ["replicate", "n", "method", "ksd"] + (["wasserstein"] if has_wass else [])
    rows = [
        (r.replicate, r.n, r.method, r.ksd) + ((r.wasserstein,) if has_wass else ())
        for r in result.rows
    ]
    write_csv(os.path.join(out_dir, "results.csv"), header, rows)
    write_csv(
        os.path.join(out_dir, "timings.csv"),
        ["replicate", "n", "method", "wall_time"],
        [(r.replicate, r.n, r.method, r.wall_time) for r in result.rows],
    )
    summary = summarise(result.rows)
    write_csv(
        os.path.join(out_dir, "summary.csv"),
        ["method", "n", "mean_ksd", "se_ksd", "replicates"],
        [(s.method, s.n, s.mean, s.se, s.replicates) for s in summary],
    )
    with open(os.path.join(out_dir, "plot.svg"), "w", encoding="utf-8", newline="") as fh:
        fh.write(emit_plot(summary))
    if result.failures:
        write_csv(
            os.path.join(out_dir, "failures.csv"),
            ["method", "replicate", "n", "message"],
            [(x.method, x.replicate, x.n, x.message.replace(",", ";")) for x in result.failures],
        )
    return summary
