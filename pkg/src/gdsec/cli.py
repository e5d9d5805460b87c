"""Experiment runner and reporting front end.

Subcommands: ``run``, ``sweep``, ``check-params``, ``gen-data``, ``plot``.
Configuration lives in an INI-style file of ``key = value`` sections; any
value can be overridden on the command line with ``--set section.key=value``.
See the README for the full schema and worked examples.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import itertools
import sys
from pathlib import Path

import numpy as np

from gdsec import data as datagen
from gdsec import engine, plotting, theory
from gdsec.compressors import iag_selection_weights
from gdsec.core import HyperParams
from gdsec.objectives import FAMILIES, Objective, ObjectiveSpec

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3

STRATEGY_NAMES = (
    "gd",
    "gdsec",
    "gdsec_no_ec",
    "topj",
    "cgd",
    "qgd",
    "nounif_iag",
    "sgd",
    "sgdsec",
    "qsgdsec",
)


class ConfigError(ValueError):
    pass


def load_config(path: str | None, overrides) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"config file not found: {path}")
        cfg.read(path)
    for item in overrides or []:
        try:
            key, value = item.split("=", 1)
            section, option = key.split(".", 1)
        except ValueError:
            raise ConfigError(f"override must look like section.key=value: {item!r}")
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, option.strip(), value.strip())
    return cfg


def _get(cfg, section, option, default=None, required=False):
    if cfg.has_option(section, option):
        return cfg.get(section, option)
    if required:
        raise ConfigError(f"missing required option [{section}] {option}")
    return default


def _getint(cfg, section, option, default=None, required=False):
    raw = _get(cfg, section, option, default=None, required=required)
    return int(raw) if raw is not None else default


def _getfloat(cfg, section, option, default=None, required=False):
    raw = _get(cfg, section, option, default=None, required=required)
    return float(raw) if raw is not None else default


def _getbool(cfg, section, option, default=False):
    raw = _get(cfg, section, option)
    if raw is None:
        return default
    return raw.strip().lower() in ("1", "true", "yes", "on")


def build_datasets(cfg):
    kind = _get(cfg, "dataset", "kind", required=True)
    workers = _getint(cfg, "dataset", "workers", required=True)
    if kind in datagen.GENERATOR_KINDS:
        spec = datagen.GeneratorSpec(
            kind=kind,
            n_workers=workers,
            per_worker_n=_getint(cfg, "dataset", "per_worker_n", required=True),
            dim=_getint(cfg, "dataset", "d", required=True),
            seed=_getint(cfg, "dataset", "seed", 0),
        )
        return datagen.generate(spec), workers
    path = _get(cfg, "dataset", "path", required=True)
    standardize = _getbool(cfg, "dataset", "standardize")
    if kind == "svm":
        dim = _getint(cfg, "dataset", "d")
        return datagen.load_svm_format(path, workers, dim=dim, standardize=standardize), workers
    if kind == "csv":
        return datagen.load_csv(path, workers, standardize=standardize), workers
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _resolve_scaled(raw: str, n_total: int, L: float | None, what: str) -> float:
    """Parse a plain float or the convenience forms ``a/N`` and ``a/L``."""
    raw = raw.strip()
    if raw.endswith("/N"):
        return float(raw[:-2] or 1) / n_total
    if raw.endswith("/L"):
        if L is None:
            raise ConfigError(f"{what}: '/L' needs a computable smoothness constant")
        return float(raw[:-2] or 1) / L
    return float(raw)


def build_objective(cfg, datasets):
    family = _get(cfg, "objective", "family", required=True)
    if family not in FAMILIES:
        raise ConfigError(f"objective family must be one of {FAMILIES}")
    n_total = datasets[0].n_total
    lam_raw = _get(cfg, "objective", "lam", "0")
    lam = _resolve_scaled(lam_raw, n_total, None, "lam")
    spec = ObjectiveSpec(family=family, lam=lam, n_workers=len(datasets))
    return Objective(spec, datasets)


def build_run(cfg):
    """Assemble (objective, strategy, schedule, hp, step, batch_size) from config."""
    datasets, workers = build_datasets(cfg)
    objective = build_objective(cfg, datasets)
    d = objective.dim

    smoothness = None

    def L_global():
        nonlocal smoothness
        if smoothness is None:
            smoothness = objective.smoothness()
        return smoothness.L_global

    alpha_raw = _get(cfg, "hyperparams", "alpha", "1/L")
    need_L = alpha_raw.strip().endswith("/L")
    alpha = _resolve_scaled(alpha_raw, objective.n_total, L_global() if need_L else None, "alpha")
    beta = _getfloat(cfg, "hyperparams", "beta", 0.01)
    rounds = _getint(cfg, "hyperparams", "rounds", required=True)

    xi_over_m = _getfloat(cfg, "hyperparams", "xi_over_m")
    xi_base = _getfloat(cfg, "hyperparams", "xi")
    if xi_over_m is not None and xi_base is not None:
        raise ConfigError("give xi or xi_over_m, not both")
    if xi_over_m is not None:
        xi_base = xi_over_m * workers
    if xi_base is None:
        xi_base = 0.0
    xi_mode = _get(cfg, "hyperparams", "xi_mode", "uniform")
    if xi_mode == "uniform":
        xi_vec = np.full(d, float(xi_base))
    elif xi_mode == "coordinate_scaled":
        xi_vec = xi_base / objective.smoothness().L_coord
    else:
        raise ConfigError("xi_mode must be uniform or coordinate_scaled")

    hp = HyperParams(alpha=alpha, beta=beta, xi=xi_vec, n_workers=workers, n_rounds=rounds)

    alpha_kind = _get(cfg, "hyperparams", "alpha_kind", "constant")
    if alpha_kind == "constant":
        step = engine.StepSize("constant", alpha)
    elif alpha_kind == "decreasing":
        gamma0 = _getfloat(cfg, "hyperparams", "gamma0", alpha)
        decay = _getfloat(cfg, "hyperparams", "decay", 0.0)
        step = engine.StepSize("decreasing", gamma0, decay)
    else:
        raise ConfigError("alpha_kind must be constant or decreasing")

    name = _get(cfg, "strategy", "name", required=True)
    if name not in STRATEGY_NAMES:
        raise ConfigError(f"strategy must be one of {STRATEGY_NAMES}")
    batch_size = None
    if name in ("sgd", "sgdsec", "qsgdsec"):
        batch_size = _getint(cfg, "strategy", "batch", 1)
    if name in ("gd", "sgd"):
        strategy = engine.GDStrategy()
    elif name in ("gdsec", "sgdsec"):
        strategy = engine.GDSECStrategy(error_correction=True)
    elif name == "gdsec_no_ec":
        strategy = engine.GDSECStrategy(error_correction=False)
    elif name == "qsgdsec":
        s = _getint(cfg, "strategy", "s", 256)
        strategy = engine.GDSECStrategy(error_correction=True, quantize_s=s)
    elif name == "topj":
        strategy = engine.TopJStrategy(_getint(cfg, "strategy", "j", required=True))
    elif name == "cgd":
        xt = _getfloat(cfg, "strategy", "xi_tilde")
        xt_over_m = _getfloat(cfg, "strategy", "xi_tilde_over_m")
        if xt is None and xt_over_m is None:
            raise ConfigError("cgd needs xi_tilde or xi_tilde_over_m")
        strategy = engine.CGDStrategy(xt if xt is not None else xt_over_m * workers)
    elif name == "qgd":
        strategy = engine.QGDStrategy(_getint(cfg, "strategy", "s", 256))
    else:  # nounif_iag
        weights = iag_selection_weights(objective.smoothness().L_worker)
        strategy = engine.NoUnifIAGStrategy(weights)

    policy = _get(cfg, "schedule", "policy", "full")
    fraction = _getfloat(cfg, "schedule", "fraction", 1.0)
    schedule = engine.Schedule(policy=policy, fraction=fraction)

    return objective, strategy, schedule, hp, step, batch_size


def resolve_f_star(cfg, objective, rounds):
    raw = _get(cfg, "run", "f_star", "auto")
    if raw.strip().lower() == "auto":
        ref_rounds = _getint(cfg, "run", "ref_rounds", 10 * rounds)
        return engine.estimate_f_star(objective, rounds=ref_rounds)
    return float(raw)


def _write_summary(path, result, strategy_name, extra_lines=()):
    lines = [
        f"strategy: {strategy_name}",
        f"rounds run: {result.n_rounds}",
        f"diverged: {'yes' if result.diverged else 'no'}",
        f"final objective error: {result.f_err[-1]!r}" if result.n_rounds else "final objective error: n/a",
        f"total transmitted bits: {result.ledger.total_bits}",
        f"total transmissions: {result.ledger.total_transmissions}",
        "per-worker bits: " + ",".join(str(int(b)) for b in result.ledger.per_worker_bits),
    ]
    lines.extend(extra_lines)
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        if not cfg.has_section("run"):
            cfg.add_section("run")
        cfg.set("run", "seed", str(args.seed))
    objective, strategy, schedule, hp, step, batch_size = build_run(cfg)
    seed = _getint(cfg, "run", "seed", 0)
    out = Path(args.out or _get(cfg, "run", "out", "."))
    out.mkdir(parents=True, exist_ok=True)

    f_star = resolve_f_star(cfg, objective, hp.n_rounds)
    result = engine.run_experiment(
        objective, strategy, schedule, hp, f_star, seed,
        step=step, batch_size=batch_size,
    )
    engine.write_trace_csv(result, out / "trace.csv")

    extra = []
    if args.compare_gd:
        gd_result = engine.run_experiment(
            objective, engine.GDStrategy(), schedule, hp, f_star, seed,
            step=step, batch_size=batch_size,
        )
        engine.write_trace_csv(gd_result, out / "trace_gd.csv")
        target = args.target_error
        if target is None and result.n_rounds and gd_result.n_rounds:
            target = max(result.f_err[-1], gd_result.f_err[-1])
        ours = result.first_reach(target) if target is not None else None
        ref = gd_result.first_reach(target) if target is not None else None
        if ours and ref and ref[1] > 0:
            saving = 1.0 - ours[1] / ref[1]
            extra += [
                f"target error: {target!r}",
                f"bits at target (this strategy): {ours[1]} (round {ours[0]})",
                f"bits at target (gd reference): {ref[1]} (round {ref[0]})",
                f"bit savings vs gd: {100.0 * saving:.2f}%",
            ]
        else:
            extra.append("bit savings vs gd: target error not reached by both runs")

    _write_summary(out / "summary.txt", result, strategy.name, extra)
    print((out / "summary.txt").read_text(), end="")
    if result.diverged:
        print("run diverged; trace truncated", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _parse_sweep_axes(items):
    axes = []
    for item in items:
        try:
            key, values = item.split("=", 1)
            section, option = key.split(".", 1)
        except ValueError:
            raise ConfigError(f"sweep axis must look like section.key=v1,v2,...: {item!r}")
        vals = [v.strip() for v in values.split(",") if v.strip()]
        if not vals:
            raise ConfigError(f"sweep axis {key!r} has no values")
        axes.append(((section.strip(), option.strip()), vals))
    return axes


def cmd_sweep(args) -> int:
    base = load_config(args.config, args.set)
    axes = _parse_sweep_axes(args.sweep)
    if not axes:
        raise ConfigError("sweep needs at least one --sweep axis")
    out = Path(args.out or _get(base, "run", "out", "sweep_out"))
    out.mkdir(parents=True, exist_ok=True)

    keys = [f"{sec}.{opt}" for (sec, opt), _ in axes]
    grid = list(itertools.product(*(vals for _, vals in axes)))
    rows = []
    best = None
    for pt, combo in enumerate(grid):
        cfg = load_config(args.config, args.set)
        for ((section, option), _), value in zip(axes, combo):
            if not cfg.has_section(section):
                cfg.add_section(section)
            cfg.set(section, option, value)
        objective, strategy, schedule, hp, step, batch_size = build_run(cfg)
        seed = _getint(cfg, "run", "seed", 0)
        f_star = resolve_f_star(cfg, objective, hp.n_rounds)
        result = engine.run_experiment(
            objective, strategy, schedule, hp, f_star, seed,
            step=step, batch_size=batch_size,
        )
        point_dir = out / f"point_{pt:03d}"
        point_dir.mkdir(exist_ok=True)
        engine.write_trace_csv(result, point_dir / "trace.csv")
        final_err = float(result.f_err[-1]) if result.n_rounds else float("inf")
        min_err = float(result.f_err.min()) if result.n_rounds else float("inf")
        total_bits = result.ledger.total_bits
        reach = result.first_reach(args.target_error) if args.target_error else None
        rows.append(
            dict(
                point=pt,
                **dict(zip(keys, combo)),
                diverged=result.diverged,
                final_error=final_err,
                min_error=min_err,
                total_bits=total_bits,
                reached_round=reach[0] if reach else "",
                bits_at_target=reach[1] if reach else "",
            )
        )
        # Rank by bits at the target error when given, else by final error.
        score = (
            (0, reach[1]) if (args.target_error and reach)
            else (1, final_err if np.isfinite(final_err) else float("inf"))
        )
        if best is None or score < best[0]:
            best = (score, pt, combo)

    fieldnames = list(rows[0].keys())
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    _, pt, combo = best
    print(f"best point: point_{pt:03d} ({', '.join(f'{k}={v}' for k, v in zip(keys, combo))})")
    return EXIT_OK


def cmd_check_params(args) -> int:
    p = theory.TheoryParams(
        alpha=args.alpha, xi_max=args.xi, beta1=args.beta1, beta2=args.beta2,
        L=args.L, mu=args.mu, rho=args.rho, rho2=args.rho2,
    )
    report = theory.sigmas(p)
    print(f"{'constant':<10}{'value':>18}")
    for name, value in (
        ("gamma", report.gamma),
        ("sigma0", report.sigma0),
        ("sigma1", report.sigma1),
        ("sigma2", report.sigma2),
    ):
        print(f"{name:<10}{value:>18.8e}")
    if report.feasible:
        verdict = "FEASIBLE (boundary)" if report.boundary else "FEASIBLE"
    else:
        bad = ", ".join(theory.violated_conditions(report))
        verdict = f"INFEASIBLE ({bad} negative)"
    print(f"verdict:  {verdict}")
    try:
        c = theory.contraction(p)
        bounds = theory.iteration_complexity(c, args.eps)
        print(f"contraction c = {c:.8e}")
        print(f"iterations to {args.eps:g} of the initial potential:")
        print(f"  exact bound  {bounds.exact:.1f}")
        print(f"  upper bound  {bounds.upper:.1f}")
    except ValueError as err:
        print(f"contraction: not available ({err})")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = datagen.GeneratorSpec(
        kind=args.kind,
        n_workers=args.workers,
        per_worker_n=args.per_worker_n,
        dim=args.d,
        seed=args.seed,
    )
    datasets = datagen.generate(spec)
    datagen.write_csv(datasets, args.out)
    n = sum(ds.n_local for ds in datasets)
    print(f"wrote {n} rows ({args.workers} workers x {args.per_worker_n}) to {args.out}")
    return EXIT_OK


def _read_trace(path):
    ks, errs, bits = [], [], []
    with open(path) as fh:
        reader = csv.DictReader(fh)
        required = {"k", "objective_error", "cum_bits_total"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ConfigError(f"{path}: not a trace CSV (missing {required})")
        for row in reader:
            ks.append(int(row["k"]))
            errs.append(float(row["objective_error"]))
            bits.append(int(row["cum_bits_total"]))
    return np.array(ks), np.array(errs), np.array(bits)


def cmd_plot(args) -> int:
    series = []
    for path in args.traces:
        ks, errs, bits = _read_trace(path)
        xs = ks if args.axis == "iterations" else bits
        series.append((Path(path).stem, xs, errs))
    x_label = "iteration" if args.axis == "iterations" else "cumulative transmitted bits"
    svg = plotting.render_traces(series, x_label=x_label, title=args.title or "")
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gdsec",
        description="Distributed gradient descent simulator with sparsified "
        "communication, exact bit accounting, and convergence checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--set", action="append", metavar="SEC.KEY=VAL")
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--compare-gd", action="store_true")
    run.add_argument("--target-error", type=float)
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run a grid of configurations")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--set", action="append", metavar="SEC.KEY=VAL")
    sweep.add_argument("--sweep", action="append", required=True,
                       metavar="SEC.KEY=V1,V2,...")
    sweep.add_argument("--target-error", type=float)
    sweep.add_argument("--out")
    sweep.set_defaults(func=cmd_sweep)

    chk = sub.add_parser("check-params", help="evaluate the feasibility constants")
    chk.add_argument("--alpha", type=float, required=True)
    chk.add_argument("--beta1", type=float, required=True)
    chk.add_argument("--beta2", type=float, required=True)
    chk.add_argument("--rho", type=float, default=1.0)
    chk.add_argument("--rho2", type=float, default=1.0)
    chk.add_argument("--xi", type=float, required=True)
    chk.add_argument("--L", type=float, required=True)
    chk.add_argument("--mu", type=float, required=True)
    chk.add_argument("--eps", type=float, default=1e-6)
    chk.set_defaults(func=cmd_check_params)

    gen = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    gen.add_argument("--kind", choices=datagen.GENERATOR_KINDS, required=True)
    gen.add_argument("--workers", type=int, required=True)
    gen.add_argument("--per-worker-n", type=int, required=True)
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen_data)

    plot = sub.add_parser("plot", help="render trace CSVs as an SVG chart")
    plot.add_argument("traces", nargs="+")
    plot.add_argument("--axis", choices=("iterations", "bits"), default="iterations")
    plot.add_argument("--out", required=True)
    plot.add_argument("--title")
    plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
