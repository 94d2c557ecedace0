"""Command-line front end.

Subcommands: ``simulate`` (one experiment -> metrics + replications),
``sweep`` (experiment grid over p or r), ``verify-bounds`` (conditional
fluctuation reports over a design grid), and ``estimate`` (one-shot
estimation from user-supplied population/sample CSV files).  All outputs
are CSV with fixed headers; ``--json`` mirrors each table as JSON.  Exit
codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .designs import (
    DrawnSample,
    PoissonDesign,
    SRSWORDesign,
    StratifiedDesign,
    joint_probs,
)
from .diagnostics import fluctuation_check
from .errors import ConfigError, SplitregError
from .estimators import (
    confidence_interval,
    greg,
    ht_total,
    ht_variance_general,
    sreg,
    sreg_variance,
)
from .folds import assign_folds
from .popgen import PopulationConfig, StrataLabels
from .regfit import FitSpec
from .simharness import (
    ESTIMATOR_NAMES,
    ExperimentConfig,
    PRESETS,
    run_experiment,
    sweep,
    write_metrics_csv,
    write_replications_csv,
)

_POP_KEYS = {f.name for f in dataclasses.fields(PopulationConfig)}
_EXP_KEYS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"population"}


# ---------------------------------------------------------------------------
# Config loading and echoing.
# ---------------------------------------------------------------------------


def load_experiment_config(source: str) -> ExperimentConfig:
    """Build an ExperimentConfig from a preset name or a TOML file."""
    if source in PRESETS:
        return PRESETS[source]()
    if not os.path.exists(source):
        raise FileNotFoundError(
            f"config {source!r} is neither a preset ({', '.join(sorted(PRESETS))}) "
            f"nor an existing file"
        )
    with open(source, "rb") as fh:
        raw = tomllib.load(fh)

    pop_raw = raw.pop("population", {})
    unknown = set(raw) - _EXP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    unknown_pop = set(pop_raw) - _POP_KEYS
    if unknown_pop:
        raise ConfigError(f"unknown [population] keys: {sorted(unknown_pop)}")

    if "estimators" in raw:
        raw["estimators"] = tuple(raw["estimators"])
    if "stratum_fractions" in raw:
        raw["stratum_fractions"] = tuple(raw["stratum_fractions"])
    return ExperimentConfig(population=PopulationConfig(**pop_raw), **raw)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def write_resolved_config(config: ExperimentConfig, path: str) -> None:
    """Echo the fully resolved config; re-loading it reproduces the run."""
    lines = []
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "population":
            continue
        lines.append(f"{f.name} = {_toml_value(getattr(config, f.name))}")
    lines.append("")
    lines.append("[population]")
    for f in dataclasses.fields(PopulationConfig):
        lines.append(f"{f.name} = {_toml_value(getattr(config.population, f.name))}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    updates = {}
    if args.seed is not None:
        updates["master_seed"] = args.seed
    if args.b is not None:
        updates["B"] = args.b
    if getattr(args, "k", None) is not None:
        updates["K"] = args.k
    if getattr(args, "n", None) is not None:
        updates["n"] = args.n
    if getattr(args, "design", None) is not None:
        updates["design"] = args.design
    if getattr(args, "estimators", None) is not None:
        updates["estimators"] = tuple(args.estimators.split(","))
    if getattr(args, "threads", None) is not None:
        updates["parallelism"] = args.threads
    if getattr(args, "population_mode", None) is not None:
        updates["population_mode"] = args.population_mode
    if getattr(args, "exact_rejective_pi", False):
        updates["exact_rejective_pi"] = True
    if updates:
        config = dataclasses.replace(config, **updates)
    return config


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_json(path: str, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=float)


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    config = _apply_overrides(load_experiment_config(args.config), args)
    out = _outdir(args)
    table, records = run_experiment(config)
    write_metrics_csv(table, os.path.join(out, "metrics.csv"))
    write_replications_csv(records, os.path.join(out, "replications.csv"))
    write_resolved_config(config, os.path.join(out, "resolved_config.toml"))
    if args.json:
        _write_json(
            os.path.join(out, "metrics.json"),
            {
                "master_seed": table.master_seed,
                "b_requested": table.b_requested,
                "b_effective": table.b_effective,
                "failures": table.failures,
                "rows": {k: dataclasses.asdict(v) for k, v in table.rows.items()},
            },
        )
        _write_json(
            os.path.join(out, "replications.json"),
            [{"rep": r.rep, "results": r.results} for r in records],
        )
    if table.failures:
        print(f"completed with {len(table.failures)} failed replications", file=sys.stderr)
    if args.verbose:
        print(
            f"wrote {out}/metrics.csv ({len(table.rows)} estimators, "
            f"B={table.b_effective}/{table.b_requested}, seed={table.master_seed})",
            file=sys.stderr,
        )
    return 0


def cmd_sweep(args) -> int:
    config = _apply_overrides(load_experiment_config(args.config), args)
    out = _outdir(args)
    if args.axis == "p":
        grid = [int(v) for v in args.grid.split(",")]
    else:
        grid = [float(v) for v in args.grid.split(",")]
    rows = sweep(config, args.axis, grid)
    path = os.path.join(out, "sweep.csv")
    header = [
        "axis", "value", "estimator", "bias", "se", "rmse", "rb", "cr",
        "bias_mcse", "b_effective",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[h] if h in ("axis", "estimator") else repr(row[h])
                             if isinstance(row[h], float) else row[h] for h in header])
    write_resolved_config(config, os.path.join(out, "resolved_config.toml"))
    if args.json:
        _write_json(os.path.join(out, "sweep.json"), rows)
    if args.verbose:
        print(
            f"wrote {out}/sweep.csv ({len(rows)} rows over {args.axis} grid {grid})",
            file=sys.stderr,
        )
    return 0


def cmd_verify_bounds(args) -> int:
    out = _outdir(args)
    designs = args.designs.split(",")
    n_grid = [int(v) for v in args.population_sizes.split(",")]
    rows = []
    rng_master = np.random.SeedSequence(args.seed if args.seed is not None else 0)
    for kind in designs:
        if kind not in ("srswor", "stratified", "rejective", "poisson"):
            raise ConfigError(f"unknown design kind {kind!r} in --designs")
        for N in n_grid:
            rows.extend(_bound_rows(kind, N, args, rng_master))
    path = os.path.join(out, "bounds.csv")
    header = [
        "design", "fold", "N", "n", "K", "lhs", "rhs", "C_min", "mc_se",
        "multiplier", "satisfied", "d_mean", "d_mean_se", "n_k", "N_k",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    if args.json:
        _write_json(
            os.path.join(out, "bounds.json"),
            [dict(zip(header, row)) for row in rows],
        )
    if args.verbose:
        satisfied = sum(int(row[10]) for row in rows)
        print(
            f"wrote {out}/bounds.csv ({len(rows)} fold reports, "
            f"{satisfied} bounds satisfied)",
            file=sys.stderr,
        )
    return 0


def _bound_rows(kind: str, N: int, args, rng_master) -> list[list]:
    from .simharness import _build_world  # shared design construction

    f = args.sampling_fraction
    n = max(2, round(f * N))
    pop_cfg = PopulationConfig(N=N, p=min(10, N // 4), s=min(5, min(10, N // 4)))
    exp_cfg = ExperimentConfig(
        population=pop_cfg, design=kind, n=n, K=args.k, B=1, estimators=("SREG",),
    )
    world = _build_world(exp_cfg)
    ss = rng_master.spawn(1)[0]
    fold_rng, a_rng, check_rng = [np.random.default_rng(s) for s in ss.spawn(3)]
    fa = assign_folds(N, args.k, fold_rng)

    if args.a_kind == "constant":
        a_arrays = [np.ones(fa.members(k).size) for k in range(1, args.k + 1)]
    elif args.a_kind == "heavy":
        a_arrays = [
            a_rng.standard_t(df=3, size=fa.members(k).size) for k in range(1, args.k + 1)
        ]
    else:  # oracle-error: out-of-fold prediction gaps from a real fit
        from .designs import draw_sample

        sample = draw_sample(world.design, a_rng)
        report = sreg(
            world.pop.x, world.pop.y[sample.indices], sample, world.pi,
            FitSpec(method="ols"), fa,
        )
        gap = report.internals.oof_predictions - world.pop.m_oracle
        a_arrays = [gap[fa.members(k)] for k in range(1, args.k + 1)]

    reports = fluctuation_check(
        world.design, fa, a_arrays, args.inner_reps, check_rng
    )
    return [
        [
            kind, r.fold, N, n, args.k, repr(r.lhs), repr(r.rhs), repr(r.c_min),
            repr(r.mc_se), repr(r.multiplier), int(r.satisfied), repr(r.d_mean),
            repr(r.d_mean_se), r.n_k, r.N_k,
        ]
        for r in reports
    ]


def _read_population_csv(path: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if "unit_id" not in header:
        raise ConfigError("population file needs a unit_id column")
    x_cols = [h for h in header if h.startswith("x_")]
    if not x_cols:
        raise ConfigError("population file needs x_1..x_p columns")
    x_cols.sort(key=lambda h: int(h.split("_")[1]))
    idx = {h: i for i, h in enumerate(header)}
    try:
        unit_ids = np.array([int(r[idx["unit_id"]]) for r in rows])
        x = np.array([[float(r[idx[c]]) for c in x_cols] for r in rows])
        strata = None
        if "stratum" in idx:
            labels = np.array([int(r[idx["stratum"]]) for r in rows])
            if labels.min() >= 1:
                sizes = np.bincount(labels)[1:]
                strata = StrataLabels(labels=labels, sizes=sizes)
    except (ValueError, IndexError) as err:
        raise ConfigError(f"malformed population file {path}: {err}") from err
    if np.unique(unit_ids).size != unit_ids.size:
        raise ConfigError("population unit_id values must be unique")
    return unit_ids, x, strata


def _read_sample_csv(path: str):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    needed = ("unit_id", "y", "pi")
    if any(c not in header for c in needed):
        raise ConfigError("sample file needs unit_id, y, pi columns")
    idx = {h: i for i, h in enumerate(header)}
    try:
        ids = np.array([int(r[idx["unit_id"]]) for r in rows])
        y = np.array([float(r[idx["y"]]) for r in rows])
        pi = np.array([float(r[idx["pi"]]) for r in rows])
    except (ValueError, IndexError) as err:
        raise ConfigError(f"malformed sample file {path}: {err}") from err
    return ids, y, pi


def _joint_from_pairs_file(path: str, pos: dict, sample, pi_full):
    """Joint-probability accessor backed by a user-supplied pair table.

    The file must cover every unordered pair of sampled units; entries are
    symmetrized and the diagonal comes from the sample's own pi values.
    """
    from .designs import JointProbs

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    needed = ("unit_id_i", "unit_id_j", "pi_ij")
    if any(c not in header for c in needed):
        raise ConfigError("pairs file needs unit_id_i, unit_id_j, pi_ij columns")
    idx = {h: i for i, h in enumerate(header)}

    N = pi_full.size
    matrix = np.zeros((N, N))
    try:
        for r in rows:
            i_id = int(r[idx["unit_id_i"]])
            j_id = int(r[idx["unit_id_j"]])
            value = float(r[idx["pi_ij"]])
            if i_id not in pos or j_id not in pos:
                raise ConfigError(
                    f"pairs file references unit_id {i_id if i_id not in pos else j_id} "
                    "not present in the population"
                )
            if not 0 < value <= 1:
                raise ConfigError(f"pi_ij for pair ({i_id}, {j_id}) must lie in (0, 1]")
            i, j = pos[i_id], pos[j_id]
            matrix[i, j] = value
            matrix[j, i] = value
    except (ValueError, IndexError) as err:
        raise ConfigError(f"malformed pairs file {path}: {err}") from err

    sampled = sample.indices
    matrix[sampled, sampled] = pi_full[sampled]
    block = matrix[np.ix_(sampled, sampled)]
    holes = np.argwhere(np.triu(block == 0.0, k=1))
    if holes.size:
        i, j = holes[0]
        raise ConfigError(
            f"pairs file is missing {len(holes)} sampled pairs; first missing "
            f"pair of row positions: ({sampled[i] + 1}, {sampled[j] + 1})"
        )
    return JointProbs(pi=pi_full, row_fn=None, mode="file", matrix=matrix)


def cmd_estimate(args) -> int:
    out = _outdir(args)
    unit_ids, x, strata = _read_population_csv(args.population)
    sample_ids, y_s, pi_s = _read_sample_csv(args.sample)

    pos = {u: i for i, u in enumerate(unit_ids)}
    missing = [int(u) for u in sample_ids if u not in pos]
    if missing:
        print(
            f"error: {len(missing)} sample unit_id values are not in the population; "
            f"first offenders: {missing[:10]}",
            file=sys.stderr,
        )
        return 1
    if np.any((pi_s <= 0) | (pi_s > 1)):
        print("error: sample pi values must lie in (0, 1]", file=sys.stderr)
        return 1

    N = unit_ids.size
    order = np.argsort([pos[u] for u in sample_ids])
    sample_rows = np.array([pos[u] for u in sample_ids])[order]
    y_sorted = y_s[order]
    pi_sorted = pi_s[order]
    sample = DrawnSample.from_indices(sample_rows, N)

    # Full-length weight vector; off-sample entries are placeholders that
    # no estimator reads (every formula touches sampled units only).
    pi_full = np.full(N, 0.5)
    pi_full[sample_rows] = pi_sorted

    if args.pairs is not None:
        joint = _joint_from_pairs_file(args.pairs, pos, sample, pi_full)
    else:
        _, joint = _declared_design(args.design, N, sample, pi_full, strata)

    requested = args.estimators.split(",")
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    rows = []
    for name in requested:
        if name == "HT":
            report = ht_total(sample, pi_full, y_sorted)
            var = ht_variance_general(y_sorted, sample, pi_full, joint)
        elif name in ("GREG", "GREG.Lasso"):
            spec = FitSpec(method="lasso" if name.endswith("Lasso") else "ols")
            report = greg(x, y_sorted, sample, pi_full, spec, rng=rng, name=name)
            var = ht_variance_general(
                report.internals.insample_residuals, sample, pi_full, joint
            )
        elif name in ("SREG", "SREG.Lasso"):
            spec = FitSpec(method="lasso" if name.endswith("Lasso") else "ols")
            fa = assign_folds(N, args.k, rng)
            report = sreg(x, y_sorted, sample, pi_full, spec, fa, rng=rng, name=name)
            var = sreg_variance(report, sample, pi_full, joint)
        else:
            raise ConfigError(
                f"estimator {name!r} is not available from files "
                "(oracle estimators need the true mean function)"
            )
        low, high = confidence_interval(report.point, var)
        rows.append(
            [name] + [repr(float(v)) for v in (report.point, var, low, high)]
        )

    path = os.path.join(out, "estimate.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "point", "variance", "ci_low", "ci_high"])
        writer.writerows(rows)
    if args.json:
        _write_json(
            os.path.join(out, "estimate.json"),
            [
                {
                    "estimator": r[0], "point": float(r[1]), "variance": float(r[2]),
                    "ci_low": float(r[3]), "ci_high": float(r[4]),
                }
                for r in rows
            ],
        )
    if args.verbose:
        source = f"pairs file {args.pairs}" if args.pairs else f"declared {args.design}"
        print(
            f"wrote {out}/estimate.csv ({len(rows)} estimators, N={N}, "
            f"n={sample.n_realized}, joint probabilities from {source})",
            file=sys.stderr,
        )
    return 0


def _declared_design(kind: str, N: int, sample: DrawnSample, pi_full, strata):
    if kind == "srswor":
        design = SRSWORDesign(N=N, n=sample.n_realized)
        return design, joint_probs(design)
    if kind == "poisson":
        design = PoissonDesign(pi=pi_full)
        return design, joint_probs(design)
    if kind == "stratified":
        if strata is None:
            raise ConfigError("stratified design needs a stratum column in the population file")
        n_h = np.array(
            [sample.indicators[strata.indices(h + 1)].sum() for h in range(strata.H)],
            dtype=np.int64,
        )
        design = StratifiedDesign(strata=strata, n_h=n_h)
        return design, joint_probs(design)
    raise ConfigError(f"unknown declared design {kind!r}")


# ---------------------------------------------------------------------------
# Parser and entry point.
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitreg",
        description="Design-based survey estimation with cross-fitted regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    default_out = os.environ.get("SPLITREG_OUT", ".")

    def common(p):
        p.add_argument("--out", default=default_out, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--json", action="store_true", help="also write JSON mirrors")
        p.add_argument("--verbose", action="store_true",
                       help="print a progress summary to stderr")

    sim = sub.add_parser("simulate", help="run one Monte Carlo experiment")
    common(sim)
    sim.add_argument("--config", required=True, help="preset name or TOML file")
    sim.add_argument("--b", type=int, default=None, help="replication count override")
    sim.add_argument("--k", type=int, default=None, help="fold count override")
    sim.add_argument("--n", type=int, default=None, help="sample size override")
    sim.add_argument("--design", choices=("stratified", "rejective", "srswor", "poisson"),
                     default=None)
    sim.add_argument("--estimators", default=None,
                     help=f"comma list from {','.join(ESTIMATOR_NAMES)}")
    sim.add_argument("--threads", type=int, default=None, help="parallel replications")
    sim.add_argument("--population-mode", choices=("fixed", "per-replication"),
                     dest="population_mode", default=None)
    sim.add_argument("--exact-rejective-pi", action="store_true",
                     dest="exact_rejective_pi",
                     help="weight by exact fixed-size inclusion probabilities")
    sim.set_defaults(func=cmd_simulate)

    sw = sub.add_parser("sweep", help="run an experiment grid over p or r")
    common(sw)
    sw.add_argument("--config", required=True)
    sw.add_argument("--axis", choices=("p", "r"), required=True)
    sw.add_argument("--grid", required=True, help="comma-separated grid values")
    sw.add_argument("--b", type=int, default=None)
    sw.add_argument("--k", type=int, default=None)
    sw.add_argument("--n", type=int, default=None)
    sw.add_argument("--design", choices=("stratified", "rejective", "srswor", "poisson"),
                    default=None)
    sw.add_argument("--estimators", default=None)
    sw.add_argument("--threads", type=int, default=None)
    sw.set_defaults(func=cmd_sweep)

    vb = sub.add_parser("verify-bounds", help="conditional fluctuation-bound reports")
    common(vb)
    vb.add_argument("--designs", default="srswor,stratified,rejective")
    vb.add_argument("--population-sizes", default="400,800,1600",
                    help="comma list of N values")
    vb.add_argument("--sampling-fraction", type=float, default=0.3)
    vb.add_argument("--k", type=int, default=10)
    vb.add_argument("--inner-reps", type=int, default=2000, dest="inner_reps")
    vb.add_argument("--a-kind", choices=("oracle-error", "constant", "heavy"),
                    default="oracle-error", dest="a_kind")
    vb.set_defaults(func=cmd_verify_bounds)

    est = sub.add_parser("estimate", help="estimate a total from CSV files")
    common(est)
    est.add_argument("--population", required=True, help="CSV with unit_id, x_1..x_p")
    est.add_argument("--sample", required=True, help="CSV with unit_id, y, pi")
    est.add_argument("--design", choices=("srswor", "stratified", "poisson"),
                     default="srswor")
    est.add_argument("--pairs", default=None,
                     help="CSV with unit_id_i, unit_id_j, pi_ij; overrides --design "
                          "as the source of pairwise inclusion probabilities")
    est.add_argument("--estimators", default="HT,GREG,SREG")
    est.add_argument("--k", type=int, default=10, help="folds for cross-fitted estimators")
    est.set_defaults(func=cmd_estimate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except SplitregError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
