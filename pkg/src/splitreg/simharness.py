"""Monte Carlo experiment driver.

One experiment fixes a finite population (default) and repeatedly draws
folds and samples, computing a configurable set of total estimators with
their variance estimates.  Seed discipline: replication b consumes only
the b-th spawn of the master seed sequence, so results are bit-identical
across re-runs and across parallelism degrees; within a replication the
fold, design, and fitting streams are spawned separately.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .designs import (
    Design,
    PoissonDesign,
    RejectiveDesign,
    SRSWORDesign,
    StratifiedDesign,
    draw_sample,
    first_order_probs,
    joint_probs,
    scaled_sigmoid_probs,
)
from .diagnostics import remainder
from .errors import ConfigError, HarnessAbort
from .estimators import (
    EstimateReport,
    confidence_interval,
    diff_oracle,
    greg,
    ht_total,
    ht_variance_general,
    sreg,
    sreg_variance,
)
from .folds import assign_folds
from .popgen import Population, PopulationConfig, assign_strata, generate_population
from .regfit import FitSpec

__all__ = [
    "ESTIMATOR_NAMES",
    "ExperimentConfig",
    "MetricsRow",
    "MetricsTable",
    "ReplicationRecord",
    "run_experiment",
    "sweep",
    "benchmark_stratified",
    "benchmark_rejective",
    "PRESETS",
    "write_metrics_csv",
    "write_replications_csv",
]

ESTIMATOR_NAMES = ("HT", "Diff", "GREG.Oracle", "GREG", "SREG", "GREG.Lasso", "SREG.Lasso")
DESIGN_KINDS = ("stratified", "rejective", "srswor", "poisson")
SREG_FAMILY = ("SREG", "SREG.Lasso")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; validated on construction."""

    population: PopulationConfig = PopulationConfig()
    design: str = "stratified"
    n: int = 300
    K: int = 10
    B: int = 500
    estimators: tuple[str, ...] = ESTIMATOR_NAMES
    master_seed: int = 0
    parallelism: int = 1
    population_mode: str = "fixed"
    stratum_fractions: tuple[float, ...] = (0.15, 0.20, 0.30, 0.35)
    exact_rejective_pi: bool = False
    rejective_joint: str = "approximate"
    confidence_level: float = 0.95
    max_failure_fraction: float = 0.01

    def __post_init__(self) -> None:
        if self.design not in DESIGN_KINDS:
            raise ConfigError(f"design must be one of {DESIGN_KINDS}, got {self.design!r}")
        if not 1 <= self.n <= self.population.N:
            raise ConfigError(f"need 1 <= n <= N, got n={self.n}")
        if self.K < 2:
            raise ConfigError(f"K must be at least 2, got {self.K}")
        if self.B < 1:
            raise ConfigError(f"B must be at least 1, got {self.B}")
        if not self.estimators:
            raise ConfigError("estimator list must be nonempty")
        unknown = [e for e in self.estimators if e not in ESTIMATOR_NAMES]
        if unknown:
            raise ConfigError(f"unknown estimators {unknown}; choose from {ESTIMATOR_NAMES}")
        if self.population_mode not in ("fixed", "per-replication"):
            raise ConfigError(f"bad population_mode {self.population_mode!r}")
        if self.rejective_joint not in ("approximate", "exact"):
            raise ConfigError(f"bad rejective_joint {self.rejective_joint!r}")
        if abs(sum(self.stratum_fractions) - 1.0) > 1e-9:
            raise ConfigError("stratum fractions must sum to 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be at least 1")
        if not 0 < self.confidence_level < 1:
            raise ConfigError("confidence level must lie in (0, 1)")
        if "GREG.Oracle" in self.estimators and self.population.s == 0:
            raise ConfigError("GREG.Oracle needs at least one nonzero coefficient (s >= 1)")


@dataclass
class _World:
    """A realized population with its design, weights, and joint accessor."""

    pop: Population
    design: Design
    pi: np.ndarray
    joint: object
    true_total: float


def _build_design(config: ExperimentConfig, pop: Population):
    if config.design == "stratified":
        H = len(config.stratum_fractions)
        strata = assign_strata(pop, H)
        n_h = np.round(np.asarray(config.stratum_fractions) * config.n).astype(np.int64)
        drift = config.n - int(n_h.sum())
        n_h[int(np.argmax(n_h))] += drift
        if np.any(n_h < 1):
            raise ConfigError("a stratum would receive no sample; adjust fractions or n")
        design = StratifiedDesign(strata=strata, n_h=n_h)
        return design, first_order_probs(design), joint_probs(design)
    if config.design == "rejective":
        p_bern, _ = scaled_sigmoid_probs(pop.z, config.n)
        design = RejectiveDesign(p_bern=p_bern, n=config.n)
        pi = first_order_probs(design) if config.exact_rejective_pi else p_bern
        joint = joint_probs(design, mode=config.rejective_joint, pi=pi)
        return design, pi, joint
    if config.design == "srswor":
        design = SRSWORDesign(N=pop.N, n=config.n)
        return design, first_order_probs(design), joint_probs(design)
    # Informative Poisson: same size measure as the rejective rule, but
    # drawn without conditioning on the realized size.
    p_bern, _ = scaled_sigmoid_probs(pop.z, config.n)
    design = PoissonDesign(pi=p_bern)
    return design, p_bern, joint_probs(design)


def _build_world(config: ExperimentConfig, pop_seed: int | None = None) -> _World:
    pop_config = config.population
    if pop_seed is not None:
        pop_config = replace(pop_config, seed=pop_seed)
    pop = generate_population(pop_config)
    design, pi, joint = _build_design(config, pop)
    return _World(
        pop=pop, design=design, pi=pi, joint=joint, true_total=float(pop.y.sum())
    )


def _estimate_one(
    name: str,
    world: _World,
    sample,
    fold_assignment,
    fit_rng: np.random.Generator,
) -> tuple[EstimateReport, float]:
    """Point estimate plus its paired variance estimate."""
    pop, pi = world.pop, world.pi
    y_s = pop.y[sample.indices]
    if name == "HT":
        report = ht_total(sample, pi, y_s)
        var = ht_variance_general(y_s, sample, pi, world.joint)
    elif name == "Diff":
        report = diff_oracle(pop, sample, pi)
        var = ht_variance_general(pop.e[sample.indices], sample, pi, world.joint)
    elif name == "GREG.Oracle":
        s = pop.config.s
        report = greg(pop.x[:, :s], y_s, sample, pi, FitSpec(method="ols"), name=name)
        var = ht_variance_general(report.internals.insample_residuals, sample, pi, world.joint)
    elif name == "GREG":
        report = greg(pop.x, y_s, sample, pi, FitSpec(method="ols"), name=name)
        var = ht_variance_general(report.internals.insample_residuals, sample, pi, world.joint)
    elif name == "GREG.Lasso":
        report = greg(
            pop.x, y_s, sample, pi, FitSpec(method="lasso"), rng=fit_rng, name=name
        )
        var = ht_variance_general(report.internals.insample_residuals, sample, pi, world.joint)
    elif name == "SREG":
        report = sreg(
            pop.x, y_s, sample, pi, FitSpec(method="ols"), fold_assignment, name=name
        )
        var = sreg_variance(report, sample, pi, world.joint)
    elif name == "SREG.Lasso":
        report = sreg(
            pop.x, y_s, sample, pi, FitSpec(method="lasso"), fold_assignment,
            rng=fit_rng, name=name,
        )
        var = sreg_variance(report, sample, pi, world.joint)
    else:
        raise ConfigError(f"unknown estimator {name!r}")
    return report, float(var)


def _run_replication(world: _World, config: ExperimentConfig, child: np.random.SeedSequence):
    fold_ss, design_ss, fit_ss, pop_ss = child.spawn(4)
    if config.population_mode == "per-replication":
        pop_seed = int(np.random.default_rng(pop_ss).integers(0, 2**31 - 1))
        world = _build_world(config, pop_seed=pop_seed)

    fold_rng = np.random.default_rng(fold_ss)
    design_rng = np.random.default_rng(design_ss)
    fit_streams = fit_ss.spawn(len(config.estimators))

    sample = draw_sample(world.design, design_rng)
    needs_folds = any(e in SREG_FAMILY for e in config.estimators)
    fa = assign_folds(world.pop.N, config.K, fold_rng) if needs_folds else None

    results = {}
    for name, stream in zip(config.estimators, fit_streams):
        report, var = _estimate_one(name, world, sample, fa, np.random.default_rng(stream))
        if name in SREG_FAMILY:
            # Per-replication identity audit: the gap from the oracle
            # difference estimate must equal the remainder exactly.
            t_diff = diff_oracle(world.pop, sample, world.pi).point
            r_total, _ = remainder(report.internals, world.pop.m_oracle, sample, world.pi)
            gap = (report.point - t_diff) - r_total
            if abs(gap) > 1e-10 * (1.0 + abs(report.point)):
                raise HarnessAbort(
                    f"remainder identity violated for {name}: gap={gap:.3e}"
                )
        low, high = confidence_interval(report.point, var, config.confidence_level)
        covered = bool(low <= world.true_total <= high) if math.isfinite(low) else False
        results[name] = {
            "point": report.point,
            "variance": var,
            "ci_low": low,
            "ci_high": high,
            "covered": covered,
            "true_total": world.true_total,
        }
    return results


@dataclass
class ReplicationRecord:
    rep: int
    results: dict


@dataclass(frozen=True)
class MetricsRow:
    estimator: str
    bias: float
    se: float
    rmse: float
    rb: float
    cr: float
    b_effective: int
    bias_mcse: float
    cr_mcse: float
    var_mc: float
    mean_vhat: float


@dataclass
class MetricsTable:
    rows: dict[str, MetricsRow]
    b_requested: int
    b_effective: int
    failures: list[tuple[int, str]]
    master_seed: int

    def row(self, estimator: str) -> MetricsRow:
        return self.rows[estimator]


def _metrics_from_records(records, config) -> MetricsTable:
    rows = {}
    B = len(records)
    for name in config.estimators:
        d = np.array([r.results[name]["point"] - r.results[name]["true_total"] for r in records])
        vhat = np.array([r.results[name]["variance"] for r in records])
        covered = np.array([r.results[name]["covered"] for r in records], dtype=float)
        bias = float(d.mean())
        if B > 1:
            se = float(d.std(ddof=1))
            var_mc = se * se
            rb = float(vhat.mean() / var_mc - 1.0) if var_mc > 0 else float("nan")
        else:
            se = float("nan")
            var_mc = float("nan")
            rb = float("nan")
        rmse = float(np.sqrt(np.mean(d * d)))
        cr = float(covered.mean())
        rows[name] = MetricsRow(
            estimator=name,
            bias=bias,
            se=se,
            rmse=rmse,
            rb=rb,
            cr=cr,
            b_effective=B,
            bias_mcse=float(se / np.sqrt(B)) if B > 1 else float("nan"),
            cr_mcse=float(np.sqrt(max(cr * (1 - cr), 0.0) / B)),
            var_mc=var_mc,
            mean_vhat=float(vhat.mean()),
        )
    return MetricsTable(
        rows=rows,
        b_requested=config.B,
        b_effective=B,
        failures=[],
        master_seed=config.master_seed,
    )


def run_experiment(config: ExperimentConfig) -> tuple[MetricsTable, list[ReplicationRecord]]:
    """Run B replications and reduce them, in order, to a metrics table.

    Replications that raise are recorded and skipped; more than
    max_failure_fraction of them failing aborts the experiment.
    """
    world = _build_world(config)
    children = np.random.SeedSequence(config.master_seed).spawn(config.B)

    outcomes: list = [None] * config.B
    if config.parallelism > 1:
        with ProcessPoolExecutor(
            max_workers=config.parallelism,
            initializer=_worker_init,
            initargs=(config,),
        ) as pool:
            for b, res in enumerate(pool.map(_worker_run, children, chunksize=8)):
                outcomes[b] = res
    else:
        for b, child in enumerate(children):
            try:
                outcomes[b] = _run_replication(world, config, child)
            except Exception as err:  # noqa: BLE001 - failure policy needs breadth
                outcomes[b] = (type(err).__name__, str(err))

    records, failures = [], []
    for b, out in enumerate(outcomes):
        if isinstance(out, dict):
            records.append(ReplicationRecord(rep=b, results=out))
        else:
            failures.append((b, f"{out[0]}: {out[1]}"))
    if len(failures) > config.max_failure_fraction * config.B:
        raise HarnessAbort(
            f"{len(failures)} of {config.B} replications failed; first: {failures[0][1]}"
        )
    if not records:
        raise HarnessAbort("every replication failed")

    table = _metrics_from_records(records, config)
    table.failures = failures
    return table, records


_WORKER_CONFIG: ExperimentConfig | None = None
_WORKER_WORLD: _World | None = None


def _worker_init(config: ExperimentConfig) -> None:
    global _WORKER_CONFIG, _WORKER_WORLD
    _WORKER_CONFIG = config
    _WORKER_WORLD = _build_world(config)


def _worker_run(child: np.random.SeedSequence):
    try:
        return _run_replication(_WORKER_WORLD, _WORKER_CONFIG, child)
    except Exception as err:  # noqa: BLE001 - failure policy needs breadth
        return (type(err).__name__, str(err))


def sweep(
    config: ExperimentConfig, axis: str, grid: list, B: int | None = None
) -> list[dict]:
    """Re-run the experiment along a population axis (p or r).

    The population is regenerated at each grid point (its dimension or
    informativeness changes), everything else is held at the base config.
    Returns long-format rows ready for CSV/plotting.
    """
    if axis not in ("p", "r"):
        raise ConfigError(f"sweep axis must be 'p' or 'r', got {axis!r}")
    rows = []
    for value in grid:
        if axis == "p":
            pop_cfg = replace(config.population, p=int(value))
            if pop_cfg.s > pop_cfg.p:
                raise ConfigError(f"grid value p={value} is below s={pop_cfg.s}")
        else:
            pop_cfg = replace(config.population, r=float(value))
        point_cfg = replace(config, population=pop_cfg, B=B or config.B)
        table, _ = run_experiment(point_cfg)
        for name in point_cfg.estimators:
            row = table.row(name)
            rows.append(
                {
                    "axis": axis,
                    "value": value,
                    "estimator": name,
                    "bias": row.bias,
                    "se": row.se,
                    "rmse": row.rmse,
                    "rb": row.rb,
                    "cr": row.cr,
                    "bias_mcse": row.bias_mcse,
                    "b_effective": row.b_effective,
                }
            )
    return rows


def benchmark_stratified(
    B: int = 500, master_seed: int = 0, parallelism: int = 1
) -> ExperimentConfig:
    """Stratified benchmark: N=1000, p=90, s=5, n=300, K=10, four strata."""
    return ExperimentConfig(
        population=PopulationConfig(),
        design="stratified",
        B=B,
        master_seed=master_seed,
        parallelism=parallelism,
    )


def benchmark_rejective(
    B: int = 500, master_seed: int = 0, parallelism: int = 1
) -> ExperimentConfig:
    """Rejective benchmark: same population, size measure sigmoid(z), n=300."""
    return ExperimentConfig(
        population=PopulationConfig(),
        design="rejective",
        B=B,
        master_seed=master_seed,
        parallelism=parallelism,
    )


PRESETS = {
    "benchmark_stratified": benchmark_stratified,
    "benchmark_rejective": benchmark_rejective,
}


def write_metrics_csv(table: MetricsTable, path: str) -> None:
    header = [
        "estimator", "bias", "se", "rmse", "rb", "cr", "b_effective", "seed",
        "bias_mcse", "cr_mcse",
    ]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for name, row in table.rows.items():
            writer.writerow(
                [
                    name, repr(row.bias), repr(row.se), repr(row.rmse), repr(row.rb),
                    repr(row.cr), row.b_effective, table.master_seed,
                    repr(row.bias_mcse), repr(row.cr_mcse),
                ]
            )


def write_replications_csv(records: list[ReplicationRecord], path: str) -> None:
    header = ["rep", "estimator", "point", "variance", "ci_low", "ci_high", "covered"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for record in records:
            for name, res in record.results.items():
                writer.writerow(
                    [
                        record.rep, name, repr(res["point"]), repr(res["variance"]),
                        repr(res["ci_low"]), repr(res["ci_high"]), int(res["covered"]),
                    ]
                )
