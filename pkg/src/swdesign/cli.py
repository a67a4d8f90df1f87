"""Command-line front end: config parsing, run commands, CSV/TSV reporting.

Runs are declared in an INI file and may be overridden by flags. Commands:

``optimize``
    Build the prior, draw the sample, minimise the objective, certify the
    result and write one CSV row plus a human-readable summary.
``compare``
    As ``optimize``, plus balanced and Lawrie objective values and
    percent-additional-clusters columns, all on the shared sample.
``grid``
    A compare per cell of the (a, b, K, alpha0, rho) Cartesian product, one
    CSV row per cell in deterministic axis order. Cells sharing
    (K, alpha0, rho) share one LHS seed so neighbours differ only through
    the scenario. Per-cell failures are recorded in-row; the sweep continues.
``lawrie``
    Emit the closed-form comparator allocation for the configured geometry.
``oracle-check``
    Exhaustive-lattice cross-check of the solver plus the KKT certificate;
    guarded to 5 periods and fewer.

Config file schema (all keys optional unless noted; flags override)::

    [run]
    command = optimize | compare | grid | lawrie | oracle-check  (default compare)
    seed = 12345              ; base RNG seed, recorded in all outputs
    samples = 500             ; LHS draws per scenario
    out = out                 ; output directory
    format = csv | tsv

    [scenario]
    name = washington-se | washington-ed   ; preset; or give the fields below
    periods = 9               ; J              (required unless name given)
    cluster_period_size = 50  ; K              (required unless name given)
    clusters = 1              ; I, reporting only
    alpha0 = 0.05             ; required unless name given
    rho = 0.5                 ; 1 = simple exchangeable (default 1)
    delta = 0.8109302162163288
    a = -0.1                  ; recurrence trend (with b); or betas/beta_ses
    b = 0.5
    betas = -2.444, -2.454, ...      ; explicit trend
    beta_ses = 0.091, 0.091, ...
    delta_se = 0.092
    delta_lower = -1.0        ; explicit treatment-effect bounds (optional)
    delta_upper = 1.0
    prior_level = 0.8         ; default 0.95 with estimates, 0.80 with a pilot
    pilot_clusters = 16       ; default 2*(J-1)

    [optimizer]
    enabled = true            ; false: report the balanced design instead
    restarts = 5
    tolerance = 1e-6
    max_iterations = 1000
    gradient = analytic | fd

    [grid]                    ; axes for command = grid; lists or start:stop:step
    a = -0.5:0.5:0.1
    b = 0:1:0.1
    cluster_period_size = 50
    alpha0 = 0.05
    rho = 0.5
    warm_start = false        ; seed each cell from its predecessor (workers = 1 only)

    [oracle]
    resolution = 40

    [runtime]
    workers = 1               ; > 1 evaluates grid cells in a process pool
    dump_draws = false        ; export each sample next to the results

Outputs: ``results.csv`` (RFC-4180 style; TSV on request) with a fixed
header, and ``metadata.txt`` recording seed, sample size, solver settings,
package version and wall time. Identical config and seed give byte-identical
CSV. Exit codes: 0 success, 1 validation error, 2 solver non-convergence on
any cell, 3 I/O error.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import csv
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .design import DesignWeights
from .errors import SWDesignError, ValidationError
from .model import CorrelationParams, TrialConfig
from .objective import ObjectiveEvaluator, lhs_sample, write_draws
from .optimizer import OptimizerOptions, certify_kkt, grid_oracle, optimize_design
from .scenarios import (
    GridAxes,
    ScenarioSpec,
    balanced_design,
    efficiency_report,
    lawrie_design,
    named_scenario,
    scenario_grid,
)

__all__ = ["RunConfig", "ResultRow", "main", "run_optimize", "run_compare", "run_grid",
           "run_lawrie", "run_oracle_check", "load_run_config"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NOT_CONVERGED = 2
EXIT_IO = 3

COMMANDS = ("optimize", "compare", "grid", "lawrie", "oracle-check")
ORACLE_MAX_PERIODS = 5


@dataclass(eq=False)
class RunConfig:
    """Everything one run needs; defaults for all but the scenario physics."""

    command: str = "compare"
    seed: int = 12345
    samples: int = 500
    out_dir: Path = Path("out")
    out_format: str = "csv"
    scenario_name: str | None = None
    periods: int | None = None
    cluster_period_size: int | None = None
    clusters: int = 1
    alpha0: float | None = None
    rho: float = 1.0
    delta: float | None = None
    trend_a: float | None = None
    trend_b: float | None = None
    betas: tuple[float, ...] | None = None
    beta_ses: tuple[float, ...] | None = None
    delta_se: float | None = None
    delta_bounds: tuple[float, float] | None = None
    prior_level: float | None = None
    pilot_clusters: int | None = None
    optimizer_enabled: bool = True
    restarts: int = 5
    tolerance: float = 1e-6
    max_iterations: int = 1000
    gradient: str = "analytic"
    grid_axes: dict = field(default_factory=dict)
    grid_warm_start: bool = False
    oracle_resolution: int = 40
    workers: int = 1
    dump_draws: bool = False
    config_path: str | None = None

    def optimizer_options(self, warm_start=None) -> OptimizerOptions:
        return OptimizerOptions(
            restarts=self.restarts,
            tolerance=self.tolerance,
            max_iterations=self.max_iterations,
            gradient=self.gradient,
            restart_seed=self.seed,
            warm_start=warm_start,
        )

    def scenario(self) -> ScenarioSpec:
        """Build the scenario from the preset name or the explicit fields."""
        if self.scenario_name:
            if self.prior_level is not None:
                return named_scenario(self.scenario_name, prior_level=self.prior_level)
            return named_scenario(self.scenario_name)
        for name in ("periods", "cluster_period_size", "alpha0", "delta"):
            if getattr(self, name) is None:
                raise ValidationError(f"scenario.{name} is required when no scenario name is given")
        explicit = self.betas is not None
        level = self.prior_level if self.prior_level is not None else (0.95 if explicit else 0.80)
        return ScenarioSpec(
            config=TrialConfig(
                periods=self.periods,
                cluster_period_size=self.cluster_period_size,
                clusters=self.clusters,
            ),
            corr=CorrelationParams(alpha0=self.alpha0, rho=self.rho),
            delta=self.delta,
            betas=np.asarray(self.betas, dtype=float) if explicit else None,
            beta_ses=np.asarray(self.beta_ses, dtype=float) if self.beta_ses is not None else None,
            trend_a=self.trend_a,
            trend_b=self.trend_b,
            delta_se=self.delta_se,
            delta_bounds=self.delta_bounds,
            prior_level=level,
            pilot_clusters=self.pilot_clusters,
        )


@dataclass(eq=False)
class ResultRow:
    """One scenario's outputs; column order is fixed by :func:`csv_header`."""

    command: str
    label: str
    a: float | None
    b: float | None
    periods: int
    cluster_period_size: int
    alpha0: float
    rho: float
    seed: int
    lhs_seed: int | None
    n_draws: int | None
    weights: tuple[float, ...]
    psi_optimal: float | None = None
    psi_balanced: float | None = None
    psi_lawrie: float | None = None
    pct_additional_balanced: float | None = None
    pct_additional_lawrie: float | None = None
    psi_mc_se: float | None = None
    solver_status: str = "n/a"
    solver_iterations: int | None = None
    kkt_min_derivative: float | None = None

    def to_record(self, periods: int) -> list[str]:
        def fmt(value) -> str:
            if value is None:
                return ""
            if isinstance(value, float):
                return repr(value)
            return str(value)

        cells = [
            self.command, self.label, fmt(self.a), fmt(self.b), str(self.periods),
            str(self.cluster_period_size), fmt(self.alpha0), fmt(self.rho),
            str(self.seed), fmt(self.lhs_seed), fmt(self.n_draws),
        ]
        cells.extend(repr(float(w)) for w in self.weights)
        cells.extend(
            fmt(v)
            for v in (
                self.psi_optimal, self.psi_balanced, self.psi_lawrie,
                self.pct_additional_balanced, self.pct_additional_lawrie,
                self.psi_mc_se, self.solver_status, self.solver_iterations,
                self.kkt_min_derivative,
            )
        )
        return cells


def csv_header(periods: int) -> list[str]:
    return (
        ["command", "label", "a", "b", "periods", "cluster_period_size", "alpha0", "rho",
         "seed", "lhs_seed", "n_draws"]
        + [f"p{s}" for s in range(2, periods + 1)]
        + ["psi_optimal", "psi_balanced", "psi_lawrie", "pct_additional_balanced",
           "pct_additional_lawrie", "psi_mc_se", "solver_status", "solver_iterations",
           "kkt_min_derivative"]
    )


# ---------------------------------------------------------------- config i/o


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in text.replace(",", " ").split())


def _parse_axis(text: str) -> tuple[float, ...]:
    """Comma/space list, or an inclusive start:stop:step range."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValidationError(f"axis range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValidationError(f"axis range step must be positive, got {text!r}")
        count = int(round((stop - start) / step)) + 1
        values = tuple(round(start + i * step, 12) for i in range(count))
        if not values or values[-1] > stop + 1e-12:
            raise ValidationError(f"axis range {text!r} is empty or misaligned")
        return values
    return _parse_floats(text)


def _get(parser: configparser.ConfigParser, section: str, key: str, cast, default=None):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    try:
        return cast(raw)
    except ValidationError:
        raise
    except Exception as exc:
        raise ValidationError(f"{section}.{key}: cannot parse {raw!r}") from exc


def _cast_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def load_run_config(config_path: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse the INI file, then apply flag overrides."""
    cfg = RunConfig()
    if config_path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        read = parser.read(config_path)
        if not read:
            raise OSError(f"config file not found: {config_path}")
        cfg.config_path = str(config_path)
        cfg.command = _get(parser, "run", "command", str, cfg.command)
        cfg.seed = _get(parser, "run", "seed", int, cfg.seed)
        cfg.samples = _get(parser, "run", "samples", int, cfg.samples)
        cfg.out_dir = Path(_get(parser, "run", "out", str, str(cfg.out_dir)))
        cfg.out_format = _get(parser, "run", "format", str, cfg.out_format)

        cfg.scenario_name = _get(parser, "scenario", "name", str, None)
        cfg.periods = _get(parser, "scenario", "periods", int, None)
        cfg.cluster_period_size = _get(parser, "scenario", "cluster_period_size", int, None)
        cfg.clusters = _get(parser, "scenario", "clusters", int, cfg.clusters)
        cfg.alpha0 = _get(parser, "scenario", "alpha0", float, None)
        cfg.rho = _get(parser, "scenario", "rho", float, cfg.rho)
        cfg.delta = _get(parser, "scenario", "delta", float, None)
        cfg.trend_a = _get(parser, "scenario", "a", float, None)
        cfg.trend_b = _get(parser, "scenario", "b", float, None)
        cfg.betas = _get(parser, "scenario", "betas", _parse_floats, None)
        cfg.beta_ses = _get(parser, "scenario", "beta_ses", _parse_floats, None)
        cfg.delta_se = _get(parser, "scenario", "delta_se", float, None)
        lo = _get(parser, "scenario", "delta_lower", float, None)
        hi = _get(parser, "scenario", "delta_upper", float, None)
        if (lo is None) != (hi is None):
            raise ValidationError("scenario.delta_lower and scenario.delta_upper come as a pair")
        cfg.delta_bounds = (lo, hi) if lo is not None else None
        cfg.prior_level = _get(parser, "scenario", "prior_level", float, None)
        cfg.pilot_clusters = _get(parser, "scenario", "pilot_clusters", int, None)

        cfg.optimizer_enabled = _get(parser, "optimizer", "enabled", _cast_bool, True)
        cfg.restarts = _get(parser, "optimizer", "restarts", int, cfg.restarts)
        cfg.tolerance = _get(parser, "optimizer", "tolerance", float, cfg.tolerance)
        cfg.max_iterations = _get(parser, "optimizer", "max_iterations", int, cfg.max_iterations)
        cfg.gradient = _get(parser, "optimizer", "gradient", str, cfg.gradient)

        axes = {}
        for key in ("a", "b", "cluster_period_size", "alpha0", "rho"):
            values = _get(parser, "grid", key, _parse_axis, None)
            if values is not None:
                axes[key] = values
        cfg.grid_axes = axes
        cfg.grid_warm_start = _get(parser, "grid", "warm_start", _cast_bool, False)

        cfg.oracle_resolution = _get(parser, "oracle", "resolution", int, cfg.oracle_resolution)
        cfg.workers = _get(parser, "runtime", "workers", int, cfg.workers)
        cfg.dump_draws = _get(parser, "runtime", "dump_draws", _cast_bool, False)

    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    if cfg.command not in COMMANDS:
        raise ValidationError(f"run.command must be one of {COMMANDS}, got {cfg.command!r}")
    if cfg.out_format not in ("csv", "tsv"):
        raise ValidationError(f"run.format must be csv or tsv, got {cfg.out_format!r}")
    if cfg.samples < 1:
        raise ValidationError(f"run.samples must be >= 1, got {cfg.samples}")
    if cfg.workers < 1:
        raise ValidationError(f"runtime.workers must be >= 1, got {cfg.workers}")
    return cfg


# ------------------------------------------------------------- run commands


def derive_lhs_seed(base_seed: int, k_index: int, alpha0_index: int, rho_index: int) -> int:
    """Per-slice sampling seed: cells sharing (K, alpha0, rho) share draws."""
    seq = np.random.SeedSequence((int(base_seed), int(k_index), int(alpha0_index), int(rho_index)))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def _evaluate_cell(
    scenario: ScenarioSpec,
    cfg: RunConfig,
    lhs_seed: int,
    compare: bool,
    warm_start=None,
) -> tuple[ResultRow, "ObjectiveSample"]:
    sample = lhs_sample(scenario.prior(), cfg.samples, lhs_seed)
    evaluator = ObjectiveEvaluator(sample, scenario.corr, scenario.config)
    if cfg.optimizer_enabled:
        result = optimize_design(
            sample, scenario.corr, scenario.config, cfg.optimizer_options(warm_start=warm_start)
        )
        weights = result.weights
        psi_opt = result.objective
        status = "converged" if result.converged else "max_iterations"
        iterations = result.iterations
        kkt_min = result.certificate.min_derivative
    else:
        weights = balanced_design(scenario.config)
        psi_opt = evaluator.value(weights)
        status, iterations, kkt_min = "optimizer_disabled", 0, None
    row = ResultRow(
        command=cfg.command,
        label=scenario.label,
        a=scenario.trend_a,
        b=scenario.trend_b,
        periods=scenario.config.periods,
        cluster_period_size=scenario.config.cluster_period_size,
        alpha0=scenario.corr.alpha0,
        rho=scenario.corr.rho,
        seed=cfg.seed,
        lhs_seed=lhs_seed,
        n_draws=cfg.samples,
        weights=tuple(float(w) for w in weights.weights),
        psi_optimal=psi_opt,
        psi_mc_se=evaluator.mc_standard_error(weights),
        solver_status=status,
        solver_iterations=iterations,
        kkt_min_derivative=kkt_min,
    )
    if compare:
        report = efficiency_report(weights, sample, scenario.corr, scenario.config, evaluator)
        row.psi_balanced = report.psi_balanced
        row.psi_lawrie = report.psi_lawrie
        row.pct_additional_balanced = report.percent_additional_clusters_balanced
        row.pct_additional_lawrie = report.percent_additional_clusters_lawrie
    return row, sample


def _summarise(row: ResultRow) -> str:
    # weights below 1e-6 print as exactly 0; raw values stay in the CSV
    shown = ["0" if w < 1e-6 else f"{w:.4f}" for w in row.weights]
    lines = [
        f"command              : {row.command}",
        f"scenario             : {row.label or f'a={row.a} b={row.b}'}"
        f"  J={row.periods} K={row.cluster_period_size}"
        f" alpha0={row.alpha0} rho={row.rho}",
        f"weights p2..p{row.periods}       : ({', '.join(shown)})",
    ]
    if row.psi_optimal is not None:
        lines.append(f"objective (1 cluster): {row.psi_optimal:.6f}  mc se {row.psi_mc_se:.2e}")
    if row.psi_balanced is not None:
        lines.append(
            f"vs balanced          : {row.pct_additional_balanced:+.2f}% additional clusters"
        )
        lines.append(
            f"vs lawrie            : {row.pct_additional_lawrie:+.2f}% additional clusters"
        )
    lines.append(f"solver               : {row.solver_status} ({row.solver_iterations} iterations)")
    return "\n".join(lines)


def run_optimize(cfg: RunConfig) -> list[ResultRow]:
    scenario = cfg.scenario()
    row, sample = _evaluate_cell(
        scenario, cfg, derive_lhs_seed(cfg.seed, 0, 0, 0), compare=False
    )
    if cfg.dump_draws:
        write_draws(sample, cfg.out_dir / "draws.csv")
    print(_summarise(row))
    return [row]


def run_compare(cfg: RunConfig) -> list[ResultRow]:
    scenario = cfg.scenario()
    row, sample = _evaluate_cell(
        scenario, cfg, derive_lhs_seed(cfg.seed, 0, 0, 0), compare=True
    )
    if cfg.dump_draws:
        write_draws(sample, cfg.out_dir / "draws.csv")
    print(_summarise(row))
    return [row]


def run_lawrie(cfg: RunConfig) -> list[ResultRow]:
    scenario = cfg.scenario()
    weights = lawrie_design(scenario.config, scenario.corr.alpha0)
    row = ResultRow(
        command=cfg.command,
        label=scenario.label or "lawrie",
        a=scenario.trend_a,
        b=scenario.trend_b,
        periods=scenario.config.periods,
        cluster_period_size=scenario.config.cluster_period_size,
        alpha0=scenario.corr.alpha0,
        rho=scenario.corr.rho,
        seed=cfg.seed,
        lhs_seed=None,
        n_draws=None,
        weights=tuple(float(w) for w in weights.weights),
        solver_status="closed_form",
    )
    print(_summarise(row))
    return [row]


def _grid_cells(cfg: RunConfig) -> tuple[GridAxes, list[ScenarioSpec], list[int]]:
    scenario_defaults = {"a": (None,), "b": (None,)}
    axes_in = dict(cfg.grid_axes)
    for key, fallback in (
        ("a", cfg.trend_a), ("b", cfg.trend_b),
        ("cluster_period_size", cfg.cluster_period_size),
        ("alpha0", cfg.alpha0), ("rho", cfg.rho),
    ):
        if key not in axes_in:
            if fallback is None:
                raise ValidationError(f"grid.{key} is required (no scenario fallback given)")
            axes_in[key] = (fallback,)
    axes = GridAxes(
        a=axes_in["a"],
        b=axes_in["b"],
        cluster_period_size=tuple(int(k) for k in axes_in["cluster_period_size"]),
        alpha0=axes_in["alpha0"],
        rho=axes_in["rho"],
    )
    if cfg.periods is None or cfg.delta is None:
        raise ValidationError("scenario.periods and scenario.delta are required for grid runs")
    cells = list(
        scenario_grid(
            axes,
            periods=cfg.periods,
            delta=cfg.delta,
            prior_level=cfg.prior_level if cfg.prior_level is not None else 0.80,
            pilot_clusters=cfg.pilot_clusters,
            clusters=cfg.clusters,
        )
    )
    seeds = []
    for spec in cells:
        seeds.append(
            derive_lhs_seed(
                cfg.seed,
                axes.cluster_period_size.index(spec.config.cluster_period_size),
                axes.alpha0.index(spec.corr.alpha0),
                axes.rho.index(spec.corr.rho),
            )
        )
    return axes, cells, seeds


def _grid_worker(payload) -> ResultRow:
    scenario, cfg, lhs_seed = payload
    try:
        row, _ = _evaluate_cell(scenario, cfg, lhs_seed, compare=True)
        return row
    except SWDesignError as exc:
        return ResultRow(
            command=cfg.command,
            label=scenario.label,
            a=scenario.trend_a,
            b=scenario.trend_b,
            periods=scenario.config.periods,
            cluster_period_size=scenario.config.cluster_period_size,
            alpha0=scenario.corr.alpha0,
            rho=scenario.corr.rho,
            seed=cfg.seed,
            lhs_seed=lhs_seed,
            n_draws=cfg.samples,
            weights=tuple(float("nan") for _ in range(scenario.config.n_sequences)),
            solver_status=f"error: {exc}",
        )


def run_grid(cfg: RunConfig, writer=None) -> list[ResultRow]:
    _, cells, seeds = _grid_cells(cfg)
    rows: list[ResultRow] = []
    if cfg.workers > 1:
        payloads = [(spec, cfg, seed) for spec, seed in zip(cells, seeds)]
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for row in pool.map(_grid_worker, payloads):
                rows.append(row)
                if writer is not None:
                    writer(row)
    else:
        warm = None
        for spec, seed in zip(cells, seeds):
            row = _grid_worker((spec, replace_warm(cfg, warm), seed))
            if cfg.grid_warm_start and "error" not in row.solver_status:
                warm = np.asarray(row.weights)
            rows.append(row)
            if writer is not None:
                writer(row)
    return rows


def replace_warm(cfg: RunConfig, warm) -> RunConfig:
    if warm is None or not cfg.grid_warm_start:
        return cfg
    clone = replace_config(cfg)
    clone._warm = warm  # consumed by optimizer_options via _evaluate_cell
    return clone


def replace_config(cfg: RunConfig) -> RunConfig:
    clone = RunConfig(**{f: getattr(cfg, f) for f in cfg.__dataclass_fields__})
    return clone


def run_oracle_check(cfg: RunConfig) -> list[str]:
    scenario = cfg.scenario()
    if scenario.config.periods > ORACLE_MAX_PERIODS:
        raise ValidationError(
            f"oracle-check is guarded to periods <= {ORACLE_MAX_PERIODS}; "
            f"got {scenario.config.periods}"
        )
    lhs_seed = derive_lhs_seed(cfg.seed, 0, 0, 0)
    sample = lhs_sample(scenario.prior(), cfg.samples, lhs_seed)
    evaluator = ObjectiveEvaluator(sample, scenario.corr, scenario.config)
    result = optimize_design(sample, scenario.corr, scenario.config, cfg.optimizer_options())
    oracle = grid_oracle(sample, scenario.corr, scenario.config, cfg.oracle_resolution)
    psi_solver = result.objective
    psi_oracle = evaluator.value(oracle)
    cert = result.certificate
    lines = [
        f"solver weights   : {np.array2string(result.weights.weights, precision=6)}",
        f"oracle weights   : {np.array2string(oracle.weights, precision=6)} "
        f"(resolution {cfg.oracle_resolution})",
        f"solver objective : {psi_solver!r}",
        f"oracle objective : {psi_oracle!r}",
        f"gap (solver-oracle): {psi_solver - psi_oracle!r}",
        f"kkt directional derivatives: {np.array2string(cert.directional_derivatives, precision=3)}",
        f"kkt min derivative: {cert.min_derivative!r} (tolerance {cert.tolerance})"
        f" -> {'satisfied' if cert.satisfied else 'NOT satisfied'}",
    ]
    print("\n".join(lines))
    return lines


# ------------------------------------------------------------------ outputs


def _write_rows(cfg: RunConfig, rows: list[ResultRow]) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    delimiter = "\t" if cfg.out_format == "tsv" else ","
    path = cfg.out_dir / f"results.{cfg.out_format}"
    periods = rows[0].periods if rows else (cfg.periods or 0)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        writer.writerow(csv_header(periods))
        for row in rows:
            writer.writerow(row.to_record(periods))
    return path


def _write_rows_streaming(cfg: RunConfig) -> tuple:
    """Open the CSV up front so interrupted sweeps leave a valid prefix."""
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    delimiter = "\t" if cfg.out_format == "tsv" else ","
    path = cfg.out_dir / f"results.{cfg.out_format}"
    fh = open(path, "w", encoding="utf-8", newline="")
    writer = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
    state = {"header_written": False}

    def write(row: ResultRow):
        if not state["header_written"]:
            writer.writerow(csv_header(row.periods))
            state["header_written"] = True
        writer.writerow(row.to_record(row.periods))
        fh.flush()

    return fh, write, path


def _write_metadata(cfg: RunConfig, wall_time: float, n_rows: int) -> None:
    lines = [
        f"swdesign version : {__version__}",
        f"command          : {cfg.command}",
        f"config file      : {cfg.config_path or '(flags only)'}",
        f"seed             : {cfg.seed}",
        f"samples          : {cfg.samples}",
        f"restarts         : {cfg.restarts}",
        f"tolerance        : {cfg.tolerance}",
        f"max_iterations   : {cfg.max_iterations}",
        f"gradient         : {cfg.gradient}",
        f"workers          : {cfg.workers}",
        f"format           : {cfg.out_format}",
        f"rows written     : {n_rows}",
        "lhs seed derivation: SeedSequence((seed, K_index, alpha0_index, rho_index))",
        f"wall time (s)    : {wall_time:.3f}",
    ]
    with open(cfg.out_dir / "metadata.txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# --------------------------------------------------------------- entrypoint


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swdesign",
        description="Bayesian optimal allocation of clusters to stepped-wedge sequences "
        "for binary outcomes",
    )
    parser.add_argument("--config", help="INI run configuration (see module docs)")
    parser.add_argument("--command", choices=COMMANDS, help="what to run")
    parser.add_argument("--seed", type=int, help="base RNG seed")
    parser.add_argument("--samples", type=int, help="LHS draws per scenario")
    parser.add_argument("--restarts", type=int, help="optimizer restarts")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--format", choices=("csv", "tsv"), help="results delimiter")
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = load_run_config(
            args.config,
            overrides={
                "command": args.command,
                "seed": args.seed,
                "samples": args.samples,
                "restarts": args.restarts,
                "out_dir": Path(args.out) if args.out else None,
                "out_format": args.format,
            },
        )
        if cfg.command == "grid":
            fh, write, _ = _write_rows_streaming(cfg)
            try:
                rows = run_grid(cfg, writer=write)
            finally:
                fh.close()
            print(f"grid: wrote {len(rows)} rows to {cfg.out_dir}")
        elif cfg.command == "oracle-check":
            run_oracle_check(cfg)
            rows = []
        else:
            runner = {"optimize": run_optimize, "compare": run_compare, "lawrie": run_lawrie}
            rows = runner[cfg.command](cfg)
            _write_rows(cfg, rows)
        if cfg.command != "oracle-check":
            _write_metadata(cfg, time.perf_counter() - started, len(rows))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SWDesignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    bad = [r for r in rows if r.solver_status not in ("converged", "closed_form", "optimizer_disabled", "n/a")]
    return EXIT_NOT_CONVERGED if bad else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
