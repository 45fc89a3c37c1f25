"""Experiment orchestration: seeded replicate runs, parameter sweeps, and
flat CSV persistence.

Every seed forms one paired group: a single simulated trajectory is
shared by all grid methods, so ordering comparisons between methods are
paired. Results are deterministic for a fixed config and seed set; the
only non-reproducible fields are wall-clock times in summary.csv and the
timestamp in meta.json.

CSV layout in the output directory:
    regret.csv        per step: k, seed, method, gamma_or_alpha,
                      online_loss, kalman_loss, cum_regret
    decomposition.csv per epoch end: k, seed, method, reg_factor,
                      regress_factor, bias_factor, accum_sum, logdet_V,
                      trace_term
    summary.csv       one row per run: epoch-end regrets and
                      regret / ln^i N for i in {1,2,3}
    biascancel.csv    per run: last-epoch mean raw and cancelled bias
    meta.json         config hash, filter summary, timestamp
"""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__ as _version
from .config import ExperimentConfig, GridEntry, load_config, parse_config_text
from .diagnostics import RegretRecord, decomposition_series, regret_order_ratio, regret_series
from .errors import ConfigError
from .kalman import SteadyFilter, run_steady_predictor, solve_dare
from .opf import OpfParams, epoch_schedule, run_opf, run_uniform_forgetting
from .sysmodel import simulate, spectral_info

RATIO_ORDERS = (1, 2, 3)

REGRET_COLUMNS = (
    "k",
    "seed",
    "method",
    "gamma_or_alpha",
    "online_loss",
    "kalman_loss",
    "cum_regret",
)
DECOMP_COLUMNS = (
    "k",
    "seed",
    "method",
    "reg_factor",
    "regress_factor",
    "bias_factor",
    "accum_sum",
    "logdet_V",
    "trace_term",
)
BIASCANCEL_COLUMNS = (
    "seed",
    "method",
    "gamma_or_alpha",
    "beta",
    "mean_bias_norm",
    "mean_cancel_norm",
)


def method_label(method: str, value: float | None) -> str:
    if value is None:
        return method
    return f"{method}:{value:.6g}"


@dataclass
class RunResult:
    """One (seed, method) run with its regret record and diagnostics."""

    config_hash: str
    seed: int
    method: str
    label: str
    value: float | None
    beta: float
    lam: float
    status: str
    error: str | None
    wall_clock_s: float
    record: RegretRecord | None
    epoch_ends: list[int]
    epoch_end_regrets: list[float]
    ratio_logs: dict[int, list[float]]
    decomp_rows: list[dict]
    bias_cancel: dict | None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    out_dir: Path | None
    results: list[RunResult]
    gamma_auto: float
    filter_summary: dict

    def by_label(self) -> dict[str, list[RunResult]]:
        groups: dict[str, list[RunResult]] = {}
        for r in self.results:
            groups.setdefault(r.label, []).append(r)
        return groups


def resolve_gamma(entry_gamma, gamma_auto: float) -> float:
    if entry_gamma == "auto":
        return gamma_auto
    return float(entry_gamma)


def _entry_params(config: ExperimentConfig, entry: GridEntry, gamma: float) -> OpfParams:
    return OpfParams(
        beta=entry.beta if entry.beta is not None else config.beta,
        lam=entry.lam if entry.lam is not None else config.lam,
        gamma=gamma,
        T_init=config.T_init,
        N_E=config.N_E,
        refactor_period=config.refactor_period,
    )


def _run_seed_group(
    config: ExperimentConfig,
    filt: SteadyFilter,
    gamma_auto: float,
    seed: int,
) -> list[RunResult]:
    """Execute every grid method on one shared trajectory. Failures are
    recorded per run; the remaining runs proceed."""
    model = config.model
    cfg_hash = config.config_hash()
    results: list[RunResult] = []

    def error_result(entry, value, beta, lam, msg):
        return RunResult(
            config_hash=cfg_hash,
            seed=seed,
            method=entry.method,
            label=method_label(entry.method, value),
            value=value,
            beta=beta,
            lam=lam,
            status="error",
            error=msg,
            wall_clock_s=0.0,
            record=None,
            epoch_ends=[],
            epoch_end_regrets=[],
            ratio_logs={i: [] for i in RATIO_ORDERS},
            decomp_rows=[],
            bias_cancel=None,
        )

    try:
        traj = simulate(model, config.horizon, seed=seed)
        kalman_out = run_steady_predictor(filt, model, traj)
    except Exception as exc:  # simulation failure poisons the whole group
        msg = f"{type(exc).__name__}: {exc}"
        for entry in config.grid:
            results.append(error_result(entry, None, config.beta, config.lam, msg))
        return results

    for entry in config.grid:
        beta = entry.beta if entry.beta is not None else config.beta
        lam = entry.lam if entry.lam is not None else config.lam
        value: float | None = None
        try:
            t0 = time.perf_counter()
            if entry.method == "kalman":
                params = _entry_params(config, entry, 1.0)
                sched = epoch_schedule(params)
                ks = np.arange(sched.first_step, sched.final_step + 1)
                online = kalman_out.predictions[ks]
                decomp = None
                gamma = None
            elif entry.method == "opf":
                gamma = resolve_gamma(entry.gamma, gamma_auto)
                value = gamma
                params = _entry_params(config, entry, gamma)
                sched = epoch_schedule(params)
                run = run_opf(traj.observations, params)
                ks = run.ks
                online = run.predictions
                decomp = None
                if config.decomposition:
                    decomp = decomposition_series(
                        model,
                        filt,
                        kalman_out,
                        traj.observations,
                        sched,
                        gamma,
                        params.lam,
                    )
            elif entry.method == "uniform":
                value = float(entry.alpha)
                params = _entry_params(config, entry, 1.0)
                sched = epoch_schedule(params)
                run = run_uniform_forgetting(traj.observations, params, value)
                ks = run.ks
                online = run.predictions
                decomp = None
            else:  # pragma: no cover - grid parsing rejects unknown methods
                raise ConfigError(f"unknown method {entry.method!r}")

            record = regret_series(
                traj.observations[ks], online, kalman_out.predictions[ks], ks=ks
            )
            record.assert_identity()
            epoch_ends = sched.epoch_ends()
            end_regrets = [
                float(record.cum_regret[np.searchsorted(ks, k)]) for k in epoch_ends
            ]
            ratios = regret_order_ratio(record, list(RATIO_ORDERS), ks=epoch_ends)
            wall = time.perf_counter() - t0

            decomp_rows = []
            bias_cancel = None
            if decomp is not None:
                label = method_label(entry.method, value)
                accum = 0.0
                for ed in decomp.epochs:
                    accum += ed.report.accum_sum
                    decomp_rows.append(
                        {
                            "k": ed.epoch.end,
                            "seed": seed,
                            "method": label,
                            "reg_factor": ed.report.reg_factor,
                            "regress_factor": ed.report.regress_factor,
                            "bias_factor": ed.report.bias_factor,
                            "accum_sum": accum,
                            "logdet_V": ed.report.logdet_Vtilde,
                            "trace_term": ed.report.trace_term,
                        }
                    )
                last = decomp.epochs[-1]
                bias_cancel = {
                    "seed": seed,
                    "method": label,
                    "gamma_or_alpha": value,
                    "beta": params.beta,
                    "mean_bias_norm": last.mean_bias_norm,
                    "mean_cancel_norm": last.mean_cancel_norm,
                }

            results.append(
                RunResult(
                    config_hash=cfg_hash,
                    seed=seed,
                    method=entry.method,
                    label=method_label(entry.method, value),
                    value=value,
                    beta=params.beta,
                    lam=params.lam,
                    status="ok",
                    error=None,
                    wall_clock_s=wall,
                    record=record,
                    epoch_ends=epoch_ends,
                    epoch_end_regrets=end_regrets,
                    ratio_logs={i: [float(v) for v in ratios[i]] for i in RATIO_ORDERS},
                    decomp_rows=decomp_rows,
                    bias_cancel=bias_cancel,
                )
            )
        except Exception as exc:
            results.append(
                error_result(entry, value, beta, lam, f"{type(exc).__name__}: {exc}")
            )
    return results


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _summary_columns(n_epochs: int) -> list[str]:
    cols = [
        "name",
        "config_hash",
        "seed",
        "method",
        "gamma_or_alpha",
        "beta",
        "lambda",
        "status",
        "error",
        "wall_clock_s",
        "final_regret",
    ]
    for l in range(1, n_epochs + 1):
        cols.append(f"regret_e{l}")
    for order in RATIO_ORDERS:
        for l in range(1, n_epochs + 1):
            cols.append(f"ratio_log{order}_e{l}")
    return cols


def write_outputs(
    result: ExperimentResult, out_dir: Path
) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = result.config
    ordered = sorted(result.results, key=lambda r: (r.seed, r.label))

    regret_rows = []
    decomp_rows = []
    bias_rows = []
    summary_rows = []
    n_epochs = config.N_E
    for r in ordered:
        if r.ok and r.record is not None:
            rec = r.record
            for i, k in enumerate(rec.ks):
                regret_rows.append(
                    {
                        "k": int(k),
                        "seed": r.seed,
                        "method": r.label,
                        "gamma_or_alpha": r.value,
                        "online_loss": float(rec.online_loss[i]),
                        "kalman_loss": float(rec.kalman_loss[i]),
                        "cum_regret": float(rec.cum_regret[i]),
                    }
                )
        decomp_rows.extend(r.decomp_rows)
        if r.bias_cancel is not None:
            bias_rows.append(r.bias_cancel)
        srow = {
            "name": config.name,
            "config_hash": r.config_hash,
            "seed": r.seed,
            "method": r.label,
            "gamma_or_alpha": r.value,
            "beta": r.beta,
            "lambda": r.lam,
            "status": r.status,
            "error": r.error,
            "wall_clock_s": r.wall_clock_s,
            "final_regret": r.record.final_regret if r.ok else None,
        }
        for l in range(1, n_epochs + 1):
            srow[f"regret_e{l}"] = (
                r.epoch_end_regrets[l - 1] if len(r.epoch_end_regrets) >= l else None
            )
        for order in RATIO_ORDERS:
            vals = r.ratio_logs.get(order, [])
            for l in range(1, n_epochs + 1):
                srow[f"ratio_log{order}_e{l}"] = vals[l - 1] if len(vals) >= l else None
        summary_rows.append(srow)

    paths = {
        "regret": out_dir / "regret.csv",
        "decomposition": out_dir / "decomposition.csv",
        "summary": out_dir / "summary.csv",
        "biascancel": out_dir / "biascancel.csv",
        "meta": out_dir / "meta.json",
    }
    _write_csv(paths["regret"], REGRET_COLUMNS, regret_rows)
    _write_csv(paths["decomposition"], DECOMP_COLUMNS, decomp_rows)
    _write_csv(paths["summary"], _summary_columns(n_epochs), summary_rows)
    _write_csv(paths["biascancel"], BIASCANCEL_COLUMNS, bias_rows)
    meta = {
        "name": config.name,
        "config_hash": config.config_hash(),
        "created": datetime.now(timezone.utc).isoformat(),
        "version": _version,
        "horizon": config.horizon,
        "T_init": config.T_init,
        "N_E": config.N_E,
        "seeds": config.seeds,
        "base_seed": config.base_seed,
        "gamma_auto": result.gamma_auto,
        "filter": result.filter_summary,
        "runs_ok": sum(r.ok for r in ordered),
        "runs_failed": sum(not r.ok for r in ordered),
    }
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths


def run_experiment(
    config: ExperimentConfig,
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> ExperimentResult:
    """Run the full grid over all seeds and persist CSV outputs.

    Seeds are base_seed .. base_seed + seeds - 1, one shared trajectory
    per seed. With workers > 1, seed groups execute in a process pool;
    outputs are ordered by (seed, method) regardless of worker count.
    """
    model = config.model
    filt = solve_dare(model)
    info = spectral_info(model, filt)
    gamma_auto = info.rho_closed
    seeds = [config.base_seed + i for i in range(config.seeds)]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            groups = list(
                pool.map(
                    _run_seed_group,
                    [config] * len(seeds),
                    [filt] * len(seeds),
                    [gamma_auto] * len(seeds),
                    seeds,
                )
            )
    else:
        groups = [_run_seed_group(config, filt, gamma_auto, s) for s in seeds]

    results = [r for group in groups for r in group]
    filter_summary = {
        "riccati_residual": filt.residual,
        "riccati_iterations": filt.iterations,
        "rho_closed": info.rho_closed,
        "rho_A": info.rho_A,
        "kappa": info.kappa,
        "sigma_R": info.sigma_R,
        "rbar_eigenvalues": sorted(np.linalg.eigvalsh(filt.Rbar).tolist()),
    }
    exp = ExperimentResult(
        config=config,
        out_dir=None,
        results=results,
        gamma_auto=gamma_auto,
        filter_summary=filter_summary,
    )
    target = out_dir if out_dir is not None else config.out
    if target is not None:
        exp.out_dir = Path(target)
        write_outputs(exp, exp.out_dir)
    return exp


# ---------------------------------------------------------------------------
# builtin experiments

_TRACKING_SYSTEM = """
A = kron(eye(3), [[1, 1, 0], [0, 1, 1], [0, 0, 0.9]])
C = kron(eye(3), [[1, 0, 0]])
Q = kron([[1, 0.2, 0.2], [0.2, 1, 0.2], [0.2, 0.2, 1]], eye(3))
R = eye(3)
T_init = 60
N_E = 7
beta = 2.5
lambda = 1
"""

BUILTIN_CONFIG_TEXTS: dict[str, str] = {
    # 3-D tracking benchmark: forgetting sweep plus uniform-forgetting
    # baselines, with full decomposition diagnostics.
    "paper-main": _TRACKING_SYSTEM
    + """
name = paper-main
seeds = 20
base_seed = 1000
decomposition = on
grid = opf gamma=auto; opf gamma=0.9; opf gamma=1.0; uniform alpha=0.99; uniform alpha=0.9999; uniform alpha=1.0; kalman
""",
    # slowly mixing, heavily noise-dominated system
    "paper-illcond": """
name = paper-illcond
A = [[0.98, 0.8, 0], [0, 0.98, 0.8], [0, 0, 0.9]]
C = eye(3)
Q = eye(3)
R = 100 * eye(3)
T_init = 500
N_E = 3
beta = 6
lambda = 1
seeds = 20
base_seed = 2000
decomposition = off
grid = opf gamma=auto; opf gamma=1.0; kalman
""",
    # regret-order ratio study on the tracking benchmark
    "paper-order": _TRACKING_SYSTEM
    + """
name = paper-order
seeds = 20
base_seed = 3000
decomposition = off
grid = opf gamma=auto; opf gamma=1.0; kalman
""",
    # decomposition trade-off sweep over the forgetting factor
    "paper-tradeoff": _TRACKING_SYSTEM
    + """
name = paper-tradeoff
seeds = 20
base_seed = 4000
decomposition = on
grid = opf gamma=auto; opf gamma=0.7; opf gamma=0.9; opf gamma=1.0; kalman
""",
}


def builtin_experiments() -> dict[str, ExperimentConfig]:
    return {
        name: parse_config_text(text, default_name=name)
        for name, text in BUILTIN_CONFIG_TEXTS.items()
    }


def get_config(name_or_path: str) -> ExperimentConfig:
    """Look up a builtin config by name, else load a config file."""
    builtins = builtin_experiments()
    if name_or_path in builtins:
        return builtins[name_or_path]
    path = Path(name_or_path)
    if path.exists():
        return load_config(path)
    raise ConfigError(
        f"unknown experiment {name_or_path!r}; builtin names: "
        f"{', '.join(sorted(builtins))}"
    )


# ---------------------------------------------------------------------------
# sweeps

SWEEP_PARAMETERS = ("gamma", "alpha", "beta")


def sweep(
    config: ExperimentConfig,
    parameter: str,
    values: list,
    out_dir: str | Path | None = None,
    workers: int = 1,
) -> list[ExperimentResult]:
    """Cross-product of sweep values and seeds with shared trajectories.

    gamma/alpha sweeps replace the varying grid entries and run as a
    single experiment (rows distinguished by the value column). beta
    sweeps change the epoch horizons, so each value runs into its own
    subdirectory; summary and bias-cancellation rows are also merged at
    the top level, where the beta column distinguishes them.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(
            f"unknown sweep parameter {parameter!r}; allowed: {SWEEP_PARAMETERS}"
        )
    if not values:
        raise ConfigError("empty value list")

    if parameter in ("gamma", "alpha"):
        method = "opf" if parameter == "gamma" else "uniform"
        templates = [e for e in config.grid if e.method == method]
        if not templates:
            raise ConfigError(
                f"sweep parameter {parameter!r} applies to no grid method "
                f"(no {method!r} entry in the grid)"
            )
        template = templates[0]
        entries = []
        for v in values:
            if parameter == "gamma":
                entries.append(replace(template, gamma=v))
            else:
                entries.append(replace(template, alpha=float(v)))
        if not any(e.method == "kalman" for e in entries):
            entries.append(GridEntry(method="kalman"))
        swept = config.with_options(
            name=f"{config.name}-sweep-{parameter}", grid=tuple(entries)
        )
        return [run_experiment(swept, out_dir=out_dir, workers=workers)]

    # beta sweep: one run per value, merged summaries at the top level
    if not any(e.method in ("opf", "uniform") for e in config.grid):
        raise ConfigError("sweep parameter 'beta' applies to no grid method")
    results = []
    out_dir = Path(out_dir) if out_dir is not None else None
    for v in values:
        beta = float(v)
        entries = tuple(
            replace(e, beta=beta) if e.method != "kalman" else e
            for e in config.grid
        )
        sub = config.with_options(
            name=f"{config.name}-sweep-beta-{beta:g}", beta=beta, grid=entries
        )
        sub_dir = out_dir / f"beta_{beta:g}" if out_dir is not None else None
        results.append(run_experiment(sub, out_dir=sub_dir, workers=workers))
    if out_dir is not None:
        _merge_sweep_csvs(out_dir, [r.out_dir for r in results])
    return results


def _merge_sweep_csvs(parent: Path, sub_dirs: list[Path]) -> None:
    for fname in ("summary.csv", "biascancel.csv"):
        header: list[str] | None = None
        rows: list[list[str]] = []
        for sub in sub_dirs:
            path = sub / fname
            if not path.exists():
                continue
            with open(path, newline="") as fh:
                reader = csv.reader(fh)
                head = next(reader, None)
                if head is None:
                    continue
                if header is None:
                    header = head
                rows.extend(reader)
        if header is not None:
            with open(parent / fname, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                writer.writerows(rows)
