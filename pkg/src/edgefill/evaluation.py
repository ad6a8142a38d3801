"""Masked-trace replay, error metrics, and the experiment grid.

An experiment takes a fully observed trace, hides some cells behind a
seeded injection plan, then replays the trace tick by tick: each tick's
reports enter the sliding windows first, every hidden cell is imputed
against exactly that state, and only then are the hidden cells repaired in
the window (with the ground truth by default, or with the imputed values
to study error compounding). Replacements are scored against the recorded
truth; cells no model could impute are counted as failures, never scored
as zeros.

Metric tables are deterministic given the manifest; wall-clock timings are
inherently not, so they are reported separately.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import groupby
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import kvformat
from .errors import ConfigError, ImputationImpossibleError, UndefinedMetricError
from .imputation import (
    SIGMA_MODES,
    WGM_WEIGHTINGS,
    BlendParams,
    ImputationOutcome,
    impute_am,
    impute_dbm,
    impute_pbm,
)
from .correlation import MD_MODES
from .ingestion import INJECTION_UNITS, InjectionPlan, inject_missing, restrict_trace
from .stream import DeviceReport, WindowStore

MODELS = ("PBM", "DBM", "AM")
FEEDS = ("truth", "imputed")

GRID_MODELS = MODELS
GRID_V = (1.0, 5.0, 10.0)
GRID_N = (5, 7, 15)
GRID_M = (4, 9)
GRID_W = 10
GRID_K = 4
GRID_ALPHA = 20.0
GRID_BETA = 2.0

_IMPUTERS: dict[str, Callable[..., ImputationOutcome]] = {
    "PBM": impute_pbm,
    "DBM": impute_dbm,
    "AM": impute_am,
}


def mae(predicted: Sequence[float], actual: Sequence[float]) -> float:
    """Mean absolute error between paired predictions and actuals."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise UndefinedMetricError("no predictions to score")
    return float(np.mean(np.abs(p - a)))


def rmse(predicted: Sequence[float], actual: Sequence[float]) -> float:
    """Root mean square error between paired predictions and actuals."""
    p = np.asarray(predicted, dtype=float)
    a = np.asarray(actual, dtype=float)
    if p.shape != a.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {a.shape}")
    if p.size == 0:
        raise UndefinedMetricError("no predictions to score")
    return float(np.sqrt(np.mean((p - a) ** 2)))


@dataclass(frozen=True)
class ExperimentConfig:
    """One grid cell: a model plus every knob the run depends on."""

    model: str
    v_percent: float
    n_devices: int
    n_dims: int
    window: int = GRID_W
    top_k: int = GRID_K
    alpha: float = GRID_ALPHA
    beta: float = GRID_BETA
    md_floor: float = 1e-9
    ridge: float = 1e-6
    ar_order: int = 3
    sigma_mode: str = "relative"
    wgm_weighting: str = "inverse"
    md_mode: str = "means"
    cs_clamp: bool = True
    feed: str = "truth"
    unit: str = "cell"
    seeds: tuple[int, ...] = (1,)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if not 0.0 <= self.v_percent < 100.0:
            raise ConfigError(f"v must be in [0, 100), got {self.v_percent}")
        if self.window < 2:
            raise ConfigError(f"window must be >= 2, got {self.window}")
        if self.top_k < 1:
            raise ConfigError(f"k must be >= 1, got {self.top_k}")
        if self.top_k >= self.n_devices:
            raise ConfigError(
                f"k must be < number of devices, got k={self.top_k} n={self.n_devices}"
            )
        if self.n_dims < 1:
            raise ConfigError(f"m must be >= 1, got {self.n_dims}")
        if not self.alpha > 0.0:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not self.md_floor > 0.0:
            raise ConfigError(f"epsilon must be > 0, got {self.md_floor}")
        if self.ridge < 0.0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")
        if self.ar_order < 1:
            raise ConfigError(f"ar_order must be >= 1, got {self.ar_order}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ConfigError(f"sigma_mode must be one of {SIGMA_MODES}, got {self.sigma_mode!r}")
        if self.wgm_weighting not in WGM_WEIGHTINGS:
            raise ConfigError(
                f"wgm_weighting must be one of {WGM_WEIGHTINGS}, got {self.wgm_weighting!r}"
            )
        if self.md_mode not in MD_MODES:
            raise ConfigError(f"md_mode must be one of {MD_MODES}, got {self.md_mode!r}")
        if self.feed not in FEEDS:
            raise ConfigError(f"feed must be one of {FEEDS}, got {self.feed!r}")
        if self.unit not in INJECTION_UNITS:
            raise ConfigError(f"unit must be one of {INJECTION_UNITS}, got {self.unit!r}")
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")

    def blend_params(self) -> BlendParams:
        return BlendParams(
            alpha=self.alpha,
            beta=self.beta,
            top_k=self.top_k,
            md_floor=self.md_floor,
            ridge=self.ridge,
            ar_order=self.ar_order,
            sigma_mode=self.sigma_mode,
            wgm_weighting=self.wgm_weighting,
            md_mode=self.md_mode,
            cs_clamp=self.cs_clamp,
        )

    @classmethod
    def from_kv(cls, items: Mapping[str, str], *, source: str = "<config>") -> "ExperimentConfig":
        known = {
            "model", "v", "w", "k", "n", "m", "alpha", "beta", "epsilon", "ridge",
            "ar_order", "sigma_mode", "wgm_weighting", "md_mode", "cs_clamp",
            "feed", "unit", "seeds",
        }
        unknown = set(items) - known
        if unknown:
            raise ConfigError(f"{source}: unknown config keys {sorted(unknown)}")
        for required in ("model", "v", "n", "m"):
            if required not in items:
                raise ConfigError(f"{source}: missing config key {required!r}")
        return cls(
            model=items["model"].strip().upper(),
            v_percent=_parse_float(items, "v", source),
            n_devices=_parse_int(items, "n", source),
            n_dims=_parse_int(items, "m", source),
            window=_parse_int(items, "w", source, GRID_W),
            top_k=_parse_int(items, "k", source, GRID_K),
            alpha=_parse_float(items, "alpha", source, GRID_ALPHA),
            beta=_parse_float(items, "beta", source, GRID_BETA),
            md_floor=_parse_float(items, "epsilon", source, 1e-9),
            ridge=_parse_float(items, "ridge", source, 1e-6),
            ar_order=_parse_int(items, "ar_order", source, 3),
            sigma_mode=items.get("sigma_mode", "relative").strip(),
            wgm_weighting=items.get("wgm_weighting", "inverse").strip(),
            md_mode=items.get("md_mode", "means").strip(),
            cs_clamp=kvformat.parse_bool(items.get("cs_clamp", "true"), key="cs_clamp"),
            feed=items.get("feed", "truth").strip(),
            unit=items.get("unit", "cell").strip(),
            seeds=_parse_seeds(items.get("seeds", "1"), source),
        )


def _parse_int(items: Mapping[str, str], key: str, source: str, default: int | None = None) -> int:
    if key not in items:
        if default is None:
            raise ConfigError(f"{source}: missing config key {key!r}")
        return default
    try:
        return int(items[key])
    except ValueError:
        raise ConfigError(f"{source}: key {key!r} must be an integer, got {items[key]!r}") from None


def _parse_float(
    items: Mapping[str, str], key: str, source: str, default: float | None = None
) -> float:
    if key not in items:
        if default is None:
            raise ConfigError(f"{source}: missing config key {key!r}")
        return default
    try:
        return float(items[key])
    except ValueError:
        raise ConfigError(f"{source}: key {key!r} must be a number, got {items[key]!r}") from None


def _parse_seeds(raw: str, source: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in kvformat.split_list(raw))
    except ValueError:
        raise ConfigError(f"{source}: seeds must be integers, got {raw!r}") from None


def expand_grid(
    items: Mapping[str, str], *, source: str = "<grid>"
) -> tuple[list[ExperimentConfig], dict[str, object]]:
    """Expand a grid file into configs, filling absent axes with defaults.

    The default axes are the benchmark grid: models PBM/DBM/AM, v 1/5/10,
    n 5/7/15, m 4/9, with w=10, k=4, alpha=20, beta=2. Expansion order is
    model-major, then v, n, m, so output rows have a stable layout.
    Returns the configs and the resolved axes for the run manifest.
    """
    known = {
        "models", "v", "n", "m", "w", "k", "alpha", "beta", "epsilon", "ridge",
        "ar_order", "sigma_mode", "wgm_weighting", "md_mode", "cs_clamp",
        "feed", "unit", "seeds",
    }
    unknown = set(items) - known
    if unknown:
        raise ConfigError(f"{source}: unknown grid keys {sorted(unknown)}")

    def float_list(key: str, default: tuple[float, ...]) -> tuple[float, ...]:
        if key not in items:
            return default
        try:
            return tuple(float(s) for s in kvformat.split_list(items[key]))
        except ValueError:
            raise ConfigError(f"{source}: key {key!r} must list numbers, got {items[key]!r}") from None

    def int_list(key: str, default: tuple[int, ...]) -> tuple[int, ...]:
        if key not in items:
            return default
        try:
            return tuple(int(s) for s in kvformat.split_list(items[key]))
        except ValueError:
            raise ConfigError(f"{source}: key {key!r} must list integers, got {items[key]!r}") from None

    models = tuple(
        s.strip().upper() for s in kvformat.split_list(items.get("models", ";".join(GRID_MODELS)))
    )
    v_axis = float_list("v", GRID_V)
    n_axis = int_list("n", GRID_N)
    m_axis = int_list("m", GRID_M)
    if not models or not v_axis or not n_axis or not m_axis:
        raise ConfigError(f"{source}: grid axes must be nonempty")
    window = _parse_int(items, "w", source, GRID_W)
    top_k = _parse_int(items, "k", source, GRID_K)
    alpha = _parse_float(items, "alpha", source, GRID_ALPHA)
    beta = _parse_float(items, "beta", source, GRID_BETA)
    seeds = _parse_seeds(items.get("seeds", "1"), source)
    shared = dict(
        window=window,
        top_k=top_k,
        alpha=alpha,
        beta=beta,
        md_floor=_parse_float(items, "epsilon", source, 1e-9),
        ridge=_parse_float(items, "ridge", source, 1e-6),
        ar_order=_parse_int(items, "ar_order", source, 3),
        sigma_mode=items.get("sigma_mode", "relative").strip(),
        wgm_weighting=items.get("wgm_weighting", "inverse").strip(),
        md_mode=items.get("md_mode", "means").strip(),
        cs_clamp=kvformat.parse_bool(items.get("cs_clamp", "true"), key="cs_clamp"),
        feed=items.get("feed", "truth").strip(),
        unit=items.get("unit", "cell").strip(),
        seeds=seeds,
    )
    configs = [
        ExperimentConfig(model=model, v_percent=v, n_devices=n, n_dims=m, **shared)
        for model in models
        for v in v_axis
        for n in n_axis
        for m in m_axis
    ]
    axes: dict[str, object] = {
        "models": models,
        "v": v_axis,
        "n": n_axis,
        "m": m_axis,
        "w": window,
        "k": top_k,
        "alpha": alpha,
        "beta": beta,
        "seeds": seeds,
    }
    return configs, axes


@dataclass(frozen=True)
class SeedMetrics:
    """Scores of one seeded injection pass."""

    seed: int
    n_replacements: int
    n_failures: int
    mae: Optional[float]
    rmse: Optional[float]
    # wall time, excluded from equality so deterministic runs compare equal
    mean_time_s: Optional[float] = field(compare=False)


@dataclass(frozen=True)
class MetricsReport:
    """Pooled scores for one grid cell plus the per-seed breakdown.

    Pooling is over the union of all seeds' scored cells, not a mean of
    per-seed means, so seeds with more replacements weigh proportionally.
    mae/rmse are None when nothing was scored (v=0 or all cells failed).
    """

    config: ExperimentConfig
    per_seed: tuple[SeedMetrics, ...]
    n_replacements: int
    n_failures: int
    mae: Optional[float]
    rmse: Optional[float]
    mean_time_s: Optional[float] = field(compare=False)


def _replay_one_seed(
    restricted: Sequence[DeviceReport],
    config: ExperimentConfig,
    params: BlendParams,
    seed: int,
) -> tuple[list[float], list[float], list[float], int]:
    """Run one injection + replay pass; returns (preds, truths, times, failures)."""
    if config.v_percent == 0.0:
        masked_reports: Sequence[DeviceReport] = restricted
        plan: Optional[InjectionPlan] = None
    else:
        masked_reports, plan = inject_missing(
            restricted, config.v_percent, seed, warmup=config.window, unit=config.unit
        )
    impute = _IMPUTERS[config.model]
    store = WindowStore(config.window)
    preds: list[float] = []
    truths: list[float] = []
    times: list[float] = []
    failures = 0

    ordered = sorted(masked_reports, key=lambda r: (r.timestamp, r.device_id))
    for _, group_iter in groupby(ordered, key=lambda r: r.timestamp):
        tick_reports = list(group_iter)
        for rep in tick_reports:
            store.ingest(rep)
        if plan is None:
            continue
        repaired: dict[int, dict[int, float]] = {}
        for rep in tick_reports:
            for dim in rep.masked_dims():
                key = (rep.device_id, rep.timestamp, dim)
                truth = plan.truth.get(key)
                if truth is None:
                    continue
                try:
                    outcome = impute(store, rep.device_id, dim, params)
                except ImputationImpossibleError:
                    failures += 1
                    if config.feed == "truth":
                        repaired.setdefault(rep.device_id, {})[dim] = truth
                    continue
                preds.append(outcome.value)
                truths.append(truth)
                times.append(outcome.elapsed)
                repaired.setdefault(rep.device_id, {})[dim] = (
                    truth if config.feed == "truth" else outcome.value
                )
        for rep in tick_reports:
            fixes = repaired.get(rep.device_id)
            if not fixes:
                continue
            values = list(rep.values)
            mask = list(rep.missing_mask)
            for dim, value in fixes.items():
                values[dim] = value
                mask[dim] = False
            store.amend_latest(
                DeviceReport(rep.device_id, rep.timestamp, tuple(values), tuple(mask))
            )
    return preds, truths, times, failures


def run_experiment(reports: Sequence[DeviceReport], config: ExperimentConfig) -> MetricsReport:
    """Replay a trace under one config, aggregating over its seeds."""
    restricted = restrict_trace(reports, config.n_devices, config.n_dims)
    params = config.blend_params()
    per_seed: list[SeedMetrics] = []
    all_preds: list[float] = []
    all_truths: list[float] = []
    all_times: list[float] = []
    total_failures = 0
    for seed in config.seeds:
        preds, truths, times, failures = _replay_one_seed(restricted, config, params, seed)
        per_seed.append(
            SeedMetrics(
                seed=seed,
                n_replacements=len(preds),
                n_failures=failures,
                mae=mae(preds, truths) if preds else None,
                rmse=rmse(preds, truths) if preds else None,
                mean_time_s=float(np.mean(times)) if times else None,
            )
        )
        all_preds.extend(preds)
        all_truths.extend(truths)
        all_times.extend(times)
        total_failures += failures
    return MetricsReport(
        config=config,
        per_seed=tuple(per_seed),
        n_replacements=len(all_preds),
        n_failures=total_failures,
        mae=mae(all_preds, all_truths) if all_preds else None,
        rmse=rmse(all_preds, all_truths) if all_preds else None,
        mean_time_s=float(np.mean(all_times)) if all_times else None,
    )


def compare_models(
    reports: Sequence[DeviceReport], configs: Sequence[ExperimentConfig]
) -> list[MetricsReport]:
    """Run several configs on one trace.

    Injection depends only on the restricted trace, v, seed, warmup, and
    unit, so configs differing only in model are scored on identical masks
    and their metric differences are attributable to the model alone.
    """
    return [run_experiment(reports, config) for config in configs]


METRICS_COLUMNS = (
    "model", "v", "w", "k", "n", "m", "alpha", "beta",
    "seeds", "replacements", "failures", "mae", "rmse",
)

TIMINGS_COLUMNS = (
    "model", "v", "w", "k", "n", "m", "alpha", "beta", "seeds", "mean_time_ms",
)


def _cell_fields(report: MetricsReport) -> list[str]:
    cfg = report.config
    return [
        cfg.model,
        kvformat.format_value(cfg.v_percent),
        str(cfg.window),
        str(cfg.top_k),
        str(cfg.n_devices),
        str(cfg.n_dims),
        kvformat.format_value(cfg.alpha),
        kvformat.format_value(cfg.beta),
        ";".join(str(s) for s in cfg.seeds),
    ]


def _metric_str(value: Optional[float]) -> str:
    return "" if value is None else repr(value)


def write_metrics_csv(path, reports: Sequence[MetricsReport]) -> None:
    """Deterministic per-cell metric table (no wall-clock columns)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for report in reports:
            row = _cell_fields(report) + [
                str(report.n_replacements),
                str(report.n_failures),
                _metric_str(report.mae),
                _metric_str(report.rmse),
            ]
            fh.write(",".join(row) + "\n")


def write_metrics_kv(path, reports: Sequence[MetricsReport]) -> None:
    """Same table as key-value text, with the per-seed breakdown included."""
    items: dict[str, object] = {"rows": len(reports)}
    for i, report in enumerate(reports):
        cfg = report.config
        prefix = f"row{i}"
        items[f"{prefix}.model"] = cfg.model
        items[f"{prefix}.v"] = cfg.v_percent
        items[f"{prefix}.w"] = cfg.window
        items[f"{prefix}.k"] = cfg.top_k
        items[f"{prefix}.n"] = cfg.n_devices
        items[f"{prefix}.m"] = cfg.n_dims
        items[f"{prefix}.alpha"] = cfg.alpha
        items[f"{prefix}.beta"] = cfg.beta
        items[f"{prefix}.seeds"] = list(cfg.seeds)
        items[f"{prefix}.replacements"] = report.n_replacements
        items[f"{prefix}.failures"] = report.n_failures
        items[f"{prefix}.mae"] = _metric_str(report.mae)
        items[f"{prefix}.rmse"] = _metric_str(report.rmse)
        for sm in report.per_seed:
            sp = f"{prefix}.seed{sm.seed}"
            items[f"{sp}.replacements"] = sm.n_replacements
            items[f"{sp}.failures"] = sm.n_failures
            items[f"{sp}.mae"] = _metric_str(sm.mae)
            items[f"{sp}.rmse"] = _metric_str(sm.rmse)
    kvformat.write_kv(path, items)


def write_timings_csv(path, reports: Sequence[MetricsReport]) -> None:
    """Wall-clock table; nondeterministic by nature, kept out of metrics files."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(TIMINGS_COLUMNS) + "\n")
        for report in reports:
            mean_ms = "" if report.mean_time_s is None else repr(report.mean_time_s * 1000.0)
            fh.write(",".join(_cell_fields(report) + [mean_ms]) + "\n")
