"""Command-line entry point.

Four subcommands: `synth` writes a synthetic trace plus its schema,
`validate` checks that a trace parses under a schema, `impute` runs one
experiment config, and `grid` runs a whole comparison grid. Runs write a
manifest capturing every knob, the input digests, and the RNG, so a run
can be reproduced bit-identically from the manifest plus the input files.

Exit codes: 0 success, 1 unexpected failure, 2 I/O failure, 3 trace parse
failure, 4 invalid configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__, kvformat
from .errors import ConfigError, EdgefillError, TraceParseError
from .evaluation import (
    ExperimentConfig,
    compare_models,
    expand_grid,
    run_experiment,
    write_metrics_csv,
    write_metrics_kv,
    write_timings_csv,
)
from .ingestion import (
    TraceSchema,
    canonical_schema,
    inject_missing,
    load_trace,
    restrict_trace,
    save_trace,
    synth_trace,
    write_plan,
)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_IO = 2
EXIT_PARSE = 3
EXIT_CONFIG = 4

RNG_DESCRIPTION = "numpy default_rng (PCG64), one fresh generator per seed"


@dataclass
class RunManifest:
    """Everything needed to reproduce a run bit-identically.

    Input files are recorded by path and SHA-256; settings hold the fully
    resolved configuration (defaults and flag overrides applied), so the
    manifest stands on its own even if config files later change.
    """

    command: str
    created_utc: str
    package_version: str
    rng: str
    inputs: dict[str, str] = field(default_factory=dict)
    settings: dict[str, object] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)

    def to_kv(self) -> dict[str, object]:
        items: dict[str, object] = {
            "command": self.command,
            "created_utc": self.created_utc,
            "package": f"edgefill {self.package_version}",
            "rng": self.rng,
        }
        items.update(self.inputs)
        items.update(self.settings)
        items["outputs"] = self.outputs
        return items


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _manifest(command: str) -> RunManifest:
    return RunManifest(command, _utc_now(), __version__, RNG_DESCRIPTION)


def _record_input(manifest: RunManifest, label: str, path: str) -> None:
    manifest.inputs[f"{label}_path"] = path
    manifest.inputs[f"{label}_sha256"] = _sha256(path)


def _apply_overrides(items: dict[str, str], args: argparse.Namespace) -> None:
    """Fold command-line overrides into a parsed config/grid mapping."""
    if args.seed is not None:
        items["seeds"] = str(args.seed)
    for key in ("feed", "sigma_mode", "wgm_weighting", "md_mode"):
        value = getattr(args, key)
        if value is not None:
            items[key] = value


def _config_settings(config: ExperimentConfig) -> dict[str, object]:
    return {
        "config.model": config.model,
        "config.v": config.v_percent,
        "config.w": config.window,
        "config.k": config.top_k,
        "config.n": config.n_devices,
        "config.m": config.n_dims,
        "config.alpha": config.alpha,
        "config.beta": config.beta,
        "config.epsilon": config.md_floor,
        "config.ridge": config.ridge,
        "config.ar_order": config.ar_order,
        "config.sigma_mode": config.sigma_mode,
        "config.wgm_weighting": config.wgm_weighting,
        "config.md_mode": config.md_mode,
        "config.cs_clamp": config.cs_clamp,
        "config.feed": config.feed,
        "config.unit": config.unit,
        "config.warmup": config.window,
        "config.seeds": list(config.seeds),
    }


def cmd_synth(args: argparse.Namespace) -> int:
    reports = synth_trace(args.devices, args.ticks, args.dims, args.noise, args.seed)
    out = Path(args.out)
    save_trace(out, reports)
    schema_path = out.with_name(out.name + ".schema")
    kvformat.write_kv(schema_path, canonical_schema(args.dims).to_kv())
    print(f"wrote {out} ({args.devices} devices x {args.ticks} ticks x {args.dims} dims)")
    print(f"wrote {schema_path}")
    return EXIT_OK


def cmd_validate(args: argparse.Namespace) -> int:
    schema = TraceSchema.from_file(args.schema)
    reports = load_trace(args.trace, schema)
    devices = sorted({rep.device_id for rep in reports})
    ticks = [rep.timestamp for rep in reports]
    masked = sum(len(rep.masked_dims()) for rep in reports)
    print(
        f"{args.trace}: {len(reports)} reports, {len(devices)} devices, "
        f"{reports[0].n_dims} dims, ticks {min(ticks)}..{max(ticks)}, "
        f"{masked} masked cells"
    )
    return EXIT_OK


def cmd_impute(args: argparse.Namespace) -> int:
    schema = TraceSchema.from_file(args.schema)
    trace = load_trace(args.trace, schema)
    items = kvformat.read_kv(args.config)
    _apply_overrides(items, args)
    config = ExperimentConfig.from_kv(items, source=args.config)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = run_experiment(trace, config)
    write_metrics_csv(out_dir / "metrics.csv", [report])
    write_metrics_kv(out_dir / "metrics.kv", [report])
    write_timings_csv(out_dir / "timings.csv", [report])
    outputs = ["metrics.csv", "metrics.kv", "timings.csv"]
    if config.v_percent > 0.0:
        restricted = restrict_trace(trace, config.n_devices, config.n_dims)
        for seed in config.seeds:
            _, plan = inject_missing(
                restricted, config.v_percent, seed, warmup=config.window, unit=config.unit
            )
            name = f"plan_seed{seed}.txt"
            write_plan(out_dir / name, plan)
            outputs.append(name)

    manifest = _manifest("impute")
    _record_input(manifest, "trace", args.trace)
    _record_input(manifest, "schema", args.schema)
    _record_input(manifest, "config", args.config)
    manifest.settings.update({f"schema.{k}": v for k, v in schema.to_kv().items()})
    manifest.settings.update(_config_settings(config))
    manifest.outputs = outputs + ["manifest.kv"]
    kvformat.write_kv(out_dir / "manifest.kv", manifest.to_kv())
    summary = "n/a" if report.mae is None else f"mae={report.mae:.6g} rmse={report.rmse:.6g}"
    print(
        f"{config.model} v={config.v_percent} n={config.n_devices} m={config.n_dims}: "
        f"{report.n_replacements} replacements, {report.n_failures} failures, {summary}"
    )
    print(f"wrote {out_dir}/metrics.csv")
    return EXIT_OK


def cmd_grid(args: argparse.Namespace) -> int:
    schema = TraceSchema.from_file(args.schema)
    trace = load_trace(args.trace, schema)
    items = kvformat.read_kv(args.grid)
    _apply_overrides(items, args)
    configs, axes = expand_grid(items, source=args.grid)

    present = len({rep.device_id for rep in trace})
    width = min(rep.n_dims for rep in trace)
    for config in configs:
        if config.n_devices > present or config.n_dims > width:
            raise ConfigError(
                f"grid cell (model={config.model}, v={config.v_percent}, "
                f"n={config.n_devices}, m={config.n_dims}): "
                f"trace provides only {present} devices x {width} dims"
            )

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = compare_models(trace, configs)
    write_metrics_csv(out_dir / "grid_metrics.csv", reports)
    write_metrics_kv(out_dir / "grid_metrics.kv", reports)
    write_timings_csv(out_dir / "grid_timings.csv", reports)

    manifest = _manifest("grid")
    _record_input(manifest, "trace", args.trace)
    _record_input(manifest, "schema", args.schema)
    _record_input(manifest, "grid", args.grid)
    manifest.settings.update({f"schema.{k}": v for k, v in schema.to_kv().items()})
    manifest.settings.update({f"grid.{k}": v for k, v in axes.items()})
    shared = configs[0]
    manifest.settings.update(
        {
            "grid.epsilon": shared.md_floor,
            "grid.ridge": shared.ridge,
            "grid.ar_order": shared.ar_order,
            "grid.sigma_mode": shared.sigma_mode,
            "grid.wgm_weighting": shared.wgm_weighting,
            "grid.md_mode": shared.md_mode,
            "grid.cs_clamp": shared.cs_clamp,
            "grid.feed": shared.feed,
            "grid.unit": shared.unit,
            "grid.warmup": shared.window,
            "grid.cells": len(configs),
        }
    )
    manifest.outputs = ["grid_metrics.csv", "grid_metrics.kv", "grid_timings.csv", "manifest.kv"]
    kvformat.write_kv(out_dir / "manifest.kv", manifest.to_kv())
    print(f"ran {len(configs)} grid cells, wrote {out_dir}/grid_metrics.csv")
    return EXIT_OK


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out-dir", default="edgefill_out", help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the seed list with one seed")
    parser.add_argument(
        "--feed", choices=("truth", "imputed"), default=None,
        help="what re-enters the window after scoring a masked cell",
    )
    parser.add_argument(
        "--sigma-mode", dest="sigma_mode", choices=("absolute", "relative"), default=None,
        help="feed the sigmoid the raw window deviation or the scale-normalized one",
    )
    parser.add_argument(
        "--wgm-weighting", dest="wgm_weighting", choices=("inverse", "literal"), default=None,
        help="peer weights: 1/max(md,eps) or max(md,eps)",
    )
    parser.add_argument(
        "--md-mode", dest="md_mode", choices=("means", "per_tick_sum"), default=None,
        help="device distance: between window means or summed per shared tick",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgefill",
        description="Streaming imputation of missing values in device report streams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a correlated synthetic trace")
    p_synth.add_argument("--devices", type=int, required=True)
    p_synth.add_argument("--ticks", type=int, required=True)
    p_synth.add_argument("--dims", type=int, required=True)
    p_synth.add_argument("--noise", type=float, default=0.05)
    p_synth.add_argument("--seed", type=int, default=1)
    p_synth.add_argument("--out", required=True, help="trace path; a .schema sidecar is added")
    p_synth.set_defaults(func=cmd_synth)

    p_validate = sub.add_parser("validate", help="parse a trace and print a summary")
    p_validate.add_argument("trace")
    p_validate.add_argument("schema")
    p_validate.set_defaults(func=cmd_validate)

    p_impute = sub.add_parser("impute", help="run one experiment config")
    p_impute.add_argument("trace")
    p_impute.add_argument("schema")
    p_impute.add_argument("config")
    _add_run_flags(p_impute)
    p_impute.set_defaults(func=cmd_impute)

    p_grid = sub.add_parser("grid", help="run a model comparison grid")
    p_grid.add_argument("trace")
    p_grid.add_argument("schema")
    p_grid.add_argument("grid")
    _add_run_flags(p_grid)
    p_grid.set_defaults(func=cmd_grid)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"edgefill: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceParseError as exc:
        print(f"edgefill: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"edgefill: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EdgefillError as exc:
        print(f"edgefill: error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
