"""Trace loading, synthetic trace generation, and missing-value injection.

A trace is a delimiter-separated text file, one device report per line,
described by a small schema file (column mapping, delimiter, NA tokens)
rather than a bespoke parser per dataset layout. Loading normalizes device
identifiers to dense integer ids and leaves everything else untouched.

Injection masks a fixed fraction of the unmasked cells uniformly at random
with a seeded generator, remembering the ground truth so an evaluation run
can score its replacements. Everything here is deterministic per seed.
"""

from __future__ import annotations

import csv
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import kvformat
from .errors import ConfigError, DuplicateReportError, TraceParseError
from .stream import DeviceReport

DEFAULT_NA_TOKENS = ("NaN", "nan", "NA")

INJECTION_UNITS = ("cell", "vector")

_HARMONIC_AMPLITUDES = (0.6, 0.3, 0.1)


@dataclass(frozen=True)
class TraceSchema:
    """Column mapping for one trace layout.

    Columns are names when the file has a header row, 0-based indices when
    it does not. Cells matching `na_tokens` (or empty cells, always) load
    as masked values instead of parse errors.
    """

    device_col: int | str
    time_col: int | str
    value_cols: tuple[int | str, ...]
    delimiter: str = ","
    header: bool = True
    na_tokens: tuple[str, ...] = DEFAULT_NA_TOKENS

    def __post_init__(self):
        object.__setattr__(self, "value_cols", tuple(self.value_cols))
        object.__setattr__(self, "na_tokens", tuple(self.na_tokens))
        if not self.value_cols:
            raise ConfigError("schema needs at least one value column")
        cols = [self.device_col, self.time_col, *self.value_cols]
        if len(set(cols)) != len(cols):
            raise ConfigError(f"schema columns must be distinct, got {cols}")
        if len(self.delimiter) != 1:
            raise ConfigError(f"delimiter must be a single character, got {self.delimiter!r}")
        if not self.header:
            for col in cols:
                if not isinstance(col, int):
                    raise ConfigError(
                        f"headerless schema needs integer column indices, got {col!r}"
                    )

    @property
    def n_dims(self) -> int:
        return len(self.value_cols)

    @classmethod
    def from_kv(cls, items: Mapping[str, str], *, source: str = "<schema>") -> "TraceSchema":
        known = {"device_column", "time_column", "value_columns", "delimiter", "header", "na_tokens"}
        unknown = set(items) - known
        if unknown:
            raise ConfigError(f"{source}: unknown schema keys {sorted(unknown)}")
        for required in ("device_column", "time_column", "value_columns"):
            if required not in items:
                raise ConfigError(f"{source}: missing schema key {required!r}")
        header = kvformat.parse_bool(items.get("header", "true"), key="header")

        def column(raw: str) -> int | str:
            raw = raw.strip()
            if not header:
                try:
                    return int(raw)
                except ValueError:
                    raise ConfigError(
                        f"{source}: headerless schema needs integer columns, got {raw!r}"
                    ) from None
            return int(raw) if raw.lstrip("-").isdigit() else raw

        na_tokens = DEFAULT_NA_TOKENS
        if "na_tokens" in items:
            na_tokens = tuple(kvformat.split_list(items["na_tokens"]))
        return cls(
            device_col=column(items["device_column"]),
            time_col=column(items["time_column"]),
            value_cols=tuple(column(c) for c in kvformat.split_list(items["value_columns"])),
            delimiter=items.get("delimiter", ","),
            header=header,
            na_tokens=na_tokens,
        )

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "TraceSchema":
        return cls.from_kv(kvformat.read_kv(path), source=str(path))

    def to_kv(self) -> dict[str, str]:
        return {
            "device_column": str(self.device_col),
            "time_column": str(self.time_col),
            "value_columns": ";".join(str(c) for c in self.value_cols),
            "delimiter": self.delimiter,
            "header": "true" if self.header else "false",
            "na_tokens": ";".join(self.na_tokens),
        }


def canonical_schema(n_dims: int) -> TraceSchema:
    """Schema of the package's own trace output: device, tick, values."""
    return TraceSchema(
        device_col=0,
        time_col=1,
        value_cols=tuple(range(2, 2 + n_dims)),
        delimiter=",",
        header=False,
        na_tokens=("NaN",),
    )


def load_trace(path: str | os.PathLike, schema: TraceSchema) -> list[DeviceReport]:
    """Parse a trace file into reports, grouped by device, oldest first.

    Device keys are re-indexed densely to 0..N-1 (numeric keys sort
    numerically, anything else lexicographically). Malformed rows raise
    TraceParseError carrying the line number; a repeated (device, tick)
    pair raises DuplicateReportError.
    """
    source = str(path)
    rows_by_device: dict[str, list[tuple[int, tuple[float, ...], tuple[bool, ...]]]] = defaultdict(list)
    seen: set[tuple[str, int]] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        if schema.header:
            try:
                head = next(reader)
            except StopIteration:
                raise TraceParseError(f"{source}: empty file") from None
            positions = {name.strip(): i for i, name in enumerate(head)}

            def resolve(col: int | str) -> int:
                if isinstance(col, int):
                    return col
                if col not in positions:
                    raise TraceParseError(f"{source}: header has no column {col!r}")
                return positions[col]

            device_idx = resolve(schema.device_col)
            time_idx = resolve(schema.time_col)
            value_idx = [resolve(c) for c in schema.value_cols]
        else:
            device_idx = int(schema.device_col)
            time_idx = int(schema.time_col)
            value_idx = [int(c) for c in schema.value_cols]
        width = max(device_idx, time_idx, *value_idx) + 1

        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) < width:
                raise TraceParseError(
                    f"{source}:{line}: row has {len(row)} fields, schema needs {width}"
                )
            device_key = row[device_idx].strip()
            if not device_key:
                raise TraceParseError(f"{source}:{line}: empty device id")
            raw_time = row[time_idx].strip()
            try:
                tick = int(raw_time)
            except ValueError:
                raise TraceParseError(
                    f"{source}:{line}: timestamp {raw_time!r} is not an integer"
                ) from None
            if (device_key, tick) in seen:
                raise DuplicateReportError(
                    f"{source}:{line}: duplicate report for device {device_key!r} at t={tick}"
                )
            seen.add((device_key, tick))
            values: list[float] = []
            mask: list[bool] = []
            for idx in value_idx:
                cell = row[idx].strip()
                if cell == "" or cell in schema.na_tokens:
                    values.append(math.nan)
                    mask.append(True)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise TraceParseError(
                        f"{source}:{line}: value cell {cell!r} is not numeric"
                    ) from None
                mask.append(False)
            rows_by_device[device_key].append((tick, tuple(values), tuple(mask)))

    if not rows_by_device:
        raise TraceParseError(f"{source}: no reports found")
    keys = list(rows_by_device)
    try:
        keys.sort(key=int)
    except ValueError:
        keys.sort()
    reports: list[DeviceReport] = []
    for device_id, key in enumerate(keys):
        for tick, values, mask in sorted(rows_by_device[key], key=lambda r: r[0]):
            reports.append(DeviceReport(device_id, tick, values, mask))
    return reports


def save_trace(path: str | os.PathLike, reports: Sequence[DeviceReport]) -> None:
    """Write reports in the canonical layout: device,tick,value...

    Floats are written with repr so a reload reproduces them bit-exactly;
    masked cells become the NaN token.
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for rep in reports:
            cells = [str(rep.device_id), str(rep.timestamp)]
            for value, masked in zip(rep.values, rep.missing_mask):
                cells.append("NaN" if masked else repr(value))
            fh.write(",".join(cells) + "\n")


@dataclass(frozen=True)
class InjectionPlan:
    """Which cells were masked and what they really held.

    `cells` are (device, tick, dimension) triples in sorted order; `truth`
    maps each triple to the original value. Unit "vector" masks whole
    reports but still records one triple per hidden cell.
    """

    rate: float
    seed: int
    unit: str
    warmup: int
    cells: tuple[tuple[int, int, int], ...]
    truth: dict[tuple[int, int, int], float]


def write_plan(path: str | os.PathLike, plan: InjectionPlan) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# rate = {plan.rate}\n")
        fh.write(f"# seed = {plan.seed}\n")
        fh.write(f"# unit = {plan.unit}\n")
        fh.write(f"# warmup = {plan.warmup}\n")
        fh.write("device,tick,dimension,truth\n")
        for cell in plan.cells:
            fh.write(f"{cell[0]},{cell[1]},{cell[2]},{repr(plan.truth[cell])}\n")


def inject_missing(
    reports: Sequence[DeviceReport],
    rate: float,
    seed: int,
    *,
    warmup: int = 0,
    unit: str = "cell",
) -> tuple[list[DeviceReport], InjectionPlan]:
    """Mask round(rate% of eligible cells) uniformly without replacement.

    Eligible cells are currently unmasked and sit at report index >= warmup
    within their device's timestamp order, so early windows can be kept
    injection-free. unit="vector" samples whole reports instead and masks
    every unmasked cell they contain. The input sequence is not modified;
    masked copies are returned alongside the plan.
    """
    if not 0.0 < rate < 100.0:
        raise ConfigError(f"injection rate must be in (0, 100), got {rate}")
    if unit not in INJECTION_UNITS:
        raise ConfigError(f"injection unit must be one of {INJECTION_UNITS}, got {unit!r}")
    if warmup < 0:
        raise ConfigError(f"warmup must be >= 0, got {warmup}")

    by_device: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for pos, rep in enumerate(reports):
        by_device[rep.device_id].append((rep.timestamp, pos))
    rank: dict[int, int] = {}
    for entries in by_device.values():
        for i, (_, pos) in enumerate(sorted(entries)):
            rank[pos] = i

    if unit == "cell":
        eligible = [
            (rep.device_id, rep.timestamp, d, pos)
            for pos, rep in enumerate(reports)
            if rank[pos] >= warmup
            for d in range(rep.n_dims)
            if not rep.missing_mask[d]
        ]
    else:
        eligible = [
            (rep.device_id, rep.timestamp, -1, pos)
            for pos, rep in enumerate(reports)
            if rank[pos] >= warmup and not all(rep.missing_mask)
        ]
    eligible.sort(key=lambda e: e[:3])
    n_pick = int(round(rate / 100.0 * len(eligible)))
    rng = np.random.default_rng(seed)
    picks = sorted(rng.choice(len(eligible), size=n_pick, replace=False)) if n_pick else []

    dims_to_mask: dict[int, set[int]] = defaultdict(set)
    for i in picks:
        device_id, tick, dim, pos = eligible[i]
        if unit == "cell":
            dims_to_mask[pos].add(dim)
        else:
            dims_to_mask[pos].update(
                d for d in range(reports[pos].n_dims) if not reports[pos].missing_mask[d]
            )

    truth: dict[tuple[int, int, int], float] = {}
    masked: list[DeviceReport] = []
    for pos, rep in enumerate(reports):
        hit = dims_to_mask.get(pos)
        if not hit:
            masked.append(rep)
            continue
        values = list(rep.values)
        mask = list(rep.missing_mask)
        for d in hit:
            truth[(rep.device_id, rep.timestamp, d)] = values[d]
            values[d] = math.nan
            mask[d] = True
        masked.append(DeviceReport(rep.device_id, rep.timestamp, tuple(values), tuple(mask)))
    plan = InjectionPlan(float(rate), int(seed), unit, int(warmup), tuple(sorted(truth)), truth)
    return masked, plan


def synth_trace(
    n_devices: int, n_ticks: int, n_dims: int, noise: float, seed: int
) -> list[DeviceReport]:
    """Correlated synthetic trace: shared latent signal plus device noise.

    Every device observes the same smooth latent per dimension (a dimension
    base level plus three low-frequency sinusoids), offset by a per-device
    constant bias and perturbed by i.i.d. Gaussian noise; both disturbance
    scales are proportional to `noise`, so noise=0 makes all devices
    identical. Deterministic per seed. Ticks run 1..n_ticks, device-major.
    """
    if n_devices < 1 or n_ticks < 1 or n_dims < 1:
        raise ConfigError(
            f"counts must be >= 1, got devices={n_devices} ticks={n_ticks} dims={n_dims}"
        )
    if noise < 0.0:
        raise ConfigError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    freqs = rng.uniform(1.0, 3.0, size=(n_dims, len(_HARMONIC_AMPLITUDES)))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=(n_dims, len(_HARMONIC_AMPLITUDES)))
    bias = rng.standard_normal((n_devices, n_dims)) * (2.0 * noise)
    eps = rng.standard_normal((n_devices, n_ticks, n_dims)) * noise

    ticks = np.arange(1, n_ticks + 1, dtype=float)
    latent = np.empty((n_ticks, n_dims), dtype=float)
    for d in range(n_dims):
        signal = np.full(n_ticks, 10.0 + 2.0 * d)
        for amp, freq, phase in zip(_HARMONIC_AMPLITUDES, freqs[d], phases[d]):
            signal = signal + amp * np.sin(2.0 * math.pi * freq * ticks / n_ticks + phase)
        latent[:, d] = signal

    reports: list[DeviceReport] = []
    no_mask = (False,) * n_dims
    for j in range(n_devices):
        values = latent + bias[j] + eps[j]
        for t in range(n_ticks):
            reports.append(DeviceReport(j, t + 1, tuple(values[t]), no_mask))
    return reports


def restrict_trace(
    reports: Sequence[DeviceReport], n_devices: int, n_dims: int
) -> list[DeviceReport]:
    """Keep the first n_devices devices and first n_dims dimensions.

    Assumes dense device ids. Raises ConfigError when the trace is too
    small in either direction.
    """
    present = {rep.device_id for rep in reports}
    if n_devices > len(present):
        raise ConfigError(f"trace has {len(present)} devices, need {n_devices}")
    width = min(rep.n_dims for rep in reports)
    if n_dims > width:
        raise ConfigError(f"trace has {width} dimensions, need {n_dims}")
    out: list[DeviceReport] = []
    for rep in reports:
        if rep.device_id >= n_devices:
            continue
        if rep.n_dims == n_dims:
            out.append(rep)
        else:
            out.append(
                DeviceReport(
                    rep.device_id,
                    rep.timestamp,
                    rep.values[:n_dims],
                    rep.missing_mask[:n_dims],
                )
            )
    return out
