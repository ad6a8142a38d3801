"""Device reports and per-device sliding windows over the latest reports.

Reports are immutable value objects. A masked position carries no readable
numeric content (loaders store NaN there); consumers must go through the
mask or through `StreamSlice`, which never exposes masked entries.

The `WindowStore` keeps, per device, the most recent `capacity` reports in
strict timestamp order and evicts the oldest report on overflow. There is
one writer per device buffer; because all stored values are immutable,
snapshots handed out by accessors stay valid across later ingests.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from .errors import (
    DeviceNotFoundError,
    DimensionBoundsError,
    SchemaError,
    SequencingError,
)


@dataclass(frozen=True)
class DeviceReport:
    """One timestamped multivariate measurement from one device.

    `missing_mask[d]` is True when dimension d is absent; the matching
    entry of `values` is then meaningless (NaN by convention).
    """

    device_id: int
    timestamp: int
    values: tuple[float, ...]
    missing_mask: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "missing_mask", tuple(bool(m) for m in self.missing_mask))
        if len(self.values) == 0:
            raise SchemaError("report needs at least one dimension")
        if len(self.values) != len(self.missing_mask):
            raise SchemaError(
                f"values ({len(self.values)}) and missing_mask "
                f"({len(self.missing_mask)}) lengths differ"
            )
        for d, (v, masked) in enumerate(zip(self.values, self.missing_mask)):
            if not masked and not math.isfinite(v):
                raise SchemaError(f"non-finite value {v} in unmasked dimension {d}")

    @property
    def n_dims(self) -> int:
        return len(self.values)

    def is_masked(self, dim: int) -> bool:
        if not 0 <= dim < self.n_dims:
            raise DimensionBoundsError(f"dimension {dim} outside [0, {self.n_dims})")
        return self.missing_mask[dim]

    def masked_dims(self) -> tuple[int, ...]:
        return tuple(d for d, m in enumerate(self.missing_mask) if m)


@dataclass(frozen=True)
class StreamSlice:
    """Unmasked values of one device/dimension, oldest first.

    `positions` are indices into the device's current window (0 = oldest
    retained report), strictly increasing. Masked entries are omitted but
    do not shift the positions of later entries.
    """

    device_id: int
    dimension: int
    values: tuple[float, ...]
    positions: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.values)


class WindowStore:
    """Per-device ring buffers of the most recent reports."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"window capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self._buffers: dict[int, deque[DeviceReport]] = {}

    def ingest(self, report: DeviceReport) -> None:
        """Append a report to its device buffer, evicting the oldest if full.

        Raises SequencingError when the timestamp is not strictly newer than
        the device's newest stored report, and SchemaError when the number
        of dimensions disagrees with the existing buffer.
        """
        buf = self._buffers.get(report.device_id)
        if buf is None:
            buf = deque(maxlen=self.capacity)
            self._buffers[report.device_id] = buf
        else:
            newest = buf[-1]
            if report.timestamp <= newest.timestamp:
                raise SequencingError(
                    f"device {report.device_id}: got t={report.timestamp} "
                    f"after t={newest.timestamp}"
                )
            if report.n_dims != newest.n_dims:
                raise SchemaError(
                    f"device {report.device_id}: report has {report.n_dims} "
                    f"dimensions, buffer holds {newest.n_dims}"
                )
        buf.append(report)

    def amend_latest(self, report: DeviceReport) -> None:
        """Replace the newest stored report with a repaired version.

        The replacement must carry the same timestamp and dimensionality.
        Used by the replay harness to feed ground-truth (or imputed) values
        back into the window after a missing cell has been scored.
        """
        buf = self._buffers.get(report.device_id)
        if not buf:
            raise DeviceNotFoundError(f"device {report.device_id} has no reports")
        newest = buf[-1]
        if report.timestamp != newest.timestamp:
            raise SequencingError(
                f"amend must keep timestamp {newest.timestamp}, got {report.timestamp}"
            )
        if report.n_dims != newest.n_dims:
            raise SchemaError(
                f"amend must keep {newest.n_dims} dimensions, got {report.n_dims}"
            )
        buf[-1] = report

    def latest(self, device_id: int) -> DeviceReport:
        """Newest report of a device; DeviceNotFoundError if it has none."""
        buf = self._buffers.get(device_id)
        if not buf:
            raise DeviceNotFoundError(f"device {device_id} has no reports")
        return buf[-1]

    def reports(self, device_id: int) -> tuple[DeviceReport, ...]:
        """Snapshot of a device's window, oldest first (empty if unknown)."""
        buf = self._buffers.get(device_id)
        return tuple(buf) if buf else ()

    def window(self, device_id: int, dimension: int) -> StreamSlice:
        """Unmasked values of one dimension across the device's window.

        A device with no stored reports yields an empty slice. A dimension
        outside the buffered reports' range raises DimensionBoundsError.
        """
        if dimension < 0:
            raise DimensionBoundsError(f"dimension {dimension} is negative")
        buf = self._buffers.get(device_id)
        if not buf:
            return StreamSlice(device_id, dimension, (), ())
        if dimension >= buf[-1].n_dims:
            raise DimensionBoundsError(
                f"dimension {dimension} outside [0, {buf[-1].n_dims})"
            )
        values = []
        positions = []
        for pos, rep in enumerate(buf):
            if not rep.missing_mask[dimension]:
                values.append(rep.values[dimension])
                positions.append(pos)
        return StreamSlice(device_id, dimension, tuple(values), tuple(positions))

    def devices(self) -> list[int]:
        """Sorted ids of devices with at least one stored report."""
        return sorted(d for d, buf in self._buffers.items() if buf)

    def size(self, device_id: int) -> int:
        buf = self._buffers.get(device_id)
        return len(buf) if buf else 0
