"""Pairwise device similarity and peer selection.

Two complementary measures feed one score. Cosine similarity compares the
latest report vectors (a snapshot of "what the devices say right now");
Mahalanobis distance compares window statistics under a pooled covariance
(a view of "how the devices have behaved lately"). The combined score is

    score = cosine / max(distance, floor)

so a peer ranks high only when it is both directionally aligned now and
historically close. The floor keeps the score finite for identical
histories, which should rank first rather than blow up.

All functions here are pure; they read immutable snapshots out of a
WindowStore and never mutate it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    InsufficientHistoryError,
    InsufficientOverlapError,
    SingularCovarianceError,
    UndefinedSimilarityError,
)
from .stream import WindowStore

DEFAULT_DISTANCE_FLOOR = 1e-9
DEFAULT_RIDGE = 1e-6

MD_MODES = ("means", "per_tick_sum")


@dataclass(frozen=True)
class CorrelationResult:
    """Similarity of one peer to the target device.

    `score` is always `cosine / max(distance, floor)` for the floor in
    force when the result was built. `dims_used` holds the dimensions both
    latest vectors were compared on: everything except the dimensions being
    imputed and those masked in either latest report.
    """

    peer_id: int
    cosine: float
    distance: float
    score: float
    dims_used: tuple[int, ...]


@dataclass(frozen=True)
class PeerGroup:
    """At most k peers of a target device, best score first.

    Ties on score break toward the smaller peer id so rankings do not
    depend on device enumeration order.
    """

    target_id: int
    members: tuple[CorrelationResult, ...]

    def __len__(self) -> int:
        return len(self.members)

    def peer_ids(self) -> tuple[int, ...]:
        return tuple(m.peer_id for m in self.members)


def cosine_similarity(
    a: Sequence[float],
    b: Sequence[float],
    dims: Iterable[int],
    *,
    clamp: bool = True,
) -> float:
    """Cosine of the angle between two vectors restricted to `dims`.

    With `clamp` (the default) negative cosines collapse to 0, treating
    anti-correlated peers as simply uncorrelated; pass clamp=False to keep
    the signed value. If exactly one vector is zero on `dims` the cosine
    is 0 by convention; if both are zero the angle is undefined and
    UndefinedSimilarityError is raised.
    """
    idx = sorted(set(int(d) for d in dims))
    if not idx:
        raise InsufficientOverlapError("no shared dimensions to compare on")
    av = np.asarray(a, dtype=float)[idx]
    bv = np.asarray(b, dtype=float)[idx]
    norm_a = float(np.linalg.norm(av))
    norm_b = float(np.linalg.norm(bv))
    if norm_a == 0.0 and norm_b == 0.0:
        raise UndefinedSimilarityError("both vectors are zero on the shared dimensions")
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    cs = float(np.dot(av, bv) / (norm_a * norm_b))
    cs = min(max(cs, -1.0), 1.0)
    if clamp and cs < 0.0:
        cs = 0.0
    return cs


def mahalanobis(x: Sequence[float], y: Sequence[float], cov: np.ndarray) -> float:
    """Distance sqrt((x-y)' S^-1 (x-y)) via the Cholesky factor of S.

    Raises SingularCovarianceError when S is not positive definite; callers
    normally regularize first (see estimate_covariance).
    """
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (diff.size, diff.size):
        raise ValueError(f"covariance shape {cov.shape} does not match vectors of size {diff.size}")
    if not np.any(diff):
        return 0.0
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance not positive definite") from exc
    z = np.linalg.solve(chol, diff)
    return float(np.sqrt(max(float(z @ z), 0.0)))


def _usable_rows(
    store: WindowStore, device_id: int, dims: Sequence[int]
) -> tuple[np.ndarray, list[int]]:
    """Window rows of a device that are unmasked on every dim, plus their timestamps."""
    rows: list[list[float]] = []
    stamps: list[int] = []
    for rep in store.reports(device_id):
        if any(d >= rep.n_dims or rep.missing_mask[d] for d in dims):
            continue
        rows.append([rep.values[d] for d in dims])
        stamps.append(rep.timestamp)
    if rows:
        return np.asarray(rows, dtype=float), stamps
    return np.empty((0, len(dims)), dtype=float), stamps


def estimate_covariance(
    store: WindowStore,
    device_a: int,
    device_b: int,
    dims: Sequence[int],
    *,
    ridge: float = DEFAULT_RIDGE,
) -> np.ndarray:
    """Pooled sample covariance of two devices' windows on `dims`, ridged.

    Rows are centered per device before pooling, so the estimate captures
    within-device variation and is not inflated by the devices sitting at
    different levels. Normalization is by n_pooled - 1. The ridge added is
    `ridge` times the mean diagonal (falling back to `ridge` itself when
    all pooled rows are identical), which keeps the matrix invertible for
    constant streams at a scale proportional to the data.
    """
    idx = sorted(set(int(d) for d in dims))
    if not idx:
        raise InsufficientOverlapError("no dimensions for covariance estimate")
    rows_a, _ = _usable_rows(store, device_a, idx)
    rows_b, _ = _usable_rows(store, device_b, idx)
    if len(rows_a) < 2 or len(rows_b) < 2:
        raise InsufficientHistoryError(
            f"need >= 2 usable rows per device on dims {idx}, "
            f"got {len(rows_a)} (device {device_a}) and {len(rows_b)} (device {device_b})"
        )
    pooled = np.vstack([rows_a - rows_a.mean(axis=0), rows_b - rows_b.mean(axis=0)])
    cov = pooled.T @ pooled / (len(pooled) - 1)
    mean_diag = float(np.mean(np.diag(cov)))
    lam = ridge * mean_diag if mean_diag > 0.0 else ridge
    return cov + lam * np.eye(len(idx))


def device_md(
    store: WindowStore,
    target_id: int,
    peer_id: int,
    dims: Sequence[int],
    *,
    ridge: float = DEFAULT_RIDGE,
    mode: str = "means",
) -> float:
    """Mahalanobis distance between two devices' recent behavior.

    mode="means" (default) measures the distance between the per-dimension
    window means. mode="per_tick_sum" instead sums the per-report distances
    over timestamps both devices reported usable rows for, rewarding peers
    that track the target tick by tick rather than merely on average.
    """
    if mode not in MD_MODES:
        raise ValueError(f"md mode must be one of {MD_MODES}, got {mode!r}")
    idx = sorted(set(int(d) for d in dims))
    cov = estimate_covariance(store, target_id, peer_id, idx, ridge=ridge)
    rows_t, ts_t = _usable_rows(store, target_id, idx)
    rows_p, ts_p = _usable_rows(store, peer_id, idx)
    if mode == "means":
        return mahalanobis(rows_t.mean(axis=0), rows_p.mean(axis=0), cov)
    by_stamp_t = dict(zip(ts_t, rows_t))
    by_stamp_p = dict(zip(ts_p, rows_p))
    common = sorted(set(by_stamp_t) & set(by_stamp_p))
    if not common:
        raise InsufficientHistoryError(
            f"devices {target_id} and {peer_id} share no usable timestamps"
        )
    return float(sum(mahalanobis(by_stamp_t[t], by_stamp_p[t], cov) for t in common))


def ensemble_score(cosine: float, distance: float, floor: float = DEFAULT_DISTANCE_FLOOR) -> float:
    """Combined score cosine / max(distance, floor)."""
    if floor <= 0.0:
        raise ValueError(f"distance floor must be > 0, got {floor}")
    if distance < 0.0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    return cosine / max(distance, floor)


def select_peers(
    store: WindowStore,
    target_id: int,
    missing_dims: Iterable[int],
    k: int,
    *,
    md_floor: float = DEFAULT_DISTANCE_FLOOR,
    ridge: float = DEFAULT_RIDGE,
    cs_clamp: bool = True,
    md_mode: str = "means",
) -> PeerGroup:
    """Rank every other device by ensemble score and keep the top k.

    Comparison dimensions exclude `missing_dims` and anything masked in
    either device's latest report. Peers that cannot be scored (no shared
    dimensions, too little history, degenerate covariance) are skipped, so
    the group may hold fewer than k members, possibly zero.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    target_latest = store.latest(target_id)
    excluded = set(int(d) for d in missing_dims) | set(target_latest.masked_dims())
    results: list[CorrelationResult] = []
    for peer_id in store.devices():
        if peer_id == target_id:
            continue
        peer_latest = store.latest(peer_id)
        dims = tuple(
            d
            for d in range(target_latest.n_dims)
            if d not in excluded
            and d < peer_latest.n_dims
            and not peer_latest.missing_mask[d]
        )
        if not dims:
            continue
        try:
            cs = cosine_similarity(target_latest.values, peer_latest.values, dims, clamp=cs_clamp)
            md = device_md(store, target_id, peer_id, dims, ridge=ridge, mode=md_mode)
        except (
            UndefinedSimilarityError,
            InsufficientOverlapError,
            InsufficientHistoryError,
            SingularCovarianceError,
        ):
            continue
        results.append(CorrelationResult(peer_id, cs, md, ensemble_score(cs, md, md_floor), dims))
    results.sort(key=lambda r: (-r.score, r.peer_id))
    return PeerGroup(target_id, tuple(results[:k]))
