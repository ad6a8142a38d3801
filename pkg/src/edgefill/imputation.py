"""Replacement-value computation: local view, group view, and their blend.

A missing cell can be estimated two ways. The local view extrapolates the
device's own window history for that dimension with a small autoregression.
The group view takes a weighted geometric mean of the latest values reported
by the most similar peers, weighting each peer by the inverse of its
Mahalanobis distance so that historically closer devices count more.

The blended model (PBM) mixes the two with a sigmoid weight

    w_local = 1 / (1 + exp(alpha * sigma - beta))

driven by the deviation sigma of the device's own window: a stable window
means the device is predictable from itself, so the local view dominates;
a volatile window shifts trust to the peers. Two baselines share the same
peer machinery: DBM uses the group view alone and AM replaces the geometric
mean with a plain average of peer values.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .correlation import (
    DEFAULT_DISTANCE_FLOOR,
    DEFAULT_RIDGE,
    MD_MODES,
    PeerGroup,
    select_peers,
)
from .errors import (
    DegenerateWeightsError,
    ImputationImpossibleError,
    NoLocalDataError,
    WgmDomainError,
)
from .stream import StreamSlice, WindowStore

SIGMA_MODES = ("absolute", "relative")
WGM_WEIGHTINGS = ("inverse", "literal")

# Ridge for the local regression's normal equations, relative to the mean
# diagonal of the centered Gram matrix. An absolute ridge would bias the
# fit noticeably on near-constant windows, where the Gram itself is tiny.
REGRESSION_RIDGE = 1e-8


@dataclass(frozen=True)
class BlendParams:
    """Knobs shared by every imputer.

    alpha and beta shape the sigmoid that converts window deviation into
    the local-view weight; top_k bounds the peer group; md_floor guards
    divisions by a zero Mahalanobis distance; ridge regularizes covariance
    estimates. The mode strings select documented interpretation variants
    and default to the readings used throughout the package.
    """

    alpha: float = 20.0
    beta: float = 2.0
    top_k: int = 4
    md_floor: float = DEFAULT_DISTANCE_FLOOR
    ridge: float = DEFAULT_RIDGE
    ar_order: int = 3
    sigma_mode: str = "relative"
    wgm_weighting: str = "inverse"
    md_mode: str = "means"
    cs_clamp: bool = True

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if not self.md_floor > 0.0:
            raise ValueError(f"md_floor must be > 0, got {self.md_floor}")
        if self.ridge < 0.0:
            raise ValueError(f"ridge must be >= 0, got {self.ridge}")
        if self.ar_order < 1:
            raise ValueError(f"ar_order must be >= 1, got {self.ar_order}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}, got {self.sigma_mode!r}")
        if self.wgm_weighting not in WGM_WEIGHTINGS:
            raise ValueError(
                f"wgm_weighting must be one of {WGM_WEIGHTINGS}, got {self.wgm_weighting!r}"
            )
        if self.md_mode not in MD_MODES:
            raise ValueError(f"md_mode must be one of {MD_MODES}, got {self.md_mode!r}")


@dataclass(frozen=True)
class LocalEstimate:
    """Next-step estimate from a device's own history.

    `sigma` is the sample standard deviation of the window values (0 when
    fewer than two points exist). `method` records which tier produced the
    value: the lagged least-squares fit, the linear-trend fallback, or the
    last observed value when fewer than three points were available.
    """

    value: float
    sigma: float
    method: str


@dataclass(frozen=True)
class ImputationOutcome:
    """A replacement value together with its decomposition.

    When both views exist, `value` is exactly
    `local_weight * local.value + (1 - local_weight) * group_value`.
    Degenerate paths record local_weight 1.0 (no peers) or 0.0 (no local
    history) so the identity still describes what happened.
    """

    value: float
    local: Optional[LocalEstimate]
    group_value: Optional[float]
    local_weight: float
    group: PeerGroup
    dimension: int
    elapsed: float = field(compare=False, default=0.0)


def local_regress(window: StreamSlice, order: int = 3) -> LocalEstimate:
    """Estimate the value one step past the end of a window slice.

    Builds lagged rows (order consecutive observed values predict the next)
    and solves the centered normal equations with a small relative ridge.
    With fewer than order + 2 such rows the data cannot support the fit and
    a linear trend over the observed positions is used instead; with fewer
    than three points even a trend is meaningless and the last value is
    returned as-is. An empty slice raises NoLocalDataError.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    n = len(window.values)
    if n == 0:
        raise NoLocalDataError(
            f"device {window.device_id} has no usable history in dimension {window.dimension}"
        )
    vals = np.asarray(window.values, dtype=float)
    sigma = float(np.std(vals, ddof=1)) if n >= 2 else 0.0

    n_rows = n - order
    if n_rows >= order + 2:
        x = np.empty((n_rows, order), dtype=float)
        for lag in range(order):
            x[:, lag] = vals[lag : lag + n_rows]
        y = vals[order:]
        x_mean = x.mean(axis=0)
        y_mean = float(y.mean())
        xc = x - x_mean
        gram = xc.T @ xc
        mean_diag = float(np.mean(np.diag(gram)))
        lam = REGRESSION_RIDGE * mean_diag if mean_diag > 0.0 else REGRESSION_RIDGE
        coef = np.linalg.solve(gram + lam * np.eye(order), xc.T @ (y - y_mean))
        intercept = y_mean - float(x_mean @ coef)
        value = intercept + float(vals[-order:] @ coef)
        return LocalEstimate(float(value), sigma, "lagged_ols")

    if n >= 3:
        pos = np.asarray(window.positions, dtype=float)
        slope, intercept = np.polyfit(pos, vals, 1)
        value = intercept + slope * (pos[-1] + 1.0)
        return LocalEstimate(float(value), sigma, "linear_trend")

    return LocalEstimate(float(vals[-1]), sigma, "last_value")


def weighted_geometric_mean(values: Sequence[float], weights: Sequence[float]) -> float:
    """(prod v_i^w_i)^(1/sum w), evaluated as exp(sum w ln v / sum w).

    The log-domain form avoids overflow of the direct product. Values must
    be strictly positive (WgmDomainError otherwise) and at least one weight
    must be nonzero (DegenerateWeightsError otherwise).
    """
    vals = np.asarray(values, dtype=float)
    wts = np.asarray(weights, dtype=float)
    if vals.size == 0 or vals.shape != wts.shape:
        raise ValueError(
            f"values ({vals.shape}) and weights ({wts.shape}) must be equal-length and nonempty"
        )
    if np.any(wts < 0.0):
        raise ValueError("weights must be >= 0")
    if np.any(vals <= 0.0):
        raise WgmDomainError(f"geometric mean needs positive values, got min {vals.min()}")
    total = float(wts.sum())
    if total <= 0.0:
        raise DegenerateWeightsError("all weights are zero")
    return float(np.exp(float(wts @ np.log(vals)) / total))


def group_estimate(
    group: PeerGroup,
    store: WindowStore,
    dimension: int,
    *,
    md_floor: float = DEFAULT_DISTANCE_FLOOR,
    weighting: str = "inverse",
) -> Optional[float]:
    """Weighted geometric mean of the peers' latest values in one dimension.

    Members whose latest report masks the dimension are dropped; if none
    remain the group view is simply absent and None is returned. Weights
    are 1/max(md, floor) by default so nearer peers dominate; "literal"
    uses max(md, floor) itself. Non-positive values are handled by shifting
    all values up by |min| + 1, averaging, and shifting back, which keeps
    the mean inside the value range at the cost of exact scale equivariance.
    """
    if weighting not in WGM_WEIGHTINGS:
        raise ValueError(f"weighting must be one of {WGM_WEIGHTINGS}, got {weighting!r}")
    values: list[float] = []
    weights: list[float] = []
    for member in group.members:
        latest = store.latest(member.peer_id)
        if dimension >= latest.n_dims or latest.missing_mask[dimension]:
            continue
        values.append(latest.values[dimension])
        floored = max(member.distance, md_floor)
        weights.append(1.0 / floored if weighting == "inverse" else floored)
    if not values:
        return None
    shift = 0.0
    lowest = min(values)
    if lowest <= 0.0:
        shift = abs(lowest) + 1.0
    mean = weighted_geometric_mean([v + shift for v in values], weights)
    return mean - shift


def local_weight(sigma: float, params: BlendParams) -> float:
    """Sigmoid trust in the local view: 1 / (1 + exp(alpha*sigma - beta)).

    Strictly decreasing in sigma, range (0, 1). Evaluated branch-wise so a
    huge exponent saturates cleanly instead of overflowing.
    """
    if sigma < 0.0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    z = params.alpha * sigma - params.beta
    if z >= 0.0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


def _effective_sigma(local: LocalEstimate, window: StreamSlice, mode: str) -> float:
    """Window deviation fed to the sigmoid, optionally scale-normalized.

    "relative" divides by the mean absolute window value so that the same
    alpha and beta remain meaningful whether a sensor reports around 0.5
    or around 500. Falls back to the raw sigma for all-zero windows.
    """
    if mode == "absolute":
        return local.sigma
    scale = float(np.mean(np.abs(window.values))) if window.values else 0.0
    if scale <= 0.0:
        return local.sigma
    return local.sigma / scale


def impute_pbm(
    store: WindowStore,
    target_id: int,
    dimension: int,
    params: BlendParams = BlendParams(),
) -> ImputationOutcome:
    """Blend the local and group views into a replacement value.

    Either view may be missing: with no qualifying peers the local estimate
    is used alone (weight recorded as 1.0); with no local history the group
    view is used alone (weight 0.0); with neither, ImputationImpossibleError
    is raised. Elapsed wall time covers peer selection, regression, and the
    blend, matching what a live replacement would cost.
    """
    start = time.perf_counter()
    latest = store.latest(target_id)
    if not latest.is_masked(dimension):
        raise ValueError(f"dimension {dimension} of device {target_id} is not missing")
    group = select_peers(
        store,
        target_id,
        latest.masked_dims(),
        params.top_k,
        md_floor=params.md_floor,
        ridge=params.ridge,
        cs_clamp=params.cs_clamp,
        md_mode=params.md_mode,
    )
    group_value = group_estimate(
        group, store, dimension, md_floor=params.md_floor, weighting=params.wgm_weighting
    )
    window = store.window(target_id, dimension)
    try:
        local = local_regress(window, params.ar_order)
    except NoLocalDataError:
        local = None

    if local is not None and group_value is not None:
        weight = local_weight(_effective_sigma(local, window, params.sigma_mode), params)
        value = weight * local.value + (1.0 - weight) * group_value
    elif local is not None:
        weight = 1.0
        value = local.value
    elif group_value is not None:
        weight = 0.0
        value = group_value
    else:
        raise ImputationImpossibleError(
            f"device {target_id} dimension {dimension}: no local history and no usable peers"
        )
    elapsed = time.perf_counter() - start
    return ImputationOutcome(value, local, group_value, weight, group, dimension, elapsed)


def impute_dbm(
    store: WindowStore,
    target_id: int,
    dimension: int,
    params: BlendParams = BlendParams(),
) -> ImputationOutcome:
    """Group view only: the peer weighted geometric mean, never the local fit."""
    start = time.perf_counter()
    latest = store.latest(target_id)
    if not latest.is_masked(dimension):
        raise ValueError(f"dimension {dimension} of device {target_id} is not missing")
    group = select_peers(
        store,
        target_id,
        latest.masked_dims(),
        params.top_k,
        md_floor=params.md_floor,
        ridge=params.ridge,
        cs_clamp=params.cs_clamp,
        md_mode=params.md_mode,
    )
    group_value = group_estimate(
        group, store, dimension, md_floor=params.md_floor, weighting=params.wgm_weighting
    )
    if group_value is None:
        raise ImputationImpossibleError(
            f"device {target_id} dimension {dimension}: no peer reports a usable value"
        )
    elapsed = time.perf_counter() - start
    return ImputationOutcome(group_value, None, group_value, 0.0, group, dimension, elapsed)


def impute_am(
    store: WindowStore,
    target_id: int,
    dimension: int,
    params: BlendParams = BlendParams(),
) -> ImputationOutcome:
    """Arithmetic mean of the selected peers' latest values in the dimension."""
    start = time.perf_counter()
    latest = store.latest(target_id)
    if not latest.is_masked(dimension):
        raise ValueError(f"dimension {dimension} of device {target_id} is not missing")
    group = select_peers(
        store,
        target_id,
        latest.masked_dims(),
        params.top_k,
        md_floor=params.md_floor,
        ridge=params.ridge,
        cs_clamp=params.cs_clamp,
        md_mode=params.md_mode,
    )
    values = []
    for member in group.members:
        peer_latest = store.latest(member.peer_id)
        if dimension < peer_latest.n_dims and not peer_latest.missing_mask[dimension]:
            values.append(peer_latest.values[dimension])
    if not values:
        raise ImputationImpossibleError(
            f"device {target_id} dimension {dimension}: no peer reports a usable value"
        )
    mean = float(np.mean(values))
    elapsed = time.perf_counter() - start
    return ImputationOutcome(mean, None, mean, 0.0, group, dimension, elapsed)
