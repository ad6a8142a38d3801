import math

import numpy as np
import pytest

from edgefill import DeviceReport, WindowStore
from edgefill.correlation import CorrelationResult, PeerGroup
from edgefill.errors import (
    DegenerateWeightsError,
    ImputationImpossibleError,
    NoLocalDataError,
    WgmDomainError,
)
from edgefill.imputation import (
    BlendParams,
    group_estimate,
    impute_am,
    impute_dbm,
    impute_pbm,
    local_regress,
    local_weight,
    weighted_geometric_mean,
)
from edgefill.stream import StreamSlice


def slice_of(values, positions=None):
    if positions is None:
        positions = tuple(range(len(values)))
    return StreamSlice(0, 0, tuple(float(v) for v in values), tuple(positions))


def rep(device, t, values, mask=None):
    if mask is None:
        mask = (False,) * len(values)
    return DeviceReport(device, t, tuple(values), tuple(mask))


# --- blend params -----------------------------------------------------------

def test_blend_params_defaults():
    p = BlendParams()
    assert (p.alpha, p.beta, p.top_k) == (20.0, 2.0, 4)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(alpha=0.0),
        dict(top_k=0),
        dict(md_floor=0.0),
        dict(ridge=-1.0),
        dict(ar_order=0),
        dict(sigma_mode="weird"),
        dict(wgm_weighting="both"),
        dict(md_mode="median"),
    ],
)
def test_blend_params_validation(kwargs):
    with pytest.raises(ValueError):
        BlendParams(**kwargs)


# --- local regression ---------------------------------------------------------

def test_local_regress_empty_slice():
    with pytest.raises(NoLocalDataError):
        local_regress(slice_of([]))


def test_local_regress_constant_window():
    est = local_regress(slice_of([4.5] * 10))
    assert est.method == "lagged_ols"
    assert est.value == pytest.approx(4.5, abs=1e-12)
    assert est.sigma == 0.0


def test_local_regress_ramp():
    est = local_regress(slice_of(range(1, 11)))
    assert est.method == "lagged_ols"
    # ridge bias is bounded by 1e-8 relative to the window scale
    assert est.value == pytest.approx(11.0, abs=1e-7)


def test_local_regress_two_points_falls_back_to_last_value():
    est = local_regress(slice_of([3.0, 9.0]))
    assert est.method == "last_value"
    assert est.value == 9.0


def test_local_regress_short_window_uses_linear_trend():
    # 5 points: too few lagged rows for order 3, trend is exact on a line
    est = local_regress(slice_of([2.0, 4.0, 6.0, 8.0, 10.0]))
    assert est.method == "linear_trend"
    assert est.value == pytest.approx(12.0, rel=1e-10)


def test_local_regress_trend_respects_gap_positions():
    # observations at positions 0,1,2,4 of a line in position; next is position 5
    est = local_regress(slice_of([1.0, 3.0, 5.0, 9.0], positions=(0, 1, 2, 4)))
    assert est.method == "linear_trend"
    assert est.value == pytest.approx(11.0, rel=1e-10)


def test_local_regress_sigma_is_sample_std():
    values = [1.0, 2.0, 4.0, 8.0]
    est = local_regress(slice_of(values))
    assert est.sigma == pytest.approx(float(np.std(values, ddof=1)), rel=1e-12)
    assert local_regress(slice_of([7.0])).sigma == 0.0


def test_local_regress_affine_both_tiers():
    rng = np.random.default_rng(20)
    for _ in range(300):
        a = float(rng.uniform(-20, 20))
        b = float(rng.uniform(-3, 3))
        n = int(rng.integers(3, 15))
        vals = [a + b * i for i in range(n)]
        est = local_regress(slice_of(vals))
        scale = max(1.0, max(abs(v) for v in vals))
        assert abs(est.value - (a + b * n)) <= 1e-8 * scale


def test_local_regress_order_validation():
    with pytest.raises(ValueError):
        local_regress(slice_of([1.0, 2.0]), order=0)


# --- weighted geometric mean ---------------------------------------------------

def test_wgm_plain_geometric_mean():
    assert weighted_geometric_mean([2.0, 8.0], [1.0, 1.0]) == pytest.approx(4.0, rel=1e-12)


def test_wgm_single_value():
    for w in (0.3, 1.0, 7.0):
        assert weighted_geometric_mean([5.5], [w]) == pytest.approx(5.5, rel=1e-12)


def test_wgm_hand_value():
    got = weighted_geometric_mean([1.0, 2.0, 4.0], [1.0, 2.0, 1.0])
    assert got == pytest.approx(2.0, rel=1e-12)


def test_wgm_domain_and_weight_errors():
    with pytest.raises(WgmDomainError):
        weighted_geometric_mean([1.0, -2.0], [1.0, 1.0])
    with pytest.raises(WgmDomainError):
        weighted_geometric_mean([0.0], [1.0])
    with pytest.raises(DegenerateWeightsError):
        weighted_geometric_mean([1.0, 2.0], [0.0, 0.0])
    with pytest.raises(ValueError):
        weighted_geometric_mean([1.0, 2.0], [1.0])
    with pytest.raises(ValueError):
        weighted_geometric_mean([1.0, 2.0], [1.0, -1.0])
    with pytest.raises(ValueError):
        weighted_geometric_mean([], [])


def test_wgm_matches_direct_product_oracle():
    rng = np.random.default_rng(21)
    for _ in range(500):
        n = int(rng.integers(1, 8))
        vals = rng.uniform(0.1, 10.0, n)
        wts = rng.uniform(0.0, 5.0, n)
        if wts.sum() == 0.0:
            wts[0] = 1.0
        direct = float(np.prod(vals**wts) ** (1.0 / wts.sum()))
        assert weighted_geometric_mean(vals, wts) == pytest.approx(direct, rel=1e-10)


def test_wgm_weight_scale_invariance():
    rng = np.random.default_rng(22)
    for _ in range(200):
        vals = rng.uniform(0.5, 4.0, 5)
        wts = rng.uniform(0.1, 2.0, 5)
        base = weighted_geometric_mean(vals, wts)
        for c in (0.001, 3.0, 1e6):
            assert weighted_geometric_mean(vals, c * wts) == pytest.approx(base, rel=1e-12)


def test_wgm_never_exceeds_weighted_arithmetic_mean():
    rng = np.random.default_rng(23)
    for _ in range(300):
        n = int(rng.integers(2, 7))
        vals = rng.uniform(0.05, 20.0, n)
        wts = rng.uniform(0.01, 3.0, n)
        wam = float(wts @ vals / wts.sum())
        assert weighted_geometric_mean(vals, wts) <= wam * (1 + 1e-12)


# --- group estimate ---------------------------------------------------------------

def _store_with_latest(latest_by_device, history_value=1.0):
    """Two-report windows whose newest values are as given."""
    store = WindowStore(10)
    for device, values in latest_by_device.items():
        mask = tuple(v is None for v in values)
        vals = tuple(math.nan if v is None else float(v) for v in values)
        store.ingest(rep(device, 1, (history_value,) * len(values)))
        store.ingest(DeviceReport(device, 2, vals, mask))
    return store


def _group(target, members):
    return PeerGroup(
        target,
        tuple(
            CorrelationResult(pid, 1.0, md, 1.0 / max(md, 1e-9), (0,)) for pid, md in members
        ),
    )


def test_group_estimate_single_peer():
    store = _store_with_latest({1: (6.5,)})
    got = group_estimate(_group(0, [(1, 2.0)]), store, 0)
    assert got == pytest.approx(6.5, rel=1e-12)


def test_group_estimate_equal_distances_is_geometric_mean():
    store = _store_with_latest({1: (2.0,), 2: (8.0,)})
    got = group_estimate(_group(0, [(1, 1.5), (2, 1.5)]), store, 0)
    assert got == pytest.approx(4.0, rel=1e-12)


def test_group_estimate_inverse_distance_oracle():
    store = _store_with_latest({1: (10.0,), 2: (20.0,)})
    got = group_estimate(_group(0, [(1, 1.0), (2, 3.0)]), store, 0)
    want = math.exp((math.log(10.0) + math.log(20.0) / 3.0) / (4.0 / 3.0))
    assert got == pytest.approx(want, rel=1e-12)
    assert got == pytest.approx(11.892, abs=1e-3)


def test_group_estimate_literal_weighting():
    store = _store_with_latest({1: (10.0,), 2: (20.0,)})
    got = group_estimate(_group(0, [(1, 1.0), (2, 3.0)]), store, 0, weighting="literal")
    want = math.exp((math.log(10.0) + 3.0 * math.log(20.0)) / 4.0)
    assert got == pytest.approx(want, rel=1e-12)


def test_group_estimate_drops_masked_members():
    store = _store_with_latest({1: (None,), 2: (8.0,)})
    got = group_estimate(_group(0, [(1, 1.0), (2, 1.0)]), store, 0)
    assert got == pytest.approx(8.0, rel=1e-12)


def test_group_estimate_absent_when_no_member_qualifies():
    store = _store_with_latest({1: (None,), 2: (None,)})
    assert group_estimate(_group(0, [(1, 1.0), (2, 1.0)]), store, 0) is None
    assert group_estimate(_group(0, []), store, 0) is None


def test_group_estimate_offset_shift_for_nonpositive_values():
    store = _store_with_latest({1: (-5.0,), 2: (3.0,)})
    got = group_estimate(_group(0, [(1, 1.0), (2, 1.0)]), store, 0)
    # shift by |-5| + 1 = 6, geometric mean of {1, 9} is 3, shift back
    assert got == pytest.approx(-3.0, rel=1e-12)
    # result stays within the value range
    assert -5.0 <= got <= 3.0


# --- sigmoid weight ------------------------------------------------------------

def test_local_weight_at_zero_sigma():
    assert local_weight(0.0, BlendParams()) == pytest.approx(0.8807970779778823, rel=1e-15)


def test_local_weight_exact_half_at_beta_over_alpha():
    assert local_weight(0.1, BlendParams()) == 0.5
    assert local_weight(4.0 / 8.0, BlendParams(alpha=8.0, beta=4.0)) == 0.5


def test_local_weight_tail():
    assert local_weight(10.0, BlendParams()) < 1e-8
    assert local_weight(1e6, BlendParams()) >= 0.0


def test_local_weight_strictly_decreasing():
    rng = np.random.default_rng(24)
    p = BlendParams()
    for _ in range(300):
        s = float(rng.uniform(0, 2))
        assert local_weight(s + 1e-6, p) < local_weight(s, p)


def test_local_weight_rejects_negative_sigma():
    with pytest.raises(ValueError):
        local_weight(-0.1, BlendParams())


# --- imputers -------------------------------------------------------------------

# deviation pattern with pooled per-device-centered covariance exactly I
_A = math.sqrt(15.0 / 8.0)
_UNIT_PATTERN = [
    (_A, 0.0), (-_A, 0.0), (_A, 0.0), (-_A, 0.0),
    (0.0, _A), (0.0, -_A), (0.0, _A), (0.0, -_A),
]


def _md_calibrated_store():
    """Target plus two peers at unit-covariance distances 1 and 3 in dims 1,2.

    Dimension 0 is masked throughout for the target and constant 10 / 20
    for the peers, so the group view of dim 0 has known weights.
    """
    store = WindowStore(10)
    means = {0: (0.0, 0.0), 1: (1.0, 0.0), 2: (3.0, 0.0)}
    dim0 = {0: None, 1: 10.0, 2: 20.0}
    for device, mean in means.items():
        for t, (dx, dy) in enumerate(_UNIT_PATTERN, start=1):
            head = dim0[device]
            values = (math.nan if head is None else head, mean[0] + dx, mean[1] + dy)
            mask = (head is None, False, False)
            store.ingest(DeviceReport(device, t, values, mask))
    return store


def test_impute_dbm_md_weighted_oracle():
    store = _md_calibrated_store()
    out = impute_dbm(store, 0, 0, BlendParams(top_k=4))
    want = math.exp((math.log(10.0) + math.log(20.0) / 3.0) / (4.0 / 3.0))
    assert out.value == pytest.approx(want, rel=1e-9)
    assert out.local is None
    assert out.local_weight == 0.0
    assert set(out.group.peer_ids()) == {1, 2}


def test_impute_am_mean_of_peers():
    store = _md_calibrated_store()
    out = impute_am(store, 0, 0, BlendParams(top_k=4))
    assert out.value == pytest.approx(15.0, rel=1e-12)


def test_impute_am_single_peer():
    store = WindowStore(10)
    for t in range(1, 6):
        store.ingest(rep(1, t, (4.0 + t, 1.0)))
        mask = (t == 5, False)
        vals = (math.nan if t == 5 else 4.0 + t, 1.0)
        store.ingest(DeviceReport(0, t, vals, mask))
    out = impute_am(store, 0, 0, BlendParams(top_k=4))
    assert out.value == 9.0


def test_impute_am_four_peers():
    store = WindowStore(10)
    for t in (1, 2):
        for d, v in enumerate((1.0, 2.0, 3.0, 4.0), start=1):
            store.ingest(rep(d, t, (v, v + 1.0)))
        mask = (t == 2, False)
        store.ingest(DeviceReport(0, t, (math.nan if t == 2 else 2.0, 3.0), mask))
    out = impute_am(store, 0, 0, BlendParams(top_k=4))
    assert out.value == pytest.approx(2.5, rel=1e-12)


def test_impute_requires_masked_dimension():
    store = WindowStore(10)
    for t in (1, 2):
        store.ingest(rep(0, t, (1.0,)))
        store.ingest(rep(1, t, (1.0,)))
    for impute in (impute_pbm, impute_dbm, impute_am):
        with pytest.raises(ValueError):
            impute(store, 0, 0, BlendParams())


def _constant_fleet(c=5.5, n_devices=5, n_ticks=12, n_dims=2):
    store = WindowStore(10)
    for t in range(1, n_ticks + 1):
        for d in range(n_devices):
            if d == 0 and t == n_ticks:
                store.ingest(
                    DeviceReport(0, t, (math.nan,) + (c,) * (n_dims - 1), (True,) + (False,) * (n_dims - 1))
                )
            else:
                store.ingest(rep(d, t, (c,) * n_dims))
    return store


def test_impute_pbm_constant_fleet_returns_constant():
    store = _constant_fleet(5.5)
    out = impute_pbm(store, 0, 0, BlendParams())
    assert out.value == pytest.approx(5.5, rel=1e-12)
    assert out.local.method == "lagged_ols"
    assert out.local.sigma == 0.0


def test_impute_dbm_constant_fleet_returns_constant():
    store = _constant_fleet(5.5)
    out = impute_dbm(store, 0, 0, BlendParams())
    assert out.value == pytest.approx(5.5, rel=1e-12)


def test_impute_pbm_blend_identity_and_containment():
    store = _md_calibrated_store()
    # give the target usable dim-0 history so both views exist
    store2 = WindowStore(10)
    rng = np.random.default_rng(25)
    for t in range(1, 9):
        for d in range(3):
            base = {0: 14.0, 1: 10.0, 2: 20.0}[d]
            masked = d == 0 and t == 8
            v0 = math.nan if masked else base + float(rng.normal(0, 0.3))
            row = _UNIT_PATTERN[t - 1]
            store2.ingest(
                DeviceReport(d, t, (v0, row[0] + d, row[1]), (masked, False, False))
            )
    out = impute_pbm(store2, 0, 0, BlendParams())
    assert out.local is not None and out.group_value is not None
    assert 0.0 < out.local_weight < 1.0
    expected = out.local_weight * out.local.value + (1.0 - out.local_weight) * out.group_value
    assert out.value == expected
    lo = min(out.local.value, out.group_value)
    hi = max(out.local.value, out.group_value)
    assert lo <= out.value <= hi


def test_impute_pbm_no_peers_uses_local_only():
    store = WindowStore(10)
    for t in range(1, 11):
        masked = t == 10
        store.ingest(
            DeviceReport(0, t, (math.nan if masked else float(t),), (masked,))
        )
    out = impute_pbm(store, 0, 0, BlendParams())
    assert out.local_weight == 1.0
    assert out.group_value is None
    assert len(out.group) == 0
    # nine observed values 1..9, the masked cell is the next step of the ramp
    assert out.value == pytest.approx(10.0, abs=1e-7)


def test_impute_pbm_no_local_uses_group_only():
    store = _md_calibrated_store()  # target dim 0 masked in every report
    out = impute_pbm(store, 0, 0, BlendParams())
    assert out.local is None
    assert out.local_weight == 0.0
    assert out.value == out.group_value


def test_impute_pbm_impossible_when_both_views_missing():
    store = WindowStore(10)
    for t in range(1, 4):
        store.ingest(DeviceReport(0, t, (math.nan, 1.0 + t), (True, False)))
    with pytest.raises(ImputationImpossibleError):
        impute_pbm(store, 0, 0, BlendParams())


def test_impute_dbm_and_am_fail_without_peers():
    store = WindowStore(10)
    for t in range(1, 11):
        masked = t == 10
        store.ingest(DeviceReport(0, t, (math.nan if masked else float(t),), (masked,)))
    for impute in (impute_dbm, impute_am):
        with pytest.raises(ImputationImpossibleError):
            impute(store, 0, 0, BlendParams())


def test_impute_elapsed_recorded():
    store = _constant_fleet()
    out = impute_pbm(store, 0, 0, BlendParams())
    assert out.elapsed > 0.0


def test_impute_pbm_extreme_alpha_converges_to_dbm():
    store2 = WindowStore(10)
    rng = np.random.default_rng(26)
    for t in range(1, 9):
        for d in range(3):
            base = {0: 14.0, 1: 10.0, 2: 20.0}[d]
            masked = d == 0 and t == 8
            v0 = math.nan if masked else base + float(rng.normal(0, 0.5))
            row = _UNIT_PATTERN[t - 1]
            store2.ingest(DeviceReport(d, t, (v0, row[0] + d, row[1]), (masked, False, False)))
    sharp = impute_pbm(store2, 0, 0, BlendParams(alpha=1e8))
    dbm = impute_dbm(store2, 0, 0, BlendParams())
    assert sharp.value == pytest.approx(dbm.value, rel=1e-6)


def test_impute_pbm_zero_sigma_large_beta_converges_to_local():
    store = _constant_fleet(5.5)
    out = impute_pbm(store, 0, 0, BlendParams(beta=50.0))
    assert out.local_weight == pytest.approx(1.0, abs=1e-12)
    assert out.value == pytest.approx(out.local.value, rel=1e-12)
