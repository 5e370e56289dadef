import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from d2dmtc.channel import ChannelParams, RadioLink, cellular_links, d2d_pathloss_arrays
from d2dmtc.clustering import Cluster, ClusteringSpec, Method, cluster_labels, run_clustering
from d2dmtc.energy import DAY_S, PowerModel
from d2dmtc.geometry import Device, DeviceTable, Mode, build_environment, deploy_devices
from d2dmtc.tms import (ModeAssignment, TmsPolicy, cellular_energy_arrays, classify_cluster,
                        life_days, projected_cellular_life, select_relay, tms_round)

PM = PowerModel()
POL = TmsPolicy()
DEV = Device(0, (300.0, 0.0, 1.5), 0, 0)


def test_policy_defaults_and_validation():
    assert (POL.bl_threshold, POL.snr_threshold, POL.d2d_pathloss_max, POL.delta_t) == \
        (3650.0, 3.0, 136.0, DAY_S)
    for bad in ({"bl_threshold": 0.0}, {"snr_threshold": math.inf}, {"delta_t": -1.0},
                {"relay_criterion": "nearest"}, {"relay_cap": 0}):
        with pytest.raises(ValueError):
            TmsPolicy(**bad)


def test_projected_life_zero_rate_marker():
    assert projected_cellular_life(DEV, RadioLink(0, -1, 200.0, -20.0, 0.0), PM) == 0.0


def test_projected_life_matches_closed_form():
    for rate in (27.4e3, 42.2e3, 100e3, 864e3):
        link = RadioLink(0, -1, 150.0, 0.0, rate)
        traced = projected_cellular_life(DEV, link, PM, dl_rate_bps=500e3)
        e = cellular_energy_arrays([rate], [500e3], PM)[0]
        assert traced == pytest.approx(6500.0 / e, rel=1e-9)


def test_cellular_energy_hand_ledger():
    # 24 reports of sync + CP + 2000 bits at 100 kb/s + 256-bit ack at 1 Mb/s
    e = cellular_energy_arrays([100e3], [1e6], PM)[0]
    per = 0.01 * 0.1 + 0.01 * 0.2 + 0.02 * tx_w() + 256e-6 * 0.1
    busy = 24 * (0.01 + 0.01 + 0.02 + 256e-6) + 4 * 0.01
    hand = 24 * per + 4 * 0.01 * 0.1 + (DAY_S - busy) * 1e-5
    assert e == pytest.approx(hand, rel=1e-12)


def tx_w():
    return 10 ** (-0.7) / 0.45 + 0.06


def test_life_ratio_identities():
    assert life_days(6500.0, 1e-5 * DAY_S, DAY_S) == pytest.approx(7523.15, abs=0.01)
    assert life_days(6500.0, 2.0, DAY_S) == pytest.approx(2 * life_days(6500.0, 4.0, DAY_S))
    assert life_days(6500.0, math.inf, DAY_S) == 0.0


def test_classify_examples():
    life = {1: 11 * 365.0, 2: 11 * 365.0, 3: 100.0, 4: 3650.0, 5: 0.0}
    snr = {1: 5.0, 2: 2.9, 3: 10.0, 4: 20.0, 5: -30.0}
    cls = classify_cluster(life, life, snr, POL)
    assert cls.relays == [1]
    assert cls.remotes == [3, 5]
    # exact equality is neither remote nor relay
    assert cls.cellular == [2, 4]
    none = classify_cluster([1, 2], {1: 4000.0, 2: 5000.0}, {1: 9.0, 2: 9.0}, POL)
    assert none.remotes == [] and none.relays == [1, 2]


def test_select_relay_examples():
    assert select_relay(0, [7, 8], {7: 130.0, 8: 135.0}, POL) == 7
    assert select_relay(0, [7], {7: 136.1}, POL) is None
    assert select_relay(0, [7], {7: 136.0}, POL) == 7
    assert select_relay(0, [7, 8], {7: 130.0, 8: 135.0}, POL, rejected={(0, 7)}) == 8
    assert select_relay(0, [9, 8], {9: 130.0, 8: 130.0}, POL) == 8
    cap = TmsPolicy(relay_cap=1)
    assert select_relay(0, [7, 8], {7: 130.0, 8: 135.0}, cap, load={7: 1}) == 8
    snr_pol = TmsPolicy(relay_criterion="max_snr")
    assert select_relay(0, [7, 8], {7: 130.0, 8: 135.0}, snr_pol, relay_snr={7: 4.0, 8: 9.0}) == 8


def test_rejection_replay(small_deployment):
    """Re-running after recorded rejections never re-offers a rejected relay."""
    devices, table, links = small_deployment
    clusters = run_clustering(table, 866.0, ClusteringSpec(a_sector=40000))
    rejected = set()
    for _ in range(4):
        res = tms_round(clusters, table, links, POL, PM, rejected=rejected)
        pairs = {(i, a.paired_relay) for i, a in res.assignments.items() if a.mode == Mode.REMOTE}
        assert not (pairs & rejected)
        rejected |= set(sorted(pairs)[:3])


def test_empty_and_singletons(small_deployment):
    devices, table, links = small_deployment
    empty = DeviceTable.from_devices([], build_environment(866.0, 0))
    assert tms_round([], empty, cellular_links(build_environment(866.0, 0), empty, ChannelParams()),
                     POL, PM).assignments == {}
    singles = [Cluster(k, (int(i),)) for k, i in enumerate(table.ids)]
    res = tms_round(singles, table, links, POL, PM)
    assert {a.mode for a in res.assignments.values()} <= {Mode.CELLULAR, Mode.UNREACHABLE}


def test_baseline_modes(small_deployment):
    _, table, links = small_deployment
    res = tms_round([], table, links, POL, PM, d2d=False)
    for i, a in res.assignments.items():
        assert a.mode == (Mode.CELLULAR if links.rate_bps[table.row(i)] > 0 else Mode.UNREACHABLE)


def test_idempotent(small_deployment):
    _, table, links = small_deployment
    clusters = run_clustering(table, 866.0, ClusteringSpec(a_sector=40000))
    assert tms_round(clusters, table, links, POL, PM).assignments == \
        tms_round(clusters, table, links, POL, PM).assignments


def test_assignment_invariant():
    with pytest.raises(ValueError):
        ModeAssignment(1, Mode.REMOTE, None)
    with pytest.raises(ValueError):
        ModeAssignment(1, Mode.RELAY, 4)


# --- properties ------------------------------------------------------------------

_ENV = build_environment(866.0, 5)
_CH = ChannelParams()


@st.composite
def scenarios(draw):
    n = draw(st.integers(2, 40))
    seed = draw(st.integers(0, 2**31 - 1))
    devices = deploy_devices(_ENV, n, seed)
    table = DeviceTable.from_devices(devices, _ENV)
    links = cellular_links(_ENV, table, _CH)
    method = draw(st.sampled_from([Method.GEOMETRIC, Method.DISTANCE]))
    spec = ClusteringSpec(method=method, a_sector=draw(st.sampled_from([40000.0, 160000.0])),
                          r_in=0.0, rng_seed=seed,
                          k=draw(st.integers(1, n)) if method == Method.DISTANCE else None)
    clusters = run_clustering(table, 866.0, spec, links.snr_db)
    pol = TmsPolicy(snr_threshold=draw(st.floats(0.5, 20.0)),
                    d2d_pathloss_max=draw(st.floats(80.0, 160.0)))
    return table, links, clusters, pol


@given(scenarios())
def test_tms_invariants(sc):
    table, links, clusters, pol = sc
    res = tms_round(clusters, table, links, pol, PM, channel=_CH)
    a = res.assignments
    assert sorted(a) == sorted(table.ids.tolist())
    ec = cellular_energy_arrays(links.rate_bps, links.dl_rate_bps, PM)
    life = dict(zip(table.ids.tolist(), life_days(PM.capacity_j, ec, DAY_S).tolist()))
    snr = dict(zip(table.ids.tolist(), links.snr_db.tolist()))
    label = dict(zip(table.ids.tolist(), cluster_labels(clusters, table.ids).tolist()))
    for i, x in a.items():
        if x.mode == Mode.RELAY:
            assert snr[i] >= pol.snr_threshold and life[i] > pol.bl_threshold
            assert any(y.paired_relay == i for y in a.values())
        elif x.mode == Mode.REMOTE:
            j = x.paired_relay
            assert a[j].mode == Mode.RELAY
            assert label[i] == label[j] >= 0
            pl = float(d2d_pathloss_arrays(table, table.row(i), table.row(j), _CH, shadowing=False))
            assert pl <= pol.d2d_pathloss_max
            assert life[i] < pol.bl_threshold
        elif x.mode == Mode.UNREACHABLE:
            assert links.rate_bps[table.row(i)] == 0


@given(scenarios(), st.floats(0.0, 10.0))
def test_relay_set_shrinks_with_threshold(sc, bump):
    table, links, clusters, pol = sc
    ec = cellular_energy_arrays(links.rate_bps, links.dl_rate_bps, PM)
    life = dict(zip(table.ids.tolist(), life_days(PM.capacity_j, ec, DAY_S).tolist()))
    snr = dict(zip(table.ids.tolist(), links.snr_db.tolist()))
    hi = TmsPolicy(snr_threshold=pol.snr_threshold + bump)
    for c in clusters:
        lo_set = set(classify_cluster(c.members, life, snr, pol).relays)
        hi_set = set(classify_cluster(c.members, life, snr, hi).relays)
        assert hi_set <= lo_set
