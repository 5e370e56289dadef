import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from d2dmtc.clustering import (ClusteringSpec, Method, cluster_count, cluster_labels,
                               distance_clustering, distance_csi_clustering, farthest_point_init,
                               geometric_clustering, kmeans_clustering, nearest_centroid, polar,
                               run_clustering, sector_layout)
from d2dmtc.geometry import Device

R = 866.0


def _devices(xy):
    return [Device(i, (float(x), float(y), 1.5), None, 0) for i, (x, y) in enumerate(xy)]


def _disc_points(rng, n, r_max=R, r_min=0.0):
    r = np.sqrt(rng.uniform(r_min ** 2, r_max ** 2, n))
    a = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([r * np.cos(a), r * np.sin(a)])


def test_geometric_golden_counts():
    # annulus / a_sector = pi (866^2 - 100^2) / 40000 = 58.1 before ring rounding
    assert math.floor(math.pi * (R ** 2 - 100 ** 2) / 40000) == 58
    layout = sector_layout(R, ClusteringSpec(a_sector=40000))
    assert [(r0, r1) for r0, r1, _ in layout] == [(100, 300), (300, 500), (500, 700), (700, R)]
    assert [n for *_, n in layout] == [7, 13, 19, 21]
    assert cluster_count(R, ClusteringSpec(a_sector=40000)) == 60
    assert cluster_count(R, ClusteringSpec(a_sector=2500)) == 937


def test_geometric_rejects_oversized_sector():
    with pytest.raises(ValueError):
        cluster_count(R, ClusteringSpec(a_sector=math.pi * R * R))


def test_geometric_membership_matches_bounds(small_deployment):
    # oracle: direct (start, end] checks on radius and angle for every region
    devices, table, _ = small_deployment
    for a in (40000.0, 2500.0):
        clusters = geometric_clustering(devices, R, ClusteringSpec(a_sector=a))
        for d in devices:
            r = math.hypot(d.position[0], d.position[1])
            phi = math.atan2(d.position[1], d.position[0])
            phi = phi + 2 * math.pi if phi <= 0 else phi
            hits = [c.id for c in clusters if c.region.r_start < r <= c.region.r_end
                    and c.region.phi_start < phi <= c.region.phi_end]
            owner = [c.id for c in clusters if d.id in c.members]
            if r <= 100.0:
                assert owner == []
            else:
                assert owner == hits and len(hits) == 1


def test_geometric_inner_circle_and_colocated():
    devs = _devices([(10.0, 10.0), (200.0, 50.0), (200.0, 50.0)])
    clusters = geometric_clustering(devs, R, ClusteringSpec())
    labels = cluster_labels(clusters, [0, 1, 2])
    assert labels[0] == -1 and labels[1] == labels[2] >= 0


def test_polar_angle_range():
    _, phi = polar(np.array([1.0, 0.0, -1.0, 0.0]), np.array([0.0, 1.0, 0.0, -1.0]))
    assert np.allclose(phi, [2 * np.pi, np.pi / 2, np.pi, 3 * np.pi / 2])


def test_nearest_centroid_matches_exhaustive(small_deployment):
    devices, table, links = small_deployment
    for method in (Method.DISTANCE, Method.DISTANCE_CSI):
        spec = ClusteringSpec(method=method, k=12, rng_seed=4, snr_threshold_centroid=0.0)
        clusters = run_clustering(table, R, spec, links.snr_db)
        cen = {c.id: c.centroid for c in clusters}
        for c in clusters:
            for m in c.members:
                d = devices[m]
                dist = {k: (d.position[0] - v[0]) ** 2 + (d.position[1] - v[1]) ** 2
                        for k, v in cen.items()}
                best = min(dist.values())
                assert dist[c.id] == best
                # ties go to the lower cluster id, centroid devices own their cluster
                if m != c.centroid_id:
                    assert c.id == min(k for k, v in dist.items() if v == best)


def test_distance_k_one_and_saturation():
    rng = np.random.default_rng(0)
    devs = _devices(_disc_points(rng, 40, r_min=120))
    one = distance_clustering(devs, ClusteringSpec(method=Method.DISTANCE, k=1))
    assert len(one) == 1 and len(one[0].members) == 40
    allk = kmeans_clustering(devs, ClusteringSpec(method=Method.KMEANS, k=40))
    assert sorted(len(c.members) for c in allk) == [1] * 40


def test_distance_order_invariant():
    rng = np.random.default_rng(1)
    devs = _devices(_disc_points(rng, 80, r_min=120))
    spec = ClusteringSpec(method=Method.DISTANCE, k=7, rng_seed=9)
    a = distance_clustering(devs, spec)
    b = distance_clustering(list(reversed(devs)), spec)
    assert a == b


def test_kmeans_square_corners_diagonal():
    devs = _devices([(200, 200), (-200, 200), (-200, -200), (200, -200)])
    x = np.array([d.position[0] for d in devs])
    y = np.array([d.position[1] for d in devs])
    init = farthest_point_init(x, y, 2)
    best = max(itertools.combinations(range(4), 2),
               key=lambda p: math.dist(devs[p[0]].position, devs[p[1]].position))
    assert math.dist(devs[init[0]].position, devs[init[1]].position) == \
        math.dist(devs[best[0]].position, devs[best[1]].position)


def test_kmeans_centroid_member_nearest_mean():
    rng = np.random.default_rng(2)
    devs = _devices(_disc_points(rng, 150, r_min=120))
    clusters = kmeans_clustering(devs, ClusteringSpec(method=Method.KMEANS, k=9))
    for c in clusters:
        assert c.centroid_id in c.members
        pts = np.array([devs[m].position[:2] for m in c.members])
        mean = pts.mean(axis=0)
        d = ((pts - mean) ** 2).sum(axis=1)
        assert ((np.array(devs[c.centroid_id].position[:2]) - mean) ** 2).sum() == pytest.approx(d.min())


def test_csi_centroids_above_threshold(small_deployment):
    devices, table, links = small_deployment
    spec = ClusteringSpec(method=Method.DISTANCE_CSI, k=10, rng_seed=5, snr_threshold_centroid=8.0)
    clusters = distance_csi_clustering(table, links.snr_db, spec)
    snr = dict(zip(table.ids.tolist(), links.snr_db.tolist()))
    assert all(snr[c.centroid_id] > 8.0 for c in clusters)
    with pytest.raises(ValueError):
        distance_csi_clustering(table, links.snr_db,
                                ClusteringSpec(method=Method.DISTANCE_CSI, k=3,
                                               snr_threshold_centroid=1e9))


def test_csi_degenerate_threshold_equals_distance(small_deployment):
    _, table, links = small_deployment
    a = distance_clustering(table, ClusteringSpec(method=Method.DISTANCE, k=8, rng_seed=3))
    b = distance_csi_clustering(table, links.snr_db, ClusteringSpec(
        method=Method.DISTANCE_CSI, k=8, rng_seed=3, snr_threshold_centroid=-math.inf))
    assert [c.members for c in a] == [c.members for c in b]


def test_k_exceeds_eligible():
    devs = _devices([(200, 0), (0, 300)])
    for m in (Method.KMEANS, Method.DISTANCE):
        with pytest.raises(ValueError):
            run_clustering_spec = ClusteringSpec(method=m, k=3)
            (kmeans_clustering if m == Method.KMEANS else distance_clustering)(devs, run_clustering_spec)


def test_cross_method_k(small_deployment):
    _, table, links = small_deployment
    geo = run_clustering(table, R, ClusteringSpec(a_sector=40000))
    for m in (Method.KMEANS, Method.DISTANCE, Method.DISTANCE_CSI):
        out = run_clustering(table, R, ClusteringSpec(method=m, a_sector=40000,
                                                      snr_threshold_centroid=-50.0), links.snr_db)
        assert len(out) == len(geo) == 60


# --- properties ------------------------------------------------------------------

@st.composite
def point_sets(draw, min_n=1, max_n=60):
    n = draw(st.integers(min_n, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    pts = _disc_points(rng, n)
    # a few exact duplicates to exercise ties
    if n > 3 and draw(st.booleans()):
        pts[1] = pts[0]
    return pts, seed


@given(point_sets(), st.sampled_from([2500.0, 10000.0, 40000.0, 160000.0]))
def test_geometric_partition_and_containment(ps, a):
    pts, _ = ps
    devs = _devices(pts)
    clusters = geometric_clustering(devs, R, ClusteringSpec(a_sector=a))
    count = np.zeros(len(devs), dtype=int)
    for c in clusters:
        for m in c.members:
            count[m] += 1
            r, phi = polar(np.array([pts[m, 0]]), np.array([pts[m, 1]]))
            assert c.region.contains(float(r[0]), float(phi[0]))
    r = np.hypot(pts[:, 0], pts[:, 1])
    assert np.array_equal(count, (r > 100.0).astype(int))


@given(point_sets(min_n=2), st.sampled_from([Method.KMEANS, Method.DISTANCE, Method.DISTANCE_CSI]),
       st.integers(1, 12))
def test_centroid_methods_partition_and_nearest(ps, method, k):
    pts, seed = ps
    devs = _devices(pts)
    elig = np.hypot(pts[:, 0], pts[:, 1]) > 100.0
    k = min(k, int(elig.sum()))
    if k < 1:
        return
    spec = ClusteringSpec(method=method, k=k, rng_seed=seed % 1000, snr_threshold_centroid=-1.0)
    snr = np.linspace(-5, 5, len(devs))
    if method == Method.DISTANCE_CSI and np.count_nonzero(snr[elig] > -1.0) < k:
        return
    if method == Method.KMEANS:
        clusters = kmeans_clustering(devs, spec)
    elif method == Method.DISTANCE:
        clusters = distance_clustering(devs, spec)
    else:
        clusters = distance_csi_clustering(devs, snr, spec)
    seen = [m for c in clusters for m in c.members]
    assert sorted(seen) == sorted(np.flatnonzero(elig).tolist())
    assert all(c.centroid_id in c.members for c in clusters)
    if method != Method.KMEANS:
        cx = np.array([c.centroid[0] for c in clusters])
        cy = np.array([c.centroid[1] for c in clusters])
        for c in clusters:
            for m in c.members:
                d = (cx - pts[m, 0]) ** 2 + (cy - pts[m, 1]) ** 2
                assert d[c.id] <= d.min()
    # seed determinism
    again = {Method.KMEANS: lambda: kmeans_clustering(devs, spec),
             Method.DISTANCE: lambda: distance_clustering(devs, spec),
             Method.DISTANCE_CSI: lambda: distance_csi_clustering(devs, snr, spec)}[method]()
    assert again == clusters


@given(st.integers(1, 30), st.integers(0, 10**6))
def test_nearest_centroid_lower_index_on_ties(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(-5, 5, n).astype(float)
    y = rng.integers(-5, 5, n).astype(float)
    cx = rng.integers(-5, 5, 4).astype(float)
    cy = rng.integers(-5, 5, 4).astype(float)
    got = nearest_centroid(x, y, cx, cy)
    for i in range(n):
        d = [(x[i] - cx[j]) ** 2 + (y[i] - cy[j]) ** 2 for j in range(4)]
        assert got[i] == d.index(min(d))
