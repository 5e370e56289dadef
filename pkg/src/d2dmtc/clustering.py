"""Grouping of devices outside the inner circle into D2D clusters.

Four methods are provided: geometric ring/sector partitioning, a sequential
k-means variant whose centroids are always real devices, distance-based
clustering around random fixed centroids, and the same with centroids drawn
only from devices with a good cellular SNR.  Distances are horizontal; the BS
sits at the origin.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import DeviceTable

_CHUNK = 4096


class Method(str, enum.Enum):
    GEOMETRIC = "geometric"
    KMEANS = "kmeans"
    DISTANCE = "distance"
    DISTANCE_CSI = "distance-csi"


@dataclass(frozen=True)
class ClusteringSpec:
    method: Method = Method.GEOMETRIC
    a_sector: float = 40000.0
    k: int | None = None
    r_in: float = 100.0
    snr_threshold_centroid: float = 3.0
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.a_sector > 0:
            raise ValueError("a_sector must be positive")
        if self.r_in < 0:
            raise ValueError("r_in must be non-negative")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be at least 1")


@dataclass(frozen=True)
class Region:
    r_start: float
    r_end: float
    phi_start: float
    phi_end: float

    def contains(self, r: float, phi: float) -> bool:
        return self.r_start < r <= self.r_end and self.phi_start < phi <= self.phi_end


@dataclass(frozen=True)
class Cluster:
    id: int
    members: tuple[int, ...]
    centroid: tuple[float, float] | None = None
    centroid_id: int | None = None
    region: Region | None = None

    @property
    def empty(self) -> bool:
        return not self.members


def _columns(devices):
    if isinstance(devices, DeviceTable):
        return devices.ids, devices.x, devices.y
    ids = np.fromiter((d.id for d in devices), dtype=np.int64, count=len(devices))
    xy = np.array([d.position[:2] for d in devices], dtype=float).reshape(len(devices), 2)
    return ids, xy[:, 0], xy[:, 1]


def polar(x, y):
    """Radius and angle in (0, 2*pi] as used for sector bounds."""
    r = np.hypot(x, y)
    phi = np.arctan2(y, x)
    phi = np.where(phi <= 0, phi + 2 * np.pi, phi)
    return r, phi


def eligible_mask(x, y, r_in: float) -> np.ndarray:
    return np.hypot(x, y) > r_in


# --- geometric -----------------------------------------------------------------

def ring_edges(cell_radius: float, spec: ClusteringSpec) -> np.ndarray:
    width = math.sqrt(spec.a_sector)
    n = math.ceil((cell_radius - spec.r_in) / width - 1e-12)
    edges = spec.r_in + width * np.arange(n + 1)
    edges[-1] = cell_radius
    return edges


def sector_layout(cell_radius: float, spec: ClusteringSpec) -> list[tuple[float, float, int]]:
    """(r_start, r_end, sectors) per ring."""
    if not 0 <= spec.r_in < cell_radius:
        raise ValueError("need 0 <= r_in < cell_radius")
    annulus = math.pi * (cell_radius ** 2 - spec.r_in ** 2)
    if spec.a_sector > annulus:
        raise ValueError(f"a_sector {spec.a_sector} exceeds the annulus area {annulus:.1f}")
    edges = ring_edges(cell_radius, spec)
    out = []
    for r0, r1 in zip(edges[:-1], edges[1:]):
        area = math.pi * (r1 * r1 - r0 * r0)
        out.append((float(r0), float(r1), max(1, math.ceil(area / spec.a_sector - 1e-9))))
    return out


def cluster_count(cell_radius: float, spec: ClusteringSpec) -> int:
    return sum(n for _, _, n in sector_layout(cell_radius, spec))


def geometric_clustering(devices, cell_radius: float, spec: ClusteringSpec) -> list[Cluster]:
    if spec.method != Method.GEOMETRIC:
        raise ValueError("spec.method must be geometric")
    layout = sector_layout(cell_radius, spec)
    ids, x, y = _columns(devices)
    r, phi = polar(x, y)
    if np.any(r > cell_radius * (1 + 1e-12)):
        raise ValueError("device outside the cell radius")
    regions = []
    for r0, r1, n in layout:
        step = 2 * math.pi / n
        regions.extend(Region(r0, r1, s * step, (s + 1) * step) for s in range(n))
    edges = np.array([lay[0] for lay in layout] + [layout[-1][1]])
    counts = np.array([lay[2] for lay in layout])
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])

    elig = r > spec.r_in
    ring = np.clip(np.searchsorted(edges, r, side="left") - 1, 0, len(layout) - 1)
    n_sec = counts[ring]
    sec = np.clip(np.ceil(phi / (2 * np.pi / n_sec)).astype(np.int64) - 1, 0, n_sec - 1)
    label = np.where(elig, offsets[ring] + sec, -1)
    members = _group(ids, label, len(regions))
    return [Cluster(c, members[c], region=regions[c]) for c in range(len(regions))]


def _group(ids, label, k) -> list[tuple[int, ...]]:
    order = np.lexsort((ids, label))
    lab = label[order]
    out = [()] * k
    starts = np.searchsorted(lab, np.arange(k), side="left")
    ends = np.searchsorted(lab, np.arange(k), side="right")
    for c in range(k):
        out[c] = tuple(int(i) for i in ids[order[starts[c]:ends[c]]])
    return out


# --- centroid based --------------------------------------------------------------

def nearest_centroid(x, y, cx, cy) -> np.ndarray:
    """Index of the nearest centroid; ties go to the lower index."""
    out = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), _CHUNK):
        dx = x[s:s + _CHUNK, None] - cx[None, :]
        dy = y[s:s + _CHUNK, None] - cy[None, :]
        out[s:s + _CHUNK] = np.argmin(dx * dx + dy * dy, axis=1)
    return out


def _eligible_sorted(devices, r_in):
    ids, x, y = _columns(devices)
    order = np.argsort(ids, kind="stable")
    ids, x, y = ids[order], x[order], y[order]
    m = eligible_mask(x, y, r_in)
    return ids[m], x[m], y[m], order[m]


def _require_k(spec: ClusteringSpec, n_eligible: int) -> int:
    if spec.k is None:
        raise ValueError("spec.k must be set (derive it with cluster_count)")
    if spec.k > n_eligible:
        raise ValueError(f"k={spec.k} exceeds the {n_eligible} eligible devices")
    return spec.k


def farthest_point_init(x, y, k: int) -> list[int]:
    """Greedy max-min selection starting from the point farthest from the origin."""
    r2 = x * x + y * y
    first = int(np.argmax(r2))
    chosen = [first]
    dmin = (x - x[first]) ** 2 + (y - y[first]) ** 2
    dmin[first] = -1.0         # never re-pick, even among coincident points
    for _ in range(k - 1):
        nxt = int(np.argmax(dmin))
        chosen.append(nxt)
        dmin = np.minimum(dmin, (x - x[nxt]) ** 2 + (y - y[nxt]) ** 2)
        dmin[chosen] = -1.0
    return chosen


def kmeans_clustering(devices, spec: ClusteringSpec) -> list[Cluster]:
    if spec.method != Method.KMEANS:
        raise ValueError("spec.method must be kmeans")
    ids, x, y, _ = _eligible_sorted(devices, spec.r_in)
    k = _require_k(spec, len(ids))
    seeds = farthest_point_init(x, y, k)
    members: list[list[int]] = [[s] for s in seeds]
    sx = x[seeds].astype(float)
    sy = y[seeds].astype(float)
    cen = np.array(seeds)
    cx, cy = x[cen].copy(), y[cen].copy()
    taken = np.zeros(len(ids), dtype=bool)
    taken[seeds] = True
    for i in np.flatnonzero(~taken):       # ascending device id
        d = (cx - x[i]) ** 2 + (cy - y[i]) ** 2
        c = int(np.argmin(d))
        members[c].append(int(i))
        sx[c] += x[i]
        sy[c] += y[i]
        m = np.asarray(members[c])
        mx, my = sx[c] / len(m), sy[c] / len(m)
        dm = (x[m] - mx) ** 2 + (y[m] - my) ** 2
        best = m[dm == dm.min()].min()
        cen[c] = best
        cx[c], cy[c] = x[best], y[best]
    return [
        Cluster(c, tuple(sorted(int(ids[j]) for j in members[c])),
                centroid=(float(cx[c]), float(cy[c])), centroid_id=int(ids[cen[c]]))
        for c in range(k)
    ]


def _fixed_centroid_clusters(ids, x, y, cen: np.ndarray) -> list[Cluster]:
    label = nearest_centroid(x, y, x[cen], y[cen])
    label[cen] = np.arange(len(cen))   # a centroid always owns its own cluster
    members = _group(ids, label, len(cen))
    return [Cluster(c, members[c], centroid=(float(x[j]), float(y[j])), centroid_id=int(ids[j]))
            for c, j in enumerate(cen)]


def distance_clustering(devices, spec: ClusteringSpec) -> list[Cluster]:
    if spec.method != Method.DISTANCE:
        raise ValueError("spec.method must be distance")
    ids, x, y, _ = _eligible_sorted(devices, spec.r_in)
    k = _require_k(spec, len(ids))
    rng = np.random.default_rng(spec.rng_seed)
    cen = rng.choice(len(ids), size=k, replace=False)
    return _fixed_centroid_clusters(ids, x, y, cen)


def distance_csi_clustering(devices, cellular_snr_db, spec: ClusteringSpec) -> list[Cluster]:
    """Distance clustering with centroids drawn from devices above the SNR threshold.

    ``cellular_snr_db`` is aligned with ``devices`` (or a mapping id -> snr).
    """
    if spec.method != Method.DISTANCE_CSI:
        raise ValueError("spec.method must be distance-csi")
    all_ids, _, _ = _columns(devices)
    if isinstance(cellular_snr_db, dict):
        snr_all = np.array([cellular_snr_db[int(i)] for i in all_ids], dtype=float)
    else:
        snr_all = np.asarray(getattr(cellular_snr_db, "snr_db", cellular_snr_db), dtype=float)
    ids, x, y, rows = _eligible_sorted(devices, spec.r_in)
    snr = snr_all[rows]
    cand = np.flatnonzero(snr > spec.snr_threshold_centroid)
    if spec.k is None:
        raise ValueError("spec.k must be set (derive it with cluster_count)")
    if len(cand) < spec.k:
        raise ValueError(f"only {len(cand)} devices exceed {spec.snr_threshold_centroid} dB; "
                         f"need k={spec.k} centroid candidates")
    _require_k(spec, len(ids))
    rng = np.random.default_rng(spec.rng_seed)
    cen = cand[rng.choice(len(cand), size=spec.k, replace=False)]
    return _fixed_centroid_clusters(ids, x, y, cen)


def run_clustering(table: DeviceTable, cell_radius: float, spec: ClusteringSpec,
                   cellular_snr_db=None) -> list[Cluster]:
    if spec.method == Method.GEOMETRIC:
        return geometric_clustering(table, cell_radius, spec)
    if spec.k is None:
        spec = replace(spec, k=cluster_count(cell_radius, replace(spec, method=Method.GEOMETRIC)))
    if spec.method == Method.KMEANS:
        return kmeans_clustering(table, spec)
    if spec.method == Method.DISTANCE:
        return distance_clustering(table, spec)
    return distance_csi_clustering(table, cellular_snr_db, spec)


def cluster_labels(clusters, ids) -> np.ndarray:
    """Cluster id per device id in ``ids``; -1 for devices in no cluster."""
    lookup = {m: c.id for c in clusters for m in c.members}
    return np.fromiter((lookup.get(int(i), -1) for i in ids), dtype=np.int64, count=len(ids))


def write_clusters_csv(path, clusters, ids, method) -> None:
    labels = cluster_labels(clusters, ids)
    method = Method(method).value
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["device_id", "cluster_id", "method"])
        for i, c in zip(ids, labels):
            w.writerow([int(i), int(c), method])
