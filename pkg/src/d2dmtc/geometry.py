"""Urban environment (replicated Madrid grids) and static indoor device deployment.

World coordinates are metres with the macro site at the origin.  Grid replicas
tile outward symmetrically so that the cell disc is fully covered.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

GRID_WIDTH_M = 387.0   # west-east
GRID_DEPTH_M = 552.0   # north-south
FLOOR_HEIGHT_M = 3.5
ANTENNA_HEIGHT_M = 1.5
MIN_FLOORS = 8
MAX_FLOORS = 15

# Block layout of one grid, grid-local (x0, x1, y0, y1).  4 x 4 blocks separated
# by 12 m (x) and 15 m (y) streets; block (col 1, row 2) is the park.
_COLS = ((6.0, 96.0), (108.0, 186.0), (198.0, 294.0), (306.0, 381.0))
_ROWS = ((7.5, 127.5), (142.5, 277.5), (292.5, 402.5), (417.5, 544.5))
PARK_BLOCK = (1, 2)
MADRID_LAYOUT: tuple[tuple[float, float, float, float], ...] = tuple(
    (cx[0], cx[1], ry[0], ry[1])
    for j, ry in enumerate(_ROWS)
    for i, cx in enumerate(_COLS)
    if (i, j) != PARK_BLOCK
)

# Devices are kept this far from the facade (wall thickness).
WALL_INSET_M = 0.5


class Mode(str, enum.Enum):
    CELLULAR = "cellular"
    RELAY = "relay"
    REMOTE = "remote"
    UNREACHABLE = "unreachable"


@dataclass(frozen=True)
class GridSpec:
    width_m: float = GRID_WIDTH_M
    depth_m: float = GRID_DEPTH_M
    layout: tuple[tuple[float, float, float, float], ...] = MADRID_LAYOUT
    min_floors: int = MIN_FLOORS
    max_floors: int = MAX_FLOORS
    floor_height_m: float = FLOOR_HEIGHT_M
    bs_height_m: float = 25.0

    def __post_init__(self):
        if self.width_m <= 0 or self.depth_m <= 0:
            raise ValueError("grid dimensions must be positive")
        if not 1 <= self.min_floors <= self.max_floors:
            raise ValueError("invalid floor range")
        for x0, x1, y0, y1 in self.layout:
            if not (0 <= x0 < x1 <= self.width_m and 0 <= y0 < y1 <= self.depth_m):
                raise ValueError(f"building footprint {(x0, x1, y0, y1)} outside the grid")


@dataclass(frozen=True)
class Building:
    id: int
    x0: float
    x1: float
    y0: float
    y1: float
    floors: int
    floor_height: float = FLOOR_HEIGHT_M

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("footprint must have positive width and depth")
        if self.floors < 1:
            raise ValueError("building needs at least one floor")

    @property
    def footprint(self) -> tuple[float, float, float, float]:
        return (self.x0, self.x1, self.y0, self.y1)

    @property
    def area(self) -> float:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def contains(self, x: float, y: float) -> bool:
        return self.x0 < x < self.x1 and self.y0 < y < self.y1


@dataclass(frozen=True)
class Environment:
    buildings: tuple[Building, ...]
    bs_position: tuple[float, float, float]
    cell_radius: float
    grid_replicas: tuple[int, int]
    grid_width_m: float = GRID_WIDTH_M
    grid_depth_m: float = GRID_DEPTH_M

    def replica_bounds(self) -> tuple[float, float, float, float]:
        """Outer rectangle of the tiling in world coordinates."""
        nx, ny = self.grid_replicas
        hx = nx * self.grid_width_m / 2
        hy = ny * self.grid_depth_m / 2
        return (-hx, hx, -hy, hy)

    def building_arrays(self) -> dict[str, np.ndarray]:
        b = self.buildings
        return {
            "x0": np.array([q.x0 for q in b]),
            "x1": np.array([q.x1 for q in b]),
            "y0": np.array([q.y0 for q in b]),
            "y1": np.array([q.y1 for q in b]),
            "floors": np.array([q.floors for q in b], dtype=np.int64),
        }


@dataclass(frozen=True)
class Device:
    id: int
    position: tuple[float, float, float]
    building_id: int | None
    floor: int
    battery_capacity: float = 6500.0
    max_tx_power: float = 23.0
    reports_per_day: int = 24
    packet_bits: int = 2000
    mode: Mode = Mode.CELLULAR
    paired_relay: int | None = None

    def __post_init__(self):
        if (self.mode == Mode.REMOTE) != (self.paired_relay is not None):
            raise ValueError("paired_relay must be set exactly when mode is remote")


@dataclass
class DeviceTable:
    """Columnar view of a device list used by the vectorised models."""

    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    building: np.ndarray   # -1 when outdoors
    floor: np.ndarray
    depth: np.ndarray      # horizontal distance to the nearest facade
    _index: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_devices(cls, devices, env: Environment) -> "DeviceTable":
        n = len(devices)
        ids = np.fromiter((d.id for d in devices), dtype=np.int64, count=n)
        pos = np.array([d.position for d in devices], dtype=float).reshape(n, 3)
        bld = np.fromiter((-1 if d.building_id is None else d.building_id for d in devices),
                          dtype=np.int64, count=n)
        floor = np.fromiter((d.floor for d in devices), dtype=np.int64, count=n)
        depth = facade_depth(env, pos[:, 0], pos[:, 1], bld)
        return cls(ids, pos[:, 0], pos[:, 1], pos[:, 2], bld, floor, depth,
                   {int(i): k for k, i in enumerate(ids)})

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, device_id: int) -> int:
        return self._index[int(device_id)]

    def rows(self, device_ids) -> np.ndarray:
        return np.fromiter((self._index[int(i)] for i in device_ids), dtype=np.int64)


def facade_depth(env: Environment, x, y, building) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    building = np.asarray(building, dtype=np.int64)
    out = np.zeros_like(x)
    inside = building >= 0
    if np.any(inside):
        arr = env.building_arrays()
        b = building[inside]
        xi, yi = x[inside], y[inside]
        out[inside] = np.minimum.reduce([
            xi - arr["x0"][b], arr["x1"][b] - xi, yi - arr["y0"][b], arr["y1"][b] - yi,
        ])
    return out


def build_environment(cell_radius: float = 866.0, rng_seed: int = 0,
                      grid_spec: GridSpec | None = None) -> Environment:
    if not cell_radius > 0:
        raise ValueError(f"cell_radius must be positive, got {cell_radius}")
    spec = grid_spec or GridSpec()
    nx = math.ceil(2 * cell_radius / spec.width_m)
    ny = math.ceil(2 * cell_radius / spec.depth_m)
    rng = np.random.default_rng(rng_seed)
    floors = rng.integers(spec.min_floors, spec.max_floors + 1, size=nx * ny * len(spec.layout))
    ox = -nx * spec.width_m / 2
    oy = -ny * spec.depth_m / 2
    buildings = []
    k = 0
    for j in range(ny):
        for i in range(nx):
            gx = ox + i * spec.width_m
            gy = oy + j * spec.depth_m
            for x0, x1, y0, y1 in spec.layout:
                buildings.append(Building(k, gx + x0, gx + x1, gy + y0, gy + y1,
                                          int(floors[k]), spec.floor_height_m))
                k += 1
    return Environment(tuple(buildings), (0.0, 0.0, spec.bs_height_m), float(cell_radius),
                       (nx, ny), spec.width_m, spec.depth_m)


def deploy_devices(env: Environment, n: int, rng_seed: int = 0, *,
                   battery_capacity: float = 6500.0, max_tx_power: float = 23.0,
                   reports_per_day: int = 24, packet_bits: int = 2000) -> list[Device]:
    """Drop ``n`` static devices uniformly over the built floor area inside the cell.

    A building is drawn with probability proportional to its footprint, the
    horizontal position uniformly over the footprint (kept ``WALL_INSET_M``
    off the facade) and the floor uniformly over the building's floors.
    Draws falling outside the cell disc are rejected.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return []
    arr = env.building_arrays() if env.buildings else None
    if arr is None:
        raise ValueError("environment has no buildings")
    x0 = arr["x0"] + WALL_INSET_M
    x1 = arr["x1"] - WALL_INSET_M
    y0 = arr["y0"] + WALL_INSET_M
    y1 = arr["y1"] - WALL_INSET_M
    # only buildings that reach into the disc can host devices
    cx = np.clip(0.0, x0, x1)
    cy = np.clip(0.0, y0, y1)
    eligible = np.hypot(cx, cy) < env.cell_radius
    if not np.any(eligible):
        raise ValueError("no building intersects the cell")
    weights = np.where(eligible, (x1 - x0) * (y1 - y0), 0.0)
    weights = weights / weights.sum()

    rng = np.random.default_rng(rng_seed)
    bs, xs, ys, fs = [], [], [], []
    need = n
    while need > 0:
        m = max(2 * need, 64)
        b = rng.choice(len(weights), size=m, p=weights)
        u = rng.random((m, 2))
        px = x0[b] + u[:, 0] * (x1[b] - x0[b])
        py = y0[b] + u[:, 1] * (y1[b] - y0[b])
        fl = np.floor(rng.random(m) * arr["floors"][b]).astype(np.int64)
        keep = np.flatnonzero(np.hypot(px, py) <= env.cell_radius)[:need]
        bs.append(b[keep]); xs.append(px[keep]); ys.append(py[keep]); fs.append(fl[keep])
        need -= len(keep)
    b = np.concatenate(bs); px = np.concatenate(xs); py = np.concatenate(ys)
    fl = np.concatenate(fs)
    fh = np.array([q.floor_height for q in env.buildings])[b]
    pz = ANTENNA_HEIGHT_M + fh * fl
    return [
        Device(i, (float(px[i]), float(py[i]), float(pz[i])), int(b[i]), int(fl[i]),
               battery_capacity, max_tx_power, reports_per_day, packet_bits)
        for i in range(n)
    ]


# --- JSON replay -----------------------------------------------------------

def environment_to_dict(env: Environment) -> dict:
    return {
        "bs_position": list(env.bs_position),
        "cell_radius": env.cell_radius,
        "grid_replicas": list(env.grid_replicas),
        "grid_width_m": env.grid_width_m,
        "grid_depth_m": env.grid_depth_m,
        "buildings": [
            {"id": b.id, "x0": b.x0, "x1": b.x1, "y0": b.y0, "y1": b.y1,
             "floors": b.floors, "floor_height": b.floor_height}
            for b in env.buildings
        ],
    }


def environment_from_dict(d: dict) -> Environment:
    return Environment(
        tuple(Building(**b) for b in d["buildings"]),
        tuple(d["bs_position"]), d["cell_radius"], tuple(d["grid_replicas"]),
        d["grid_width_m"], d["grid_depth_m"],
    )


def devices_to_list(devices) -> list[dict]:
    return [
        {"id": d.id, "position": list(d.position), "building_id": d.building_id,
         "floor": d.floor, "battery_capacity": d.battery_capacity,
         "max_tx_power": d.max_tx_power, "reports_per_day": d.reports_per_day,
         "packet_bits": d.packet_bits, "mode": d.mode.value, "paired_relay": d.paired_relay}
        for d in devices
    ]


def devices_from_list(items) -> list[Device]:
    out = []
    for d in items:
        d = dict(d)
        d["position"] = tuple(d["position"])
        d["mode"] = Mode(d["mode"])
        out.append(Device(**d))
    return out


def dump_scenario(env: Environment, devices, fp) -> None:
    """Write environment and deployment as one JSON document."""
    json.dump({"environment": environment_to_dict(env), "devices": devices_to_list(devices)},
              fp, sort_keys=True, separators=(",", ":"))


def load_scenario(fp) -> tuple[Environment, list[Device]]:
    doc = json.load(fp)
    return environment_from_dict(doc["environment"]), devices_from_list(doc["devices"])
