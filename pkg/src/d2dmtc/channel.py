"""Pathloss, SNR and rate for cellular (device-BS) and D2D (device-device) links.

The cellular channel is an outdoor 900 MHz log-distance macro loss plus
building penetration (facade + interior walls).  D2D links use one of three
indoor scenarios selected from the two device placements.  Optional lognormal
shadowing is a pure function of (seed, tx, rx) so links can be recomputed in
any order.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .geometry import Device, DeviceTable, Environment

BS_ID = -1
SNR_CUTOFF_DB = -7.0
THERMAL_NOISE_DBM_HZ = -174.0

# Spectral efficiencies (bit/s/Hz) of the LTE CQI table used as MCS steps.
CQI_EFFICIENCIES = (0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766,
                    1.9141, 2.4063, 2.7305, 3.3223, 3.9023, 4.5234)


def attenuated_shannon_table(alpha: float = 0.75, cap: float = 4.8,
                             floor_db: float = SNR_CUTOFF_DB,
                             steps=CQI_EFFICIENCIES) -> tuple[tuple[float, float], ...]:
    """(min SNR dB, efficiency) staircase under ``alpha * log2(1 + snr)``.

    Each step becomes available once the attenuated Shannon bound reaches
    it; no step starts below ``floor_db`` and the last step sits at ``cap``.
    """
    effs = sorted(e for e in steps if e < cap) + [cap]
    table = []
    for e in effs:
        thr = 10 * math.log10(2 ** (e / alpha) - 1)
        table.append((max(thr, floor_db), e))
    return tuple(table)


class D2DScenario(enum.Enum):
    SAME_FLOOR = "same_floor_same_building"
    DIFFERENT_FLOOR = "different_floor_same_building"
    DIFFERENT_BUILDINGS = "different_buildings"


@dataclass(frozen=True)
class ChannelParams:
    carrier_hz: float = 900e6
    # outdoor macro: intercept at 1 km + 10*exponent*log10(d/1km)
    outdoor_intercept_db: float = 120.9
    outdoor_exponent: float = 3.76
    external_wall_db: float = 20.0
    interior_wall_db: float = 5.0
    interior_wall_spacing_m: float = 5.0
    floor_gain_db: float = 0.0          # per floor above ground, cellular only
    bs_antenna_gain_dbi: float = 15.0
    bs_feeder_loss_db: float = 3.0
    bandwidth_hz: float = 180e3
    device_nf_db: float = 5.0
    bs_nf_db: float = 3.0
    ue_tx_dbm: float = 23.0
    bs_tx_dbm: float = 46.0
    # indoor D2D: intercept at 1 m + 10*exponent*log10(d)
    d2d_indoor_intercept_db: float = 31.1
    d2d_indoor_exponent: float = 3.3
    d2d_floor_loss_db: float = 9.0
    # outdoor segment between buildings
    d2d_outdoor_intercept_db: float = 21.5
    d2d_outdoor_exponent: float = 3.67
    shadowing: bool = False
    shadowing_seed: int = 0
    cellular_sigma_db: float = 8.0
    d2d_sigma_db: float = 6.0
    rate_table: tuple[tuple[float, float], ...] = field(default_factory=attenuated_shannon_table)

    def __post_init__(self):
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        if self.interior_wall_spacing_m <= 0:
            raise ValueError("interior wall spacing must be positive")
        tbl = tuple((float(s), float(e)) for s, e in self.rate_table)
        object.__setattr__(self, "rate_table", tbl)
        if any(b[0] < a[0] or b[1] < a[1] for a, b in zip(tbl, tbl[1:])):
            raise ValueError("rate table must be non-decreasing")
        if tbl and tbl[0][0] < SNR_CUTOFF_DB:
            raise ValueError("rate table may not start below the -7 dB cutoff")


@dataclass(frozen=True)
class RadioLink:
    tx_id: int
    rx_id: int
    pathloss_db: float
    snr_db: float
    rate_bps: float

    def __post_init__(self):
        if (self.rate_bps == 0) != (self.snr_db < SNR_CUTOFF_DB):
            raise ValueError("rate must be zero exactly when snr is below the cutoff")


# --- elementary models -----------------------------------------------------

def free_space_db(d_m, carrier_hz: float):
    d = np.maximum(np.asarray(d_m, dtype=float), 1.0)
    return 20 * np.log10(d) + 20 * math.log10(carrier_hz) - 147.55


def outdoor_macro_db(d_m, p: ChannelParams):
    d = np.maximum(np.asarray(d_m, dtype=float), 1.0)
    ld = p.outdoor_intercept_db + 10 * p.outdoor_exponent * np.log10(d / 1000.0)
    return np.maximum(ld, free_space_db(d, p.carrier_hz))


def _splitmix64(x: np.ndarray) -> np.ndarray:
    x = (x + np.uint64(0x9E3779B97F4A7C15))
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def link_normal(seed: int, a, b) -> np.ndarray:
    """Standard normal draw keyed on (seed, a, b); symmetric in a and b."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    lo = np.minimum(a, b).astype(np.uint64)
    hi = np.maximum(a, b).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = _splitmix64(np.full(np.broadcast(lo, hi).shape, seed, dtype=np.int64).astype(np.uint64))
        h = _splitmix64(h ^ (lo + np.uint64(1)))
        h = _splitmix64(h ^ (hi + np.uint64(2)))
    u = ((h >> np.uint64(11)).astype(np.float64) + 0.5) / float(1 << 53)
    return ndtri(u)


def interior_walls(depth_m, p: ChannelParams):
    return np.floor(np.asarray(depth_m, dtype=float) / p.interior_wall_spacing_m)


# --- cellular --------------------------------------------------------------

def cellular_pathloss_arrays(env: Environment, table: DeviceTable, p: ChannelParams,
                             shadowing: bool | None = None) -> np.ndarray:
    bx, by, bz = env.bs_position
    d3 = np.sqrt((table.x - bx) ** 2 + (table.y - by) ** 2 + (table.z - bz) ** 2)
    loss = outdoor_macro_db(d3, p)
    indoor = table.building >= 0
    loss = loss + np.where(indoor, p.external_wall_db
                           + p.interior_wall_db * interior_walls(table.depth, p)
                           - p.floor_gain_db * table.floor, 0.0)
    if p.shadowing if shadowing is None else shadowing:
        loss = loss + p.cellular_sigma_db * link_normal(p.shadowing_seed, table.ids, BS_ID)
    # penetration gains can never beat free space
    return np.maximum(loss, free_space_db(d3, p.carrier_hz))


def cellular_pathloss(env: Environment, dev: Device, p: ChannelParams | None = None) -> float:
    p = p or ChannelParams()
    return float(cellular_pathloss_arrays(env, DeviceTable.from_devices([dev], env), p)[0])


# --- D2D ---------------------------------------------------------------------

def classify_d2d(dev_a: Device, dev_b: Device) -> D2DScenario:
    if dev_a.building_id is not None and dev_a.building_id == dev_b.building_id:
        if dev_a.floor == dev_b.floor:
            return D2DScenario.SAME_FLOOR
        return D2DScenario.DIFFERENT_FLOOR
    return D2DScenario.DIFFERENT_BUILDINGS


def d2d_pathloss_arrays(table: DeviceTable, rows_a, rows_b, p: ChannelParams,
                        shadowing: bool | None = None) -> np.ndarray:
    """Pathloss between device rows ``rows_a[k]`` and ``rows_b[k]`` (broadcastable)."""
    ra = np.asarray(rows_a)
    rb = np.asarray(rows_b)
    dx = table.x[ra] - table.x[rb]
    dy = table.y[ra] - table.y[rb]
    dz = table.z[ra] - table.z[rb]
    d3 = np.maximum(np.sqrt(dx * dx + dy * dy + dz * dz), 1.0)
    ba, bb = table.building[ra], table.building[rb]
    same_b = (ba == bb) & (ba >= 0)
    nfloors = np.abs(table.floor[ra] - table.floor[rb])
    indoor = p.d2d_indoor_intercept_db + 10 * p.d2d_indoor_exponent * np.log10(d3)
    indoor = indoor + p.d2d_floor_loss_db * nfloors
    outdoor = (p.d2d_outdoor_intercept_db + 10 * p.d2d_outdoor_exponent * np.log10(d3)
               + 2 * p.external_wall_db)
    loss = np.where(same_b, indoor, outdoor)
    loss = np.maximum(loss, free_space_db(d3, p.carrier_hz))
    if p.shadowing if shadowing is None else shadowing:
        loss = loss + p.d2d_sigma_db * link_normal(p.shadowing_seed, table.ids[ra], table.ids[rb])
    return loss


def d2d_pathloss(env: Environment, dev_a: Device, dev_b: Device,
                 p: ChannelParams | None = None) -> float:
    p = p or ChannelParams()
    t = DeviceTable.from_devices([dev_a, dev_b], env)
    return float(d2d_pathloss_arrays(t, 0, 1, p))


# --- link budget -----------------------------------------------------------

def noise_floor_dbm(bandwidth_hz: float, noise_figure_db: float) -> float:
    if not bandwidth_hz > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth_hz}")
    return THERMAL_NOISE_DBM_HZ + 10 * math.log10(bandwidth_hz) + noise_figure_db


def link_snr(pathloss_db, tx_power_dbm, bandwidth_hz: float, noise_figure_db: float):
    return tx_power_dbm - pathloss_db - noise_floor_dbm(bandwidth_hz, noise_figure_db)


def snr_to_rate(snr_db, bandwidth_hz: float, table=None):
    """Staircase rate in bit/s; exactly 0 below the -7 dB cutoff."""
    table = attenuated_shannon_table() if table is None else table
    thr = np.array([s for s, _ in table])
    eff = np.array([e for _, e in table])
    snr = np.asarray(snr_db, dtype=float)
    k = np.searchsorted(thr, snr, side="right") - 1
    rate = np.where(k >= 0, eff[np.clip(k, 0, None)] * bandwidth_hz, 0.0)
    rate = np.where(snr < SNR_CUTOFF_DB, 0.0, rate)
    return float(rate) if rate.ndim == 0 else rate


# --- link sets ---------------------------------------------------------------

@dataclass
class CellularLinks:
    """Uplink (device -> BS) and downlink quantities for every device row."""

    ids: np.ndarray
    pathloss_db: np.ndarray
    snr_db: np.ndarray
    rate_bps: np.ndarray
    dl_snr_db: np.ndarray
    dl_rate_bps: np.ndarray

    def link(self, row: int) -> RadioLink:
        return RadioLink(int(self.ids[row]), BS_ID, float(self.pathloss_db[row]),
                         float(self.snr_db[row]), float(self.rate_bps[row]))


def cellular_links(env: Environment, table: DeviceTable, p: ChannelParams) -> CellularLinks:
    pl = cellular_pathloss_arrays(env, table, p)
    coupling = pl - p.bs_antenna_gain_dbi + p.bs_feeder_loss_db
    snr = link_snr(coupling, p.ue_tx_dbm, p.bandwidth_hz, p.bs_nf_db)
    dl = link_snr(coupling, p.bs_tx_dbm, p.bandwidth_hz, p.device_nf_db)
    return CellularLinks(table.ids.copy(), pl, snr, snr_to_rate(snr, p.bandwidth_hz, p.rate_table),
                         dl, snr_to_rate(dl, p.bandwidth_hz, p.rate_table))


def d2d_link(table: DeviceTable, tx_row: int, rx_row: int, p: ChannelParams,
             shadowing: bool | None = None) -> RadioLink:
    pl = float(d2d_pathloss_arrays(table, tx_row, rx_row, p, shadowing))
    snr = float(link_snr(pl, p.ue_tx_dbm, p.bandwidth_hz, p.device_nf_db))
    return RadioLink(int(table.ids[tx_row]), int(table.ids[rx_row]), pl, snr,
                     snr_to_rate(snr, p.bandwidth_hz, p.rate_table))


def write_links_csv(path, links) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tx", "rx", "pathloss_db", "snr_db", "rate_bps"])
        for lk in links:
            w.writerow([lk.tx_id, lk.rx_id, f"{lk.pathloss_db:.6f}", f"{lk.snr_db:.6f}",
                        f"{lk.rate_bps:.3f}"])
