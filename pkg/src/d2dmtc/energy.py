"""Device power model and trace-to-energy accounting.

Table powers are read as milliwatts; every episode carries its own duration so
energy is simply power times time.  All time not covered by an episode is
charged at sleep power.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .trace import Episode, EventTrace

DAY_S = 86400.0


@dataclass(frozen=True)
class PowerModel:
    pa_efficiency: float = 0.45
    tx_circuitry_w: float = 0.060
    rx_w: float = 0.100
    paging_w: float = 0.100
    paging_s: float = 0.010
    clock_w: float = 0.100
    clock_s: float = 0.010
    cp_w: float = 0.200
    cp_s: float = 0.010
    sleep_w: float = 0.00001
    drx_per_day: int = 4
    capacity_j: float = 6500.0

    def __post_init__(self):
        if not 0 < self.pa_efficiency <= 1:
            raise ValueError("pa_efficiency must lie in (0, 1]")
        for name in ("tx_circuitry_w", "rx_w", "paging_w", "clock_w", "cp_w", "sleep_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.capacity_j < 0 or self.drx_per_day < 0:
            raise ValueError("capacity and drx_per_day must be non-negative")


def tx_power_w(tx_power_dbm, model: PowerModel | None = None):
    """Battery power drawn while transmitting at ``tx_power_dbm`` radiated."""
    model = model or PowerModel()
    radiated = 10 ** ((np.asarray(tx_power_dbm, dtype=float) - 30) / 10)
    out = radiated / model.pa_efficiency + model.tx_circuitry_w
    return float(out) if out.ndim == 0 else out


@dataclass
class EnergyReport:
    device_id: int
    energy_per_day_j: float
    battery_life_days: float
    breakdown: dict[str, float] = field(default_factory=dict)
    total_j: float = 0.0


def battery_life(report: EnergyReport, model: PowerModel | None = None) -> float:
    model = model or PowerModel()
    if model.capacity_j == 0:
        return 0.0
    if report.energy_per_day_j <= 0:
        return math.inf
    return model.capacity_j / report.energy_per_day_j


def episode_power_w(trace: EventTrace, model: PowerModel) -> np.ndarray:
    ep = trace.episode
    p = np.zeros(len(ep))
    tx = ep == Episode.TRANSMIT
    p[tx] = tx_power_w(trace.tx_dbm[tx], model)
    p[ep == Episode.RECEIVE] = model.rx_w
    p[ep == Episode.PAGING_LISTEN] = model.paging_w
    p[ep == Episode.CLOCK_SYNC] = model.clock_w
    p[ep == Episode.CP_ESTABLISH] = model.cp_w
    p[ep == Episode.SLEEP] = model.sleep_w
    return p


def energy_of_trace(trace: EventTrace, model: PowerModel | None = None,
                    horizon_s: float = DAY_S, device_ids=None,
                    check_overlap: bool = True) -> dict[int, EnergyReport]:
    """Energy report per device over ``[0, horizon_s)``.

    Devices listed in ``device_ids`` without episodes are charged as idle.
    Baseline paging listens (``drx_per_day``) are added per day, minus any
    paging listens the trace already holds for that device and day.
    """
    model = model or PowerModel()
    if horizon_s < 0:
        raise ValueError("horizon must be non-negative")
    if check_overlap:
        trace.check_non_overlapping()
    ids = np.unique(np.concatenate([trace.node, np.asarray(
        [] if device_ids is None else list(device_ids), dtype=np.int64)]))
    n = len(ids)
    row = np.searchsorted(ids, trace.node)
    kinds = list(Episode)
    energy = np.zeros((n, len(kinds)))
    busy = np.zeros(n)
    if len(trace):
        e = episode_power_w(trace, model) * trace.duration
        np.add.at(energy, (row, trace.episode.astype(np.int64)), e)
        busy = np.bincount(row, weights=trace.duration, minlength=n)

    # baseline paging listens, one bin per (partial) day
    n_days = horizon_s / DAY_S
    listen_j = model.paging_w * model.paging_s
    extra = np.zeros(n)
    bins = math.ceil(n_days - 1e-12) if n_days > 0 else 0
    if bins and model.drx_per_day:
        traced = np.zeros((n, bins))
        pg = trace.episode == Episode.PAGING_LISTEN
        if np.any(pg):
            day = np.clip((trace.start[pg] // DAY_S).astype(np.int64), 0, bins - 1)
            np.add.at(traced, (row[pg], day), 1.0)
        cover = np.minimum(1.0, n_days - np.arange(bins))
        extra = np.maximum(0.0, model.drx_per_day * cover[None, :] - traced).sum(axis=1)
    energy[:, Episode.PAGING_LISTEN] += extra * listen_j
    busy = busy + extra * model.paging_s

    sleep_s = horizon_s - busy
    if np.any(sleep_s < -1e-6):
        k = int(np.argmin(sleep_s))
        raise ValueError(f"device {int(ids[k])} is busy longer than the horizon")
    sleep_j = np.maximum(sleep_s, 0.0) * model.sleep_w

    total = energy.sum(axis=1) + sleep_j
    scale = 1.0 / n_days if n_days > 0 else 0.0
    out = {}
    for k in range(n):
        breakdown = {kd.name: float(energy[k, kd] * scale) for kd in kinds if kd != Episode.SLEEP}
        breakdown["SLEEP"] = float((energy[k, Episode.SLEEP] + sleep_j[k]) * scale)
        per_day = float(total[k] * scale)
        rep = EnergyReport(int(ids[k]), per_day, math.inf, breakdown, float(total[k]))
        rep.battery_life_days = battery_life(rep, model)
        out[int(ids[k])] = rep
    return out


def write_energy_csv(path, reports) -> None:
    kinds = [k.name for k in Episode]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["device_id", "energy_per_day_j", "battery_life_days"] + [k.lower() + "_j" for k in kinds])
        for rid in sorted(reports):
            r = reports[rid]
            w.writerow([rid, f"{r.energy_per_day_j:.9g}", f"{r.battery_life_days:.6f}"]
                       + [f"{r.breakdown.get(k, 0.0):.9g}" for k in kinds])
