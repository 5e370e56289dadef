"""Transmission mode selection: remote / relay classification and relay pairing.

A device is a remote candidate when its projected cellular battery life falls
short of the requirement (devices that cannot reach the BS project zero
life).  Relay candidates must strictly exceed the requirement and have a
cellular SNR at or above the relay threshold.  Pairing stays inside a cluster
and obeys the D2D pathloss admission bound.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelParams, CellularLinks, RadioLink, d2d_pathloss_arrays
from .energy import DAY_S, PowerModel, energy_of_trace
from .geometry import Device, DeviceTable, Mode
from .protocol import cellular_reference_trace

CRITERIA = ("min_pathloss", "max_snr")


@dataclass(frozen=True)
class TmsPolicy:
    bl_threshold: float = 3650.0        # days
    snr_threshold: float = 3.0          # dB
    d2d_pathloss_max: float = 136.0     # dB
    delta_t: float = DAY_S              # seconds between TMS updates
    relay_criterion: str = "min_pathloss"
    relay_cap: int | None = None        # remotes per relay, None = unlimited

    def __post_init__(self):
        for name in ("bl_threshold", "snr_threshold", "d2d_pathloss_max", "delta_t"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and positive, got {v}")
        if self.relay_criterion not in CRITERIA:
            raise ValueError(f"relay_criterion must be one of {CRITERIA}")
        if self.relay_cap is not None and self.relay_cap < 1:
            raise ValueError("relay_cap must be at least 1")


@dataclass(frozen=True)
class ModeAssignment:
    device_id: int
    mode: Mode
    paired_relay: int | None = None
    projected_life_days: float = 0.0

    def __post_init__(self):
        if (self.mode == Mode.REMOTE) != (self.paired_relay is not None):
            raise ValueError("paired_relay must be set exactly for remote devices")


# --- projected cellular life -------------------------------------------------------

def cellular_energy_arrays(ul_rate, dl_rate, model: PowerModel, *, delta_t: float = DAY_S,
                           reports_per_day: int = 24, packet_bits: int = 2000,
                           control_bits: int = 256, tx_dbm: float = 23.0) -> np.ndarray:
    """Energy (J) of ``delta_t`` of all-cellular operation; inf where the uplink is dead."""
    from .energy import tx_power_w

    ul = np.asarray(ul_rate, dtype=float)
    dl = np.asarray(dl_rate, dtype=float)
    n_rep = math.floor(reports_per_day * delta_t / DAY_S + 1e-9)
    ok = ul > 0
    safe_ul = np.where(ok, ul, 1.0)
    safe_dl = np.where(dl > 0, dl, 1.0)
    tx_s = packet_bits / safe_ul
    rx_s = control_bits / safe_dl
    per_report_j = (model.clock_w * model.clock_s + model.cp_w * model.cp_s
                    + tx_power_w(tx_dbm, model) * tx_s + model.rx_w * rx_s)
    per_report_s = model.clock_s + model.cp_s + tx_s + rx_s
    days = delta_t / DAY_S
    bins = math.ceil(days - 1e-12) if days > 0 else 0
    listens = sum(min(1.0, days - k) for k in range(bins)) * model.drx_per_day
    busy = n_rep * per_report_s + listens * model.paging_s
    e = (n_rep * per_report_j + listens * model.paging_w * model.paging_s
         + model.sleep_w * (delta_t - busy))
    return np.where(ok, e, np.inf)


def life_days(battery_j, energy_j, delta_t: float):
    """BC / EC scaled to days; the zero-life marker where EC is infinite."""
    e = np.asarray(energy_j, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(np.isinf(e), 0.0,
                       np.where(e > 0, np.asarray(battery_j, dtype=float) / e * delta_t / DAY_S, np.inf))
    return float(out) if out.ndim == 0 else out


def projected_cellular_life(dev: Device, link: RadioLink, energy_model: PowerModel | None = None, *,
                            delta_t: float = DAY_S, dl_rate_bps: float | None = None,
                            battery_j: float | None = None, control_bits: int = 256) -> float:
    """Projected battery life (days) if ``dev`` kept using its cellular link.

    Prices a hypothetical all-cellular trace over ``delta_t``.  Returns 0
    (the infinite-consumption marker) when the link carries no data.
    """
    model = energy_model or PowerModel()
    battery = dev.battery_capacity if battery_j is None else battery_j
    if link.rate_bps <= 0:
        return 0.0
    dl = link.rate_bps if dl_rate_bps is None else dl_rate_bps
    trace = cellular_reference_trace([dev.id], [link.rate_bps], [dl],
                                     reports_per_day=dev.reports_per_day,
                                     packet_bits=dev.packet_bits, horizon_s=delta_t,
                                     control_bits=control_bits, tx_dbm=dev.max_tx_power,
                                     power=model)
    rep = energy_of_trace(trace, model, horizon_s=delta_t, device_ids=[dev.id])[dev.id]
    return life_days(battery, rep.total_j, delta_t)


# --- classification and pairing --------------------------------------------------

@dataclass
class ClusterClasses:
    remotes: list[int]
    relays: list[int]
    cellular: list[int]


def classify_cluster(members, life, snr, policy: TmsPolicy) -> ClusterClasses:
    """Split cluster members by the remote and relay conditions.

    ``life`` and ``snr`` map device id -> projected days / cellular SNR dB.
    """
    remotes, relays, cellular = [], [], []
    for m in sorted(members):
        life_m = life[m]
        if life_m < policy.bl_threshold:
            remotes.append(m)
        elif life_m > policy.bl_threshold and snr[m] >= policy.snr_threshold:
            relays.append(m)
        else:
            cellular.append(m)
    return ClusterClasses(remotes, relays, cellular)


def select_relay(remote: int, feasible_relays, d2d_pathloss, policy: TmsPolicy, *,
                 rejected=frozenset(), relay_snr=None, load=None) -> int | None:
    """Pick a relay for ``remote`` or return None.

    ``d2d_pathloss`` maps relay id -> estimated pathloss to the remote.
    Pairs in ``rejected`` (remote, relay) are never offered again.
    """
    best, best_key = None, None
    for r in feasible_relays:
        if (remote, r) in rejected:
            continue
        pl = d2d_pathloss[r]
        if not pl <= policy.d2d_pathloss_max:
            continue
        if policy.relay_cap is not None and load is not None and load.get(r, 0) >= policy.relay_cap:
            continue
        if policy.relay_criterion == "max_snr" and relay_snr is not None:
            key = (-relay_snr[r], r)
        else:
            key = (pl, r)
        if best_key is None or key < best_key:
            best, best_key = r, key
    return best


@dataclass
class TmsResult:
    assignments: dict[int, ModeAssignment]
    d2d_estimates: dict[tuple[int, int], float] = field(default_factory=dict)


def tms_round(clusters, table: DeviceTable, links: CellularLinks, policy: TmsPolicy,
              energy_model: PowerModel | None = None, *, channel: ChannelParams | None = None,
              battery_j=None, rejected=frozenset(), reports_per_day: int = 24,
              packet_bits: int = 2000, control_bits: int = 256, tx_dbm: float = 23.0,
              d2d: bool = True) -> TmsResult:
    """One TMS update over all clusters; one assignment per device in ``table``.

    D2D pathloss used for pairing is the BS-side estimate (no shadowing).
    With ``d2d=False`` every device is Cellular or Unreachable.
    """
    model = energy_model or PowerModel()
    channel = channel or ChannelParams()
    n = len(table)
    battery = np.full(n, model.capacity_j) if battery_j is None else np.asarray(battery_j, dtype=float)
    ec = cellular_energy_arrays(links.rate_bps, links.dl_rate_bps, model, delta_t=policy.delta_t,
                                reports_per_day=reports_per_day, packet_bits=packet_bits,
                                control_bits=control_bits, tx_dbm=tx_dbm)
    life_arr = life_days(battery, ec, policy.delta_t)
    ids = table.ids
    life = dict(zip(ids.tolist(), np.atleast_1d(life_arr).tolist()))
    snr = dict(zip(ids.tolist(), links.snr_db.tolist()))
    rate = dict(zip(ids.tolist(), links.rate_bps.tolist()))

    def fallback(i):
        return ModeAssignment(i, Mode.CELLULAR if rate[i] > 0 else Mode.UNREACHABLE,
                              None, life[i])

    out: dict[int, ModeAssignment] = {int(i): fallback(int(i)) for i in ids}
    estimates: dict[tuple[int, int], float] = {}
    if not d2d:
        return TmsResult(out, estimates)
    for c in clusters:
        if len(c.members) < 2:
            continue
        cls = classify_cluster(c.members, life, snr, policy)
        if not cls.remotes or not cls.relays:
            continue
        rrows = table.rows(cls.remotes)
        lrows = table.rows(cls.relays)
        pl = d2d_pathloss_arrays(table, rrows[:, None], lrows[None, :], channel, shadowing=False)
        load: dict[int, int] = {}
        used = set()
        for k, m in enumerate(cls.remotes):
            est = dict(zip(cls.relays, pl[k].tolist()))
            r = select_relay(m, cls.relays, est, policy, rejected=rejected, relay_snr=snr, load=load)
            if r is None:
                continue
            load[r] = load.get(r, 0) + 1
            used.add(r)
            estimates[(m, r)] = est[r]
            out[m] = ModeAssignment(m, Mode.REMOTE, r, life[m])
        for r in used:
            out[r] = ModeAssignment(r, Mode.RELAY, None, life[r])
    return TmsResult(out, estimates)


def write_assignments_csv(path, assignments) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["device_id", "mode", "paired_relay", "projected_life_days"])
        for i in sorted(assignments):
            a = assignments[i]
            w.writerow([i, a.mode.value, "" if a.paired_relay is None else a.paired_relay,
                        f"{a.projected_life_days:.6f}"])
