"""Availability, battery-life CDF and ten-year compliance of a run."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import Mode

TEN_YEARS_DAYS = 3650.0


@dataclass
class RunSummary:
    label: str
    availability: float
    frac_meeting_10y: float
    cdf_points: list[tuple[float, float]] = field(default_factory=list)
    config_fingerprint: str = ""
    n_devices: int = 0
    mode_counts: dict[str, int] = field(default_factory=dict)
    clusters: int = 0

    def to_dict(self, with_cdf: bool = False) -> dict:
        d = asdict(self)
        if not with_cdf:
            d.pop("cdf_points")
        return d


def served(assignment, formation=None) -> bool:
    mode = assignment.mode
    if mode == Mode.UNREACHABLE:
        return False
    if mode == Mode.REMOTE and formation is not None:
        return formation.get((assignment.device_id, assignment.paired_relay)) == "Established"
    return True


def availability(assignments, formation=None) -> float:
    """Fraction of devices able to deliver uplink reports.

    A remote counts only if ``formation`` (when given) marks its pairing Established.
    """
    if not assignments:
        raise ValueError("availability of an empty device set is undefined")
    vals = assignments.values() if isinstance(assignments, dict) else assignments
    vals = list(vals)
    return sum(served(a, formation) for a in vals) / len(vals)


def battery_cdf(lives_days, threshold: float = TEN_YEARS_DAYS):
    """Empirical CDF with one point per device, and the fraction at or above ``threshold``.

    Accepts a sequence of lives or of energy reports.
    """
    vals = [getattr(v, "battery_life_days", v) for v in lives_days]
    if not vals:
        raise ValueError("battery CDF of an empty set is undefined")
    x = np.sort(np.asarray(vals, dtype=float), kind="stable")
    n = len(x)
    frac = np.arange(1, n + 1) / n
    pts = list(zip(x.tolist(), frac.tolist()))
    return pts, float(np.count_nonzero(x >= threshold) / n)


def fingerprint(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def effective_lives(assignments, reports, formation=None) -> dict[int, float]:
    """Battery life per device; unserved devices get the zero-life marker."""
    out = {}
    for i, a in assignments.items():
        out[i] = reports[i].battery_life_days if served(a, formation) else 0.0
    return out


def summarize(label: str, assignments, reports, config_dict: dict, formation=None,
              clusters: int = 0) -> RunSummary:
    lives = effective_lives(assignments, reports, formation)
    pts, frac10 = battery_cdf([lives[i] for i in sorted(lives)])
    counts = {m.value: 0 for m in Mode}
    for a in assignments.values():
        counts[a.mode.value] += 1
    return RunSummary(label, availability(assignments, formation), frac10, pts,
                      fingerprint(config_dict), len(assignments), counts, clusters)


def write_summary_json(path, summary: RunSummary) -> None:
    with open(path, "w") as fh:
        json.dump(summary.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_cdf_csv(path, cdf_points) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["days", "fraction"])
        for d, f in cdf_points:
            w.writerow([f"{d:.6f}" if math.isfinite(d) else "inf", f"{f:.9f}"])
