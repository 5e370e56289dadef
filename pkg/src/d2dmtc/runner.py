"""End-to-end experiment orchestration and the command-line entry point.

environment -> deployment -> cellular links -> clustering -> TMS ->
formation -> report cycles -> energy -> metrics
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .channel import ChannelParams, cellular_links, d2d_link, write_links_csv
from .clustering import (ClusteringSpec, Method, cluster_count, cluster_labels, run_clustering,
                         write_clusters_csv)
from .energy import DAY_S, PowerModel, energy_of_trace, write_energy_csv
from .geometry import DeviceTable, GridSpec, Mode, build_environment, deploy_devices
from .metrics import RunSummary, summarize, write_cdf_csv, write_summary_json
from .protocol import ProtocolError, ProtocolParams, Simulator, run_formation, run_report_cycle
from .tms import ModeAssignment, TmsPolicy, tms_round, write_assignments_csv
from .trace import EventTrace

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_CONTRACT = 0, 2, 3
MAX_FORMATION_ROUNDS = 5


class ConfigError(ValueError):
    pass


class ContractViolation(RuntimeError):
    def __init__(self, module: str, detail: str):
        super().__init__(f"[{module}] {detail}")
        self.module = module


@dataclass(frozen=True)
class DeploymentConfig:
    cell_radius: float = 866.0
    n_devices: int = 20000
    battery_capacity: float = 6500.0
    max_tx_power: float = 23.0
    reports_per_day: int = 24
    packet_bits: int = 2000

    def __post_init__(self):
        if not self.cell_radius > 0:
            raise ValueError("cell_radius must be positive")
        if self.n_devices < 0:
            raise ValueError("n_devices must be non-negative")
        if self.reports_per_day < 0 or self.packet_bits <= 0:
            raise ValueError("invalid traffic profile")


@dataclass(frozen=True)
class RunConfig:
    geometry: GridSpec = field(default_factory=GridSpec)
    deployment: DeploymentConfig = field(default_factory=DeploymentConfig)
    channel: ChannelParams = field(default_factory=ChannelParams)
    clustering: ClusteringSpec = field(default_factory=ClusteringSpec)
    tms: TmsPolicy = field(default_factory=TmsPolicy)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    power: PowerModel = field(default_factory=PowerModel)
    seed: int = 1
    simulated_days: float = 1.0
    d2d: bool = True
    methods: tuple[str, ...] = ("geometric",)
    out_dir: str | None = None
    write_links: bool = False
    write_trace: bool = False

    def __post_init__(self):
        if not self.simulated_days > 0:
            raise ValueError("simulated_days must be positive")
        if self.clustering.r_in >= self.deployment.cell_radius:
            raise ValueError("r_in must be smaller than the cell radius")
        object.__setattr__(self, "methods", tuple(Method(m).value for m in self.methods))
        if not self.methods:
            raise ValueError("at least one method is required")


_BLOCKS = {
    "geometry": GridSpec, "deployment": DeploymentConfig, "channel": ChannelParams,
    "clustering": ClusteringSpec, "tms": TmsPolicy, "protocol": ProtocolParams, "power": PowerModel,
}
_TUPLE_FIELDS = {("geometry", "layout"), ("channel", "rate_table")}
_OUTPUT_FIELDS = ("out_dir", "write_links", "write_trace")


def _to_jsonable(v):
    if isinstance(v, (str, int, float, bool)) or v is None:
        return v.value if hasattr(v, "value") else v
    if isinstance(v, (tuple, list)):
        return [_to_jsonable(x) for x in v]
    if hasattr(v, "value"):
        return v.value
    raise TypeError(type(v))


def config_to_dict(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = {g.name: _to_jsonable(getattr(v, g.name)) for g in fields(v)}
        else:
            out[f.name] = _to_jsonable(v)
    return out


def config_from_dict(d: dict) -> RunConfig:
    """Validate a nested config mapping; unknown keys are rejected."""
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(RunConfig)}
    unknown = set(d) - top
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    try:
        for name, value in d.items():
            if name in _BLOCKS:
                cls = _BLOCKS[name]
                if not isinstance(value, dict):
                    raise ConfigError(f"section {name!r} must be an object")
                allowed = {f.name for f in fields(cls)}
                bad = set(value) - allowed
                if bad:
                    raise ConfigError(f"unknown keys in {name!r}: {sorted(bad)}")
                sub = {}
                for k, v in value.items():
                    if (name, k) in _TUPLE_FIELDS:
                        v = tuple(tuple(x) for x in v)
                    sub[k] = v
                kw[name] = cls(**sub)
            elif name == "methods":
                kw[name] = tuple(value)
            else:
                kw[name] = value
        return RunConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc)


# --- pipeline --------------------------------------------------------------------

def _seeds(seed: int) -> dict[str, int]:
    s = np.random.SeedSequence(seed).generate_state(5)
    return dict(zip(("environment", "deployment", "clustering", "protocol", "shadowing"),
                    (int(x) for x in s)))


@dataclass
class Scenario:
    """Everything shared by runs of one seed: layout, devices and cellular links."""

    env: object
    devices: list
    table: DeviceTable
    links: object
    channel: ChannelParams


def prepare(cfg: RunConfig) -> Scenario:
    seeds = _seeds(cfg.seed)
    env = build_environment(cfg.deployment.cell_radius, seeds["environment"], cfg.geometry)
    dep = cfg.deployment
    devices = deploy_devices(env, dep.n_devices, seeds["deployment"],
                             battery_capacity=dep.battery_capacity, max_tx_power=dep.max_tx_power,
                             reports_per_day=dep.reports_per_day, packet_bits=dep.packet_bits)
    channel = cfg.channel
    if channel.shadowing:
        channel = replace(channel, shadowing_seed=seeds["shadowing"])
    table = DeviceTable.from_devices(devices, env)
    return Scenario(env, devices, table, cellular_links(env, table, channel), channel)


@dataclass
class RunResult:
    summary: RunSummary
    assignments: dict[int, ModeAssignment]
    formation: dict
    reports: dict
    clusters: list
    trace: EventTrace
    stats: list
    k: int


def _cellular_map(sc: Scenario) -> dict[int, tuple[float, float]]:
    return dict(zip(sc.table.ids.tolist(),
                    zip(sc.links.rate_bps.tolist(), sc.links.dl_rate_bps.tolist())))


def _run(cfg: RunConfig, sc: Scenario, method: str | None) -> RunResult:
    seeds = _seeds(cfg.seed)
    dep, pm, policy = cfg.deployment, cfg.power, cfg.tms
    table, links = sc.table, sc.links
    clusters = []
    k = 0
    if cfg.d2d:
        spec = replace(cfg.clustering, method=Method(method), rng_seed=seeds["clustering"])
        k = cluster_count(dep.cell_radius, replace(spec, method=Method.GEOMETRIC))
        if spec.method != Method.GEOMETRIC:
            spec = replace(spec, k=k)
        try:
            clusters = run_clustering(table, dep.cell_radius, spec, links.snr_db)
        except ValueError as exc:
            raise ContractViolation("clustering", str(exc)) from exc

    cellular = _cellular_map(sc)
    pparams = replace(cfg.protocol, ue_tx_dbm=dep.max_tx_power, seed=seeds["protocol"])
    sim = Simulator(0.0, pparams)
    sim.power = pm
    horizon = cfg.simulated_days * DAY_S
    n_rounds = max(1, math.ceil(horizon / policy.delta_t - 1e-9))
    battery = np.full(len(table), pm.capacity_j)
    rejected: set = set()
    established: dict = {}
    traces, stats = [], []
    assignments: dict[int, ModeAssignment] = {}
    d2d_cache: dict = {}

    def link_for(pair):
        lk = d2d_cache.get(pair)
        if lk is None:
            lk = d2d_cache[pair] = d2d_link(table, table.row(pair[0]), table.row(pair[1]), sc.channel)
        return lk

    for rnd in range(n_rounds):
        t0 = rnd * policy.delta_t
        span = min(policy.delta_t, horizon - t0)
        sim.now = max(sim.now, t0)
        mark = sim.mark()
        for _ in range(MAX_FORMATION_ROUNDS):
            res = tms_round(clusters, table, links, policy, pm, channel=sc.channel, battery_j=battery,
                            rejected=rejected, reports_per_day=dep.reports_per_day,
                            packet_bits=dep.packet_bits, control_bits=pparams.control_bits,
                            tx_dbm=dep.max_tx_power, d2d=cfg.d2d)
            assignments = res.assignments
            pending = {i: a for i, a in assignments.items() if a.mode == Mode.REMOTE
                       and established.get((i, a.paired_relay)) != "Established"}
            if not pending:
                break
            pairs = {(i, a.paired_relay): link_for((i, a.paired_relay)) for i, a in pending.items()}
            _, outcome = run_formation(pending, pairs, policy, sim, cellular=cellular)
            established.update(outcome)
            new_rej = {p for p, o in outcome.items() if o == "Rejected"}
            if not new_rej:
                break
            rejected |= new_rej
        assignments = _demote_unformed(assignments, established, links, table)
        d2d_links = {(i, a.paired_relay): link_for((i, a.paired_relay))
                     for i, a in assignments.items() if a.mode == Mode.REMOTE}
        try:
            _, st = run_report_cycle(assignments, cellular, d2d_links, sim,
                                     reports_per_day=dep.reports_per_day,
                                     packet_bits=dep.packet_bits, horizon_s=span, params=pparams,
                                     power=pm, origin=pparams.origin, start=t0)
        except ProtocolError as exc:
            raise ContractViolation("protocol", str(exc)) from exc
        round_trace = sim.trace_since(mark)
        traces.append(round_trace)
        stats.append(st)
        rep = energy_of_trace(round_trace.shifted(-t0), pm, horizon_s=span,
                              device_ids=table.ids.tolist(), check_overlap=False)
        battery = battery - np.array([rep[int(i)].total_j for i in table.ids])

    trace = EventTrace.concat(traces)
    try:
        reports = energy_of_trace(trace, pm, horizon_s=horizon, device_ids=table.ids.tolist())
    except ValueError as exc:
        raise ContractViolation("energy", str(exc)) from exc
    label = method if cfg.d2d else "baseline"
    # output locations do not change results
    ident = {k: v for k, v in config_to_dict(cfg).items() if k not in _OUTPUT_FIELDS}
    summary = summarize(label, assignments, reports, ident, established,
                        clusters=len(clusters))
    return RunResult(summary, assignments, established, reports, clusters, trace, stats, k)


def _demote_unformed(assignments, established, links, table):
    out = dict(assignments)
    rate = dict(zip(table.ids.tolist(), links.rate_bps.tolist()))
    relays_used: set = set()
    for i, a in assignments.items():
        if a.mode != Mode.REMOTE:
            continue
        if established.get((i, a.paired_relay)) == "Established":
            relays_used.add(a.paired_relay)
        else:
            mode = Mode.CELLULAR if rate[i] > 0 else Mode.UNREACHABLE
            out[i] = ModeAssignment(i, mode, None, a.projected_life_days)
    for i, a in assignments.items():
        if a.mode == Mode.RELAY and i not in relays_used:
            out[i] = ModeAssignment(i, Mode.CELLULAR, None, a.projected_life_days)
    return out


def _write_artifacts(cfg: RunConfig, sc: Scenario, res: RunResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_summary_json(os.path.join(out_dir, "summary.json"), res.summary)
    write_cdf_csv(os.path.join(out_dir, "cdf_battery.csv"), res.summary.cdf_points)
    ids = sc.table.ids
    labels = cluster_labels(res.clusters, ids)
    with open(os.path.join(out_dir, "devices.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["device_id", "x", "y", "z", "building_id", "floor", "pathloss_db", "snr_db",
                    "rate_bps", "cluster_id", "mode", "paired_relay", "projected_life_days",
                    "energy_per_day_j", "battery_life_days"])
        t, lk = sc.table, sc.links
        for r, i in enumerate(ids.tolist()):
            a = res.assignments[i]
            rep = res.reports[i]
            w.writerow([i, f"{t.x[r]:.3f}", f"{t.y[r]:.3f}", f"{t.z[r]:.2f}", int(t.building[r]),
                        int(t.floor[r]), f"{lk.pathloss_db[r]:.4f}", f"{lk.snr_db[r]:.4f}",
                        f"{lk.rate_bps[r]:.1f}", int(labels[r]), a.mode.value,
                        "" if a.paired_relay is None else a.paired_relay,
                        f"{a.projected_life_days:.4f}", f"{rep.energy_per_day_j:.9f}",
                        f"{rep.battery_life_days:.4f}"])
    write_clusters_csv(os.path.join(out_dir, "clusters.csv"), res.clusters, ids,
                       res.summary.label if cfg.d2d else Method.GEOMETRIC)
    write_assignments_csv(os.path.join(out_dir, "assignments.csv"), res.assignments)
    write_energy_csv(os.path.join(out_dir, "energy.csv"), res.reports)
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(config_to_dict(cfg), fh, sort_keys=True, indent=2)
        fh.write("\n")
    if cfg.write_links:
        links = [sc.links.link(r) for r in range(len(ids))]
        links += [d2d_link(sc.table, sc.table.row(i), sc.table.row(a.paired_relay), sc.channel)
                  for i, a in sorted(res.assignments.items()) if a.mode == Mode.REMOTE]
        write_links_csv(os.path.join(out_dir, "links.csv"), links)
    if cfg.write_trace:
        with open(os.path.join(out_dir, "trace.txt"), "w") as fh:
            res.trace.write_records(fh)


def run_scenario(cfg: RunConfig, scenario: Scenario | None = None,
                 method: str | None = None) -> RunResult:
    """Run one clustering method (or the no-D2D baseline) and write artifacts."""
    sc = scenario or prepare(cfg)
    method = method or cfg.methods[0]
    res = _run(cfg, sc, method)
    if cfg.out_dir:
        _write_artifacts(cfg, sc, res, cfg.out_dir)
    return res


def compare_methods(cfg: RunConfig, methods=None, *, include_baseline: bool = False,
                    scenario: Scenario | None = None) -> list[RunSummary]:
    """One run per method on the identical environment, deployment and seed."""
    methods = [Method(m).value for m in (methods or cfg.methods)]
    if not methods:
        raise ValueError("at least one method is required")
    sc = scenario or prepare(cfg)
    labels = (["baseline"] if include_baseline else []) + methods
    out = []
    for label in labels:
        sub = replace(cfg, d2d=label != "baseline",
                      out_dir=os.path.join(cfg.out_dir, label) if cfg.out_dir else None)
        out.append(run_scenario(sub, sc, methods[0] if label == "baseline" else label).summary)
    if cfg.out_dir:
        write_comparison_csv(os.path.join(cfg.out_dir, "comparison.csv"), out)
    return out


def write_comparison_csv(path, summaries) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "availability", "frac_meeting_10y", "clusters", "n_devices"])
        for s in summaries:
            w.writerow([s.label, f"{s.availability:.6f}", f"{s.frac_meeting_10y:.6f}", s.clusters,
                        s.n_devices])


# --- CLI -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="d2dmtc", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=[m.value for m in Method] + ["all"])
    p.add_argument("--a-sector", type=float, dest="a_sector", help="cluster area in m^2")
    p.add_argument("--baseline", action="store_true", help="disable D2D (cellular only)")
    p.add_argument("--days", type=float, help="simulated days")
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        doc = {}
        if args.config:
            with open(args.config) as fh:
                doc = json.load(fh)
        cfg = config_from_dict(doc)
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.days is not None:
            over["simulated_days"] = args.days
        if args.out is not None:
            over["out_dir"] = args.out
        if args.baseline:
            over["d2d"] = False
        if args.method and args.method != "all":
            over["methods"] = (args.method,)
        elif args.method == "all":
            over["methods"] = tuple(m.value for m in Method)
        if args.a_sector is not None:
            over["clustering"] = replace(cfg.clustering, a_sector=args.a_sector)
        cfg = replace(cfg, **over)
    except (OSError, json.JSONDecodeError, ConfigError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if len(cfg.methods) > 1 and cfg.d2d:
            summaries = compare_methods(cfg)
        else:
            summaries = [run_scenario(cfg).summary]
    except ContractViolation as exc:
        print(f"contract violation {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (ProtocolError, ValueError) as exc:
        print(f"contract violation [pipeline] {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    for s in summaries:
        print(f"{s.label:>14s}  availability={s.availability:.4f}  "
              f"meets_10y={s.frac_meeting_10y:.4f}  clusters={s.clusters}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
