"""One cell, step by step: links, clusters, mode selection and what D2D buys.

Runs at 3000 devices so it finishes in a few seconds:

    python demos/walkthrough.py [seed]
"""
import sys
from collections import Counter
from dataclasses import replace

import numpy as np

from d2dmtc.clustering import Method
from d2dmtc.runner import RunConfig, prepare, run_scenario

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 1
cfg = RunConfig(seed=seed)
cfg = replace(cfg, deployment=replace(cfg.deployment, n_devices=3000))
sc = prepare(cfg)

print(f"environment: {len(sc.env.buildings)} buildings, {len(sc.devices)} indoor devices")
snr = sc.links.snr_db
print(f"uplink SNR  p10={np.percentile(snr, 10):6.1f} dB  median={np.median(snr):6.1f} dB  "
      f"p90={np.percentile(snr, 90):6.1f} dB")
dead = np.count_nonzero(sc.links.rate_bps == 0)
print(f"below the rate cutoff: {dead} devices ({dead / len(snr):.1%})\n")

base = run_scenario(replace(cfg, d2d=False), sc)
print(f"cellular only      availability={base.summary.availability:.4f}  "
      f"10-year={base.summary.frac_meeting_10y:.4f}")

for m in Method:
    res = run_scenario(cfg, sc, m.value)
    modes = Counter(a.mode.value for a in res.assignments.values())
    sizes = [len(c.members) for c in res.clusters]
    print(f"{m.value:<18s} availability={res.summary.availability:.4f}  "
          f"10-year={res.summary.frac_meeting_10y:.4f}  K={len(res.clusters)}  "
          f"median cluster={int(np.median(sizes))}  relays={modes['relay']}  "
          f"remotes={modes['remote']}")

# a single remote and the relay that carries it
res = run_scenario(cfg, sc, "geometric")
rid, a = next((i, a) for i, a in sorted(res.assignments.items()) if a.mode.value == "remote")
row, rrow = sc.table.row(rid), sc.table.row(a.paired_relay)
print(f"\nremote {rid}: cellular SNR {snr[row]:.1f} dB, battery life "
      f"{res.reports[rid].battery_life_days:.0f} days via relay {a.paired_relay} "
      f"(relay SNR {snr[rrow]:.1f} dB, life {res.reports[a.paired_relay].battery_life_days:.0f} days)")
