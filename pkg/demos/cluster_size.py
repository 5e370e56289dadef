"""How the cluster area changes availability for each clustering method.

Smaller clusters mean fewer relay candidates per remote.  Pass a device count
to trade fidelity for speed (default 5000):

    python demos/cluster_size.py [n_devices]
"""
import sys
from dataclasses import replace

from d2dmtc.clustering import Method
from d2dmtc.runner import RunConfig, prepare, run_scenario

n = int(sys.argv[1]) if len(sys.argv) > 1 else 5000
cfg = RunConfig()
cfg = replace(cfg, deployment=replace(cfg.deployment, n_devices=n))
sc = prepare(cfg)
areas = (160000.0, 40000.0, 10000.0, 2500.0)

print("a_sector  " + "".join(f"{m.value:>14s}" for m in Method))
for area in areas:
    c = replace(cfg, clustering=replace(cfg.clustering, a_sector=area))
    row = [run_scenario(c, sc, m.value).summary.availability for m in Method]
    print(f"{area:8.0f}  " + "".join(f"{v:14.4f}" for v in row))
