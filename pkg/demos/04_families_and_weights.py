"""
Baselines and penalty weights
=============================

Runs every family once on the same scenario and seed, then shows how the
Elastic Transfer weights move backward transfer. The shipped weight of 0.5 is
small next to the data-fit loss, so Elastic Transfer behaves much like
FedAvg there; larger weights trade plasticity for retention, and a weight far
too large makes SGD diverge.
"""

import numpy as np

from elastic_fcl import AlgorithmSpec, RoundSchedule, ScenarioConfig, generate_synthetic, simulate
from elastic_fcl.engine import FAMILIES, DivergenceError
from elastic_fcl.metrics import summarize

scenario = generate_synthetic(ScenarioConfig(seed=1))
schedule = RoundSchedule(rounds=10, epochs=3, seed=1)

print("%-16s %8s %8s %8s" % ("family", "amse", "bwt", "fwt"))
for fam in FAMILIES:
    s = summarize(simulate(scenario, AlgorithmSpec(fam), schedule).P)
    print("%-16s %8.4f %8.4f %8.4f" % (fam, s["amse"], s["bwt"], s["fwt"]))

print()
for lams in [(0, 0, 0), (0, 0.5, 0), (0, 5, 0), (5, 5, 0), (50, 50, 0)]:
    s = summarize(simulate(scenario, AlgorithmSpec("ElasticTransfer", lams), schedule).P)
    print("ElasticTransfer %-14s amse %.4f  bwt %.4f" % (lams, s["amse"], s["bwt"]))

# at lr * lam * F > 2 the quadratic overshoots and the run stops with a report
with np.errstate(all="ignore"):
    try:
        simulate(scenario, AlgorithmSpec("ElasticTransfer", (500, 500, 500), lr=0.5), schedule)
    except DivergenceError as exc:
        print("diverged:", exc)
