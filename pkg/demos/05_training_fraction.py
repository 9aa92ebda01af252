"""
Less data per client
====================

Shrinks every client's training split and compares Elastic Transfer with
clients that learn alone (Local EWC). With little data every method is poor;
as data grows, sharing estimates across clients pays off more.
"""

from elastic_fcl import AlgorithmSpec, RoundSchedule, ScenarioConfig, generate_synthetic, simulate
from elastic_fcl.metrics import amse
from elastic_fcl.scenario import scale_train_fraction

schedule = RoundSchedule(rounds=30, epochs=1, dropout="none", seed=0)
base = generate_synthetic(ScenarioConfig(seed=0))

print("%8s %10s %10s %8s" % ("fraction", "ET", "LocalEWC", "gap"))
for f in (0.2, 0.4, 0.6, 0.8, 1.0):
    sc = scale_train_fraction(base, f, seed=0)
    et = amse(simulate(sc, AlgorithmSpec("ElasticTransfer"), schedule).P)
    lo = amse(simulate(sc, AlgorithmSpec("LocalEWC"), schedule).P)
    print("%8.1f %10.4f %10.4f %8.4f" % (f, et, lo, lo - et))

# smaller fractions are prefixes of one permutation, so the 20% split is
# contained in the 40% split
a = scale_train_fraction(base, 0.2, seed=0).cell(0, 1).train.ids
b = scale_train_fraction(base, 0.4, seed=0).cell(0, 1).train.ids
print("nested:", set(a) <= set(b), len(a), len(b))
