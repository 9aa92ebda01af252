"""
One Elastic Transfer run
========================

Three clients learn four tasks each. In every round one randomly chosen
client is offline; the rest train from the global model, exchange their
estimates and are averaged. At task boundaries each client folds the finished
task into its running Fisher sum and deletes the raw data.
"""

import numpy as np

from elastic_fcl import AlgorithmSpec, RoundSchedule, ScenarioConfig, generate_synthetic, simulate
from elastic_fcl.engine import audit_violations
from elastic_fcl.metrics import param_account, summarize

scenario = generate_synthetic(ScenarioConfig(seed=0))
for c in range(scenario.n_clients):
    print("client", c, "train sizes:", [len(scenario.cell(c, t).train) for t in range(4)])

algo = AlgorithmSpec("ElasticTransfer")          # shipped weights (0, 0.5, 0)
result = simulate(scenario, algo, RoundSchedule(rounds=25, epochs=5, seed=0))

# row i: test MSE on every task after finishing task i
np.set_printoptions(precision=4, suppress=True)
print(result.P)
print({k: round(v, 4) for k, v in summarize(result.P).items()})

acc = param_account("ElasticTransfer", result.n_params, 3, 4)
print("static reals per client: %d (%s)" % (acc.static_count, acc.formula))
print("messages: peer-to-peer %d, star %d" % (result.messages.p2p, result.messages.star))

# the audit log shows every access to raw data; nothing after deletion
print("raw data reads:", sum(ev.action == "read" for ev in result.audit))
print("reads after deletion:", len(audit_violations(result.audit)))

# who was offline in the first rounds of task 2
for ev in result.log.events:
    if ev[0] == "select" and ev[1] == 1 and ev[2] < 4:
        print("task 2 round", ev[2] + 1, "participants", ev[3])
