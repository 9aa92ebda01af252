"""
Quadratic anchors
=================

Every regularizer in the simulator is a sum of anchors. An anchor pulls the
parameters towards a reference point with per-coordinate stiffness
``lam * fisher``. EWC, L2 transfer, FedProx, FedCurv and Elastic Transfer only
differ in which anchors they build.
"""

import numpy as np

from elastic_fcl import penalty as pen

theta = np.array([1.0, 2.0])

# one anchor at the origin with stiffness (1, 4) and weight 2
ps = pen.PenaltySet([pen.Anchor([0.0, 0.0], [1.0, 4.0], 2.0)])
print("value:", pen.penalty_value(theta, ps))          # 17
print("gradient:", pen.penalty_grad(theta, ps))        # [2, 16]

# EWC with a flat Fisher is plain L2 transfer
rng = np.random.default_rng(0)
old = [rng.normal(size=2) for _ in range(3)]
ewc = pen.make_ewc_anchors([(t, np.ones(2)) for t in old], 0.5)
l2t = pen.make_l2_transfer_anchors(old, 0.5)
print("EWC(ones) == L2T:", pen.penalty_value(theta, ewc) == pen.penalty_value(theta, l2t))

# FedCurv with one flat peer estimate is the FedProx proximal term
theta_g = np.array([0.5, 0.5])
curv = pen.make_fedcurv_anchors([(theta_g, np.ones(2))], 0.3)
prox = pen.make_proximal_anchor(theta_g, 0.3)
print("FedCurv(ones) == FedProx:", pen.penalty_value(theta, curv) == pen.penalty_value(theta, prox))

# Elastic Transfer on a client with two peers, after the first task: one own
# refined anchor, two refined peer anchors, two rough peer anchors.
est = lambda: (rng.normal(size=2), rng.uniform(0, 1, 2))
et = pen.make_elastic_transfer_anchors(est(), [est(), est()], [est(), est()],
                                       lam_own=0.0, lam_peer=0.5, lam_rough=0.0)
print("anchors:", len(et), "kinds:", [a.kind for a in et])
print("stored reals:", et.stored_reals())

# Anchors with a zero weight cost nothing at training time: the compiled form
# folds all active anchors into one diagonal Hessian h and offset b.
compiled = pen.CompiledPenalty(et, 2)
print("compiled gradient matches:", np.allclose(compiled.grad(theta), pen.penalty_grad(theta, et)))
