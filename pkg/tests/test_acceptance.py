"""Acceptance criteria, one test each.

Every test records a one-line verdict; the lines are printed together at the
end of the pytest run (see ``conftest.pytest_terminal_summary``). Run this file
directly with ``python3 tests/test_acceptance.py`` for the same output.
"""
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from elastic_fcl import cli
from elastic_fcl import penalty as pen
from elastic_fcl.engine import (FAMILIES, AlgorithmSpec, RoundSchedule, audit_violations,
                                simulate)
from elastic_fcl.metrics import amse, bwt, fwt, param_account
from elastic_fcl.numeric import LabeledSet, MlpSpec, fisher_diagonal, grad_mse, mse_loss
from elastic_fcl.scenario import ScenarioConfig, generate_synthetic, scale_train_fraction

sys.path.insert(0, str(Path(__file__).parent))
from conftest import central_diff, max_rel_err, random_instance  # noqa: E402

RESULTS = []
AUDITS = []


def report(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def track(result):
    AUDITS.append(result.audit)
    return result


def run_family(scenario, family, seed, rounds=25, epochs=5, dropout="drop_one_uniform",
               lambdas=None):
    algo = AlgorithmSpec(family=family, lambdas=lambdas)
    sched = RoundSchedule(rounds=rounds, epochs=epochs, dropout=dropout, seed=seed)
    return track(simulate(scenario, algo, sched))


def test_criterion_01_gradient_oracle():
    start = time.perf_counter()
    worst_fit = worst_pen = worst_total = 0.0
    for i in range(50):
        rng = np.random.default_rng(1000 + i)
        spec, theta, batch = random_instance(rng, n=int(rng.integers(1, 9)))
        ps = pen.PenaltySet(
            pen.Anchor(rng.normal(size=theta.size), rng.uniform(0, 2, theta.size),
                       float(rng.uniform(0, 1)), pen.ANCHOR_KINDS[k % 4])
            for k in range(int(rng.integers(1, 5))))
        fd_fit = central_diff(lambda t: mse_loss(spec, t, batch), theta)
        fd_pen = central_diff(lambda t: pen.penalty_value(t, ps), theta)
        fd_total = central_diff(lambda t: mse_loss(spec, t, batch) + pen.penalty_value(t, ps),
                                theta)
        g_fit = grad_mse(spec, theta, batch)
        g_pen = pen.penalty_grad(theta, ps)
        worst_fit = max(worst_fit, max_rel_err(g_fit, fd_fit))
        worst_pen = max(worst_pen, max_rel_err(g_pen, fd_pen))
        worst_total = max(worst_total, max_rel_err(g_fit + g_pen, fd_total))
    elapsed = time.perf_counter() - start
    ok = max(worst_fit, worst_pen, worst_total) <= 1e-4 and elapsed < 10
    report(1, ok, f"50 instances, max rel err fit={worst_fit:.2e} penalty={worst_pen:.2e} "
                  f"total={worst_total:.2e}, {elapsed:.2f}s")


def test_criterion_02_fisher_oracle():
    worst = 0.0
    for i in range(20):
        rng = np.random.default_rng(2000 + i)
        spec, theta, data = random_instance(rng, n=int(rng.integers(1, 12)))
        sq = [central_diff(lambda t: mse_loss(spec, t, data.subset([k])), theta) ** 2
              for k in range(len(data))]
        worst = max(worst, max_rel_err(fisher_diagonal(spec, theta, data), np.mean(sq, axis=0)))
    hand = fisher_diagonal(MlpSpec((1, 1)), np.array([1.0, 0.0]), LabeledSet([[2.0]], [1.0]))
    hand_err = abs(hand[0] - 16.0)
    ok = worst <= 1e-4 and hand_err <= 1e-12
    report(2, ok, f"20 instances max rel err={worst:.2e}; hand case F_w={float(hand[0])!r} "
                  f"(err {hand_err:.1e})")


def _small_scenario(clients=3, tasks=3, seed=7):
    sizes = tuple(tuple(40 + 15 * ((c * tasks + t) % 4) for t in range(tasks))
                  for c in range(clients))
    return generate_synthetic(ScenarioConfig(clients=clients, tasks=tasks, size_table=sizes,
                                             seed=seed))


def test_criterion_03_reduction_identities():
    sc = _small_scenario()
    checks = {}
    et = run_family(sc, "ElasticTransfer", 5, rounds=3, epochs=2, lambdas=(0, 0, 0))
    fa = run_family(sc, "FedAvgSGD", 5, rounds=3, epochs=2)
    checks["ET(0,0,0)=FedAvgSGD"] = (np.array_equal(et.P, fa.P)
                                     and np.array_equal(et.theta_global, fa.theta_global)
                                     and et.log.to_csv() == fa.log.to_csv())

    rng = np.random.default_rng(3)
    thetas = [rng.normal(size=200) for _ in range(3)]
    x = rng.normal(size=200)
    ewc = pen.make_ewc_anchors([(t, np.ones(200)) for t in thetas], 0.5)
    l2t = pen.make_l2_transfer_anchors(thetas, 0.5)
    checks["EWC(ones)=L2T"] = (pen.penalty_value(x, ewc) == pen.penalty_value(x, l2t)
                               and np.array_equal(pen.penalty_grad(x, ewc),
                                                  pen.penalty_grad(x, l2t)))

    theta_g = rng.normal(size=200)
    rough = pen.make_fedcurv_anchors([(theta_g, np.ones(200))], 0.5)
    prox = pen.make_proximal_anchor(theta_g, 0.5)
    checks["rough(unit)=FedProx"] = (pen.penalty_value(x, rough) == pen.penalty_value(x, prox)
                                     and np.array_equal(pen.penalty_grad(x, rough),
                                                        pen.penalty_grad(x, prox)))

    one = _small_scenario(clients=1)
    fa1 = run_family(one, "FedAvgSGD", 2, rounds=3, epochs=2, dropout="none")
    lo1 = run_family(one, "LocalSGD", 2, rounds=3, epochs=2, dropout="none")
    checks["C=1 FedAvgSGD=LocalSGD"] = np.array_equal(fa1.P, lo1.P)
    report(3, all(checks.values()),
           "; ".join(f"{k} {'bitwise' if v else 'DIFFERS'}" for k, v in checks.items()))


def test_criterion_04_metric_oracles():
    P = np.array([[0.10, 0.30, 0.40], [0.20, 0.10, 0.35], [0.30, 0.20, 0.10]])
    got = (amse(P), bwt(P), fwt(P))
    ok = all(abs(g - e) <= 1e-12 for g, e in zip(got, (0.10, 0.4 / 3, 0.35)))
    C = np.full((4, 4), 0.2)
    ok &= amse(C) == pytest.approx(0.2, abs=1e-12) and bwt(C) == 0 \
        and fwt(C) == pytest.approx(0.2, abs=1e-12)
    rng = np.random.default_rng(4)
    for _ in range(100):
        Q = rng.uniform(0, 1, (2, 2))
        ok &= bwt(Q) == Q[1, 0] - Q[0, 0] and fwt(Q) == Q[0, 1]
    report(4, ok, f"3x3 matrix gives amse={got[0]!r} bwt={got[1]!r} fwt={got[2]!r}; "
                  "constant and T=2 closed forms checked")


def test_criterion_05_parameter_accounting():
    expected = {"LocalEWC": 61448, "FedProxEWC": 69129, "FedProxSGD": 7681, "FedAvgSGD": 0}
    got = {f: param_account(f, 7681, 3, 4).static_count for f in expected}
    report(5, got == expected, ", ".join(f"{f}={v}" for f, v in got.items()))


def _trace_run(seed):
    sc = _small_scenario(clients=3, tasks=2, seed=seed)
    algo = AlgorithmSpec("ElasticTransfer", lambdas=(0.5, 0.5, 0.5))
    sched = RoundSchedule(rounds=3, epochs=1, dropout="drop_one_uniform", seed=seed)
    return track(simulate(sc, algo, sched))


def _check_trace(events):
    problems = []
    refined = [i for i, e in enumerate(events) if e[0] == "broadcast_refined"]
    starts = [i for i, e in enumerate(events) if e[0] == "task_start"]
    if len(refined) != 1 or events[refined[0]][1] != 1:
        problems.append("refined broadcast not exactly once at the second task")
    else:
        consolidations = [i for i, e in enumerate(events) if e[0] == "consolidate"]
        first_select = min(i for i, e in enumerate(events) if e[0] == "select" and e[1] == 1)
        if not (starts[1] < max(consolidations) < refined[0] < first_select):
            problems.append("refined broadcast out of order")
    last_seen = {}
    stale_retained = 0
    chosen = None
    for e in events:
        if e[0] == "select":
            chosen, t, r = e[3], e[1], e[2]
            rough_count = 0
        elif e[0] == "broadcast_rough":
            rough_count += 1
            for c in chosen:
                last_seen[c] = (t, r)
            for receiver, inbox in e[4].items():
                for sender, stamp in inbox.items():
                    if stamp != last_seen[sender]:
                        problems.append(f"inbox of {receiver} holds {stamp} for {sender}")
                    if sender not in chosen and stamp == (t, r - 1):
                        stale_retained += 1
        elif e[0] == "aggregate":
            if rough_count != 1:
                problems.append(f"{rough_count} rough broadcasts in task {t} round {r}")
            if e[3] != len(chosen):
                problems.append(f"aggregate over {e[3]} clients, {len(chosen)} selected")
    return problems, stale_retained


def test_criterion_06_protocol_trace():
    start = time.perf_counter()
    # first seed whose drop pattern leaves a client out right after it sent
    for seed in range(50):
        res = _trace_run(seed)
        problems, stale = _check_trace(res.log.events)
        if problems or stale:
            break
    elapsed = time.perf_counter() - start
    n_rounds = sum(1 for e in res.log.events if e[0] == "aggregate")
    ok = not problems and stale > 0 and elapsed < 5
    detail = (f"seed {seed}: {n_rounds} rounds, refined broadcast once at task boundary, "
              f"{stale} stale rough entries retained one round, {elapsed:.2f}s")
    report(6, ok, detail if not problems else "; ".join(problems[:3]))


@pytest.mark.slow
def test_criterion_07_qualitative_ordering():
    start = time.perf_counter()
    stats = {f: [] for f in ("ElasticTransfer", "LocalEWC", "STL")}
    for seed in range(10):
        sc = generate_synthetic(ScenarioConfig(seed=seed))
        for fam in stats:
            P = run_family(sc, fam, seed).P
            stats[fam].append((amse(P), bwt(P)))
    med = {f: np.median(np.array(v), axis=0) for f, v in stats.items()}
    elapsed = time.perf_counter() - start
    amse_ok = med["ElasticTransfer"][0] < med["LocalEWC"][0] < med["STL"][0]
    bwt_ok = med["ElasticTransfer"][1] <= med["LocalEWC"][1]
    detail = (f"median AMSE ET={med['ElasticTransfer'][0]:.4f} LocalEWC={med['LocalEWC'][0]:.4f} "
              f"STL={med['STL'][0]:.4f} ({'ordered' if amse_ok else 'NOT ordered'}); "
              f"median BWT ET={med['ElasticTransfer'][1]:.4f} "
              f"LocalEWC={med['LocalEWC'][1]:.4f} ({'ok' if bwt_ok else 'ET above LocalEWC'}); "
              f"10 seeds, {elapsed:.0f}s")
    report(7, amse_ok and bwt_ok and elapsed < 600, detail)


@pytest.mark.slow
def test_criterion_08_ablation_shape():
    fractions = (0.2, 0.4, 0.6, 0.8, 1.0)
    seeds = range(5)
    curves = {f: np.zeros((len(seeds), len(fractions))) for f in ("ElasticTransfer", "LocalEWC")}
    for si, seed in enumerate(seeds):
        base = generate_synthetic(ScenarioConfig(seed=seed))
        for fi, frac in enumerate(fractions):
            sc = scale_train_fraction(base, frac, seed=seed)
            for fam, arr in curves.items():
                arr[si, fi] = amse(run_family(sc, fam, seed, rounds=60, epochs=1,
                                              dropout="none").P)
    med = {f: np.median(a, axis=0) for f, a in curves.items()}
    monotone = True
    for curve in med.values():
        band = 0.10 * curve[-1]
        monotone &= all(curve[i + 1] <= curve[i] + band for i in range(len(curve) - 1))
    gaps = curves["LocalEWC"] - curves["ElasticTransfer"]
    gap_lo, gap_hi = np.median(gaps[:, 0]), np.median(gaps[:, -1])
    ok = monotone and gap_hi > gap_lo
    et = ", ".join(f"{v:.4f}" for v in med["ElasticTransfer"])
    lo = ", ".join(f"{v:.4f}" for v in med["LocalEWC"])
    report(8, ok, f"median AMSE ET [{et}] LocalEWC [{lo}]; "
                  f"gap f=0.2 {gap_lo:.4f} vs f=1.0 {gap_hi:.4f}")


def test_criterion_09_data_locality():
    sc = _small_scenario(clients=3, tasks=3)
    for fam in FAMILIES:
        run_family(sc, fam, 1, rounds=2, epochs=1)
    bad = [v for audit in AUDITS for v in audit_violations(audit)]
    reads = sum(1 for audit in AUDITS for ev in audit if ev.action == "read")
    report(9, not bad, f"{len(AUDITS)} runs, {reads} raw-data reads, "
                       f"{len(bad)} after consolidation")


def test_criterion_10_end_to_end_determinism(tmp_path):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text("seed = 7\n")
    for d in ("a", "b"):
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / d),
                         "--quiet"]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = [n for n in names
            if (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()]
    report(10, names and same == names, f"{len(same)}/{len(names)} report files identical "
                                         f"({', '.join(names)})")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
