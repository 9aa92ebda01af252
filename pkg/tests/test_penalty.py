import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastic_fcl import penalty as pen
from elastic_fcl.numeric import DimensionError

from conftest import central_diff, max_rel_err


def random_set(rng, size, n_anchors):
    return pen.PenaltySet(
        pen.Anchor(rng.normal(size=size), rng.uniform(0, 3, size), float(rng.uniform(0, 2)),
                   pen.ANCHOR_KINDS[i % 4])
        for i in range(n_anchors))


def quadratic_oracle(theta, ps):
    total = 0.0
    for a in ps:
        for k in range(len(theta)):
            total += a.lam / 2 * a.fisher[k] * (theta[k] - a.theta_ref[k]) ** 2
    return total


class TestValue:
    def test_zero_at_reference(self):
        ref = np.array([1.0, -2.0, 0.5])
        ps = pen.PenaltySet([pen.Anchor(ref, [1, 2, 3], 2.0), pen.Anchor(ref, [0, 1, 1], 0.3)])
        assert pen.penalty_value(ref, ps) == 0.0

    def test_zero_lambdas(self, rng):
        ps = pen.PenaltySet(pen.Anchor(rng.normal(size=4), np.ones(4), 0.0) for _ in range(3))
        assert pen.penalty_value(rng.normal(size=4), ps) == 0.0
        assert ps.is_inactive

    def test_hand_case(self):
        ps = pen.PenaltySet([pen.Anchor([0.0, 0.0], [1.0, 4.0], 2.0)])
        assert pen.penalty_value(np.array([1.0, 2.0]), ps) == 17.0

    def test_matches_loop_oracle(self, rng):
        ps = random_set(rng, 6, 4)
        theta = rng.normal(size=6)
        assert pen.penalty_value(theta, ps) == pytest.approx(quadratic_oracle(theta, ps), rel=1e-13)

    def test_length_mismatch(self):
        ps = pen.PenaltySet([pen.Anchor([0.0, 0.0], [1.0, 1.0], 1.0)])
        with pytest.raises(DimensionError):
            pen.penalty_value(np.zeros(3), ps)

    def test_anchor_validation(self):
        with pytest.raises(DimensionError):
            pen.Anchor([0.0, 0.0], [1.0], 1.0)
        with pytest.raises(ValueError):
            pen.Anchor([0.0], [1.0], -1.0)
        with pytest.raises(ValueError):
            pen.Anchor([0.0], [-1.0], 1.0)
        with pytest.raises(DimensionError):
            pen.PenaltySet([pen.Anchor([0.0], [1.0], 1.0), pen.Anchor([0.0, 1.0], [1.0, 1.0], 1.0)])


class TestGrad:
    def test_zero_at_reference(self):
        ref = np.array([0.3, 0.4])
        ps = pen.PenaltySet([pen.Anchor(ref, [5.0, 1.0], 3.0)])
        assert np.all(pen.penalty_grad(ref, ps) == 0)

    def test_hand_case(self):
        ps = pen.PenaltySet([pen.Anchor([0.0, 0.0], [1.0, 4.0], 2.0)])
        assert np.array_equal(pen.penalty_grad(np.array([1.0, 2.0]), ps), [2.0, 16.0])

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        ps = random_set(rng, 8, 3)
        theta = rng.normal(size=8)
        fd = central_diff(lambda t: pen.penalty_value(t, ps), theta)
        assert max_rel_err(pen.penalty_grad(theta, ps), fd) <= 1e-4

    def test_compiled_matches_reference(self, rng):
        ps = random_set(rng, 10, 5)
        theta = rng.normal(size=10)
        compiled = pen.CompiledPenalty(ps, 10)
        assert np.allclose(compiled.grad(theta), pen.penalty_grad(theta, ps), rtol=1e-12, atol=1e-12)


class TestBuilders:
    def test_ewc_empty_history(self):
        assert len(pen.make_ewc_anchors([], 1.0)) == 0

    def test_ewc_counts_and_storage(self):
        P = 7681
        history = [(np.zeros(P), np.ones(P)) for _ in range(4)]
        ps = pen.make_ewc_anchors(history, 0.5)
        assert len(ps) == 4
        assert ps.stored_reals() == 8 * P == 61448
        assert all(a.kind == pen.OWN_PREVIOUS_REFINED for a in ps)

    def test_ewc_unit_fisher_is_l2_transfer(self, rng):
        thetas = [rng.normal(size=5) for _ in range(3)]
        ewc = pen.make_ewc_anchors([(t, np.ones(5)) for t in thetas], 0.7)
        l2t = pen.make_l2_transfer_anchors(thetas, 0.7)
        x = rng.normal(size=5)
        assert pen.penalty_value(x, ewc) == pen.penalty_value(x, l2t)
        assert np.array_equal(pen.penalty_grad(x, ewc), pen.penalty_grad(x, l2t))

    def test_fedcurv_counts(self, rng):
        assert len(pen.make_fedcurv_anchors([], 1.0)) == 0
        peers = [(rng.normal(size=3), np.ones(3)) for _ in range(2)]
        ps = pen.make_fedcurv_anchors(peers, 1.0)
        assert len(ps) == 2 and all(a.kind == pen.OTHER_CURRENT_ROUGH for a in ps)

    def test_fedcurv_unit_fisher_is_fedprox(self, rng):
        theta_g = rng.normal(size=6)
        x = rng.normal(size=6)
        curv = pen.make_fedcurv_anchors([(theta_g, np.ones(6))], 0.3)
        prox = pen.make_proximal_anchor(theta_g, 0.3)
        assert pen.penalty_value(x, curv) == pen.penalty_value(x, prox)
        assert pen.penalty_value(x, prox) == pytest.approx(0.15 * np.sum((x - theta_g) ** 2), rel=1e-14)

    def test_elastic_transfer_zero_weights(self, rng):
        est = lambda: (rng.normal(size=4), rng.uniform(0, 1, 4))
        ps = pen.make_elastic_transfer_anchors(est(), [est(), est()], [est(), est()], 0, 0, 0)
        assert ps.is_inactive
        assert pen.penalty_value(rng.normal(size=4), ps) == 0.0

    def test_elastic_transfer_first_task(self, rng):
        rough = [(rng.normal(size=4), np.ones(4)) for _ in range(2)]
        ps = pen.make_elastic_transfer_anchors(None, [], rough, 0.5, 0.5, 0.5)
        assert [a.kind for a in ps] == [pen.OTHER_CURRENT_ROUGH] * 2

    def test_elastic_transfer_later_task(self, rng):
        est = lambda: (rng.normal(size=4), rng.uniform(0, 1, 4))
        ps = pen.make_elastic_transfer_anchors(est(), [est(), est()], [est(), est()], 0.1, 0.2, 0.3)
        assert len(ps) == 5
        assert [a.lam for a in ps] == [0.1, 0.2, 0.2, 0.3, 0.3]
        assert [a.kind for a in ps] == [pen.OWN_PREVIOUS_REFINED] + [pen.OTHER_PREVIOUS_REFINED] * 2 \
            + [pen.OTHER_CURRENT_ROUGH] * 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 4), st.integers(0, 4))
def test_additivity_and_non_negativity(seed, n1, n2):
    rng = np.random.default_rng(seed)
    a, b = random_set(rng, 5, n1), random_set(rng, 5, n2)
    x = rng.normal(size=5)
    va, vb = pen.penalty_value(x, a), pen.penalty_value(x, b)
    assert va >= 0 and vb >= 0
    assert pen.penalty_value(x, a + b) == pytest.approx(va + vb, rel=1e-12, abs=1e-300)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_zero_only_on_fisher_support(seed):
    rng = np.random.default_rng(seed)
    ref = rng.normal(size=6)
    fisher = (rng.uniform(size=6) > 0.5).astype(float)
    theta = ref + (1 - fisher) * rng.normal(size=6)
    ps = pen.PenaltySet([pen.Anchor(ref, fisher, 1.3)])
    assert pen.penalty_value(theta, ps) == 0.0
