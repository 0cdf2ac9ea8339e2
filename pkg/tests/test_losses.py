"""Loss values against closed-form and composition oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evidential_experts.losses import (
    AnnealSchedule,
    CategoricalProfile,
    LossConfig,
    batched_diversity_terms,
    batched_single_terms,
    diversity_loss,
    evidential_nll,
    joint_loss,
    kl_regularizer,
    single_loss,
)
from evidential_experts.opinions import combine_sequential, opinion_from_evidence


def one_hot(k, c):
    y = np.zeros(k)
    y[c] = 1.0
    return y


def evidence_and_label(max_k=8, max_e=50.0):
    return st.integers(2, max_k).flatmap(
        lambda k: st.tuples(
            arrays(np.float64, (k,),
                   elements=st.floats(min_value=0.0, max_value=max_e,
                                      allow_nan=False)),
            st.integers(0, k - 1),
        )
    )


class TestAnnealSchedule:
    def test_ramp(self):
        sched = AnnealSchedule(horizon=10)
        assert sched.kl_factor == 0.0
        assert sched.at(5).kl_factor == 0.5
        assert sched.at(10).kl_factor == 1.0
        assert sched.at(25).kl_factor == 1.0

    def test_nondecreasing(self):
        sched = AnnealSchedule(horizon=7)
        factors = [sched.at(t).kl_factor for t in range(20)]
        assert all(b >= a for a, b in zip(factors, factors[1:]))

    @pytest.mark.parametrize("horizon,epoch", [(0, 0), (-1, 0), (5, -1)])
    def test_validation(self, horizon, epoch):
        with pytest.raises(ValueError):
            AnnealSchedule(horizon=horizon, epoch=epoch)


class TestEvidentialNll:
    def test_zero_evidence_is_log_k(self):
        assert evidential_nll(np.zeros(10), one_hot(10, 0)) == pytest.approx(
            math.log(10.0), abs=1e-12
        )

    def test_worked_examples(self):
        assert evidential_nll([9.0, 1.0], one_hot(2, 0)) == pytest.approx(
            math.log(1.2), abs=1e-12
        )
        assert evidential_nll([0.0, 4.0], one_hot(2, 0)) == pytest.approx(
            math.log(6.0), abs=1e-12
        )

    @pytest.mark.parametrize("bad_label", [
        [0.0, 0.0], [1.0, 1.0], [0.5, 0.5], [1.0, 0.0, 0.0],
    ])
    def test_rejects_bad_one_hot(self, bad_label):
        with pytest.raises(ValueError):
            evidential_nll([1.0, 2.0], bad_label)

    @settings(max_examples=200)
    @given(evidence_and_label())
    def test_nonnegative_and_monotone(self, ev_label):
        e, c = ev_label
        y = one_hot(len(e), c)
        base = evidential_nll(e, y)
        assert base >= 0.0
        bumped_true = e.copy()
        bumped_true[c] += 1.0
        assert evidential_nll(bumped_true, y) < base
        off = (c + 1) % len(e)
        bumped_off = e.copy()
        bumped_off[off] += 1.0
        assert evidential_nll(bumped_off, y) > base


class TestKlRegularizer:
    def test_zero_when_off_class_evidence_zero(self):
        e = np.zeros(5)
        e[2] = 17.0
        assert kl_regularizer(e, one_hot(5, 2)) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_two_class(self):
        want = math.log(2.0) - 0.5
        assert kl_regularizer([7.0, 1.0], one_hot(2, 0)) == pytest.approx(
            want, abs=1e-9
        )

    def test_symmetric_case(self):
        want = math.log(2.0) - 0.5
        assert kl_regularizer([1.0, 3.0], one_hot(2, 1)) == pytest.approx(
            want, abs=1e-9
        )

    @settings(max_examples=200)
    @given(evidence_and_label(max_e=20.0))
    def test_nonnegative_and_independent_of_true_class(self, ev_label):
        e, c = ev_label
        y = one_hot(len(e), c)
        value = kl_regularizer(e, y)
        assert value >= -1e-12
        moved = e.copy()
        moved[c] = moved[c] * 3.0 + 5.0
        assert kl_regularizer(moved, y) == pytest.approx(value, abs=1e-10)


class TestSingleLoss:
    def test_epoch_zero_is_pure_nll(self):
        e, y = [3.0, 0.5, 1.0], one_hot(3, 0)
        sched = AnnealSchedule(horizon=10, epoch=0)
        assert single_loss(e, y, sched) == evidential_nll(e, y)

    def test_past_horizon_full_kl(self):
        e, y = [3.0, 0.5, 1.0], one_hot(3, 0)
        sched = AnnealSchedule(horizon=10, epoch=15)
        want = evidential_nll(e, y) + kl_regularizer(e, y)
        assert single_loss(e, y, sched) == pytest.approx(want, abs=1e-12)

    def test_half_horizon(self):
        e, y = [3.0, 0.5, 1.0], one_hot(3, 0)
        sched = AnnealSchedule(horizon=10, epoch=5)
        want = evidential_nll(e, y) + 0.5 * kl_regularizer(e, y)
        assert single_loss(e, y, sched) == pytest.approx(want, abs=1e-12)


class TestDiversityLoss:
    def test_identical_profiles_zero(self):
        assert diversity_loss([[3.0, 1.0], [3.0, 1.0], [3.0, 1.0]]) == 0.0

    def test_single_expert_zero(self):
        assert diversity_loss([[2.0, 5.0, 1.0]]) == 0.0

    def test_worked_symmetric_example(self):
        value = diversity_loss([[4.0, 1.0], [1.0, 4.0]])
        assert value == pytest.approx(-0.19274475702175747, abs=1e-9)

    @pytest.mark.parametrize("bad", [
        [[1.0, 0.0], [1.0, 2.0]],
        [[1.0, -2.0], [1.0, 2.0]],
        [[1.0], [2.0]],
    ])
    def test_rejects_invalid_alphas(self, bad):
        with pytest.raises(ValueError):
            diversity_loss(bad)

    @settings(max_examples=200)
    @given(st.tuples(st.integers(1, 5), st.integers(2, 6)).flatmap(
        lambda mk: arrays(np.float64, mk,
                          elements=st.floats(min_value=0.05, max_value=30.0,
                                             allow_nan=False))
    ))
    def test_never_positive(self, alphas):
        assert diversity_loss(alphas) <= 1e-15


class TestCategoricalProfile:
    def test_from_alpha(self):
        profile = CategoricalProfile.from_alpha([3.0, 1.0])
        np.testing.assert_allclose(profile.probs, [0.75, 0.25], atol=1e-15)

    def test_rejects_nonpositive_alpha(self):
        with pytest.raises(ValueError):
            CategoricalProfile.from_alpha([1.0, 0.0])

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            CategoricalProfile(np.array([0.5, 0.6]))


class TestJointLoss:
    def _traces(self, evidences):
        return [
            combine_sequential([opinion_from_evidence(e) for e in sample])
            for sample in evidences
        ]

    def test_single_expert_sums_single_losses(self):
        rng = np.random.default_rng(1)
        ev = rng.uniform(0.0, 5.0, (4, 1, 3))
        labels = np.eye(3)[[0, 1, 2, 0]]
        cfg = LossConfig(gate_threshold=0.54, diversity_weight=0.3,
                         anneal=AnnealSchedule(10, 4))
        total = joint_loss(ev, labels, self._traces(ev), cfg)
        want = sum(
            single_loss(ev[i, 0], labels[i], cfg.anneal) for i in range(4)
        )
        assert total == pytest.approx(want, abs=1e-12)

    def test_threshold_one_keeps_only_first_expert(self):
        rng = np.random.default_rng(2)
        ev = rng.uniform(0.0, 5.0, (3, 3, 4))
        labels = np.eye(4)[[0, 1, 2]]
        cfg = LossConfig(gate_threshold=1.0, diversity_weight=0.0,
                         anneal=AnnealSchedule(10, 0))
        total = joint_loss(ev, labels, self._traces(ev), cfg)
        want = sum(
            single_loss(ev[i, 0], labels[i], cfg.anneal) for i in range(3)
        )
        assert total == pytest.approx(want, abs=1e-12)

    def test_composition_from_parts(self):
        ev = np.array([[[2.0, 1.0, 0.0], [0.0, 1.0, 2.0]]])
        labels = np.eye(3)[[2]]
        sched = AnnealSchedule(10, 5)
        cfg = LossConfig(gate_threshold=0.4, diversity_weight=0.7, anneal=sched)
        traces = self._traces(ev)
        weights = traces[0].prefix_weights
        want = single_loss(ev[0, 0], labels[0], sched)
        if weights[1] > 0.4:
            want += single_loss(ev[0, 1], labels[0], sched)
        want += 0.7 * diversity_loss(ev[0] + 1.0)
        assert joint_loss(ev, labels, traces, cfg) == pytest.approx(want, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        ev = np.zeros((2, 2, 3))
        labels = np.eye(3)[[0]]
        with pytest.raises(ValueError):
            joint_loss(ev, labels, self._traces(ev), LossConfig())

    def test_kl_disabled_drops_kl_term(self):
        ev = np.array([[[2.0, 1.0, 0.5]]])
        labels = np.eye(3)[[0]]
        cfg = LossConfig(gate_threshold=0.5, diversity_weight=0.0,
                         anneal=AnnealSchedule(10, 10), kl_enabled=False)
        total = joint_loss(ev, labels, self._traces(ev), cfg)
        assert total == pytest.approx(
            evidential_nll(ev[0, 0], labels[0]), abs=1e-12
        )


class TestBatchedHelpers:
    def test_match_per_sample_ops(self):
        rng = np.random.default_rng(3)
        ev = rng.uniform(0.0, 7.0, (5, 3, 4))
        labels = np.eye(4)[rng.integers(0, 4, 5)]
        sched = AnnealSchedule(9, 6)
        values, grads = batched_single_terms(ev, labels, sched)
        div_values, _ = batched_diversity_terms(ev)
        for i in range(5):
            assert div_values[i] == pytest.approx(
                diversity_loss(ev[i] + 1.0), abs=1e-12
            )
            for m in range(3):
                assert values[i, m] == pytest.approx(
                    single_loss(ev[i, m], labels[i], sched), abs=1e-12
                )
        assert grads.shape == ev.shape

    def test_loss_config_validation(self):
        with pytest.raises(ValueError):
            LossConfig(gate_threshold=1.5)
        with pytest.raises(ValueError):
            LossConfig(diversity_weight=-0.1)
