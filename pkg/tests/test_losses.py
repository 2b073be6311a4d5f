import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hs

from spheretune.anchors import AnchorSet
from spheretune.errors import (
    DegeneratePrompt,
    DegenerateTarget,
    LabelOutOfRange,
    OutOfRange,
    ValidationError,
)
from spheretune.losses import (
    LossWeights,
    PromptState,
    TempSchedule,
    anchor_loss,
    dynamic_targets,
    spherical_contrastive_loss,
    symmetric_ce_loss,
    tau_at,
    total_loss,
)
from spheretune.manifold import UnitVector
from spheretune.vmf import VmfParams

from conftest import random_unit_rows


def make_anchors(rows: np.ndarray) -> AnchorSet:
    fields = tuple(VmfParams(mu=UnitVector(r), kappa=2.0) for r in rows)
    return AnchorSet(clip_field=fields[0], class_fields=fields, anchors=rows)


def zero_state(anchors: AnchorSet) -> PromptState:
    return PromptState.from_anchors(anchors)


class TestDynamicTargets:
    def test_zero_offsets_give_anchors(self, rng):
        anchors = make_anchors(random_unit_rows(rng, 4, 6))
        targets = dynamic_targets(anchors, zero_state(anchors))
        np.testing.assert_allclose(targets, anchors.anchors, rtol=0, atol=1e-15)

    def test_zero_offsets_exact_on_exact_anchors(self):
        anchors = make_anchors(np.eye(3))
        targets = dynamic_targets(anchors, zero_state(anchors))
        np.testing.assert_array_equal(targets, anchors.anchors)

    def test_vanishing_alpha_is_continuous(self, rng):
        anchors = make_anchors(random_unit_rows(rng, 3, 5))
        state = zero_state(anchors)
        state.offsets = rng.standard_normal(state.offsets.shape)
        state.log_alpha = np.log(1e-12)
        targets = dynamic_targets(anchors, state)
        np.testing.assert_allclose(targets, anchors.anchors, atol=1e-10)

    def test_orthogonal_displacement_bisects(self):
        anchors = make_anchors(np.array([[1.0, 0.0]]))
        state = zero_state(anchors)
        state.offsets = np.array([[0.0, 1.0]])  # alpha = 1
        targets = dynamic_targets(anchors, state)
        np.testing.assert_allclose(targets[0], np.full(2, np.sqrt(0.5)), atol=1e-15)

    def test_cancellation_raises(self):
        anchors = make_anchors(np.array([[1.0, 0.0]]))
        state = zero_state(anchors)
        state.offsets = np.array([[-1.0, 0.0]])
        with pytest.raises(DegenerateTarget):
            dynamic_targets(anchors, state)


class TestAnchorLoss:
    def test_zero_when_prompts_point_at_targets(self, rng):
        anchors = make_anchors(random_unit_rows(rng, 5, 7))
        state = zero_state(anchors)
        state.prompts = 3.7 * anchors.anchors  # scale must not matter
        assert anchor_loss(state, anchors) == pytest.approx(0.0, abs=1e-15)

    def test_maximum_at_antipodes(self, rng):
        anchors = make_anchors(random_unit_rows(rng, 5, 7))
        state = zero_state(anchors)
        state.prompts = -anchors.anchors
        assert anchor_loss(state, anchors) == pytest.approx(4.0, abs=1e-12)

    def test_orthogonal_plus_aligned_averages_to_one(self):
        # ||a-b||^2 = 2 - 2 cos(theta): orthogonal gives 2, aligned gives 0
        anchors = make_anchors(np.array([[1.0, 0.0], [0.0, 1.0]]))
        state = zero_state(anchors)
        state.prompts = np.array([[0.0, 1.0], [0.0, 1.0]])
        assert anchor_loss(state, anchors) == pytest.approx(1.0, abs=1e-12)

    def test_invariant_under_prompt_rescaling(self, rng):
        anchors = make_anchors(random_unit_rows(rng, 4, 9))
        state = zero_state(anchors)
        state.prompts = rng.standard_normal(state.prompts.shape)
        base = anchor_loss(state, anchors)
        state.prompts = state.prompts * rng.uniform(0.1, 10.0, size=(4, 1))
        np.testing.assert_allclose(anchor_loss(state, anchors), base, rtol=1e-12)

    def test_zero_norm_prompt_raises(self, rng):
        anchors = make_anchors(random_unit_rows(rng, 2, 4))
        state = zero_state(anchors)
        state.prompts[0] = 0.0
        with pytest.raises(DegeneratePrompt):
            anchor_loss(state, anchors)


class TestTemperatureSchedule:
    def test_endpoints_and_midpoint(self):
        sched = TempSchedule(tau0=1.0, tau_max=5.0, total_steps=100)
        assert tau_at(sched, 0) == pytest.approx(1.0, abs=1e-12)
        assert tau_at(sched, 100) == pytest.approx(5.0, abs=1e-12)
        assert tau_at(sched, 50) == pytest.approx(3.0, abs=1e-12)

    def test_out_of_range_rejected(self):
        sched = TempSchedule(tau0=1.0, tau_max=5.0, total_steps=10)
        with pytest.raises(OutOfRange):
            tau_at(sched, 11)
        with pytest.raises(OutOfRange):
            tau_at(sched, -1)

    @pytest.mark.parametrize("tau0,tau_max", [(1.0, 10.0), (10.0, 1.0)])
    def test_monotone_between_endpoints(self, tau0, tau_max):
        sched = TempSchedule(tau0=tau0, tau_max=tau_max, total_steps=64)
        values = [tau_at(sched, t) for t in range(65)]
        diffs = np.diff(values)
        assert np.all(diffs >= 0.0) if tau_max > tau0 else np.all(diffs <= 0.0)


class TestSphericalContrastive:
    def test_single_class_is_zero(self):
        anchors = make_anchors(np.array([[1.0, 0.0]]))
        assert spherical_contrastive_loss(zero_state(anchors), anchors, tau=2.0) == 0.0

    def test_orthogonal_anchor_closed_form(self):
        # prompts on 4 orthogonal anchors at tau=2:
        # loss = -log(e^2 / (e^2 + 3)) per row
        anchors = make_anchors(np.eye(4))
        got = spherical_contrastive_loss(zero_state(anchors), anchors, tau=2.0)
        expected = -np.log(np.exp(2.0) / (np.exp(2.0) + 3.0))
        np.testing.assert_allclose(got, expected, rtol=1e-12)
        # rounded reference value reproduces at 1e-4 (exact value 0.3407530)
        np.testing.assert_allclose(got, 0.34077, atol=1e-4)

    def test_bounds(self, rng):
        for _ in range(30):
            c, d = int(rng.integers(2, 8)), int(rng.integers(2, 10))
            if c > d:
                continue
            anchors = make_anchors(random_unit_rows(rng, c, d))
            state = zero_state(anchors)
            state.prompts = rng.standard_normal((c, d))
            tau = float(rng.uniform(0.1, 4.0))
            loss = spherical_contrastive_loss(state, anchors, tau)
            assert 0.0 <= loss <= np.log(c) + 2.0 * tau

    def test_decreases_rotating_prompt_toward_anchor(self, rng):
        anchors = make_anchors(np.eye(4))
        start = np.array([0.0, 1.0, 0.0, 0.0])  # orthogonal to anchor 0
        goal = anchors.anchors[0]
        losses = []
        for frac in np.linspace(0.0, 1.0, 10):
            angle = (1.0 - frac) * np.pi / 2.0
            prompt0 = np.cos(angle) * goal + np.sin(angle) * start
            state = zero_state(anchors)
            prompts = anchors.anchors.copy()
            prompts[0] = prompt0
            state.prompts = prompts
            losses.append(spherical_contrastive_loss(state, anchors, tau=1.5))
        assert np.all(np.diff(losses) < 0.0)

    def test_rejects_bad_tau(self, rng):
        anchors = make_anchors(random_unit_rows(rng, 2, 3))
        with pytest.raises(ValidationError):
            spherical_contrastive_loss(zero_state(anchors), anchors, tau=0.0)


class TestSymmetricCrossEntropy:
    def test_confident_correct_hits_documented_floor(self):
        logits = np.array([[60.0, 0.0]])
        loss = symmetric_ce_loss(logits, np.array([0]), eps=1e-8)
        # floor is -log(1 + eps) ~ -1e-8: slightly negative by design
        assert -2e-8 < loss < 1e-12
        assert loss >= -np.log1p(1e-8)

    def test_uniform_probabilities_hand_value(self):
        logits = np.zeros((1, 2))
        loss = symmetric_ce_loss(logits, np.array([0]), eps=1e-8)
        expected = np.log(2.0) - 0.5 * (np.log1p(1e-8) + np.log(1e-8))
        np.testing.assert_allclose(loss, expected, rtol=1e-12)
        np.testing.assert_allclose(loss, 9.90349, atol=5e-6)

    def test_logit_shift_invariance(self, rng):
        logits = rng.standard_normal((6, 5))
        labels = rng.integers(0, 5, size=6)
        base = symmetric_ce_loss(logits, labels)
        shifted = symmetric_ce_loss(logits + rng.standard_normal((6, 1)), labels)
        np.testing.assert_allclose(shifted, base, rtol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(seed=hs.integers(0, 2**32 - 1), b=hs.integers(1, 6), c=hs.integers(2, 6))
    def test_global_floor_property(self, seed, b, c):
        r = np.random.default_rng(seed)
        logits = 10.0 * r.standard_normal((b, c))
        labels = r.integers(0, c, size=b)
        assert symmetric_ce_loss(logits, labels, eps=1e-8) >= -np.log1p(1e-8)

    def test_label_out_of_range(self):
        with pytest.raises(LabelOutOfRange):
            symmetric_ce_loss(np.zeros((1, 3)), np.array([3]))

    def test_reverse_weight_zero_is_plain_ce(self, rng):
        logits = rng.standard_normal((4, 3))
        labels = rng.integers(0, 3, size=4)
        got = symmetric_ce_loss(logits, labels, reverse_weight=0.0)
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        np.testing.assert_allclose(got, -logp[np.arange(4), labels].mean(), rtol=1e-12)


class TestTotalLoss:
    def test_zero_weights_reduce_to_sce(self, rng):
        anchors = make_anchors(random_unit_rows(rng, 3, 5))
        state = zero_state(anchors)
        state.prompts = rng.standard_normal((3, 5))
        logits = rng.standard_normal((4, 3))
        labels = rng.integers(0, 3, size=4)
        weights = LossWeights(lambda_anchor=0.0, lambda_contrast=0.0)
        value, parts = total_loss(state, anchors, logits, labels, weights, tau=2.0)
        assert value == symmetric_ce_loss(logits, labels, eps=weights.sce_eps)
        assert parts.anchor > 0.0  # parts still reported for logging

    def test_linear_in_weights(self, rng):
        anchors = make_anchors(random_unit_rows(rng, 3, 5))
        state = zero_state(anchors)
        state.prompts = rng.standard_normal((3, 5))
        state.offsets = 0.2 * rng.standard_normal((3, 5))
        logits = rng.standard_normal((4, 3))
        labels = rng.integers(0, 3, size=4)
        v1, parts = total_loss(state, anchors, logits, labels, LossWeights(2.0, 3.0), tau=1.3)
        expected = 2.0 * parts.anchor + 3.0 * parts.contrast + parts.cross_entropy
        np.testing.assert_allclose(v1, expected, rtol=0, atol=0)

    def test_weights_validated(self):
        with pytest.raises(ValidationError):
            LossWeights(lambda_anchor=-1.0)
        with pytest.raises(ValidationError):
            LossWeights(sce_eps=0.0)


class TestPromptState:
    def test_alpha_positive_by_construction(self, rng):
        anchors = make_anchors(random_unit_rows(rng, 2, 4))
        state = zero_state(anchors)
        state.log_alpha = -50.0
        assert state.alpha > 0.0

    def test_rejects_non_finite(self, rng):
        with pytest.raises(ValidationError):
            PromptState(prompts=np.array([[np.nan, 1.0]]), offsets=np.zeros((1, 2)))

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            PromptState(prompts=np.zeros((2, 3)), offsets=np.zeros((3, 2)))
