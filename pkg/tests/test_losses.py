"""Tests for the supervision losses."""

import numpy as np
import pytest

from vqalign.autodiff import Tensor, grad_check
from vqalign.errors import ConfigError, DegenerateDataError, ValidationError
from vqalign.losses import (
    BatchPredictions,
    LossFlags,
    component_losses,
    dataset_loss,
    error_loss,
    linearity_loss,
    monotonicity_loss,
    overall_loss,
    softmax_weights,
)


def mono_pair_oracle(q, mos):
    """Explicit double loop over ordered pairs."""
    n = len(q)
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += max((q[i] - q[j]) * np.sign(mos[j] - mos[i]), 0.0)
    return 2.0 * total / (n * (n - 1))


class TestMonotonicity:
    def test_perfectly_ordered_is_zero(self):
        loss = monotonicity_loss(Tensor([0.2, 0.5, 0.9]), [1.0, 2.0, 3.0])
        assert float(loss.data) == 0.0

    def test_reversed_three_case(self):
        # pairs contribute 0.3, 0.7, 0.4; mean over 3 pairs
        loss = monotonicity_loss(Tensor([0.2, 0.5, 0.9]), [3.0, 2.0, 1.0])
        assert float(loss.data) == pytest.approx(0.4666666666666667, abs=1e-12)

    def test_tied_labels_contribute_nothing(self):
        loss = monotonicity_loss(Tensor([0.9, 0.1, 0.5]), [2.0, 2.0, 2.0])
        assert float(loss.data) == 0.0

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_pair_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 65))
        q = rng.normal(size=n)
        mos = rng.normal(size=n)
        got = float(monotonicity_loss(Tensor(q), mos).data)
        assert got == pytest.approx(mono_pair_oracle(q, mos), abs=1e-12)

    def test_invariant_under_increasing_label_transform(self):
        rng = np.random.default_rng(7)
        q = rng.normal(size=12)
        mos = rng.normal(size=12)
        a = float(monotonicity_loss(Tensor(q), mos).data)
        b = float(monotonicity_loss(Tensor(q), np.exp(3.0 * mos) + 5.0).data)
        assert a == pytest.approx(b, abs=1e-12)

    def test_too_small_batch(self):
        with pytest.raises(DegenerateDataError):
            monotonicity_loss(Tensor([0.5]), [1.0])

    def test_gradient_away_from_kinks(self):
        # well-separated values keep finite differences off the hinge corner
        q = Tensor(np.array([0.1, 0.7, 0.3, 0.95, 0.5]))
        mos = np.array([2.0, 1.0, 4.0, 3.0, 5.0])
        assert grad_check(lambda t: monotonicity_loss(t, mos), [q]) < 1e-6


class TestLinearity:
    def test_affine_relation_is_zero(self):
        mos = np.array([1.0, 2.0, 4.0, 5.5])
        loss = linearity_loss(Tensor(2.5 * mos + 1.0), mos)
        assert float(loss.data) == pytest.approx(0.0, abs=1e-12)

    def test_anticorrelated_is_one(self):
        mos = np.array([1.0, 2.0, 3.0])
        loss = linearity_loss(Tensor(-mos), mos)
        assert float(loss.data) == pytest.approx(1.0, abs=1e-12)

    def test_frozen_three_point_case(self):
        # PLCC([0,1,2],[0,1,3]) via direct covariance arithmetic
        loss = linearity_loss(Tensor([0.0, 1.0, 2.0]), [0.0, 1.0, 3.0])
        assert float(loss.data) == pytest.approx(0.009009746969017173, abs=1e-12)

    def test_range_is_unit_interval(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            loss = float(
                linearity_loss(Tensor(rng.normal(size=6)), rng.normal(size=6)).data
            )
            assert 0.0 <= loss <= 1.0

    def test_invariant_under_positive_affine_maps(self):
        rng = np.random.default_rng(9)
        q = rng.normal(size=10)
        mos = rng.normal(size=10)
        base = float(linearity_loss(Tensor(q), mos).data)
        assert float(linearity_loss(Tensor(3.0 * q + 2.0), mos).data) == pytest.approx(
            base, abs=1e-12
        )
        assert float(linearity_loss(Tensor(q), 0.5 * mos - 4.0).data) == pytest.approx(
            base, abs=1e-12
        )

    def test_zero_spread_errors(self):
        with pytest.raises(DegenerateDataError, match="labels"):
            linearity_loss(Tensor([1.0, 2.0]), [3.0, 3.0])
        with pytest.raises(DegenerateDataError, match="predictions"):
            linearity_loss(Tensor([1.0, 1.0]), [3.0, 4.0])
        with pytest.raises(DegenerateDataError):
            linearity_loss(Tensor([1.0]), [3.0])

    def test_gradient(self):
        rng = np.random.default_rng(10)
        q = Tensor(rng.normal(size=8))
        mos = rng.normal(size=8)
        assert grad_check(lambda t: linearity_loss(t, mos), [q]) < 1e-6


class TestError:
    def test_exact_predictions(self):
        assert float(error_loss(Tensor([1.0, 2.0]), [1.0, 2.0], 2.0).data) == 0.0

    def test_hand_case(self):
        loss = error_loss(Tensor([1.0, 2.0]), [2.0, 4.0], 2.0)
        assert float(loss.data) == pytest.approx(0.75, abs=1e-15)

    def test_homogeneity(self):
        rng = np.random.default_rng(11)
        q = rng.normal(size=6)
        mos = rng.normal(size=6)
        base = float(error_loss(Tensor(q), mos, 1.7).data)
        scaled = float(error_loss(Tensor(5.0 * q), 5.0 * mos, 5.0 * 1.7).data)
        assert scaled == pytest.approx(base, rel=1e-12)

    def test_nonpositive_range_rejected(self):
        with pytest.raises(ValidationError):
            error_loss(Tensor([1.0]), [1.0], 0.0)
        with pytest.raises(ValidationError):
            error_loss(Tensor([1.0]), [1.0], -2.0)

    def test_gradient_away_from_exact_hits(self):
        q = Tensor(np.array([0.3, 1.9, -0.4]))
        mos = np.array([0.0, 1.0, 2.0])
        assert grad_check(lambda t: error_loss(t, mos, 3.0), [q]) < 1e-6


def make_batch(q_r, q_p, q_s, mos, s_d=1.0):
    return BatchPredictions(
        dataset_id="d",
        q_r=Tensor(np.asarray(q_r, dtype=np.float64)),
        q_p=Tensor(np.asarray(q_p, dtype=np.float64)),
        q_s=Tensor(np.asarray(q_s, dtype=np.float64)),
        mos=np.asarray(mos, dtype=np.float64),
        s_d=s_d,
    )


class TestDatasetLoss:
    def test_perfect_predictions_zero(self):
        mos = np.array([1.0, 2.0, 3.0])
        batch = make_batch(mos, mos, mos, mos, s_d=2.0)
        assert float(dataset_loss(batch).data) == pytest.approx(0.0, abs=1e-12)

    def test_frozen_component_sum(self):
        # the three frozen component examples, summed
        batch = make_batch(
            q_r=[0.2, 0.5, 0.9],
            q_p=[0.0, 1.0, 2.0],
            q_s=[1.0, 2.0, 1.0],
            mos=[3.0, 2.0, 1.0],
            s_d=2.0,
        )
        components = component_losses(batch)
        assert float(components["rel"].data) == pytest.approx(0.4666666666666667, abs=1e-12)

    def test_flags_drop_components(self):
        mos = np.array([1.0, 2.0, 3.0])
        batch = make_batch([0.9, 0.5, 0.1], mos, mos, mos, s_d=2.0)
        only_rel = component_losses(batch, LossFlags(rel=True, lin=False, err=False))
        assert set(only_rel) == {"rel"}
        total = dataset_loss(batch, LossFlags(rel=True, lin=False, err=False))
        assert float(total.data) == pytest.approx(float(only_rel["rel"].data), abs=0)

    def test_all_flags_off_rejected(self):
        mos = np.array([1.0, 2.0])
        batch = make_batch(mos, mos, mos, mos)
        with pytest.raises(ConfigError):
            dataset_loss(batch, LossFlags(rel=False, lin=False, err=False))

    def test_batch_shape_validation(self):
        with pytest.raises(ValidationError):
            make_batch([1.0, 2.0], [1.0], [1.0, 2.0], [1.0, 2.0])
        with pytest.raises(ValidationError):
            make_batch([1.0], [1.0], [1.0], [1.0], s_d=0.0)


class TestOverallLoss:
    def test_equal_losses_passthrough(self):
        losses = [Tensor(np.array(0.7)) for _ in range(4)]
        assert float(overall_loss(losses).data) == pytest.approx(0.7, abs=1e-15)

    def test_frozen_two_dataset_case(self):
        losses = [Tensor(np.array(0.0)), Tensor(np.array(np.log(3.0)))]
        got = float(overall_loss(losses).data)
        assert got == pytest.approx(0.75 * np.log(3.0), abs=1e-12)
        np.testing.assert_allclose(softmax_weights([0.0, np.log(3.0)]), [0.25, 0.75])

    def test_single_dataset_identity(self):
        loss = Tensor(np.array(1.234))
        assert float(overall_loss([loss]).data) == pytest.approx(1.234, abs=1e-15)

    def test_bounded_by_extremes_and_permutation_equivariant(self):
        rng = np.random.default_rng(12)
        vals = rng.random(5) * 2.0
        overall = float(overall_loss([Tensor(np.array(v)) for v in vals]).data)
        assert vals.min() - 1e-12 <= overall <= vals.max() + 1e-12
        perm = rng.permutation(5)
        w = softmax_weights(vals)
        np.testing.assert_allclose(softmax_weights(vals[perm]), w[perm], atol=1e-15)

    def test_weights_are_constants_in_backward(self):
        # gradient of the overall loss w.r.t. each dataset loss is exactly its
        # weight: no gradient flows through the softmax itself
        vals = [0.2, 1.1, 0.6]
        tensors = [Tensor(np.array(v), requires_grad=True) for v in vals]
        overall_loss(tensors).backward()
        w = softmax_weights(vals)
        for t, wi in zip(tensors, w):
            assert float(t.grad) == pytest.approx(wi, abs=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            overall_loss([])
