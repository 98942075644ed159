import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clprobe.classifier import (
    Classifier,
    GradientSlice,
    OptimizerConfig,
    expand_classifier,
    logits,
    loss_and_grad_masked,
    predict,
    sgd_step,
    softmax,
)
from clprobe.data import Batch, LabeledFeatureSet
from clprobe.errors import ConfigError, LabelError, NumericError, ShapeError
from oracles import finite_difference_grad, reference_loss


def random_instance(rng, max_d=8, max_c=6):
    d = int(rng.integers(1, max_d + 1))
    c = int(rng.integers(2, max_c + 1))
    n = int(rng.integers(1, 6))
    labels = rng.permutation(20)[:c]
    clf = Classifier(rng.standard_normal((d, c)), tuple(labels.tolist()), int(rng.integers(0, c + 1)))
    batch = Batch(rng.standard_normal((n, d)), rng.choice(labels, size=n))
    return clf, batch


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, rtol=0, atol=1e-15)

    def test_large_shift(self):
        p = softmax([5.0, 1005.0])
        assert np.isfinite(p).all()
        np.testing.assert_allclose(p, [0.0, 1.0], atol=1e-300)

    def test_log_identity(self):
        p = softmax(np.log([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(p, [1 / 6, 2 / 6, 3 / 6], rtol=1e-12)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            softmax([0.0, np.nan])

    @given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-500, 500)), st.floats(-1e3, 1e3))
    @settings(max_examples=200)
    def test_sums_to_one_and_shift_invariant(self, z, shift):
        p = softmax(z)
        assert (p >= 0).all()
        assert abs(p.sum() - 1.0) <= 1e-9
        np.testing.assert_allclose(softmax(z + shift), p, atol=1e-9)


class TestLogitsAndPredict:
    def test_zero_feature(self):
        clf = Classifier(np.ones((3, 4)), (0, 1, 2, 3))
        assert np.all(logits(clf, np.zeros(3)) == 0)

    def test_basis(self):
        clf = Classifier(np.eye(3), (0, 1, 2))
        np.testing.assert_array_equal(logits(clf, [0.0, 1.0, 0.0]), [0, 1, 0])
        assert predict(clf, [0.0, 1.0, 0.0]) == 1

    def test_subset_order(self):
        clf = Classifier(np.eye(3), (0, 1, 2))
        np.testing.assert_array_equal(logits(clf, [1.0, 2.0, 3.0], [2, 0]), [3.0, 1.0])

    def test_subset_restricts_prediction(self):
        clf = Classifier(np.eye(3), (0, 1, 2))
        assert predict(clf, [0.0, 0.0, 5.0], [0, 1]) in (0, 1)
        assert predict(clf, [1.0, 0.5, 5.0], [0, 1]) == 0

    def test_tie_goes_to_lowest_id(self):
        # columns in non-sorted label order; ties must still resolve by id
        clf = Classifier(np.array([[1.0, 1.0, 0.0]]), (7, 3, 5))
        assert predict(clf, [2.0]) == 3
        out = predict(clf, np.array([[2.0], [-1.0]]))
        assert out.tolist() == [3, 5]

    def test_dimension_mismatch(self):
        clf = Classifier(np.eye(3), (0, 1, 2))
        with pytest.raises(ShapeError):
            logits(clf, [1.0, 2.0])

    def test_unknown_label(self):
        clf = Classifier(np.eye(2), (0, 1))
        with pytest.raises(LabelError):
            logits(clf, [1.0, 0.0], [4])

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
    @settings(max_examples=50)
    def test_prediction_scale_invariant(self, seed, scale):
        rng = np.random.default_rng(seed)
        clf = Classifier(rng.standard_normal((4, 5)), tuple(range(5)))
        x = rng.standard_normal((6, 4))
        scaled = Classifier(clf.weights * scale, clf.label_order)
        assert predict(clf, x).tolist() == predict(scaled, x).tolist()


class TestLossAndGradient:
    def test_uniform_loss_is_log_c(self):
        clf = Classifier(np.zeros((3, 7)), tuple(range(7)))
        out = loss_and_grad_masked(clf, Batch(np.array([[1.0, -2.0, 0.5]]), np.array([4])))
        assert out.loss_value == pytest.approx(math.log(7), abs=1e-12)

    def test_zero_weight(self, rng):
        clf, batch = random_instance(rng)
        out = loss_and_grad_masked(clf, batch, 0.0)
        assert out.loss_value == 0
        assert np.all(out.columns == 0)
        assert out.columns.shape == clf.trainable_shape

    def test_matches_finite_differences(self, rng):
        for _ in range(20):
            clf, batch = random_instance(rng)
            scale = float(rng.uniform(0.1, 2.0))
            out = loss_and_grad_masked(clf, batch, scale)
            numeric = finite_difference_grad(clf, batch, scale)[:, clf.frozen_boundary :]
            denom = np.maximum(np.abs(out.columns) + np.abs(numeric), 1e-8)
            assert np.all(np.abs(out.columns - numeric) / denom < 1e-4)
            cols = {c: i for i, c in enumerate(clf.label_order)}
            assert out.loss_value == pytest.approx(
                reference_loss(clf.weights, batch.features, batch.labels, cols, scale), rel=1e-12
            )

    def test_frozen_columns_in_denominator(self):
        # a large frozen logit must still lower the probability of the target
        w = np.array([[10.0, 0.0]])
        clf = Classifier(w, (0, 1), frozen_boundary=1)
        out = loss_and_grad_masked(clf, Batch(np.array([[1.0]]), np.array([1])))
        assert out.loss_value == pytest.approx(math.log1p(math.exp(10.0)), rel=1e-12)
        assert out.columns.shape == (1, 1)

    def test_label_error(self):
        clf = Classifier(np.zeros((2, 2)), (0, 1))
        with pytest.raises(LabelError):
            loss_and_grad_masked(clf, Batch(np.zeros((1, 2)), np.array([5])))


class TestSgdStep:
    def test_zero_gradient_and_zero_lr_fixed_point(self, rng):
        clf, batch = random_instance(rng)
        zero = GradientSlice(np.zeros(clf.trainable_shape), 0.0)
        assert sgd_step(clf, zero, 0.1).to_bytes() == clf.to_bytes()
        g = loss_and_grad_masked(clf, batch)
        assert sgd_step(clf, g, 0.0).to_bytes() == clf.to_bytes()

    def test_step_decreases_loss(self, rng):
        for _ in range(20):
            clf, batch = random_instance(rng)
            clf = Classifier(clf.weights, clf.label_order, 0)
            single = Batch(batch.features[:1], batch.labels[:1])
            before = loss_and_grad_masked(clf, single)
            after = loss_and_grad_masked(sgd_step(clf, before, 1e-3), single)
            assert after.loss_value < before.loss_value

    def test_frozen_bits_untouched(self, rng):
        clf, batch = random_instance(rng)
        k = clf.frozen_boundary
        updated = sgd_step(clf, loss_and_grad_masked(clf, batch), 0.5)
        assert updated.column_bytes(k) == clf.column_bytes(k)

    def test_shape_mismatch(self):
        clf = Classifier(np.zeros((2, 3)), (0, 1, 2), 1)
        with pytest.raises(ShapeError):
            sgd_step(clf, GradientSlice(np.zeros((2, 3)), 0.0), 0.1)


class TestExpand:
    def test_first_task_zeros(self):
        clf = expand_classifier(Classifier.empty(5), range(10))
        assert clf.weights.shape == (5, 10)
        assert np.all(clf.weights == 0)
        assert clf.frozen_boundary == 0

    def test_class_mean_init(self):
        train = LabeledFeatureSet(np.array([[1.0, 0.0], [3.0, 2.0], [5.0, 5.0]]), np.array([4, 4, 9]))
        clf = expand_classifier(Classifier.empty(2), (9, 4), init="class-mean", train=train)
        np.testing.assert_array_equal(clf.weights, [[5.0, 2.0], [5.0, 1.0]])

    def test_freeze_boundary(self):
        clf = expand_classifier(Classifier.empty(3), range(4))
        frozen = expand_classifier(clf, range(4, 8), freeze_old=True)
        assert frozen.frozen_boundary == 4
        unfrozen = expand_classifier(clf, range(4, 8), freeze_old=False)
        assert unfrozen.frozen_boundary == 0
        assert frozen.label_order == tuple(range(8))

    def test_duplicate_label(self):
        clf = expand_classifier(Classifier.empty(3), (1, 2))
        with pytest.raises(LabelError):
            expand_classifier(clf, (2, 3))

    def test_unknown_init(self):
        with pytest.raises(ConfigError):
            expand_classifier(Classifier.empty(3), (1,), init="random")


def test_checkpoint_roundtrip(rng):
    clf, _ = random_instance(rng)
    back = Classifier.from_bytes(clf.to_bytes())
    assert back.to_bytes() == clf.to_bytes()
    assert back.label_order == clf.label_order
    assert back.frozen_boundary == clf.frozen_boundary


def test_optimizer_config_validation():
    with pytest.raises(ConfigError):
        OptimizerConfig(learning_rate=0.0)
    assert OptimizerConfig() == OptimizerConfig(0.1, 32, 1)
