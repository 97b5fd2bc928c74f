"""Softmax cross-entropy and Adam contracts."""

import numpy as np
import pytest

from millwatch import nn
from millwatch.nn import AdamState, adam_step


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_seven_classes(self):
        loss, _ = nn.softmax_cross_entropy(np.zeros((5, 7)), np.arange(5) % 7)
        assert loss == pytest.approx(np.log(7), rel=1e-12)

    def test_confident_correct_logit(self):
        logits = np.zeros((1, 7))
        logits[0, 3] = 50.0
        loss, _ = nn.softmax_cross_entropy(logits, [3])
        assert loss < 1e-4

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(11)
        logits = rng.normal(size=(4, 7))
        labels = rng.integers(0, 7, size=4)
        _, grad = nn.softmax_cross_entropy(logits, labels)
        h = 1e-5
        for b in range(4):
            for q in range(7):
                lp, lm = logits.copy(), logits.copy()
                lp[b, q] += h
                lm[b, q] -= h
                fd = (
                    nn.softmax_cross_entropy(lp, labels)[0]
                    - nn.softmax_cross_entropy(lm, labels)[0]
                ) / (2 * h)
                rel = abs(grad[b, q] - fd) / max(abs(grad[b, q]), abs(fd), 1e-12)
                assert rel < 1e-6

    def test_label_out_of_range(self):
        with pytest.raises(ValueError, match="out of range"):
            nn.softmax_cross_entropy(np.zeros((2, 3)), [0, 3])

    def test_grad_rows_sum_to_zero(self):
        rng = np.random.default_rng(12)
        logits = rng.normal(size=(6, 7)) * 10
        _, grad = nn.softmax_cross_entropy(logits, rng.integers(0, 7, size=6))
        assert np.allclose(grad.sum(axis=1), 0.0, atol=1e-15)


class TestSoftmax:
    def test_rows_sum_to_one_and_positive(self):
        rng = np.random.default_rng(13)
        for _ in range(50):
            logits = rng.normal(size=(8, 7)) * rng.uniform(0.1, 100)
            p = nn.softmax(logits)
            assert np.all(np.abs(p.sum(axis=1) - 1.0) < 1e-9)
            assert np.all(p > 0)

    def test_extreme_logits_stable(self):
        p = nn.softmax(np.array([[1000.0, -1000.0, 0.0]]))
        assert np.isfinite(p).all()
        assert p[0, 0] == pytest.approx(1.0)


def scalar_adam_reference(grad_fn, x0, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Straight transcription of the Adam update for one scalar."""
    x, m, v = x0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
    return x


class TestAdam:
    def test_zero_gradient_is_noop(self):
        rng = np.random.default_rng(20)
        params = [rng.normal(size=(3, 4)), rng.normal(size=5)]
        grads = [np.zeros((3, 4)), np.zeros(5)]
        state = AdamState.for_params(params)
        new_params, new_state = adam_step(params, grads, state)
        for p, q in zip(params, new_params):
            assert np.array_equal(p, q)
        assert new_state.t == 1

    def test_first_step_magnitude(self):
        # with |g| >> eps the bias-corrected first step is ~ lr * sign(g)
        params = [np.array([1.0, -2.0])]
        grads = [np.array([0.5, -3.0])]
        state = AdamState.for_params(params, lr=0.01)
        (new_p,), _ = adam_step(params, grads, state)
        step = new_p - params[0]
        assert np.allclose(step, [-0.01, 0.01], rtol=1e-6)

    def test_quadratic_convergence_matches_reference(self):
        params = [np.array([1.0])]
        state = AdamState.for_params(params, lr=0.1)
        x = params
        for _ in range(200):
            grads = [2.0 * x[0]]
            x, state = adam_step(x, grads, state)
        assert abs(x[0][0]) < 0.1
        ref = scalar_adam_reference(lambda v: 2.0 * v, 1.0, 200, lr=0.1)
        assert x[0][0] == pytest.approx(ref, abs=1e-12)

    def test_pure_function_bit_identical(self):
        rng = np.random.default_rng(21)
        params = [rng.normal(size=(4, 4))]
        grads = [rng.normal(size=(4, 4))]
        state = AdamState.for_params(params)
        state.m = [rng.normal(size=(4, 4)) ** 2]
        state.v = [rng.normal(size=(4, 4)) ** 2]
        state.t = 7
        out1, st1 = adam_step(params, grads, state)
        out2, st2 = adam_step(params, grads, state)
        assert np.array_equal(out1[0], out2[0])
        assert np.array_equal(st1.m[0], st2.m[0])
        assert np.array_equal(st1.v[0], st2.v[0])
        assert st1.t == st2.t == 8

    def test_shape_mismatch_rejected(self):
        params = [np.zeros(3)]
        state = AdamState.for_params(params)
        with pytest.raises(ValueError):
            adam_step(params, [np.zeros(4)], state)
