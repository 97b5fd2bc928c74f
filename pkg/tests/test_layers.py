"""Layer-level contracts: hand examples, naive-loop oracles, gradients."""

import numpy as np
import pytest

from millwatch import nn
from millwatch.errors import NonFiniteError, ShapeMismatchError


def conv1d_oracle(x, kernel):
    """Naive triple-loop reference: same-padded correlation, terms accumulated
    over ascending (input channel, tap) order."""
    c_in, L = x.shape
    c_out, _, K = kernel.shape
    off = (K - 1) // 2
    out = np.zeros((c_out, L))
    for c in range(c_out):
        for t in range(L):
            acc = 0.0
            for j in range(c_in):
                for a in range(K):
                    src = t + a - off
                    if 0 <= src < L:
                        acc += x[j, src] * kernel[c, j, a]
            out[c, t] = acc
    return out


def linear_oracle(x, w, b):
    """Naive double-loop matrix multiply, input index ascending, bias last."""
    B, d_in = x.shape
    d_out = w.shape[1]
    out = np.zeros((B, d_out))
    for r in range(B):
        for o in range(d_out):
            acc = 0.0
            for d in range(d_in):
                acc += x[r, d] * w[d, o]
            acc += b[o]
            out[r, o] = acc
    return out


class TestConv1D:
    def test_identity_kernel(self):
        conv = nn.Conv1D(1, 1)
        conv.kernel = np.array([[[0.0, 1.0, 0.0]]])
        out = nn.conv1d_apply([[0.0, 0.0, 1.0, 0.0, 0.0]], conv)
        assert np.array_equal(out, [[0.0, 0.0, 1.0, 0.0, 0.0]])

    def test_hand_example(self):
        conv = nn.Conv1D(1, 1)
        conv.kernel = np.array([[[1.0, 0.0, -1.0]]])
        out = nn.conv1d_apply([[1.0, 2.0, 3.0]], conv)
        assert np.array_equal(out, [[-2.0, -2.0, 2.0]])

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_naive_oracle_exactly(self, seed):
        rng = np.random.default_rng(seed)
        c_in, c_out, L = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 40)
        conv = nn.Conv1D(int(c_in), int(c_out), rng=rng)
        x = rng.normal(size=(int(c_in), int(L)))
        out = nn.conv1d_apply(x, conv)
        assert np.array_equal(out, conv1d_oracle(x, conv.kernel))

    def test_channel_mismatch_names_axis(self):
        conv = nn.Conv1D(3, 2)
        with pytest.raises(ShapeMismatchError, match="channel axis"):
            conv.forward(np.zeros((1, 2, 10)))

    def test_rejects_non_finite(self):
        conv = nn.Conv1D(1, 1)
        x = np.zeros((1, 1, 5))
        x[0, 0, 2] = np.nan
        with pytest.raises(NonFiniteError):
            conv.forward(x)


class TestMaxPool1D:
    def test_constant_input(self):
        out = nn.maxpool_apply([[5.0, 5.0, 5.0, 5.0]])
        assert np.array_equal(out, [[5.0, 5.0]])

    def test_pairwise_max(self):
        out = nn.maxpool_apply([[1.0, 3.0, 2.0, 0.0]])
        assert np.array_equal(out, [[3.0, 2.0]])

    def test_gradient_matches_finite_differences(self):
        x = np.array([[[1.0, 3.0, 2.0, 0.0]]])
        pool = nn.MaxPool1D()
        out = pool.forward(x, train=True)
        grad = pool.backward(np.ones_like(out))
        assert np.array_equal(grad, [[[0.0, 1.0, 1.0, 0.0]]])
        # central finite differences of sum(pool(x))
        h = 1e-6
        fd = np.zeros_like(x)
        for i in range(4):
            xp, xm = x.copy(), x.copy()
            xp[0, 0, i] += h
            xm[0, 0, i] -= h
            fd[0, 0, i] = (pool.forward(xp).sum() - pool.forward(xm).sum()) / (2 * h)
        assert np.allclose(grad, fd)

    def test_tie_routes_to_lower_index(self):
        pool = nn.MaxPool1D()
        out = pool.forward(np.array([[[2.0, 2.0]]]), train=True)
        grad = pool.backward(np.ones_like(out))
        assert np.array_equal(grad, [[[1.0, 0.0]]])

    def test_odd_length_rejected(self):
        with pytest.raises(ShapeMismatchError, match="even"):
            nn.maxpool_apply([[1.0, 2.0, 3.0]])


class TestReLU:
    def test_definition(self):
        assert np.array_equal(nn.relu_apply([-1.0, 0.0, 2.0]), [0.0, 0.0, 2.0])

    def test_identity_region(self):
        x = np.array([0.5, 1.0, 7.0])
        assert np.array_equal(nn.relu_apply(x), x)

    def test_subgradients(self):
        relu = nn.ReLU()
        relu.forward(np.array([-1.0, 0.0, 2.0]), train=True)
        grad = relu.backward(np.ones(3))
        assert np.array_equal(grad, [0.0, 0.0, 1.0])


class TestBatchNorm1D:
    def test_normalizes_per_channel(self):
        rng = np.random.default_rng(0)
        bn = nn.BatchNorm1D(3)
        x = rng.normal(loc=5.0, scale=2.0, size=(8, 3, 10))
        out = nn.batchnorm_apply(x, bn, mode="train")
        means = out.mean(axis=(0, 2))
        variances = out.var(axis=(0, 2))
        assert np.allclose(means, 0.0, atol=1e-12)
        assert np.allclose(variances, 1.0, atol=1e-4)  # eps shrinks it slightly

    def test_affine_on_normalized_input(self):
        rng = np.random.default_rng(1)
        bn = nn.BatchNorm1D(2)
        bn.gamma[:] = 2.0
        bn.beta[:] = 3.0
        x = rng.normal(size=(64, 2, 50))
        x = (x - x.mean(axis=(0, 2), keepdims=True)) / x.std(axis=(0, 2), keepdims=True)
        out = nn.batchnorm_apply(x, bn, mode="train")
        assert np.allclose(out, 2.0 * x + 3.0, atol=1e-4)

    def test_infer_with_batch_stats_matches_train(self):
        rng = np.random.default_rng(2)
        bn = nn.BatchNorm1D(4)
        bn.gamma[:] = rng.normal(size=4)
        bn.beta[:] = rng.normal(size=4)
        x = rng.normal(size=(6, 4, 9))
        train_out = nn.batchnorm_apply(x, bn, mode="train")
        bn.running_mean = x.mean(axis=(0, 2))
        bn.running_var = x.var(axis=(0, 2))
        infer_out = nn.batchnorm_apply(x, bn, mode="infer")
        assert np.array_equal(train_out, infer_out)

    def test_batch_of_one_rejected_in_train(self):
        bn = nn.BatchNorm1D(2)
        with pytest.raises(ShapeMismatchError, match="variance undefined"):
            nn.batchnorm_apply(np.zeros((1, 2, 4)), bn, mode="train")

    def test_rank2_input(self):
        rng = np.random.default_rng(3)
        bn = nn.BatchNorm1D(5)
        x = rng.normal(loc=2.0, size=(32, 5))
        out = nn.batchnorm_apply(x, bn, mode="train")
        assert np.allclose(out.mean(axis=0), 0.0, atol=1e-12)


class TestLinear:
    def test_identity_weight(self):
        lin = nn.Linear(3, 3)
        lin.weight = np.eye(3)
        lin.bias = np.zeros(3)
        x = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        assert np.array_equal(nn.linear_apply(x, lin), x)

    def test_zero_weight_broadcasts_bias(self):
        lin = nn.Linear(3, 2)
        lin.weight = np.zeros((3, 2))
        lin.bias = np.array([7.0, -1.0])
        out = nn.linear_apply(np.ones((4, 3)), lin)
        assert np.array_equal(out, np.tile([7.0, -1.0], (4, 1)))

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_naive_oracle_exactly(self, seed):
        rng = np.random.default_rng(100 + seed)
        d_in, d_out, B = rng.integers(1, 30), rng.integers(1, 10), rng.integers(1, 8)
        lin = nn.Linear(int(d_in), int(d_out), rng=rng)
        lin.bias = rng.normal(size=int(d_out))
        x = rng.normal(size=(int(B), int(d_in)))
        assert np.array_equal(nn.linear_apply(x, lin), linear_oracle(x, lin.weight, lin.bias))

    def test_feature_mismatch(self):
        lin = nn.Linear(4, 2)
        with pytest.raises(ShapeMismatchError, match="feature axis"):
            lin.forward(np.zeros((2, 5)))


def test_every_layer_preserves_finiteness():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 3, 8)) * 1e6
    layers = [
        nn.Conv1D(3, 2, rng=rng),
        nn.MaxPool1D(),
        nn.ReLU(),
        nn.BatchNorm1D(3),
    ]
    for layer in layers:
        out = layer.forward(x, train=True)
        assert np.isfinite(out).all()
    lin = nn.Linear(24, 5, rng=rng)
    assert np.isfinite(lin.forward(x)).all()
