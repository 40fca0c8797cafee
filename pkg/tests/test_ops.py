"""Array ops against loop references and hand-computed cases."""

import numpy as np
import pytest

from cadanet import ops, reference
from cadanet.errors import ConfigurationError


def rand(*shape, seed=0):
    return np.random.default_rng(seed).standard_normal(shape)


class TestConv2d:
    def test_matches_loop_reference_grid(self):
        rng = np.random.default_rng(7)
        for stride in (1, 2):
            for padding in (0, 1):
                for groups in (1, 2):
                    x = rng.standard_normal((2, 4, 6, 6))
                    w = rng.standard_normal((6, 4 // groups, 3, 3))
                    b = rng.standard_normal(6)
                    got = ops.conv2d(x, w, b, stride, padding, groups)
                    want = reference.conv2d_loops(x, w, b, stride, padding,
                                                  groups)
                    assert np.abs(got - want).max() < 1e-12

    def test_identity_kernel(self):
        x = rand(1, 2, 5, 5)
        w = np.zeros((2, 2, 1, 1))
        w[0, 0] = w[1, 1] = 1.0
        assert np.allclose(ops.conv2d(x, w), x)

    def test_averaging_kernel_on_constant(self):
        x = np.full((1, 1, 4, 4), 3.0)
        w = np.full((1, 1, 3, 3), 1.0 / 9.0)
        out = ops.conv2d(x, w, stride=1, padding=0)
        assert np.allclose(out, 3.0)

    def test_1x1_is_channel_matmul(self):
        x = rand(2, 3, 4, 4)
        w = rand(5, 3, 1, 1, seed=1)
        got = ops.conv2d(x, w)
        want = np.einsum("oc,nchw->nohw", w[:, :, 0, 0], x)
        assert np.abs(got - want).max() < 1e-12

    def test_depthwise_groups(self):
        x = rand(1, 3, 5, 5)
        w = rand(3, 1, 3, 3, seed=2)
        got = ops.conv2d(x, w, padding=1, groups=3)
        for c in range(3):
            want = reference.conv2d_loops(x[:, c:c + 1], w[c:c + 1],
                                          padding=1)
            assert np.abs(got[:, c:c + 1] - want).max() < 1e-12

    def test_rejects_bad_group_split(self):
        x = rand(1, 3, 5, 5)
        w = rand(4, 1, 3, 3)
        with pytest.raises(ConfigurationError):
            ops.conv2d(x, w, groups=2)


class TestBatchNorm:
    def test_train_mode_normalizes(self):
        x = rand(4, 3, 5, 5, seed=3) * 5 + 2
        scale = np.ones(3)
        shift = np.zeros(3)
        rm, rv = np.zeros(3), np.ones(3)
        out, _ = ops.batch_norm(x, scale, shift, rm, rv, train=True)
        assert np.abs(out.mean(axis=(0, 2, 3))).max() < 1e-10
        assert np.abs(out.var(axis=(0, 2, 3)) - 1).max() < 1e-4

    def test_running_stats_one_step_full_momentum(self):
        x = rand(4, 2, 3, 3, seed=4) * 2 + 1
        rm, rv = np.zeros(2), np.ones(2)
        ops.batch_norm(x, np.ones(2), np.zeros(2), rm, rv, train=True,
                       momentum=1.0)
        n = x.shape[0] * x.shape[2] * x.shape[3]
        assert np.allclose(rm, x.mean(axis=(0, 2, 3)))
        assert np.allclose(rv, x.var(axis=(0, 2, 3)) * n / (n - 1))

    def test_eval_mode_affine_only(self):
        x = rand(2, 2, 3, 3, seed=5)
        rm = np.array([1.0, -1.0])
        rv = np.array([4.0, 9.0])
        scale = np.array([2.0, 3.0])
        shift = np.array([0.5, -0.5])
        out, _ = ops.batch_norm(x, scale, shift, rm.copy(), rv.copy(),
                                train=False)
        want = (x - rm[None, :, None, None]) / np.sqrt(
            rv[None, :, None, None] + 1e-5) * scale[None, :, None, None] \
            + shift[None, :, None, None]
        assert np.abs(out - want).max() < 1e-12

    def test_eval_mode_does_not_touch_running(self):
        x = rand(2, 2, 3, 3, seed=6)
        rm, rv = np.zeros(2), np.ones(2)
        ops.batch_norm(x, np.ones(2), np.zeros(2), rm, rv, train=False)
        assert rm.sum() == 0.0 and (rv == 1.0).all()


class TestPools:
    def test_max_pool_hand_case(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        out, _ = ops.max_pool(x, 2, 2)
        assert np.array_equal(out[0, 0], [[5, 7], [13, 15]])

    def test_max_pool_padding_ignores_pad(self):
        x = -np.ones((1, 1, 2, 2))
        out, _ = ops.max_pool(x, 3, 2, padding=1)
        assert (out == -1.0).all()          # -inf pad never wins

    def test_avg_pool_counts_padding(self):
        x = np.ones((1, 1, 2, 2))
        out = ops.avg_pool(x, 2, 1, padding=1)
        # corner window covers 1 real pixel out of 4
        assert out[0, 0, 0, 0] == pytest.approx(0.25)

    def test_global_avg_pool(self):
        x = rand(2, 3, 4, 5, seed=7)
        out = ops.global_avg_pool(x)
        assert out.shape == (2, 3)
        assert np.allclose(out, x.mean(axis=(2, 3)))


class TestLinearAndLoss:
    def test_linear_hand_case(self):
        x = np.array([[1.0, 2.0]])
        w = np.array([[3.0, 4.0], [5.0, 6.0]])
        b = np.array([0.5, -0.5])
        assert np.allclose(ops.linear(x, w, b), [[11.5, 16.5]])

    def test_softmax_xent_uniform_logits(self):
        logits = np.zeros((4, 3))
        labels = np.array([0, 1, 2, 0])
        loss, grad = ops.softmax_cross_entropy(logits, labels)
        assert loss == pytest.approx(np.log(3))
        assert np.abs(grad.sum(axis=1)).max() < 1e-12

    def test_softmax_xent_confident_correct(self):
        logits = np.array([[100.0, 0.0, 0.0]])
        loss, _ = ops.softmax_cross_entropy(logits, np.array([0]))
        assert loss < 1e-12

    def test_grad_matches_probabilities(self):
        rng = np.random.default_rng(8)
        logits = rng.standard_normal((5, 4))
        labels = rng.integers(0, 4, 5)
        _, grad = ops.softmax_cross_entropy(logits, labels)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        p = e / e.sum(axis=1, keepdims=True)
        onehot = np.eye(4)[labels]
        assert np.abs(grad - (p - onehot) / 5).max() < 1e-12


class TestFft:
    def test_fft2_matches_naive_dft(self):
        x = rand(6, 6, seed=9)
        got = ops.fft2(x)
        want = reference.dft2_loops(x)
        assert np.abs(got - want).max() < 1e-12

    def test_roundtrip(self):
        x = rand(8, 8, seed=10)
        assert np.abs(ops.ifft2(ops.fft2(x)).real - x).max() < 1e-12

    def test_unitary(self):
        x = rand(8, 8, seed=11)
        assert np.abs(np.sum(np.abs(ops.fft2(x)) ** 2) - np.sum(x ** 2)) \
            < 1e-10


class TestUnfold:
    def test_unfold_windows(self):
        x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
        view, ho, wo = ops.unfold(x, 2, 2, 2)
        assert (ho, wo) == (2, 2)
        assert np.array_equal(view[0, 0, :, :, 0, 0], [[0, 1], [4, 5]])
        assert np.array_equal(view[0, 0, :, :, 1, 1], [[10, 11], [14, 15]])
