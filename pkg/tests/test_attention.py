"""Map construction, the bank container, and multi-head depthwise conv."""

import numpy as np
import pytest

from cadanet import reference
from cadanet.attention import (BaseKernelBank, construct_maps,
                               construct_maps_backward, mh_dw_conv,
                               mh_dw_conv_backward)
from cadanet.errors import ConfigurationError
from cadanet.layers import Conv2d


def make_bank(heads=2, bases=3, g=3, seed=0, pos_enabled=True):
    rng = np.random.default_rng(seed)
    return BaseKernelBank(rng.standard_normal((heads, bases, g, g)),
                          rng.standard_normal((heads, g, g)),
                          pos_enabled=pos_enabled)


class TestBank:
    def test_validation(self):
        with pytest.raises(ConfigurationError):
            BaseKernelBank(np.zeros((2, 3, 4, 4)), np.zeros((2, 4, 4)))
        with pytest.raises(ConfigurationError):
            BaseKernelBank(np.zeros((2, 3, 3, 5)), np.zeros((2, 3, 3)))
        with pytest.raises(ConfigurationError):
            BaseKernelBank(np.zeros((2, 3, 3, 3)), np.zeros((1, 3, 3)))

    def test_properties(self):
        bank = make_bank(heads=2, bases=3, g=5)
        assert (bank.num_heads, bank.num_bases, bank.kernel_size) == (2, 3, 5)

    def test_bytes_roundtrip(self):
        for dtype in (np.float32, np.float64):
            bank = make_bank(seed=1)
            bank.base = bank.base.astype(dtype)
            bank.pos = bank.pos.astype(dtype)
            back = BaseKernelBank.from_bytes(bank.to_bytes())
            assert back.base.dtype == dtype
            assert np.array_equal(back.base, bank.base)
            assert np.array_equal(back.pos, bank.pos)
            assert back.pos_enabled == bank.pos_enabled

    def test_bytes_roundtrip_pos_disabled(self):
        bank = make_bank(seed=2, pos_enabled=False)
        assert not BaseKernelBank.from_bytes(bank.to_bytes()).pos_enabled


class TestConstructMaps:
    def test_matches_loop_reference(self):
        rng = np.random.default_rng(3)
        for shared in (False, True):
            for pos_on in (False, True):
                bank = make_bank(seed=4, pos_enabled=pos_on)
                a = 1 if shared else 2
                alpha = rng.standard_normal((2, a, 3, 4, 4))
                got = construct_maps(alpha, bank)
                want = reference.construct_maps_loops(
                    alpha, bank.base, bank.pos, pos_enabled=pos_on)
                assert got.shape == (2, 2 * 9, 4, 4)
                assert np.abs(got - want).max() < 1e-12

    def test_zero_alpha_broadcasts_pos(self):
        bank = make_bank(seed=5)
        alpha = np.zeros((1, 2, 3, 2, 2))
        maps = construct_maps(alpha, bank)
        for h in range(2):
            block = maps[0, h * 9:(h + 1) * 9]
            assert np.abs(block - bank.pos[h].ravel()[:, None, None]).max() \
                == 0.0

    def test_single_base_scaling(self):
        bank = make_bank(heads=1, bases=1, seed=6, pos_enabled=False)
        alpha = np.full((1, 1, 1, 3, 3), 2.0)
        maps = construct_maps(alpha, bank)
        assert np.abs(maps[0, :, 1, 1] - 2.0 * bank.base[0, 0].ravel()).max() \
            < 1e-12

    def test_alpha_validation(self):
        bank = make_bank()
        with pytest.raises(ConfigurationError):
            construct_maps(np.zeros((1, 3, 3, 2, 2)), bank)   # bad head axis
        with pytest.raises(ConfigurationError):
            construct_maps(np.zeros((1, 2, 4, 2, 2)), bank)   # bad bases
        with pytest.raises(ConfigurationError):
            construct_maps(np.zeros((2, 3, 2, 2)), bank)      # bad rank

    def test_backward_shapes_and_fd(self):
        rng = np.random.default_rng(7)
        bank = make_bank(seed=8)
        bank.base = bank.base.astype(np.float64)
        bank.pos = bank.pos.astype(np.float64)
        alpha = rng.standard_normal((1, 2, 3, 3, 3))
        gout = rng.standard_normal((1, 18, 3, 3))
        galpha, gbase, gpos = construct_maps_backward(gout, alpha, bank)
        assert galpha.shape == alpha.shape
        assert gbase.shape == bank.base.shape
        assert gpos.shape == bank.pos.shape
        h = 1e-6
        idx = (0, 1, 2, 1, 0)
        ap, am = alpha.copy(), alpha.copy()
        ap[idx] += h
        am[idx] -= h
        fd = ((construct_maps(ap, bank) * gout).sum()
              - (construct_maps(am, bank) * gout).sum()) / (2 * h)
        assert abs(fd - galpha[idx]) < 1e-6

    def test_backward_no_pos_grad_when_disabled(self):
        bank = make_bank(seed=9, pos_enabled=False)
        alpha = np.zeros((1, 2, 3, 2, 2))
        _, _, gpos = construct_maps_backward(np.ones((1, 18, 2, 2)), alpha,
                                             bank)
        assert gpos is None


class TestMhDwConv:
    def test_single_channel_heads_is_depthwise(self):
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 3, 6, 6))
        w = rng.standard_normal((3, 3, 3))
        b = rng.standard_normal(3)
        got = mh_dw_conv(x, w, b, head_channels=1, stride=1)
        conv = Conv2d(3, 3, 3, stride=1, padding=1, groups=3, bias=True,
                      dtype=np.float64)
        conv.weight.data[:] = w[:, None]
        conv.bias.data[:] = b
        assert np.abs(got - conv.forward(x)).max() < 1e-12

    def test_heads_share_kernel(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((1, 4, 5, 5))
        w = rng.standard_normal((2, 3, 3))
        out = mh_dw_conv(x, w, None, head_channels=2)
        for c in range(4):
            single = mh_dw_conv(x[:, c:c + 1], w[c // 2:c // 2 + 1], None, 1)
            assert np.abs(out[:, c:c + 1] - single).max() < 1e-12

    def test_stride(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((1, 2, 6, 6))
        w = rng.standard_normal((2, 3, 3))
        out = mh_dw_conv(x, w, None, head_channels=1, stride=2)
        assert out.shape == (1, 2, 3, 3)

    def test_backward_fd(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((1, 2, 4, 4))
        w = rng.standard_normal((2, 3, 3))
        b = rng.standard_normal(2)
        gout = rng.standard_normal((1, 2, 4, 4))
        gx, gw, gb = mh_dw_conv_backward(gout, x, w, head_channels=1,
                                         stride=1, with_bias=True)
        h = 1e-6
        wi = (1, 2, 0)
        wp, wm = w.copy(), w.copy()
        wp[wi] += h
        wm[wi] -= h
        fd = ((mh_dw_conv(x, wp, b, 1) * gout).sum()
              - (mh_dw_conv(x, wm, b, 1) * gout).sum()) / (2 * h)
        assert abs(fd - gw[wi]) < 1e-6
        assert np.abs(gb - gout.sum(axis=(0, 2, 3))).max() < 1e-12
