"""Reconstruction-network structure tests."""

import numpy as np
import pytest

from equimage.autodiff import Tape, upsample_bilinear_array
from equimage.models import ReconNet, ReconNetConfig


def make_net(task, channels, rng, **kwargs):
    defaults = dict(hidden_channels=6, blocks=2, kernel_size=3, highpass_size=5, factor=2)
    defaults.update(kwargs)
    return ReconNet.create(ReconNetConfig(task=task, channels=channels, **defaults), rng)


class TestInpaintNet:
    def test_zero_weights_identity(self, rng):
        net = make_net("inpainting", 3, rng).zeroed()
        y = rng.random((3, 12, 12)).astype(np.float32)
        np.testing.assert_array_equal(net.predict(y), y)

    def test_output_shape_matches_input(self, rng):
        for channels, size in [(1, 10), (3, 16), (4, 12)]:
            net = make_net("inpainting", channels, rng)
            y = rng.random((channels, size, size)).astype(np.float32)
            assert net.predict(y).shape == y.shape

    def test_channel_mismatch_rejected(self, rng):
        net = make_net("inpainting", 3, rng)
        with pytest.raises(ValueError):
            net.predict(rng.random((2, 8, 8)).astype(np.float32))

    def test_task_mismatch_rejected(self, rng):
        net = make_net("pansharpening", 3, rng)
        tape = Tape()
        with pytest.raises(ValueError):
            net.forward_inpaint(tape, tape.leaf(rng.random((3, 8, 8))))


class TestPansharpenNet:
    def test_zero_weights_linear_baseline(self, rng):
        # the zero-weight model is exactly the upsampled multispectral input
        net = make_net("pansharpening", 4, rng, factor=4).zeroed()
        y_ms = rng.random((4, 8, 8)).astype(np.float32)
        y_pan = rng.random((1, 32, 32)).astype(np.float32)
        out = net.predict(y_ms, y_pan)
        np.testing.assert_allclose(out, upsample_bilinear_array(y_ms, 4), atol=1e-7)

    def test_constant_pan_has_zero_highpass(self, rng):
        net = make_net("pansharpening", 2, rng)
        tape = Tape()
        y_pan = tape.leaf(np.full((1, 16, 16), 0.37))
        from equimage import autodiff as ad

        highpass = ad.sub(y_pan, ad.linear_op(net._highpass_blur, y_pan))
        np.testing.assert_allclose(highpass.values, 0.0, atol=1e-12)

    def test_output_channels_full_resolution(self, rng):
        net = make_net("pansharpening", 4, rng, factor=4)
        out = net.predict(rng.random((4, 8, 8)).astype(np.float32),
                          rng.random((1, 32, 32)).astype(np.float32))
        assert out.shape == (4, 32, 32)

    def test_factor_mismatch_rejected(self, rng):
        net = make_net("pansharpening", 4, rng, factor=4)
        with pytest.raises(ValueError):
            net.predict(rng.random((4, 8, 8)).astype(np.float32),
                        rng.random((1, 16, 16)).astype(np.float32))

    def test_zero_weight_channel_permutation_equivariance(self, rng):
        # at the linear baseline (flat spectral response), relabeling the
        # multispectral channels permutes the output identically
        net = make_net("pansharpening", 3, rng, factor=2).zeroed()
        y_ms = rng.random((3, 8, 8)).astype(np.float32)
        y_pan = rng.random((1, 16, 16)).astype(np.float32)
        perm = [2, 0, 1]
        out = net.predict(y_ms, y_pan)
        out_perm = net.predict(y_ms[perm], y_pan)
        np.testing.assert_allclose(out_perm, out[perm], atol=1e-7)


class TestConfigValidation:
    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            ReconNetConfig(task="inpainting", channels=3, kernel_size=4)

    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError):
            ReconNetConfig(task="denoising", channels=3)

    def test_init_is_seeded(self, rng):
        cfg = ReconNetConfig(task="inpainting", channels=3)
        n1 = ReconNet.create(cfg, np.random.default_rng(5))
        n2 = ReconNet.create(cfg, np.random.default_rng(5))
        for name in n1.params:
            np.testing.assert_array_equal(n1.params[name], n2.params[name])

    def test_biases_start_zero(self, rng):
        net = make_net("inpainting", 3, rng)
        for name, arr in net.params.items():
            if name.endswith(".b"):
                np.testing.assert_array_equal(arr, 0.0)
