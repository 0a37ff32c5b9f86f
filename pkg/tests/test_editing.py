"""Latent editing: interpolation, mixing, colorization plumbing."""

import numpy as np
import pytest

from styleinv.autodiff import ShapeError
from styleinv.corpus import sample_prior
from styleinv.editing import (channel_dispersion, colorize, grayscale,
                              montage_h, morph, style_mix)
from styleinv.embedder import init_embednet
from styleinv.generator import build_generator, synthesize


@pytest.fixture(scope="module")
def gen():
    return build_generator(1)


@pytest.fixture(scope="module")
def codes():
    rng = np.random.default_rng(4)
    w1 = sample_prior(rng, 8, 64).astype(np.float32)
    w2 = sample_prior(rng, 8, 64).astype(np.float32)
    return w1, w2


class TestMorph:
    def test_endpoints_bit_exact(self, codes):
        w1, w2 = codes
        assert morph(w1, w2, 1.0).tobytes() == w1.tobytes()
        assert morph(w1, w2, 0.0).tobytes() == w2.tobytes()

    def test_midpoint_average(self, codes):
        w1, w2 = codes
        np.testing.assert_allclose(morph(w1, w2, 0.5), (w1 + w2) / 2, rtol=1e-6)

    def test_endpoint_returns_a_copy(self, codes):
        w1, w2 = codes
        out = morph(w1, w2, 1.0)
        out[0, 0] = 99.0
        assert w1[0, 0] != 99.0

    def test_rejects_out_of_range_weight(self, codes):
        w1, w2 = codes
        for lam in (-0.1, 1.5):
            with pytest.raises(ValueError):
                morph(w1, w2, lam)

    def test_rejects_shape_mismatch(self, codes):
        w1, _ = codes
        with pytest.raises(ShapeError):
            morph(w1, w1[:4], 0.5)


class TestStyleMix:
    def test_k_zero_is_base(self, codes):
        w1, w2 = codes
        assert style_mix(w1, w2, 0).tobytes() == w1.tobytes()

    def test_k_full_is_style(self, codes):
        w1, w2 = codes
        assert style_mix(w1, w2, 8).tobytes() == w2.tobytes()

    def test_partial_mix_rows(self, codes):
        w1, w2 = codes
        out = style_mix(w1, w2, 3)
        np.testing.assert_array_equal(out[:5], w1[:5])
        np.testing.assert_array_equal(out[5:], w2[5:])

    def test_rejects_bad_k(self, codes):
        w1, w2 = codes
        for k in (-1, 9):
            with pytest.raises(ValueError):
                style_mix(w1, w2, k)

    def test_does_not_mutate_inputs(self, codes):
        w1, w2 = codes
        before = w1.tobytes()
        style_mix(w1, w2, 4)
        assert w1.tobytes() == before


class TestGrayscale:
    def test_output_has_no_channel_spread(self, gen, codes):
        w1, _ = codes
        g = grayscale(synthesize(gen, w1))
        assert channel_dispersion(g) == 0.0

    def test_preserves_constant_images(self):
        img = np.full((3, 8, 8), 0.5, np.float32)
        np.testing.assert_allclose(grayscale(img), img, atol=1e-6)

    def test_luma_weights(self):
        img = np.zeros((3, 2, 2), np.float32)
        img[1] = 1.0  # pure green on [-1,1] scale: unit values (0.5, 1, 0.5)
        g = grayscale(img)
        expected = (0.299 * 0.5 + 0.587 * 1.0 + 0.114 * 0.5) * 2.0 - 1.0
        np.testing.assert_allclose(g, expected, atol=1e-6)

    def test_rejects_single_channel(self):
        with pytest.raises(ShapeError):
            grayscale(np.zeros((1, 8, 8), np.float32))


class TestColorize:
    def test_untrained_network_warns(self, gen, codes):
        w1, w2 = codes
        x_color = synthesize(gen, w2)
        x_gray = grayscale(synthesize(gen, w1))
        with pytest.warns(UserWarning, match="untrained"):
            out = colorize(x_gray, x_color, init_embednet(3), gen)
        assert out.shape == (3, 32, 32)

    def test_trained_counter_silences_warning(self, gen, codes):
        import warnings as w
        w1, w2 = codes
        net = init_embednet(3)
        net.trained_epochs = 1
        with w.catch_warnings():
            w.simplefilter("error")
            colorize(grayscale(synthesize(gen, w1)), synthesize(gen, w2), net, gen)


class TestMontage:
    def test_concatenates_widths(self):
        a = np.zeros((3, 4, 5))
        b = np.ones((3, 4, 7))
        out = montage_h([a, b])
        assert out.shape == (3, 4, 12)
        np.testing.assert_array_equal(out[:, :, :5], a)
        np.testing.assert_array_equal(out[:, :, 5:], b)

    def test_rejects_mixed_heights(self):
        with pytest.raises(ShapeError):
            montage_h([np.zeros((3, 4, 4)), np.zeros((3, 5, 4))])


def test_dispersion_positive_for_color(gen, codes):
    w1, _ = codes
    assert channel_dispersion(synthesize(gen, w1)) > 0.01
