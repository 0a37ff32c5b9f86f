"""Frozen style-based generator: shapes, determinism, freezing, taps."""

import numpy as np
import pytest

from styleinv.autodiff import ShapeError, Tape
from styleinv.generator import (GeneratorConfig, build_generator, grad_wrt_latent,
                                mean_latent, synthesize, synthesize_t)


@pytest.fixture(scope="module")
def gen():
    return build_generator(1)


def test_default_geometry(gen):
    cfg = gen.config
    assert cfg.image_size == 32
    assert cfg.n_layers == 8
    assert cfg.resolutions == (4, 8, 16, 32)


def test_config_rejects_bad_chain():
    with pytest.raises(ShapeError):
        GeneratorConfig(image_size=48)  # not reachable by doubling from 4


def test_output_shape_and_range(gen):
    w = np.zeros((3, 8, 64), dtype=np.float32)
    img = synthesize(gen, w)
    assert img.shape == (3, 3, 32, 32)
    assert img.dtype == np.float32
    assert np.all(img <= 1.0) and np.all(img >= -1.0)  # tanh output


def test_single_code_convenience(gen):
    w = np.zeros((8, 64), dtype=np.float32)
    assert synthesize(gen, w).shape == (3, 32, 32)


def test_same_seed_same_params():
    a, b = build_generator(5), build_generator(5)
    for (na, pa), (nb, pb) in zip(a.arrays(), b.arrays()):
        assert na == nb
        np.testing.assert_array_equal(pa, pb)


def test_different_seed_different_params():
    a, b = build_generator(5), build_generator(6)
    diffs = [not np.array_equal(pa, pb)
             for (_, pa), (_, pb) in zip(a.arrays(), b.arrays())
             if pa.size and pa.any()]
    assert any(diffs)


def test_params_are_frozen(gen):
    for name, arr in gen.arrays():
        assert not arr.flags.writeable, name
        with pytest.raises((ValueError, RuntimeError)):
            arr[...] = 0.0


def test_synthesis_is_deterministic(gen):
    rng = np.random.default_rng(0)
    w = rng.standard_normal((2, 8, 64)).astype(np.float32)
    np.testing.assert_array_equal(synthesize(gen, w), synthesize(gen, w))


def test_style_layers_have_local_effect(gen):
    rng = np.random.default_rng(1)
    w = rng.standard_normal((8, 64)).astype(np.float32)
    base = synthesize(gen, w)
    w2 = w.copy()
    w2[7] += 1.0  # last layer feeds the final conv only
    moved = synthesize(gen, w2)
    assert not np.array_equal(base, moved)


def test_tap_exposes_pre_modulation_maps(gen):
    w = np.zeros((1, 8, 64), dtype=np.float32)
    tap = {}
    synthesize(gen, w, tap=tap)
    assert "layer0.pre_mod" in tap and "layer7.pre_mod" in tap
    assert tap["layer0.pre_mod"].shape == (1, 64, 4, 4)
    assert tap["layer7.pre_mod"].shape == (1, 16, 32, 32)


def test_grad_wrt_latent_matches_tape(gen):
    rng = np.random.default_rng(2)
    w = rng.standard_normal((2, 8, 64)).astype(np.float32)
    upstream = rng.standard_normal((2, 3, 32, 32)).astype(np.float32)
    g = grad_wrt_latent(gen, w, upstream)

    tape = Tape(np.float32)
    wt = tape.leaf(w, requires_grad=True)
    img = synthesize_t(gen, wt)
    loss = tape.sum_all(tape.mul(img, tape.const(upstream)))
    tape.backward(loss)
    np.testing.assert_allclose(g, wt.grad, rtol=1e-4, atol=1e-5)


def test_mean_latent_is_deterministic_and_tight(gen):
    m1 = mean_latent(gen, n=512, seed=3)
    m2 = mean_latent(gen, n=512, seed=3)
    np.testing.assert_array_equal(m1, m2)
    assert m1.shape == (8, 64)
    # averaging zero-mean draws concentrates near the origin
    assert float(np.abs(m1).mean()) < 0.2


def test_float64_path(gen):
    w = np.zeros((1, 8, 64), dtype=np.float64)
    img = synthesize(gen, w)
    assert img.dtype == np.float64
