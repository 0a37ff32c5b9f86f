"""Two-branch embedding network: shapes, merge behavior, determinism."""

import numpy as np
import pytest

from styleinv.autodiff import ShapeError, Tape
from styleinv.embedder import (EmbedConfig, bind, embed, init_embednet,
                               init_single_embednet, merge_features)


@pytest.fixture(scope="module")
def net():
    return init_embednet(3)


@pytest.fixture(scope="module")
def imgs():
    rng = np.random.default_rng(0)
    return rng.uniform(-1, 1, (4, 3, 32, 32)).astype(np.float32)


def test_output_geometry(net, imgs):
    w = embed(net, imgs)
    assert w.shape == (4, 8, 64)
    assert w.dtype == np.float32
    assert np.all(np.isfinite(w))


def test_single_image_convenience(net, imgs):
    w = embed(net, imgs[0])
    assert w.shape == (8, 64)


def test_deterministic_by_seed(imgs):
    a = embed(init_embednet(3), imgs)
    b = embed(init_embednet(3), imgs)
    np.testing.assert_array_equal(a, b)


def test_untrained_output_is_near_prior_mean(net, imgs):
    # damped regression head: fresh networks predict codes close to zero
    w = embed(net, imgs)
    assert float(np.abs(w).max()) < 0.5
    assert float(np.abs(w).mean()) < 0.1


def test_output_depends_on_input(net, imgs):
    w = embed(net, imgs)
    assert not np.array_equal(w[0], w[1])


def test_kinds_are_tagged():
    assert init_embednet(3).kind == "two_branch"
    assert init_single_embednet(3).kind == "single_branch"


def test_single_branch_has_no_identity_parameters():
    names = [n for n, _ in init_single_embednet(3).arrays()]
    assert not any(n.startswith(("id.", "mod.")) for n in names)
    assert any(n.startswith("attr.") for n in names)


def test_single_branch_embeds(imgs):
    w = embed(init_single_embednet(3), imgs)
    assert w.shape == (4, 8, 64)


def test_param_table_round_trip(net):
    clone = net.copy()
    for name, arr in net.arrays():
        np.testing.assert_array_equal(clone.get(name), arr)
    clone.set("mod.b", np.ones_like(clone.get("mod.b")))
    assert not np.array_equal(clone.get("mod.b"), net.get("mod.b"))


def test_copy_preserves_training_counter(net):
    c = net.copy()
    c.trained_epochs = 5
    assert net.trained_epochs == 0 and c.trained_epochs == 5


def test_merge_normalizes_before_styling():
    # with a zero modulation map the merge reduces to instance
    # normalization of the attribute features
    cfg = EmbedConfig()
    rng = np.random.default_rng(1)
    c, g = cfg.attr_grid
    f_attr = rng.standard_normal((2, c, g, g)).astype(np.float32) * 3 + 1
    f_id = rng.standard_normal((2, cfg.id_dim)).astype(np.float32)
    merged = merge_features(cfg, f_attr, f_id,
                            np.zeros((cfg.id_dim, 2 * c), np.float32),
                            np.zeros(2 * c, np.float32))
    np.testing.assert_allclose(merged.mean(axis=(2, 3)), 0.0, atol=1e-5)
    np.testing.assert_allclose(merged.std(axis=(2, 3)), 1.0, atol=1e-3)


def test_identity_features_modulate_attributes(net, imgs):
    # changing the modulation bias shifts the predicted codes
    other = net.copy()
    other.set("mod.b", other.get("mod.b") + 1.0)
    a = embed(net, imgs)
    b = embed(other, imgs)
    assert not np.array_equal(a, b)


def test_gradients_reach_every_parameter(net, imgs):
    tape = Tape(np.float32)
    bound = bind(tape, net, trainable=True)
    from styleinv.embedder import embed_t
    w = embed_t(tape.const(imgs), net, bound)
    tape.backward(tape.sum_all(tape.square(w)))
    for name, tensor in bound.items():
        assert tensor.grad is not None, name
        assert np.any(tensor.grad != 0.0), name


def test_config_validates_geometry():
    with pytest.raises(ShapeError):
        EmbedConfig(attr_strides=(2, 2, 2, 2, 2), attr_widths=(8, 8, 8, 8))
