"""Feature-space distance: axioms and precomputed-target path."""

import numpy as np
import pytest

from styleinv.autodiff import Tape
from styleinv.perceptual import (PhiConfig, build_phi, distance, distance_rows_t,
                                 distance_t, target_features)


@pytest.fixture(scope="module")
def phi():
    return build_phi(2)


@pytest.fixture(scope="module")
def imgs():
    rng = np.random.default_rng(0)
    return (rng.uniform(-1, 1, (2, 3, 32, 32)).astype(np.float32),
            rng.uniform(-1, 1, (2, 3, 32, 32)).astype(np.float32))


def test_self_distance_is_zero(phi, imgs):
    a, _ = imgs
    d = distance(phi, a, a)
    assert np.all(np.asarray(d) == 0.0)


def test_distance_positive_for_distinct_images(phi, imgs):
    a, b = imgs
    assert np.all(np.asarray(distance(phi, a, b)) > 0.0)


def test_symmetry(phi, imgs):
    a, b = imgs
    dab = np.asarray(distance(phi, a, b))
    dba = np.asarray(distance(phi, b, a))
    np.testing.assert_allclose(dab, dba, rtol=1e-6, atol=1e-6)


def test_precomputed_targets_match_direct_path(phi, imgs):
    a, b = imgs
    feats = target_features(phi, b)
    tape = Tape(np.float32)
    at = tape.const(a)
    direct = distance_rows_t(phi, at, b=tape.const(b))
    cached = distance_rows_t(phi, at, b_norm_feats=feats)
    np.testing.assert_allclose(direct.data, cached.data, rtol=1e-6, atol=1e-7)


def test_exactly_one_target_form_required(phi, imgs):
    a, b = imgs
    tape = Tape(np.float32)
    at = tape.const(a)
    with pytest.raises(ValueError):
        distance_rows_t(phi, at)
    with pytest.raises(ValueError):
        distance_rows_t(phi, at, b=tape.const(b), b_norm_feats=target_features(phi, b))


def test_params_frozen_and_biasless(phi):
    names = [n for n, _ in phi.arrays()]
    assert names == ["stage0.w", "stage1.w", "stage2.w"]
    for _, arr in phi.arrays():
        assert not arr.flags.writeable


def test_stage_widths_follow_config():
    phi = build_phi(9, PhiConfig(widths=(4, 8)))
    shapes = {n: a.shape for n, a in phi.arrays()}
    assert shapes["stage0.w"] == (4, 3, 3, 3)
    assert shapes["stage1.w"] == (8, 4, 3, 3)


def test_scalar_variant_sums_the_rows(phi, imgs):
    a, b = imgs
    tape = Tape(np.float32)
    rows = distance_rows_t(phi, tape.const(a), b=tape.const(b))
    tot = distance_t(phi, tape.const(a), b=tape.const(b))
    np.testing.assert_allclose(float(tot.data), float(np.sum(rows.data)), rtol=1e-6)


def test_gradient_reaches_first_argument(phi, imgs):
    a, b = imgs
    tape = Tape(np.float32)
    at = tape.leaf(a, requires_grad=True)
    tape.backward(distance_t(phi, at, b=tape.const(b)))
    assert at.grad is not None and np.any(at.grad != 0.0)
