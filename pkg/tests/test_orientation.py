import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ridgekit.errors import CoreDetectionError
from ridgekit.imaging import GrayImage
from ridgekit.orientation import (
    CorePoint,
    OrientationField,
    core_bit_code,
    estimate_orientation,
    find_core,
    poincare_indices,
    smooth_orientation,
    wrap_orientation,
)


def stripe_image(angle, size=128, period=9.0):
    """Ridges running along (cos a, sin a) with y pointing down."""
    y, x = np.mgrid[0:size, 0:size].astype(float)
    u = -math.sin(angle) * x + math.cos(angle) * y
    return GrayImage(np.round(127.5 + 120 * np.cos(2 * math.pi * u / period)))


def interior(field, margin=1):
    return field.theta[margin:-margin, margin:-margin], field.valid[margin:-margin, margin:-margin]


def field_from(theta, block=16):
    ones = np.ones_like(theta)
    return OrientationField(block, np.mod(theta, math.pi), ones, ones.astype(bool))


def pole_field(cores, deltas, rows=16, cols=16, block=16, phi0=0.0):
    """Block field of the zero-pole model, written out independently of the library."""
    ys, xs = np.mgrid[0:rows, 0:cols].astype(float)
    z = (xs + 0.5) * block + 1j * (ys + 0.5) * block
    total = np.zeros(z.shape)
    for c in cores:
        total += np.angle(z - complex(*c))
    for d in deltas:
        total -= np.angle(z - complex(*d))
    return field_from(0.5 * total + phi0, block)


@pytest.mark.parametrize("angle", [0.0, math.pi / 4])
def test_stripe_orientation(angle):
    th, ok = interior(estimate_orientation(stripe_image(angle)))
    assert ok.all()
    assert np.abs(wrap_orientation(th - angle)).max() < 0.02


@pytest.mark.parametrize("phi", [math.radians(30), math.radians(60)])
def test_rotation_consistency(phi):
    base = interior(estimate_orientation(stripe_image(0.2)))[0]
    rot = interior(estimate_orientation(stripe_image(0.2 + phi)))[0]
    assert np.abs(wrap_orientation(rot - base - phi)).max() < 0.03


def test_constant_block_invalid():
    f = estimate_orientation(GrayImage(np.full((32, 32), 90)))
    assert not f.valid.any()


def test_smoothing_examples():
    uniform = field_from(np.full((5, 5), math.pi / 3))
    out = smooth_orientation(uniform)
    assert np.array_equal(out.theta, uniform.theta)

    noisy = field_from(np.full((5, 5), math.pi / 3))
    noisy.theta[2, 2] = 0.1
    noisy.coherence[2, 2] = 0.05
    noisy.valid[2, 2] = False
    out = smooth_orientation(noisy)
    assert out.theta[2, 2] == pytest.approx(math.pi / 3, abs=1e-9)

    lonely = field_from(np.full((3, 3), 1.0))
    lonely.valid[:] = False
    lonely.coherence[:] = 0.0
    lonely.valid[1, 1] = True
    lonely.coherence[1, 1] = 0.2
    out = smooth_orientation(lonely)
    assert out.theta[1, 1] == 1.0 and out.coherence[1, 1] < 0.25


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_smoothing_keeps_coherent_blocks(seed):
    rng = np.random.default_rng(seed)
    f = OrientationField(16, rng.uniform(0, math.pi, (6, 6)), rng.uniform(0, 1, (6, 6)),
                         rng.random((6, 6)) > 0.3)
    out = smooth_orientation(f)
    keep = f.coherence >= 0.25
    assert np.array_equal(out.theta[keep], f.theta[keep])


def test_core_and_delta_indices_cancel():
    f = pole_field([(100, 90)], [(170, 180)])
    idx, ok = poincare_indices(f)
    assert ok.all()
    assert abs(idx.sum()) < 0.01
    assert np.isclose(idx.max(), 0.5, atol=0.01) and np.isclose(idx.min(), -0.5, atol=0.01)


def test_whorl_core_near_centre():
    f = pole_field([(128, 128), (128, 128)], [])
    core = find_core(f)
    assert core.kind == "singular"
    assert abs(core.x - 128) <= 16 and abs(core.y - 128) <= 16


def test_loop_core_returned():
    f = pole_field([(120, 100)], [(200, 210)])
    core = find_core(f)
    assert core.kind == "singular"
    assert abs(core.x - 120) <= 16 and abs(core.y - 100) <= 16


def test_arch_fallback():
    ys, xs = np.mgrid[0:16, 0:16].astype(float)
    f = field_from(0.4 * np.sin(2 * math.pi * xs / 16))
    assert np.abs(poincare_indices(f)[0]).max() < 0.25
    assert find_core(f).kind == "arch-fallback"


def test_no_valid_blocks():
    f = field_from(np.zeros((4, 4)))
    f.valid[:] = False
    with pytest.raises(CoreDetectionError):
        find_core(f)


def test_core_bit_code_examples():
    def at(x, y):
        return core_bit_code(CorePoint(x, y, 0.0, "singular"), 320, 320)
    assert at(0, 0) == "0000000000"
    assert at(319, 319) == "1111111111"
    assert at(160, 160) == "1100000000"


@given(st.integers(0, 159), st.integers(0, 159))
def test_top_left_quadrant_bits(x, y):
    bits = core_bit_code(CorePoint(x, y, 0.0, "singular"), 320, 320)
    assert len(bits) == 10 and bits[:2] == "00"
