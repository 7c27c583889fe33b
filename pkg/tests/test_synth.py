import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ridgekit.imaging import GrayImage
from ridgekit.orientation import OrientationField, estimate_orientation, poincare_indices, wrap_orientation
from ridgekit.synth import (
    CLASS_FEATURES,
    CLASS_TEMPLATES,
    SIX_CLASSES,
    SynthSpec,
    generate_codes,
    generate_field,
    morton10,
    perturb_codes,
    render_class,
    render_ridges,
)


def hamming(a, b):
    return sum(x != y for x, y in zip(a, b))


def test_noise_free_records_equal_templates():
    data = generate_codes(SynthSpec(per_class=5, noise=0.0, seed=1))
    for r in data.meta:
        assert r.codes == CLASS_TEMPLATES[r.class_label]
        assert data.labels[r.image_id] == r.class_label


def test_same_seed_same_output():
    a = generate_codes(SynthSpec(per_class=10, seed=9))
    b = generate_codes(SynthSpec(per_class=10, seed=9))
    assert a.meta.records == b.meta.records and a.queries == b.queries
    assert generate_codes(SynthSpec(per_class=10, seed=10)).meta.records != a.meta.records


def test_mean_flip_count():
    rng = np.random.default_rng(5)
    base = CLASS_TEMPLATES["whorl"]
    flips = [hamming(base, perturb_codes(base, 0.1, rng)) for _ in range(1000)]
    assert abs(np.mean(flips) - 3.2) <= 0.5


def test_side_features_within_class_ranges():
    data = generate_codes(SynthSpec(per_class=30, seed=2))
    for r in data.meta:
        (a_lo, a_hi), (b_lo, b_hi), (qx, qy) = CLASS_FEATURES[r.class_label]
        assert a_lo <= r.alpha <= a_hi and b_lo <= r.beta <= b_hi
        assert hamming(r.delta, morton10(qx, qy)) <= 2


def test_template_separation():
    for a, b in itertools.combinations(SIX_CLASSES, 2):
        assert hamming(CLASS_TEMPLATES[a], CLASS_TEMPLATES[b]) >= 20


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.15))
def test_within_class_closer_than_between(seed, noise):
    data = generate_codes(SynthSpec(per_class=15, noise=noise, seed=seed))
    recs = data.meta.records
    within, between = [], []
    for a, b in itertools.combinations(recs, 2):
        (within if a.class_label == b.class_label else between).append(hamming(a.codes, b.codes))
    assert np.mean(within) < np.mean(between)


# ---------------------------------------------------------------- fields


def test_whorl_field_index_is_one():
    field, sing = generate_field("whorl", seed=4)
    idx, ok = poincare_indices(field)
    assert ok.all()
    assert idx.sum() == pytest.approx(1.0, abs=0.01)
    assert sing.cores[0] == sing.cores[1] and not sing.deltas


def test_arch_field_has_no_singularity():
    for seed in range(5):
        field, sing = generate_field("arch", seed=seed)
        assert np.abs(poincare_indices(field)[0]).max() < 0.25
        assert not sing.cores and not sing.deltas


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_loops_mirror_under_x_flip(seed):
    left, ls = generate_field("left-loop", seed=seed)
    right, rs = generate_field("right-loop", seed=seed)
    mirrored = np.mod(math.pi - left.theta[:, ::-1], math.pi)
    assert np.abs(wrap_orientation(right.theta - mirrored)).max() < 1e-9
    assert rs.cores[0] == pytest.approx((256 - ls.cores[0][0], ls.cores[0][1]))


# ---------------------------------------------------------------- rendering


def dominant_period(pixels):
    a = pixels.astype(float) - pixels.mean()
    mag = np.abs(np.fft.fft2(a * np.outer(np.hanning(a.shape[0]), np.hanning(a.shape[1]))))
    mag[0, 0] = 0
    fy = np.fft.fftfreq(a.shape[0])
    fx = np.fft.fftfreq(a.shape[1])
    r, c = np.unravel_index(np.argmax(mag), mag.shape)
    return 1.0 / math.hypot(fy[r], fx[c])


def test_uniform_horizontal_field_renders_stripes():
    ones = np.ones((8, 8))
    field = OrientationField(16, np.zeros((8, 8)), ones, ones.astype(bool))
    img = render_ridges(field, period=9.0)
    px = img.pixels.astype(int)
    assert (np.ptp(px, axis=1) <= 1).all()  # constant along each row
    assert dominant_period(img.pixels) == pytest.approx(9.0, abs=1.0)


@pytest.mark.parametrize("label", ["whorl", "left-loop", "arch"])
def test_rendered_period(label):
    img, _ = render_class(label, 256, 256, seed=1, period=9.0)
    assert dominant_period(img.pixels) == pytest.approx(9.0, abs=1.0)


def test_render_round_trip_single_class():
    img, _ = render_class("left-loop", 256, 256, seed=0)
    truth, _ = generate_field("left-loop", seed=0)
    est = estimate_orientation(img)
    sel = est.valid & (est.coherence >= 0.8)
    err = np.abs(wrap_orientation(est.theta - truth.theta))[sel]
    assert sel.sum() > 100
    assert np.mean(err < 0.05) >= 0.9


def test_rendering_is_deterministic():
    a, _ = render_class("twin-loop", 128, 128, seed=3)
    b, _ = render_class("twin-loop", 128, 128, seed=3)
    assert isinstance(a, GrayImage) and a == b
