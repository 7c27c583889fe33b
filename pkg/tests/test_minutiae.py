import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ridgekit.imaging import BinaryImage
from ridgekit.minutiae import (
    BIFURCATION,
    TERMINATION,
    Minutia,
    MinutiaeSet,
    classify_window,
    extract_minutiae,
    remove_false,
    true_minutiae_count,
)

COMPASS = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)]


def window(*offsets):
    """5x5 patch with the centre set plus the given (dx, dy) offsets."""
    w = np.zeros((5, 5), dtype=np.uint8)
    w[2, 2] = 1
    for dx, dy in offsets:
        w[2 + dy, 2 + dx] = 1
    return w


def arm(d):
    return [(d[0], d[1]), (2 * d[0], 2 * d[1])]


def test_window_examples():
    assert classify_window(window((-1, 0), (-2, 0))) == TERMINATION
    y = window(*arm((-1, 0)), *arm((1, -1)), *arm((1, 1)))
    assert classify_window(y) == BIFURCATION
    assert classify_window(window(*arm((1, 0)), *arm((-1, 0)))) is None


def test_window_centre_must_be_set():
    with pytest.raises(ValueError):
        classify_window(np.zeros((5, 5)))


def templates():
    """Hand-labelled single-stroke templates: ends, straight lines, symmetric Y-junctions."""
    out = []
    for d in COMPASS:
        out.append((window(*arm(d)), TERMINATION))
    for d in COMPASS[:4]:
        out.append((window(*arm(d), *arm((-d[0], -d[1]))), None))
    for i, d in enumerate(COMPASS):
        left, right = COMPASS[(i + 3) % 8], COMPASS[(i + 5) % 8]
        out.append((window(*arm(d), *arm(left), *arm(right)), BIFURCATION))
    return out


@pytest.mark.parametrize("win,label", templates())
def test_exhaustive_templates(win, label):
    assert classify_window(win) == label


def test_small_delta_pattern_is_not_a_bifurcation():
    # three 8-neighbours make a 3x3 crossing-number test fire; the 5x5 count is 3
    win = window((-1, 0), (1, -1), (1, 1))
    assert classify_window(win) is None
    img = np.zeros((20, 20), dtype=np.uint8)
    img[8:13, 8:13] = win
    assert extract_minutiae(BinaryImage(img)).counts()[BIFURCATION] == 0


def test_straight_segment():
    assert extract_minutiae(BinaryImage(np.zeros((20, 20)))).accepted == []
    img = np.zeros((40, 60), dtype=np.uint8)
    img[20, 15:45] = 1
    ms = extract_minutiae(BinaryImage(img))
    assert ms.counts() == {TERMINATION: 2, BIFURCATION: 0}
    assert sorted((m.x, m.y) for m in ms.accepted) == [(15, 20), (44, 20)]
    kept = remove_false(ms, np.ones(img.shape, dtype=bool))
    assert true_minutiae_count(kept) == 2


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_minutiae_only_on_ridge_pixels(seed):
    from ridgekit.imaging import thin
    rng = np.random.default_rng(seed)
    img = thin(BinaryImage(rng.random((30, 30)) > 0.6)).bits
    for m in extract_minutiae(BinaryImage(img)).accepted:
        assert img[m.y, m.x]


@given(st.integers(0, 20), st.integers(0, 20))
def test_translation_invariance(tx, ty):
    base = np.zeros((30, 30), dtype=np.uint8)
    base[10, 5:20] = 1
    base[11:16, 20] = 1
    moved = np.zeros((60, 60), dtype=np.uint8)
    moved[ty:ty + 30, tx:tx + 30] = base
    a = sorted((m.kind, m.x + tx, m.y + ty) for m in extract_minutiae(BinaryImage(base)).accepted)
    b = sorted((m.kind, m.x, m.y) for m in extract_minutiae(BinaryImage(moved)).accepted)
    assert a == b


def test_remove_false_border():
    roi = np.zeros((60, 60), dtype=bool)
    roi[10:50, 10:50] = True
    m = Minutia(TERMINATION, 30, 12, 0.0)
    out = remove_false(MinutiaeSet([m]), roi)
    assert out.accepted == [] and out.rejected == [(30, 12, "border")]


def test_remove_false_broken_ridge():
    img = np.zeros((60, 100), dtype=np.uint8)
    img[30, 10:48] = 1
    img[30, 52:90] = 1
    ms = extract_minutiae(BinaryImage(img))
    out = remove_false(ms, np.ones(img.shape, dtype=bool), margin=4)
    reasons = {(x, y): r for x, y, r in out.rejected}
    assert reasons == {(47, 30): "broken-ridge", (52, 30): "broken-ridge"}
    assert sorted((m.x, m.y) for m in out.accepted) == [(10, 30), (89, 30)]


def test_remove_false_keeps_isolated_bifurcation():
    m = Minutia(BIFURCATION, 50, 50, math.pi)
    out = remove_false(MinutiaeSet([m]), np.ones((100, 100), dtype=bool))
    assert out.accepted == [m]


def test_spur_rejects_the_termination():
    t = Minutia(TERMINATION, 50, 50, 0.0)
    b = Minutia(BIFURCATION, 53, 50, math.pi)
    out = remove_false(MinutiaeSet([t, b]), np.ones((100, 100), dtype=bool))
    assert out.accepted == [b] and out.rejected == [(50, 50, "spur")]


def test_accepted_and_rejected_disjoint():
    img = np.zeros((60, 100), dtype=np.uint8)
    img[30, 3:48] = 1
    img[30, 52:90] = 1
    out = remove_false(extract_minutiae(BinaryImage(img)), np.ones(img.shape, dtype=bool))
    assert not {(m.x, m.y) for m in out.accepted} & {(x, y) for x, y, _ in out.rejected}
