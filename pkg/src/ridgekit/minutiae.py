"""Single-pass 5x5-window minutiae detection and false-minutiae removal."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .imaging import BinaryImage

TERMINATION = "termination"
BIFURCATION = "bifurcation"

# outer ring of the 5x5 window, clockwise from the top-left corner, as (dy, dx)
_PERIMETER = (
    [(-2, dx) for dx in range(-2, 3)]
    + [(dy, 2) for dy in range(-1, 3)]
    + [(2, dx) for dx in range(1, -3, -1)]
    + [(dy, -2) for dy in range(1, -2, -1)]
)


@dataclass(frozen=True)
class Minutia:
    kind: str
    x: int
    y: int
    angle: float  # radians in [0, 2pi)


@dataclass
class MinutiaeSet:
    accepted: list[Minutia] = field(default_factory=list)
    rejected: list[tuple[int, int, str]] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        out = {TERMINATION: 0, BIFURCATION: 0}
        for m in self.accepted:
            out[m.kind] += 1
        return out

    def dump(self) -> str:
        lines = [f"{m.kind} {m.x} {m.y} {math.degrees(m.angle):.1f}" for m in self.accepted]
        lines += [f"# {x} {y} {reason}" for x, y, reason in self.rejected]
        return "\n".join(lines) + ("\n" if lines else "")


def perimeter_runs(win: np.ndarray) -> list[list[tuple[int, int]]]:
    """Maximal circular runs of unit pixels on the window's outer ring."""
    ring = [bool(win[dy + 2, dx + 2]) for dy, dx in _PERIMETER]
    if all(ring):
        return [list(_PERIMETER)]
    n = len(ring)
    start = ring.index(False)
    runs, cur = [], []
    for i in range(1, n + 1):
        j = (start + i) % n
        if ring[j]:
            cur.append(_PERIMETER[j])
        elif cur:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    return runs


def classify_window(win) -> str | None:
    """Label a 5x5 skeleton patch centred on a ridge pixel.

    P counts the unit pixels other than the centre: P == 2 is a termination,
    P == 6 with exactly three separate runs on the outer ring is a bifurcation.
    """
    win = np.asarray(win)
    if win.shape != (5, 5):
        raise ValueError("window must be 5x5")
    if not win[2, 2]:
        raise ValueError("window centre must be a ridge pixel")
    p = int(np.count_nonzero(win)) - 1
    if p == 2:
        return TERMINATION
    if p == 6 and len(perimeter_runs(win)) == 3:
        return BIFURCATION
    return None


def _branch_angle(pts) -> float:
    ys = np.mean([p[0] for p in pts])
    xs = np.mean([p[1] for p in pts])
    return math.atan2(ys, xs)


def _angle(win: np.ndarray, kind: str) -> float:
    if kind == TERMINATION:
        ys, xs = np.nonzero(win)
        others = [(y - 2, x - 2) for y, x in zip(ys, xs) if (y, x) != (2, 2)]
        # points away from the ridge body
        ang = _branch_angle(others) + math.pi
    else:
        dirs = sorted(_branch_angle(run) for run in perimeter_runs(win))
        best = None
        for i in range(len(dirs)):
            a, b = dirs[i], dirs[(i + 1) % len(dirs)]
            gap = (b - a) % (2 * math.pi)
            if best is None or gap < best[0]:
                best = (gap, a + gap / 2)
        ang = best[1]
    return ang % (2 * math.pi)


def extract_minutiae(skeleton: BinaryImage) -> MinutiaeSet:
    bits = skeleton.bits
    h, w = bits.shape
    found: list[Minutia] = []
    for y, x in zip(*np.nonzero(bits)):
        if y < 2 or x < 2 or y >= h - 2 or x >= w - 2:
            continue
        win = bits[y - 2:y + 3, x - 2:x + 3]
        kind = classify_window(win)
        if kind is None:
            continue
        if any(m.kind == kind and max(abs(m.x - x), abs(m.y - y)) <= 2 for m in found):
            continue
        found.append(Minutia(kind, int(x), int(y), _angle(win, kind)))
    return MinutiaeSet(found, [])


def _opposed(a: float, b: float, tol: float) -> bool:
    d = (a - b - math.pi + math.pi) % (2 * math.pi) - math.pi
    return abs(d) <= tol


def remove_false(mset: MinutiaeSet, roi: np.ndarray | None, shape=None,
                 d_min: float = 6, margin: float = 8,
                 opposed_tol: float = math.radians(30)) -> MinutiaeSet:
    """Move border, broken-ridge and spur minutiae to the rejected list.

    ``roi`` may be None, in which case the frame given by ``shape`` (or the
    extent of the minutiae) is the region; image borders count as ROI edges.
    """
    if roi is None:
        if shape is None:
            xs = [m.x for m in mset.accepted] or [0]
            ys = [m.y for m in mset.accepted] or [0]
            shape = (max(ys) + 1, max(xs) + 1)
        roi = np.ones(shape, dtype=bool)
    inside = np.pad(np.asarray(roi, dtype=bool), 1, constant_values=False)
    dist = ndimage.distance_transform_edt(inside)[1:-1, 1:-1]

    reasons: dict[int, str] = {}
    ms = list(mset.accepted)
    for i, m in enumerate(ms):
        in_frame = 0 <= m.y < dist.shape[0] and 0 <= m.x < dist.shape[1]
        if not in_frame or dist[m.y, m.x] <= margin:
            reasons[i] = "border"
    for i, a in enumerate(ms):
        for j in range(i + 1, len(ms)):
            b = ms[j]
            if math.hypot(a.x - b.x, a.y - b.y) >= d_min:
                continue
            if a.kind == TERMINATION and b.kind == TERMINATION:
                if _opposed(a.angle, b.angle, opposed_tol):
                    reasons.setdefault(i, "broken-ridge")
                    reasons.setdefault(j, "broken-ridge")
            elif a.kind != b.kind:
                t = i if a.kind == TERMINATION else j
                reasons.setdefault(t, "spur")
    accepted = [m for i, m in enumerate(ms) if i not in reasons]
    rejected = list(mset.rejected) + [(ms[i].x, ms[i].y, reasons[i]) for i in sorted(reasons)]
    return MinutiaeSet(accepted, rejected)


def true_minutiae_count(mset: MinutiaeSet) -> int:
    return len(mset.accepted)
