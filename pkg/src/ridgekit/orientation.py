"""Block orientation field, consistency smoothing, core detection and core code."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .errors import CoreDetectionError
from .imaging import GrayImage

VALID_COHERENCE = 0.1
SMOOTH_COHERENCE = 0.25


@dataclass(eq=False)
class OrientationField:
    """Per-block ridge tangent angle in [0, pi) with coherence in [0, 1].

    ``period`` holds the estimated inter-ridge distance per block (pixels) when
    the field was measured from an image, NaN elsewhere.
    """

    block: int
    theta: np.ndarray
    coherence: np.ndarray
    valid: np.ndarray
    period: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.theta.shape[0]

    @property
    def cols(self) -> int:
        return self.theta.shape[1]

    def block_center(self, row: int, col: int) -> tuple[float, float]:
        return ((col + 0.5) * self.block, (row + 0.5) * self.block)

    def theta_at(self, x: float, y: float) -> float | None:
        col = int(x // self.block)
        row = int(y // self.block)
        if 0 <= row < self.rows and 0 <= col < self.cols and self.valid[row, col]:
            return float(self.theta[row, col])
        return None

    def dump(self) -> str:
        lines = []
        for r in range(self.rows):
            for c in range(self.cols):
                lines.append(
                    f"{r} {c} {self.theta[r, c]:.6f} {self.coherence[r, c]:.6f} "
                    f"{int(bool(self.valid[r, c]))}"
                )
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CorePoint:
    x: int
    y: int
    curvature: float
    kind: str  # "singular" or "arch-fallback"

    def bits(self, width: int, height: int) -> str:
        return core_bit_code(self, width, height)


def wrap_orientation(d):
    """Wrap an orientation difference into [-pi/2, pi/2)."""
    return np.mod(np.asarray(d) + math.pi / 2, math.pi) - math.pi / 2


def wrap_angle(d):
    return np.mod(np.asarray(d) + math.pi, 2 * math.pi) - math.pi


def _block_sums(a: np.ndarray, block: int, rows: int, cols: int) -> np.ndarray:
    a = a[:rows * block, :cols * block]
    return a.reshape(rows, block, cols, block).sum(axis=(1, 3))


def estimate_orientation(img: GrayImage, block: int = 16, roi: np.ndarray | None = None,
                         min_coherence: float = VALID_COHERENCE,
                         with_period: bool = True) -> OrientationField:
    """Squared-gradient orientation per block (Sobel gradients).

    Only whole blocks are used; a trailing partial row/column of pixels is
    ignored. Blocks less than half inside ``roi`` get coherence 0.
    """
    a = img.pixels.astype(np.float64)
    rows, cols = a.shape[0] // block, a.shape[1] // block
    gx = ndimage.sobel(a, axis=1, mode="nearest")
    gy = ndimage.sobel(a, axis=0, mode="nearest")
    gxx = _block_sums(gx * gx, block, rows, cols)
    gyy = _block_sums(gy * gy, block, rows, cols)
    gxy = _block_sums(gx * gy, block, rows, cols)
    num = 2.0 * gxy
    den = gxx - gyy
    energy = gxx + gyy
    theta = np.mod(0.5 * np.arctan2(num, den) + math.pi / 2, math.pi)
    with np.errstate(invalid="ignore", divide="ignore"):
        coherence = np.where(energy > 0, np.hypot(num, den) / energy, 0.0)
    coherence = np.clip(coherence, 0.0, 1.0)
    if roi is not None:
        inside = _block_sums(roi.astype(np.float64), block, rows, cols) / (block * block)
        coherence = np.where(inside >= 0.5, coherence, 0.0)
    valid = (energy > 0) & (coherence >= min_coherence)
    if roi is not None:
        valid &= coherence > 0
    theta = np.where(valid, theta, 0.0)
    field = OrientationField(block, theta, coherence, valid)
    if with_period:
        field.period = estimate_periods(img, field)
    return field


def estimate_periods(img: GrayImage, field: OrientationField, length: int = 32,
                     spread: int = 4) -> np.ndarray:
    """Dominant ridge period per valid block, sampled along the ridge normal."""
    a = img.pixels.astype(np.float64)
    out = np.full(field.theta.shape, np.nan)
    t = np.arange(length) - (length - 1) / 2.0
    s = np.arange(-spread, spread + 1, dtype=np.float64)
    nfft = 512
    freqs = np.fft.rfftfreq(nfft)
    band = (freqs >= 1.0 / 25.0) & (freqs <= 1.0 / 3.0)
    for r, c in zip(*np.nonzero(field.valid)):
        cx, cy = field.block_center(r, c)
        th = field.theta[r, c]
        nx, ny = -math.sin(th), math.cos(th)
        tx, ty = math.cos(th), math.sin(th)
        xs = cx + np.outer(s, np.full_like(t, tx)) + np.outer(np.ones_like(s), t * nx)
        ys = cy + np.outer(s, np.full_like(t, ty)) + np.outer(np.ones_like(s), t * ny)
        prof = ndimage.map_coordinates(a, [ys.ravel(), xs.ravel()], order=1, mode="nearest")
        prof = prof.reshape(xs.shape).mean(axis=0)
        prof = prof - prof.mean()
        if not np.any(prof):
            continue
        mag = np.abs(np.fft.rfft(prof * np.hanning(length), n=nfft))
        mag = np.where(band, mag, 0.0)
        k = int(np.argmax(mag))
        if mag[k] > 0:
            out[r, c] = 1.0 / freqs[k]
    return out


def smooth_orientation(field: OrientationField,
                       threshold: float = SMOOTH_COHERENCE,
                       min_coherence: float = VALID_COHERENCE) -> OrientationField:
    """Replace low-coherence blocks by the weighted doubled-angle mean of valid neighbours.

    Blocks with coherence 0 (no gradient energy, or outside the ROI) are left
    alone. Blocks without valid neighbours keep their value.
    """
    rows, cols = field.theta.shape
    cos2 = np.where(field.valid, field.coherence * np.cos(2 * field.theta), 0.0)
    sin2 = np.where(field.valid, field.coherence * np.sin(2 * field.theta), 0.0)
    wts = np.where(field.valid, field.coherence, 0.0)
    theta = field.theta.copy()
    coherence = field.coherence.copy()
    valid = field.valid.copy()
    targets = (field.coherence < threshold) & (field.coherence > 0)
    for r, c in zip(*np.nonzero(targets)):
        r0, r1 = max(r - 1, 0), min(r + 2, rows)
        c0, c1 = max(c - 1, 0), min(c + 2, cols)
        w = wts[r0:r1, c0:c1].sum() - wts[r, c]
        if w <= 0:
            continue
        vc = cos2[r0:r1, c0:c1].sum() - cos2[r, c]
        vs = sin2[r0:r1, c0:c1].sum() - sin2[r, c]
        consistency = math.hypot(vc, vs) / w
        if consistency < min_coherence:
            continue
        theta[r, c] = math.atan2(vs, vc) / 2 % math.pi
        coherence[r, c] = consistency
        valid[r, c] = True
    return replace(field, theta=theta, coherence=coherence, valid=valid)


def poincare_indices(field: OrientationField) -> tuple[np.ndarray, np.ndarray]:
    """Index (in turns) around every interior 2x2 block cell, plus a cell-valid mask.

    The loop runs top-left, top-right, bottom-right, bottom-left, which is the
    positive sense for angles measured as atan2(dy, dx) with y pointing down.
    """
    th = field.theta
    corners = [th[:-1, :-1], th[:-1, 1:], th[1:, 1:], th[1:, :-1]]
    total = np.zeros_like(corners[0])
    for i in range(4):
        total = total + wrap_orientation(corners[(i + 1) % 4] - corners[i])
    v = field.valid
    ok = v[:-1, :-1] & v[:-1, 1:] & v[1:, 1:] & v[1:, :-1]
    return total / (2 * math.pi), ok


def ring_indices(field: OrientationField, radius: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Index (in turns) along the square ring of blocks at ``radius`` around each block.

    A singularity sitting exactly on a block corner splits a 2x2 loop into
    quarter turns whose sign is ambiguous; a wider ring keeps every step small.
    """
    th = field.theta
    v = field.valid
    rows, cols = th.shape
    R = radius
    ring = ([(-R, dx) for dx in range(-R, R)] + [(dy, R) for dy in range(-R, R)]
            + [(R, dx) for dx in range(R, -R, -1)] + [(dy, -R) for dy in range(R, -R, -1)])
    sl = lambda dy, dx, a: a[R + dy:rows - R + dy, R + dx:cols - R + dx]  # noqa: E731
    total = np.zeros((rows - 2 * R, cols - 2 * R))
    ok = np.ones_like(total, dtype=bool)
    for i, (dy, dx) in enumerate(ring):
        ny, nx = ring[(i + 1) % len(ring)]
        total = total + wrap_orientation(sl(ny, nx, th) - sl(dy, dx, th))
        ok &= sl(dy, dx, v)
    return total / (2 * math.pi), ok


def block_curvature(field: OrientationField) -> np.ndarray:
    """Sum of absolute doubled-angle differences to the valid 8-neighbours."""
    rows, cols = field.theta.shape
    d2 = 2 * field.theta
    out = np.zeros((rows, cols))
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            shifted = np.full((rows, cols), np.nan)
            vshift = np.zeros((rows, cols), dtype=bool)
            ys = slice(max(dy, 0), rows + min(dy, 0))
            yd = slice(max(-dy, 0), rows + min(-dy, 0))
            xs = slice(max(dx, 0), cols + min(dx, 0))
            xd = slice(max(-dx, 0), cols + min(-dx, 0))
            shifted[yd, xd] = d2[ys, xs]
            vshift[yd, xd] = field.valid[ys, xs]
            diff = np.abs(wrap_angle(shifted - d2))
            out += np.where(vshift & field.valid, diff, 0.0)
    return np.where(field.valid, out, 0.0)


def find_core(field: OrientationField, candidate_index: float = 0.25) -> CorePoint:
    """Core = positive-index cell with the largest curvature.

    Cells with index above ``candidate_index`` turns qualify (+1/2 for a core,
    +1 for a whorl's coincident pair). Without any candidate the field is
    treated as a plain arch: the block with the smallest ridge period wins,
    or the most curved block when no period estimate exists.
    """
    if not field.valid.any():
        raise CoreDetectionError("orientation field has no valid block")
    b = field.block
    curv = block_curvature(field)
    if field.rows >= 2 and field.cols >= 2:
        index, ok = poincare_indices(field)
        cand = ok & (index > candidate_index)
    else:
        cand = np.zeros((0, 0), dtype=bool)
    if cand.any():
        cell_curv = curv[:-1, :-1] + curv[:-1, 1:] + curv[1:, 1:] + curv[1:, :-1]
        best = None
        for r, c in zip(*np.nonzero(cand)):  # row-major, so ties keep the first
            score = float(cell_curv[r, c])
            if best is None or score > best[0]:
                best = (score, r, c)
        score, r, c = best
        return CorePoint(int((c + 1) * b), int((r + 1) * b), score, "singular")
    if field.rows >= 5 and field.cols >= 5:
        index, ok = ring_indices(field)
        cand = ok & (index > candidate_index)
        if cand.any():
            inner = curv[2:-2, 2:-2]
            best = None
            for r, c in zip(*np.nonzero(cand)):
                score = float(inner[r, c])
                if best is None or score > best[0]:
                    best = (score, r, c)
            score, r, c = best
            x, y = field.block_center(r + 2, c + 2)
            return CorePoint(int(x), int(y), score, "singular")

    period = field.period
    if period is not None and np.isfinite(period[field.valid]).any():
        pv = np.where(field.valid & np.isfinite(period), period, np.inf)
        flat = int(np.argmin(pv))  # first minimum in row-major order
    else:
        cv = np.where(field.valid, curv, -np.inf)
        flat = int(np.argmax(cv))
    r, c = divmod(flat, field.cols)
    x, y = field.block_center(r, c)
    return CorePoint(int(x), int(y), float(curv[r, c]), "arch-fallback")


def core_bit_code(core: CorePoint, width: int, height: int) -> str:
    """10-bit Morton code of the core position on a 32x32 grid, x bit first."""
    if not (0 <= core.x < width and 0 <= core.y < height):
        raise ValueError(f"core ({core.x}, {core.y}) outside {width}x{height} image")
    qx = min(32 * core.x // width, 31)
    qy = min(32 * core.y // height, 31)
    out = []
    for bit in range(4, -1, -1):
        out.append(str(qx >> bit & 1))
        out.append(str(qy >> bit & 1))
    return "".join(out)
