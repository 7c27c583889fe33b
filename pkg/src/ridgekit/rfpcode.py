"""Ridge-flow-pattern (RFP) coding: 32 direction codes traced from the core."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ExtractionError, NoMovementError, RidgekitError
from .imaging import BinaryImage
from .orientation import CorePoint, OrientationField

N_CODES = 32
DEFAULT_STRIDE = 4
ZERO_DELTA = "0" * 10

CLASS_LABELS = ("arch", "tented-arch", "left-loop", "right-loop", "whorl", "twin-loop", "unknown")

# (dx, dy) -> code; dx grows rightward, dy grows downward
_DIRECTION_TABLE = {
    (0, 1): 0,
    (-1, 1): 1,
    (-1, 0): 2,
    (-1, -1): 3,
    (0, -1): 4,
    (1, -1): 5,
    (1, 0): 6,
    (1, 1): 7,
}
_Z_TO_CODE = {4 * (dx + 2) + (dy + 2): code for (dx, dy), code in _DIRECTION_TABLE.items()}
CODE_STEPS = {code: step for step, code in _DIRECTION_TABLE.items()}


def direction_z(dx: int, dy: int) -> int:
    return 4 * (dx + 2) + (dy + 2)


def direction_code(dx: int, dy: int) -> int:
    if (dx, dy) == (0, 0):
        raise NoMovementError("step (0, 0) has no direction")
    if dx not in (-1, 0, 1) or dy not in (-1, 0, 1):
        raise ValueError(f"step signs must be in {{-1, 0, 1}}, got ({dx}, {dy})")
    return _Z_TO_CODE[direction_z(dx, dy)]


def mirror_code(code: int) -> int:
    """Code of the left-right mirrored step."""
    dx, dy = CODE_STEPS[code]
    return direction_code(-dx, dy)


def quantize_step(dx: float, dy: float) -> tuple[int, int]:
    """Nearest of the eight unit steps to a displacement (octant quantization)."""
    if dx == 0 and dy == 0:
        raise NoMovementError("zero displacement")
    k = round(math.atan2(dy, dx) / (math.pi / 4)) % 8
    ang = k * math.pi / 4
    return int(round(math.cos(ang))), int(round(math.sin(ang)))


@dataclass(frozen=True)
class RidgeFlowPattern:
    image_id: str
    codes: tuple[int, ...]
    class_label: str | None = None
    alpha: int = 0
    beta: int = 0
    delta: str = ZERO_DELTA
    pads: int = field(default=0, compare=False)

    def __post_init__(self):
        codes = tuple(int(c) for c in self.codes)
        object.__setattr__(self, "codes", codes)
        if not codes:
            raise ValueError(f"{self.image_id}: empty code sequence")
        if any(c < 0 or c > 7 for c in codes):
            raise ValueError(f"{self.image_id}: codes must lie in 0..7")
        if self.class_label is not None and self.class_label not in CLASS_LABELS:
            raise ValueError(f"{self.image_id}: unknown class label {self.class_label!r}")
        if len(self.delta) != 10 or set(self.delta) - {"0", "1"}:
            raise ValueError(f"{self.image_id}: delta must be a 10-bit string")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"{self.image_id}: alpha and beta must be non-negative")
        if not self.image_id or any(ch.isspace() for ch in self.image_id):
            raise ValueError(f"bad image id {self.image_id!r}")


@dataclass
class MetaBase:
    records: list[RidgeFlowPattern] = field(default_factory=list)
    n: int = N_CODES

    def __post_init__(self):
        seen = set()
        for rec in self.records:
            if len(rec.codes) != self.n:
                raise ValueError(f"{rec.image_id}: expected {self.n} codes, got {len(rec.codes)}")
            if rec.image_id in seen:
                raise ValueError(f"duplicate image id {rec.image_id!r}")
            seen.add(rec.image_id)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.image_id for r in self.records]

    def by_id(self) -> dict[str, RidgeFlowPattern]:
        return {r.image_id: r for r in self.records}

    def codes_array(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, self.n), dtype=np.int8)
        return np.array([r.codes for r in self.records], dtype=np.int8)

    def sorted(self) -> MetaBase:
        return MetaBase(sorted(self.records, key=lambda r: r.image_id), self.n)


def encode_binary(meta: MetaBase | list[RidgeFlowPattern]) -> list[frozenset[tuple[int, int]]]:
    """Each record as its categorical item set {(position, code)}, positions from 1."""
    return [frozenset((i + 1, c) for i, c in enumerate(rec.codes)) for rec in meta]


# ---------------------------------------------------------------- tracing

_NEIGHBOURS = [step for step in _DIRECTION_TABLE]


def _nearest_ridge(bits: np.ndarray, x: float, y: float, radius: float,
                   exclude: np.ndarray | None = None) -> tuple[int, int] | None:
    mask = bits.astype(bool)
    if exclude is not None:
        mask = mask & ~exclude
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    d2 = (xs - x) ** 2 + (ys - y) ** 2
    i = int(np.argmin(d2))  # row-major scan order breaks ties
    if d2[i] > radius * radius:
        return None
    return int(xs[i]), int(ys[i])


class _Tracer:
    def __init__(self, bits: np.ndarray, field: OrientationField):
        self.bits = bits
        self.field = field
        self.h, self.w = bits.shape
        self.visited = np.zeros_like(bits, dtype=bool)
        self.direction: tuple[float, float] | None = None
        self.last_code: int | None = None

    def step(self, x: int, y: int) -> tuple[int, int] | None:
        cands = []
        for dx, dy in _NEIGHBOURS:
            nx, ny = x + dx, y + dy
            if 0 <= nx < self.w and 0 <= ny < self.h and self.bits[ny, nx] and not self.visited[ny, nx]:
                cands.append((dx, dy))
        if not cands:
            return None
        theta = self.field.theta_at(x, y)
        prev = self.direction
        if theta is not None:
            u = (math.cos(theta), math.sin(theta))
            axial = prev is None
            if prev is not None and u[0] * prev[0] + u[1] * prev[1] < 0:
                u = (-u[0], -u[1])
        else:
            u = prev
            axial = False

        def key(step):
            code = _DIRECTION_TABLE[step]
            if u is None:
                dev = 0.0
            else:
                norm = math.hypot(*step)
                cos = (step[0] * u[0] + step[1] * u[1]) / norm
                dev = math.acos(max(-1.0, min(1.0, cos)))
                if axial:
                    dev = min(dev, math.pi - dev)
            return (round(dev, 9), code != self.last_code, code)

        best = min(cands, key=key)
        self.last_code = _DIRECTION_TABLE[best]
        norm = math.hypot(*best)
        self.direction = (best[0] / norm, best[1] / norm)
        return best


    def skip_corners(self, x: int, y: int, step: tuple[int, int]):
        """Mark staircase pixels adjacent to both ends of a step as visited."""
        tx, ty = x + step[0], y + step[1]
        for dx, dy in _NEIGHBOURS:
            cx, cy = x + dx, y + dy
            if (cx, cy) == (tx, ty) or max(abs(cx - tx), abs(cy - ty)) != 1:
                continue
            if 0 <= cx < self.w and 0 <= cy < self.h and self.bits[cy, cx]:
                self.visited[cy, cx] = True


def extract_rfp(skeleton: BinaryImage, field: OrientationField, core: CorePoint,
                n: int = N_CODES, stride: int = DEFAULT_STRIDE,
                image_id: str = "query") -> RidgeFlowPattern:
    """Trace the skeleton from the ridge pixel nearest the core.

    Every ``stride`` single-pixel moves along the ridge form one control
    point; the displacement since the previous control point, quantized to
    the nearest of eight directions, gives its code. At a ridge end the
    trace resumes at the nearest unvisited ridge pixel within two blocks,
    otherwise the remaining codes repeat the last one (counted in ``pads``).
    """
    bits = skeleton.bits
    radius = 2 * field.block
    start = _nearest_ridge(bits, core.x, core.y, radius)
    if start is None:
        raise ExtractionError(f"no ridge pixel within {radius} px of the core")
    tracer = _Tracer(bits, field)
    x, y = start
    tracer.visited[y, x] = True
    codes: list[int] = []
    pads = 0
    while len(codes) < n:
        x0, y0 = x, y
        moved = 0
        while moved < stride:
            step = tracer.step(x, y)
            if step is None:
                break
            tracer.skip_corners(x, y, step)
            x, y = x + step[0], y + step[1]
            tracer.visited[y, x] = True
            moved += 1
        if moved > 0 and (x, y) != (x0, y0):
            codes.append(direction_code(*quantize_step(x - x0, y - y0)))
            continue
        jump = _nearest_ridge(bits, x, y, radius, exclude=tracer.visited)
        if jump is None:
            if codes:
                fill = codes[-1]
            elif tracer.last_code is not None:
                fill = tracer.last_code
            else:
                theta = field.theta_at(x, y) or 0.0
                fill = direction_code(*quantize_step(math.cos(theta), math.sin(theta)))
            pads = n - len(codes)
            codes.extend([fill] * pads)
            break
        x, y = jump
        tracer.visited[y, x] = True
    return RidgeFlowPattern(image_id, tuple(codes), pads=pads)


def build_metabase(images, n: int = N_CODES, stride: int = DEFAULT_STRIDE,
                   workers: int | None = None) -> tuple[MetaBase, list[tuple[str, str]]]:
    """Enroll every image (path or (id, GrayImage)); returns the meta-base and failures.

    Failures are ``(image_id, message)`` pairs; records keep input order.
    """
    from .pipeline import enroll_many

    results = enroll_many(images, n=n, stride=stride, workers=workers)
    records, failures = [], []
    for image_id, outcome in results:
        if isinstance(outcome, RidgekitError | OSError | ValueError):
            failures.append((image_id, str(outcome)))
        else:
            records.append(outcome.record)
    return MetaBase(records, n), failures
