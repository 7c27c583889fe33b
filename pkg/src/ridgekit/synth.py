"""Labeled synthetic data: class-template code records and zero-pole ridge images."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from .imaging import GrayImage
from .orientation import OrientationField, poincare_indices
from .rfpcode import MetaBase, RidgeFlowPattern
from .search import QueryTuple

SIX_CLASSES = ("arch", "tented-arch", "left-loop", "right-loop", "whorl", "twin-loop")

# Dominant flow sketches. right-loop is the left-right mirror of left-loop.
CLASS_TEMPLATES: dict[str, tuple[int, ...]] = {
    "arch": (6, 6, 5, 5, 5, 5, 6, 6, 6, 6, 7, 7, 7, 7, 6, 6,
             6, 6, 5, 5, 5, 5, 6, 6, 6, 6, 7, 7, 7, 7, 6, 6),
    "tented-arch": (4, 4, 4, 4, 5, 5, 5, 5, 7, 7, 7, 7, 0, 0, 0, 0,
                    4, 4, 4, 4, 3, 3, 3, 3, 1, 1, 1, 1, 0, 0, 0, 0),
    "left-loop": (1, 1, 1, 2, 2, 2, 3, 3, 3, 3, 5, 5, 5, 6, 6, 7,
                  7, 7, 1, 1, 2, 2, 2, 3, 3, 3, 3, 2, 2, 2, 1, 1),
    "right-loop": (7, 7, 7, 6, 6, 6, 5, 5, 5, 5, 3, 3, 3, 2, 2, 1,
                   1, 1, 7, 7, 6, 6, 6, 5, 5, 5, 5, 6, 6, 6, 7, 7),
    "whorl": (0, 1, 2, 3, 4, 5, 6, 7, 0, 1, 2, 3, 4, 5, 6, 7,
              0, 1, 2, 3, 4, 5, 6, 7, 0, 1, 2, 3, 4, 5, 6, 7),
    "twin-loop": (2, 2, 2, 3, 3, 4, 4, 5, 6, 6, 6, 7, 7, 0, 0, 1,
                  6, 6, 6, 5, 5, 4, 4, 3, 2, 2, 2, 1, 1, 0, 0, 7),
}

# class -> (alpha range, beta range, core cell on the 32x32 grid), inclusive ranges
CLASS_FEATURES = {
    "arch": ((20, 35), (6, 12), (16, 12)),
    "tented-arch": ((25, 40), (8, 14), (16, 14)),
    "left-loop": ((30, 50), (10, 18), (14, 16)),
    "right-loop": ((30, 50), (10, 18), (18, 16)),
    "whorl": ((35, 60), (12, 22), (16, 16)),
    "twin-loop": ((40, 65), (14, 24), (16, 18)),
}

MIN_TEMPLATE_SEPARATION = 20


def _hamming(a, b) -> int:
    return sum(x != y for x, y in zip(a, b))


def _check_templates():
    for a, b in itertools.combinations(CLASS_TEMPLATES, 2):
        d = _hamming(CLASS_TEMPLATES[a], CLASS_TEMPLATES[b])
        if d < MIN_TEMPLATE_SEPARATION:
            raise AssertionError(f"templates {a}/{b} only {d} apart")


_check_templates()


def morton10(qx: int, qy: int) -> str:
    return "".join(f"{qx >> b & 1}{qy >> b & 1}" for b in range(4, -1, -1))


@dataclass(frozen=True)
class SynthSpec:
    classes: tuple[str, ...] = SIX_CLASSES
    per_class: int = 100
    noise: float = 0.10
    seed: int = 42
    query_noise: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        unknown = set(self.classes) - set(SIX_CLASSES)
        if unknown:
            raise ValueError(f"unknown classes: {sorted(unknown)}")
        if not 0 <= self.noise < 1 or not 0 <= self.query_noise < 1:
            raise ValueError("noise must lie in [0, 1)")
        if self.per_class < 0:
            raise ValueError("per_class must be >= 0")


@dataclass
class SynthData:
    meta: MetaBase
    labels: dict[str, str]
    queries: list[QueryTuple] = field(default_factory=list)


def perturb_codes(codes, prob: float, rng: np.random.Generator) -> tuple[int, ...]:
    """Change each position with probability ``prob`` to a different code."""
    codes = np.asarray(codes, dtype=np.int64)
    flip = rng.random(codes.size) < prob
    shift = rng.integers(1, 8, size=codes.size)
    return tuple(int(c) for c in np.where(flip, (codes + shift) % 8, codes))


def generate_codes(spec: SynthSpec) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    records = []
    labels = {}
    queries = []
    for label in spec.classes:
        template = CLASS_TEMPLATES[label]
        (a_lo, a_hi), (b_lo, b_hi), (qx, qy) = CLASS_FEATURES[label]
        base_delta = morton10(qx, qy)
        for j in range(spec.per_class):
            image_id = f"{label}-{j:04d}"
            codes = perturb_codes(template, spec.noise, rng)
            alpha = int(rng.integers(a_lo, a_hi + 1))
            beta = int(rng.integers(b_lo, b_hi + 1))
            bits = list(base_delta)
            nflip = int(rng.integers(0, 3))
            for pos in rng.choice(10, size=nflip, replace=False):
                bits[pos] = "1" if bits[pos] == "0" else "0"
            rec = RidgeFlowPattern(image_id, codes, label, alpha, beta, "".join(bits))
            records.append(rec)
            labels[image_id] = label
            qcodes = perturb_codes(codes, spec.query_noise, rng)
            queries.append(QueryTuple(alpha, beta, qcodes, rec.delta, image_id))
    return SynthData(MetaBase(records), labels, queries)


# ---------------------------------------------------------------- fields


@dataclass
class Singularities:
    cores: list[tuple[float, float]]
    deltas: list[tuple[float, float]]


def zero_pole_theta(xs: np.ndarray, ys: np.ndarray, cores, deltas, phi0: float = 0.0) -> np.ndarray:
    z = xs + 1j * ys
    total = np.zeros(np.broadcast(xs, ys).shape)
    for cx, cy in cores:
        total += np.angle(z - complex(cx, cy))
    for dx, dy in deltas:
        total -= np.angle(z - complex(dx, dy))
    return np.mod(0.5 * total + phi0, math.pi)


def _arch_params(width, height, rng) -> tuple[float, float, float]:
    cx = width * (0.5 + rng.uniform(-0.08, 0.08))
    spread = width * rng.uniform(0.18, 0.25)
    amp = height * rng.uniform(0.10, 0.16)
    return cx, spread, amp


def arch_theta(xs, ys, height, cx, spread, amp) -> np.ndarray:
    """Tangent of hump-shaped ridges y = y0 - A(y) exp(-u^2); no singularity."""
    u = (xs - cx) / spread
    scale = 0.3 + 0.7 * (1 - ys / height)
    slope = amp * scale * 2 * u / spread * np.exp(-u * u)
    return np.mod(np.arctan(slope), math.pi)


def singularities_for(label: str, width: int, height: int,
                      rng: np.random.Generator) -> tuple[Singularities, float]:
    cx, cy = width / 2, height / 2
    jx = lambda: rng.uniform(-0.12, 0.12) * width  # noqa: E731
    jy = lambda: rng.uniform(-0.12, 0.12) * height  # noqa: E731
    if label == "whorl":
        c = (cx + jx(), cy + jy())
        return Singularities([c, c], []), math.pi / 2
    if label in ("left-loop", "right-loop"):
        core = (cx + jx(), cy - 0.12 * height + jy())
        off = rng.uniform(0.22, 0.3) * width
        delta = (core[0] + off, core[1] + rng.uniform(0.25, 0.32) * height)
        if label == "right-loop":
            # exact mirror of the left-loop construction about the frame centre
            core = (width - core[0], core[1])
            delta = (width - delta[0], delta[1])
        return Singularities([core], [delta]), 0.0
    if label == "tented-arch":
        core = (cx + jx(), cy - 0.1 * height + jy())
        delta = (core[0], core[1] + rng.uniform(0.22, 0.3) * height)
        return Singularities([core], [delta]), 0.0
    if label == "twin-loop":
        base = (cx + jx(), cy + jy())
        sep = rng.uniform(0.08, 0.12) * width
        cores = [(base[0] - sep, base[1] - sep / 2), (base[0] + sep, base[1] + sep / 2)]
        deltas = [(base[0] - 0.35 * width, base[1] + 0.3 * height),
                  (base[0] + 0.35 * width, base[1] + 0.3 * height)]
        return Singularities(cores, deltas), 0.0
    raise ValueError(f"no singular model for class {label!r}")


def theta_function(label: str, width: int, height: int, seed: int):
    """Closure evaluating the class's orientation at arbitrary pixel coordinates."""
    rng = np.random.default_rng(seed)
    if label == "arch":
        cx, spread, amp = _arch_params(width, height, rng)
        return (lambda xs, ys: arch_theta(xs, ys, height, cx, spread, amp)), Singularities([], [])
    sing, phi0 = singularities_for(label, width, height, rng)
    return (lambda xs, ys: zero_pole_theta(xs, ys, sing.cores, sing.deltas, phi0)), sing


def generate_field(class_label: str, width: int = 256, height: int = 256, seed: int = 0,
                   block: int = 16) -> tuple[OrientationField, Singularities]:
    rows, cols = height // block, width // block
    ys, xs = np.mgrid[0:rows, 0:cols].astype(np.float64)
    xs = (xs + 0.5) * block
    ys = (ys + 0.5) * block
    f, sing = theta_function(class_label, width, height, seed)
    theta = f(xs, ys)
    ones = np.ones_like(theta)
    return OrientationField(block, theta, ones, ones.astype(bool)), sing


def field_theta_function(field: OrientationField):
    """Bilinear doubled-angle interpolation of a block field at pixel coordinates."""
    c2 = np.cos(2 * field.theta)
    s2 = np.sin(2 * field.theta)

    def f(xs, ys):
        coords = [np.asarray(ys, float) / field.block - 0.5, np.asarray(xs, float) / field.block - 0.5]
        c = ndimage.map_coordinates(c2, coords, order=1, mode="nearest")
        s = ndimage.map_coordinates(s2, coords, order=1, mode="nearest")
        return np.mod(0.5 * np.arctan2(s, c), math.pi)

    return f


def detect_singularities(field: OrientationField) -> Singularities:
    """Half-index Poincare cells of a block field (cores +1/2, deltas -1/2)."""
    index, ok = poincare_indices(field)
    b = field.block
    cores, deltas = [], []
    for r, c in zip(*np.nonzero(ok & (np.abs(index) > 0.25))):
        p = ((c + 1) * b, (r + 1) * b)
        k = int(round(2 * index[r, c]))
        (cores if k > 0 else deltas).extend([p] * abs(k))
    return Singularities(cores, deltas)


def _spacing_weight(xs, ys, sing: Singularities) -> np.ndarray:
    """Integrating factor that makes the weighted ridge normal nearly curl-free.

    For a zero-pole field the normal scaled by prod|z - delta|^(1/2) /
    prod|z - core|^(1/2) is the gradient of a harmonic phase. Unbalanced
    counts get a centroid term so the far-field spacing stays bounded.
    """
    z = xs + 1j * ys
    lam = np.ones(z.shape)
    for c in sing.cores:
        lam /= np.sqrt(np.abs(z - complex(*c)) + 1e-9)
    for d in sing.deltas:
        lam *= np.sqrt(np.abs(z - complex(*d)))
    excess = len(sing.cores) - len(sing.deltas)
    if excess:
        cen = np.mean(list(sing.cores) + list(sing.deltas), axis=0)
        lam *= np.abs(z - complex(*cen)) ** (excess / 2)
    lam /= np.median(lam)
    return np.clip(lam, 0.25, 4)


def _half_index_points(sing: Singularities, tol: float = 1.0) -> list[tuple[float, float]]:
    """Singular points of odd half-index; coincident pairs cancel (whorl centre)."""
    pts = [(p, 1) for p in sing.cores] + [(p, -1) for p in sing.deltas]
    groups: list[list] = []
    for p, s in pts:
        for g in groups:
            if math.dist(g[0], p) <= tol:
                g[1] += s
                break
        else:
            groups.append([p, s])
    return [tuple(p) for p, s in groups if s % 2]


def _trace_cut(tfun, p, width, height, others=(), radius=3.0,
               step=0.5) -> list[tuple[float, float]] | None:
    """Shortest streamline from a singular point to the frame edge or to another one."""
    angles = np.linspace(0, 2 * math.pi, 720, endpoint=False)
    xs = p[0] + radius * np.cos(angles)
    ys = p[1] + radius * np.sin(angles)
    err = np.abs(np.sin(tfun(xs, ys) - angles))
    minima = [i for i in range(angles.size)
              if err[i] < 0.3 and err[i] <= err[i - 1] and err[i] <= err[(i + 1) % angles.size]]
    best = None
    limit = int(4 * (width + height) / step)
    for i in minima:
        path = [p]
        x, y = xs[i], ys[i]
        dx, dy = math.cos(angles[i]), math.sin(angles[i])
        done = False
        for _ in range(limit):
            path.append((x, y))
            if not (0 <= x < width and 0 <= y < height):
                done = True
                break
            hit = next((q for q in others if math.dist(q, (x, y)) <= radius), None)
            if hit is not None:
                path.append(hit)
                done = True
                break
            if best is not None and len(path) >= len(best):
                break
            th = float(tfun(np.array([x]), np.array([y]))[0])
            tx, ty = math.cos(th), math.sin(th)
            if tx * dx + ty * dy < 0:
                tx, ty = -tx, -ty
            dx, dy = tx, ty
            x, y = x + step * dx, y + step * dy
        if not done:
            continue
        if best is None or len(path) < len(best):
            best = path
    return best


def _rasterize(path, width, height, barrier: np.ndarray):
    for (x0, y0), (x1, y1) in zip(path, path[1:]):
        n = max(2, int(math.ceil(4 * math.hypot(x1 - x0, y1 - y0))) + 1)
        for t in np.linspace(0, 1, n):
            x = int(math.floor(x0 + t * (x1 - x0)))
            y = int(math.floor(y0 + t * (y1 - y0)))
            if 0 <= x < width and 0 <= y < height:
                barrier[y, x] = True


def integrate_phase(theta: np.ndarray, weight: np.ndarray, barrier: np.ndarray) -> np.ndarray:
    """Least-squares phase whose gradient matches weight * ridge normal.

    Normal signs are lifted along a breadth-first tree that never crosses
    ``barrier``; edges whose lifted normals still disagree are dropped.
    Barrier pixels take the phase of their nearest free pixel.
    """
    h, w = theta.shape
    free = ~barrier
    idx = -np.ones((h, w), dtype=np.int64)
    idx[free] = np.arange(int(free.sum()))
    m = int(free.sum())
    nx = (-np.sin(theta) * weight)[free]
    ny = (np.cos(theta) * weight)[free]

    pairs = []
    for a, b, d in (((slice(None), slice(0, -1)), (slice(None), slice(1, None)), (1.0, 0.0)),
                    ((slice(0, -1), slice(None)), (slice(1, None), slice(None)), (0.0, 1.0))):
        ia, ib = idx[a].ravel(), idx[b].ravel()
        keep = (ia >= 0) & (ib >= 0)
        pairs.append((ia[keep], ib[keep], d))
    ei = np.concatenate([p[0] for p in pairs])
    ej = np.concatenate([p[1] for p in pairs])
    edx = np.concatenate([np.full(p[0].size, p[2][0]) for p in pairs])
    edy = np.concatenate([np.full(p[0].size, p[2][1]) for p in pairs])

    graph = sparse.coo_matrix((np.ones(ei.size), (ei, ej)), shape=(m, m)).tocsr()
    sign = np.zeros(m)
    for root in range(m):
        if sign[root]:
            continue
        order, pred = csgraph.breadth_first_order(graph, root, directed=False)
        sign[root] = 1.0
        for v in order[1:]:
            u = pred[v]
            dot = nx[u] * nx[v] + ny[u] * ny[v]
            sign[v] = sign[u] if dot >= 0 else -sign[u]
    sx, sy = sign * nx, sign * ny
    agree = sx[ei] * sx[ej] + sy[ei] * sy[ej] > 0
    ei, ej, edx, edy = ei[agree], ej[agree], edx[agree], edy[agree]
    g = 0.5 * ((sx[ei] + sx[ej]) * edx + (sy[ei] + sy[ej]) * edy)

    k = ei.size
    rows = np.concatenate([np.arange(k), np.arange(k)])
    cols = np.concatenate([ej, ei])
    vals = np.concatenate([np.ones(k), -np.ones(k)])
    a = sparse.csr_matrix((vals, (rows, cols)), shape=(k, m))
    lap = (a.T @ a + sparse.identity(m) * 1e-9).tocsc()
    phi_free = spsolve(lap, a.T @ g, permc_spec="MMD_AT_PLUS_A")

    phi = np.zeros((h, w))
    phi[free] = phi_free
    if barrier.any():
        _, (iy, ix) = ndimage.distance_transform_edt(barrier, return_indices=True)
        phi = phi[iy, ix]
    return phi


def render_theta_function(tfun, width: int, height: int, sing: Singularities | None = None,
                          period: float = 9.0) -> GrayImage:
    """Ridge image 127 + 127 cos(2 pi phi / period) following ``tfun``.

    phi integrates the (weighted) ridge normal. Each half-index singular
    point gets a cut along the streamline leaving it, so the normal's sign
    can be lifted consistently; since the cut follows a ridge the phase
    folds across it without a seam.
    """
    sing = sing or Singularities([], [])
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xs += 0.5
    ys += 0.5
    theta = tfun(xs, ys)
    barrier = np.zeros((height, width), dtype=bool)
    points = _half_index_points(sing)
    for p in points:
        others = [q for q in points if q != p]
        path = _trace_cut(tfun, p, width, height, others)
        if path is not None:
            _rasterize(path, width, height, barrier)
    weight = _spacing_weight(xs, ys, sing) if sing.cores or sing.deltas else np.ones_like(xs)
    phi = integrate_phase(theta, weight, barrier)
    img = 127.0 + 127.0 * np.cos(2 * math.pi * phi / period)
    return GrayImage(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8))


def render_ridges(field: OrientationField, period: float = 9.0,
                  width: int | None = None, height: int | None = None,
                  sing: Singularities | None = None) -> GrayImage:
    """Render a block field; singular points are detected when not given."""
    width = width or field.cols * field.block
    height = height or field.rows * field.block
    if sing is None:
        sing = detect_singularities(field)
    return render_theta_function(field_theta_function(field), width, height, sing, period)


def render_class(class_label: str, width: int = 256, height: int = 256, seed: int = 0,
                 period: float = 9.0) -> tuple[GrayImage, Singularities]:
    """Render directly from the analytic orientation (sharper than block upsampling)."""
    f, sing = theta_function(class_label, width, height, seed)
    return render_theta_function(f, width, height, sing, period), sing
