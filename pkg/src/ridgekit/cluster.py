"""Link-based agglomerative clustering (FPROCK), classical linkages and M_E."""
from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ClusterError
from .rfpcode import MetaBase, RidgeFlowPattern

LINKAGES = ("single", "complete", "average", "weighted", "centroid", "median", "ward")
_SQUARED = {"centroid", "median", "ward"}
GOODNESS_DECIMALS = 9


@dataclass(frozen=True)
class SimilarityParams:
    theta: float = 0.5
    k: int = 6

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError(f"theta must lie in (0, 1), got {self.theta}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    @property
    def f_exp(self) -> float:
        return (1 - self.theta) / (1 + self.theta)


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    new: int
    goodness: float


@dataclass(frozen=True)
class ClusterModel:
    """Final clusters plus the merge history that produced them.

    Leaves of the dendrogram are numbered by position in ``ids`` (sorted
    record ids); merged nodes continue from ``len(ids)`` upward.
    """

    ids: tuple[str, ...]
    partition: dict[str, int]
    dendrogram: tuple[Merge, ...] = ()
    outliers: tuple[str, ...] = ()
    method: str = field(default="fprock", compare=False)

    @property
    def k(self) -> int:
        return len(set(self.partition.values()))

    def clusters(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for rid in self.ids:
            cid = self.partition.get(rid)
            if cid is not None:
                out.setdefault(cid, []).append(rid)
        return dict(sorted(out.items()))

    def node_members(self) -> dict[int, list[int]]:
        """Leaf indices under every dendrogram node."""
        members = {i: [i] for i in range(len(self.ids))}
        for m in self.dendrogram:
            members[m.new] = sorted(members[m.left] + members[m.right])
        return members

    def replay(self) -> dict[str, int]:
        """Partition rebuilt from the dendrogram and outlier list alone."""
        return partition_from_merges(self.ids, self.dendrogram, set(self.outliers))


def partition_from_merges(ids, merges, outliers) -> dict[str, int]:
    parent = list(range(len(ids) + len(merges)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for m in merges:
        parent[find(m.left)] = m.new
        parent[find(m.right)] = m.new
    groups: dict[int, list[int]] = {}
    for i, rid in enumerate(ids):
        if rid not in outliers:
            groups.setdefault(find(i), []).append(i)
    return _number_clusters(ids, list(groups.values()))


def _number_clusters(ids, groups) -> dict[str, int]:
    """Cluster ids 1..k in order of each group's smallest leaf."""
    out = {}
    for cid, g in enumerate(sorted(groups, key=min), start=1):
        for i in g:
            out[ids[i]] = cid
    return out


# ---------------------------------------------------------------- similarity


def _codes(records) -> np.ndarray:
    if isinstance(records, MetaBase):
        return records.codes_array()
    return np.array([r.codes if isinstance(r, RidgeFlowPattern) else r for r in records], dtype=np.int8)


def sim(a, b) -> float:
    ca = a.codes if isinstance(a, RidgeFlowPattern) else tuple(a)
    cb = b.codes if isinstance(b, RidgeFlowPattern) else tuple(b)
    if len(ca) != len(cb):
        raise ValueError(f"length mismatch: {len(ca)} vs {len(cb)}")
    n = len(ca)
    matches = sum(x == y for x, y in zip(ca, cb))
    return matches / (2 * n - matches)


def similarity_matrix(codes: np.ndarray) -> np.ndarray:
    m, n = codes.shape
    matches = np.zeros((m, m), dtype=np.int64)
    for i in range(n):
        col = codes[:, i]
        matches += col[:, None] == col[None, :]
    return matches / (2 * n - matches)


def compute_nhbr(codes, theta: float) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour adjacency (sim >= theta, no self loops) and common-neighbour links."""
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise ValueError("need at least one record")
    adj = similarity_matrix(codes) >= theta
    np.fill_diagonal(adj, False)
    a = adj.astype(np.float64)
    links = np.rint(a @ a).astype(np.int64)
    np.fill_diagonal(links, 0)
    return adj, links


def goodness(link: float, n_u: int, n_v: int, theta: float) -> float:
    if link == 0:
        return 0.0
    p = 1 + 2 * (1 - theta) / (1 + theta)
    return link / ((n_u + n_v) ** p - n_u ** p - n_v ** p)


# ---------------------------------------------------------------- FPROCK


@dataclass
class _Cluster:
    members: list[int]
    minid: int
    links: dict[int, int] = field(default_factory=dict)
    heap: list = field(default_factory=list)
    version: int = 0


def _pair_key(a: _Cluster, b: _Cluster) -> tuple[int, int]:
    return (a.minid, b.minid) if a.minid < b.minid else (b.minid, a.minid)


def fprock_cluster(records, params: SimilarityParams = SimilarityParams()) -> ClusterModel:
    """Agglomerate by best goodness until k clusters remain or no links are left.

    Each cluster keeps a local heap of its linked partners; a global heap
    holds every cluster's best entry. Stale entries are skipped on pop
    (lazy deletion). Ties go to the pair with the smaller (min-member id,
    min-member id), members being numbered in sorted record-id order.
    """
    recs = sorted(records, key=lambda r: r.image_id)
    if len(recs) < params.k:
        raise ClusterError(f"need at least k={params.k} records, got {len(recs)}")
    ids = tuple(r.image_id for r in recs)
    if len(set(ids)) != len(ids):
        raise ClusterError("duplicate record ids")
    m = len(ids)
    adj, links = compute_nhbr(_codes(recs), params.theta)
    lonely = ~adj.any(axis=1)
    outliers = [ids[i] for i in np.nonzero(lonely)[0]]

    theta = params.theta
    active: dict[int, _Cluster] = {}
    for i in np.nonzero(~lonely)[0]:
        i = int(i)
        row = links[i]
        nz = np.nonzero(row)[0]
        active[i] = _Cluster([i], i, {int(j): int(row[j]) for j in nz})
    gheap: list = []

    def entry(x: _Cluster, y_id: int):
        y = active[y_id]
        g = goodness(x.links[y_id], len(x.members), len(y.members), theta)
        return (-g, _pair_key(x, y), y_id)

    def refresh(x_id: int):
        x = active[x_id]
        while x.heap and x.heap[0][2] not in active:
            heapq.heappop(x.heap)
        x.version += 1
        if x.heap:
            negg, key, y_id = x.heap[0]
            heapq.heappush(gheap, (negg, key, x_id, x.version))

    for i, c in active.items():
        c.heap = [entry(c, j) for j in c.links]
        heapq.heapify(c.heap)
    for i in list(active):
        refresh(i)

    merges: list[Merge] = []
    next_id = m
    while len(active) > params.k and gheap:
        negg, key, u_id, ver = heapq.heappop(gheap)
        u = active.get(u_id)
        if u is None or ver != u.version:
            continue
        top = u.heap[0]
        if top[2] not in active:
            refresh(u_id)
            continue
        if -negg <= 0:
            break
        v_id = top[2]
        v = active.pop(v_id)
        del active[u_id]
        w_id = next_id
        next_id += 1
        w = _Cluster(sorted(u.members + v.members), min(u.minid, v.minid))
        for x_id, cnt in u.links.items():
            if x_id != v_id:
                w.links[x_id] = w.links.get(x_id, 0) + cnt
        for x_id, cnt in v.links.items():
            if x_id != u_id:
                w.links[x_id] = w.links.get(x_id, 0) + cnt
        before = sum(u.links.get(x, 0) + v.links.get(x, 0) for x in w.links)
        assert before == sum(w.links.values()), "link mass not preserved"
        active[w_id] = w
        left, right = (u_id, v_id) if u.minid < v.minid else (v_id, u_id)
        merges.append(Merge(left, right, w_id, round(-negg, GOODNESS_DECIMALS)))
        for x_id, cnt in w.links.items():
            x = active[x_id]
            x.links.pop(u_id, None)
            x.links.pop(v_id, None)
            x.links[w_id] = cnt
            heapq.heappush(x.heap, entry(x, w_id))
            refresh(x_id)
        w.heap = [entry(w, x_id) for x_id in w.links]
        heapq.heapify(w.heap)
        refresh(w_id)

    groups = [c.members for c in active.values()]
    if len(groups) > params.k:
        groups.sort(key=lambda g: (-len(g), min(g)))
        for g in groups[params.k:]:
            outliers.extend(ids[i] for i in g)
        groups = groups[:params.k]
    return ClusterModel(ids, _number_clusters(ids, groups), tuple(merges),
                        tuple(sorted(outliers)), "fprock")


# ---------------------------------------------------------------- linkage


def angular_embedding(codes) -> np.ndarray:
    """Each code c as the unit vector at angle 2 pi c / 8, scaled by 1/sqrt(n)."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim == 1:
        codes = codes[None, :]
    ang = 2 * math.pi * codes / 8
    n = codes.shape[1]
    out = np.empty((codes.shape[0], 2 * n))
    out[:, 0::2] = np.cos(ang)
    out[:, 1::2] = np.sin(ang)
    return out / math.sqrt(n)


def _lance_williams(method: str, d_ik, d_jk, d_ij, n_i, n_j, n_k):
    if method == "single":
        return np.minimum(d_ik, d_jk)
    if method == "complete":
        return np.maximum(d_ik, d_jk)
    if method == "average":
        return (n_i * d_ik + n_j * d_jk) / (n_i + n_j)
    if method == "weighted":
        return 0.5 * (d_ik + d_jk)
    if method == "centroid":
        s = n_i + n_j
        return (n_i * d_ik + n_j * d_jk) / s - n_i * n_j * d_ij / (s * s)
    if method == "median":
        return 0.5 * d_ik + 0.5 * d_jk - 0.25 * d_ij
    if method == "ward":
        t = n_i + n_j + n_k
        return ((n_i + n_k) * d_ik + (n_j + n_k) * d_jk - n_k * d_ij) / t
    raise ValueError(f"unknown linkage {method!r}; choose from {', '.join(LINKAGES)}")


def linkage_merges(x: np.ndarray, method: str, stop_at: int = 1) -> list[Merge]:
    """Lance-Williams agglomeration of the rows of ``x``.

    Centroid, median and ward work on squared Euclidean distances; reported
    heights are square roots. Ties resolve to the smallest (node id, node id).
    """
    if method not in LINKAGES:
        raise ValueError(f"unknown linkage {method!r}; choose from {', '.join(LINKAGES)}")
    m = x.shape[0]
    diff = x[:, None, :] - x[None, :, :]
    d = np.einsum("ijk,ijk->ij", diff, diff)
    if method not in _SQUARED:
        d = np.sqrt(d)
    np.fill_diagonal(d, np.inf)
    node = list(range(m))  # slot -> node id
    size = np.ones(m)
    alive = np.ones(m, dtype=bool)
    merges = []
    next_id = m
    for _ in range(m - stop_at):
        best = d.min()  # dead slots hold inf
        cand = np.argwhere(d == best)
        pairs = sorted((min(node[a], node[b]), max(node[a], node[b]), a, b) for a, b in cand)
        _, _, i, j = pairs[0]
        dij = d[i, j]
        others = alive.copy()
        others[[i, j]] = False
        new = _lance_williams(method, d[i], d[j], dij, size[i], size[j], size)
        new = np.where(others, new, np.inf)
        if method in _SQUARED:
            new = np.maximum(new, 0.0)
        height = math.sqrt(max(dij, 0.0)) if method in _SQUARED else float(dij)
        left, right = sorted((node[i], node[j]))
        merges.append(Merge(left, right, next_id, round(height, GOODNESS_DECIMALS)))
        d[i, :] = new
        d[:, i] = new
        d[i, i] = np.inf
        alive[j] = False
        d[j, :] = np.inf
        d[:, j] = np.inf
        size[i] += size[j]
        node[i] = next_id
        next_id += 1
    return merges


def linkage_cluster(records, linkage: str = "complete", k: int = 6) -> ClusterModel:
    recs = sorted(records, key=lambda r: r.image_id)
    if len(recs) < k:
        raise ClusterError(f"need at least k={k} records, got {len(recs)}")
    ids = tuple(r.image_id for r in recs)
    x = angular_embedding(_codes(recs))
    merges = linkage_merges(x, linkage, stop_at=k)
    return ClusterModel(ids, partition_from_merges(ids, merges, set()), tuple(merges), (),
                        f"linkage-{linkage}")


# ---------------------------------------------------------------- evaluation


def misclassification_error(before, after) -> float:
    """(1/N) sum | |D_i| - |D'_i| | over clusters matched by greatest overlap.

    ``before`` maps record id -> true label; ``after`` is a ClusterModel or a
    record id -> cluster mapping. N is the number of labelled records.
    Matching is greedy: the largest overlap is fixed first, ties going to the
    smaller (label, cluster) pair.
    """
    part = after.partition if isinstance(after, ClusterModel) else dict(after)
    true_sizes = Counter(before.values())
    found_sizes = Counter(part.values())
    if len(true_sizes) != len(found_sizes):
        raise ClusterError(f"cluster count mismatch: {len(true_sizes)} labelled vs {len(found_sizes)} found")
    n = len(before)
    if n == 0:
        return 0.0
    overlap = Counter((lab, part[rid]) for rid, lab in before.items() if rid in part)
    pairs = sorted(((-cnt, str(lab), str(cid)), lab, cid) for (lab, cid), cnt in overlap.items())
    matched = {}
    used = set()
    for _, lab, cid in pairs:
        if lab not in matched and cid not in used:
            matched[lab] = cid
            used.add(cid)
    spare = sorted(set(found_sizes) - used, key=str)
    for lab in sorted(true_sizes, key=str):
        if lab not in matched:
            matched[lab] = spare.pop(0)
    total = sum(abs(true_sizes[lab] - found_sizes[cid]) for lab, cid in matched.items())
    return total / n
