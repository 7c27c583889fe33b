"""Two-phase search: class match on RFP profiles, then tuple distance inside the class."""
from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .cluster import ClusterModel, angular_embedding
from .errors import ReferenceMismatchError
from .imaging import BinaryImage
from .orientation import CorePoint
from .rfpcode import MetaBase, RidgeFlowPattern

DEFAULT_TAU_PRUNE = 12
DEFAULT_TOP_R = 5
CSV_HEADER = ("db_size", "mode", "rank1_acc", "rankr_acc", "mean_penetration", "mean_comparisons")


def compute_beta(skeleton: BinaryImage, core: CorePoint, roi: np.ndarray | None = None) -> int:
    """Ridges crossed by the horizontal scanline through the core (runs of ridge pixels)."""
    bits = skeleton.bits
    if not 0 <= core.y < bits.shape[0]:
        return 0
    row = bits[core.y].astype(bool)
    if roi is None:
        roi = skeleton.roi
    if roi is not None:
        row = row & np.asarray(roi, dtype=bool)[core.y]
    padded = np.concatenate([[False], row])
    return int(np.count_nonzero(padded[1:] & ~padded[:-1]))


def _codes_of(x) -> tuple[int, ...]:
    return x.codes if isinstance(x, RidgeFlowPattern) else tuple(x)


def agreements(a, b) -> int:
    ca, cb = _codes_of(a), _codes_of(b)
    if len(ca) != len(cb):
        raise ValueError(f"length mismatch: {len(ca)} vs {len(cb)}")
    return sum(x == y for x, y in zip(ca, cb))


def medoid(members: list[RidgeFlowPattern]) -> RidgeFlowPattern:
    """Member with the smallest summed Hamming distance; the smallest id wins ties."""
    members = sorted(members, key=lambda r: r.image_id)
    codes = np.array([r.codes for r in members], dtype=np.int8)
    cost = np.zeros(len(members), dtype=np.int64)
    for i in range(codes.shape[1]):
        col = codes[:, i]
        cost += (col[:, None] != col[None, :]).sum(axis=1)
    return members[int(np.argmin(cost))]


@dataclass(frozen=True)
class RFPProfile:
    node_id: int
    clusters: tuple[int, ...]  # leaf cluster ids below this node
    medoid: RidgeFlowPattern
    alpha_mean: float
    beta_mean: float
    delta_hist: dict[str, int]
    size: int
    children: tuple[int, ...] = ()

    @property
    def is_leaf(self) -> bool:
        return not self.children


def make_profile(node_id, clusters, members, children=()) -> RFPProfile:
    return RFPProfile(
        node_id=node_id,
        clusters=tuple(sorted(clusters)),
        medoid=medoid(members),
        alpha_mean=float(np.mean([r.alpha for r in members])),
        beta_mean=float(np.mean([r.beta for r in members])),
        delta_hist=dict(sorted(Counter(r.delta for r in members).items())),
        size=len(members),
        children=tuple(children),
    )


@dataclass
class ProfileTree:
    """Leaf profiles (node id = cluster id) under a hierarchy of merged profiles."""

    nodes: dict[int, RFPProfile]
    root: int
    members: dict[int, list[RidgeFlowPattern]]  # cluster id -> records
    outliers: list[RidgeFlowPattern] = field(default_factory=list)

    @property
    def leaves(self) -> list[RFPProfile]:
        return [p for p in self.nodes.values() if p.is_leaf]


def build_profiles(model: ClusterModel, meta: MetaBase) -> ProfileTree:
    """One profile per final cluster plus merged profiles above the cut.

    The clustering stops at k clusters, so the upper levels are built here:
    the two nodes whose medoids agree most are merged (ties by smaller node
    ids) until one root remains; every new node's medoid is recomputed over
    all records below it.
    """
    by_id = meta.by_id()
    if set(model.ids) != set(by_id):
        missing = sorted(set(model.ids) ^ set(by_id))[:5]
        raise ReferenceMismatchError(f"cluster model and meta-base ids differ (e.g. {missing})")
    groups = {cid: [by_id[rid] for rid in rids] for cid, rids in model.clusters().items()}
    outliers = [by_id[rid] for rid in model.outliers]
    nodes = {cid: make_profile(cid, [cid], recs) for cid, recs in groups.items()}
    if not nodes:
        return ProfileTree({}, -1, {}, outliers)
    records_under = {cid: list(recs) for cid, recs in groups.items()}
    live = sorted(nodes)
    next_id = max(nodes) + 1
    while len(live) > 1:
        best = None
        for i, a in enumerate(live):
            for b in live[i + 1:]:
                key = (-agreements(nodes[a].medoid, nodes[b].medoid), a, b)
                if best is None or key < best:
                    best = key
        _, a, b = best
        recs = records_under.pop(a) + records_under.pop(b)
        nodes[next_id] = make_profile(next_id, nodes[a].clusters + nodes[b].clusters, recs, (a, b))
        records_under[next_id] = recs
        live = sorted([x for x in live if x not in (a, b)] + [next_id])
        next_id += 1
    return ProfileTree(nodes, live[0], groups, outliers)


@dataclass(frozen=True)
class GlobalMatch:
    clusters: tuple[int, ...]
    agreement: int
    comparisons: int  # profile comparisons made, including any fallback


def global_search(candidate, tree: ProfileTree, tau_prune: int = DEFAULT_TAU_PRUNE) -> GlobalMatch:
    """Descend from the root, skipping every subtree whose medoid agrees < tau_prune.

    Among the leaf profiles reached, all with the maximum agreement win. If
    nothing is reached, every leaf profile is compared instead.
    """
    if not tree.nodes:
        return GlobalMatch((), 0, 0)
    scores: dict[int, int] = {}
    seen: dict[int, int] = {}
    stack = [tree.root]
    while stack:
        nid = stack.pop()
        node = tree.nodes[nid]
        agree = agreements(candidate, node.medoid)
        seen[nid] = agree
        if agree < tau_prune:
            continue
        if node.is_leaf:
            scores[nid] = agree
        else:
            stack.extend(sorted(node.children, reverse=True))
    if not scores:
        for leaf in tree.leaves:
            if leaf.node_id not in seen:
                seen[leaf.node_id] = agreements(candidate, leaf.medoid)
            scores[leaf.node_id] = seen[leaf.node_id]
    top = max(scores.values())
    return GlobalMatch(tuple(sorted(c for c, s in scores.items() if s == top)), top, len(seen))


@dataclass(frozen=True)
class QueryTuple:
    """(alpha, beta, gamma, delta) of one query; ``target`` is its true id when known."""

    alpha: int
    beta: int
    gamma: tuple[int, ...]
    delta: str
    target: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "gamma", _codes_of(self.gamma))
        if len(self.delta) != 10 or set(self.delta) - {"0", "1"}:
            raise ValueError("delta must be a 10-bit string")

    @classmethod
    def from_record(cls, rec: RidgeFlowPattern) -> QueryTuple:
        return cls(rec.alpha, rec.beta, rec.codes, rec.delta, rec.image_id)


@dataclass(frozen=True)
class Weights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0


def feature_vector(alpha, beta, codes, delta, delta_ref, alpha_max, beta_max,
                   weights: Weights = Weights()) -> np.ndarray:
    """Feature row; the delta term is the Hamming distance to ``delta_ref`` over 10."""
    ham = sum(a != b for a, b in zip(delta, delta_ref)) / 10
    emb = angular_embedding(codes)[0]
    return np.concatenate([[weights.alpha * alpha / alpha_max, weights.beta * beta / beta_max],
                           weights.gamma * emb, [weights.delta * ham]])


def _feature_rows(members, delta_ref, alpha_max, beta_max, weights: Weights) -> np.ndarray:
    """feature_vector for many records at once."""
    ab = np.array([(r.alpha, r.beta) for r in members], dtype=np.float64)
    bits = np.array([[ch == "1" for ch in r.delta] for r in members])
    ref = np.array([ch == "1" for ch in delta_ref])
    ham = (bits != ref).sum(axis=1) / 10
    emb = angular_embedding(np.array([r.codes for r in members]))
    return np.column_stack([weights.alpha * ab[:, 0] / alpha_max, weights.beta * ab[:, 1] / beta_max,
                            weights.gamma * emb, weights.delta * ham])


@dataclass(frozen=True)
class SearchResult:
    ranked: tuple[tuple[str, float], ...]
    class_chosen: tuple[int, ...]
    comparisons: int  # records scored
    profile_comparisons: int = 0
    db_size: int = 0

    @property
    def penetration(self) -> float:
        if self.db_size == 0:
            return 0.0
        return min(1.0, (self.comparisons + self.profile_comparisons) / self.db_size)

    def report(self) -> str:
        lines = ["rank record_id distance"]
        lines += [f"{i} {rid} {d:.6f}" for i, (rid, d) in enumerate(self.ranked, start=1)]
        cls = ",".join(str(c) for c in self.class_chosen) or "-"
        lines.append(f"class={cls} comparisons={self.comparisons} penetration={self.penetration:.4f}")
        return "\n".join(lines) + "\n"


def db_maxima(meta: MetaBase) -> tuple[int, int]:
    alpha_max = max([1] + [r.alpha for r in meta])
    beta_max = max([1] + [r.beta for r in meta])
    return alpha_max, beta_max


def local_search(query: QueryTuple, members, top_r: int = DEFAULT_TOP_R,
                 alpha_max: int = 1, beta_max: int = 1, weights: Weights = Weights(),
                 class_chosen=(), profile_comparisons: int = 0, db_size: int | None = None
                 ) -> SearchResult:
    """Rank records by Euclidean distance between normalized feature rows.

    The query's delta term is zero by construction (it is the reference for
    the Hamming distance), so each record's term is Hamming(q, rec) / 10.
    """
    members = list(members)
    alpha_max, beta_max = max(alpha_max, 1), max(beta_max, 1)
    if not members:
        return SearchResult((), tuple(class_chosen), 0, profile_comparisons, db_size or 0)
    q = feature_vector(query.alpha, query.beta, query.gamma, query.delta, query.delta,
                       alpha_max, beta_max, weights)
    rows = _feature_rows(members, query.delta, alpha_max, beta_max, weights)
    dist = np.sqrt(((rows - q) ** 2).sum(axis=1))
    order = sorted(range(len(members)), key=lambda i: (float(dist[i]), members[i].image_id))
    ranked = tuple((members[i].image_id, float(dist[i])) for i in order[:top_r])
    return SearchResult(ranked, tuple(class_chosen), len(members), profile_comparisons,
                        len(members) if db_size is None else db_size)


def search(query: QueryTuple, tree: ProfileTree, meta: MetaBase, top_r: int = DEFAULT_TOP_R,
           tau_prune: int = DEFAULT_TAU_PRUNE, weights: Weights = Weights()) -> SearchResult:
    """Phase I picks the cluster(s); phase II scores their members plus the outliers.

    Outliers belong to no cluster, so they are always scanned; otherwise
    they could never be retrieved.
    """
    match = global_search(query.gamma, tree, tau_prune)
    pool = [r for c in match.clusters for r in tree.members[c]] + list(tree.outliers)
    alpha_max, beta_max = db_maxima(meta)
    return local_search(query, pool, top_r, alpha_max, beta_max, weights,
                        match.clusters, match.comparisons, len(meta))


def linear_search(query: QueryTuple, meta: MetaBase, top_r: int = DEFAULT_TOP_R,
                  weights: Weights = Weights()) -> SearchResult:
    alpha_max, beta_max = db_maxima(meta)
    return local_search(query, meta.records, top_r, alpha_max, beta_max, weights, (), 0, len(meta))


@dataclass
class SearchReport:
    db_size: int
    rows: dict[str, dict[str, float]]
    queries: int
    phase_one_hit_rate: float = math.nan
    conditional_agreement: float = math.nan

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        if self.queries:
            for mode in ("clustered", "linear"):
                r = self.rows[mode]
                w.writerow([self.db_size, mode, f"{r['rank1_acc']:.6f}", f"{r['rankr_acc']:.6f}",
                            f"{r['mean_penetration']:.6f}", f"{r['mean_comparisons']:.3f}"])
        return buf.getvalue()


def evaluate_search(queries, meta: MetaBase, tree: ProfileTree, top_r: int = DEFAULT_TOP_R,
                    tau_prune: int = DEFAULT_TAU_PRUNE, weights: Weights = Weights()) -> SearchReport:
    """Rank-1/rank-r accuracy, penetration and comparisons, clustered vs linear.

    Clustered comparisons count both records and profiles. Also measured:
    how often the true record's cluster is among the phase-I winners, and
    how often clustered and linear rank-1 agree when it is.
    """
    queries = list(queries)
    cluster_of = {r.image_id: c for c, recs in tree.members.items() for r in recs}
    outlier_ids = {r.image_id for r in tree.outliers}
    acc = {m: {"rank1": 0, "rankr": 0, "pen": 0.0, "cmp": 0} for m in ("clustered", "linear")}
    hits = agree = 0
    for q in queries:
        res = {"clustered": search(q, tree, meta, top_r, tau_prune, weights),
               "linear": linear_search(q, meta, top_r, weights)}
        for mode, r in res.items():
            ids = [rid for rid, _ in r.ranked]
            acc[mode]["rank1"] += bool(ids) and ids[0] == q.target
            acc[mode]["rankr"] += q.target in ids
            acc[mode]["pen"] += r.penetration
            acc[mode]["cmp"] += r.comparisons + r.profile_comparisons
        if q.target in outlier_ids or cluster_of.get(q.target) in res["clustered"].class_chosen:
            hits += 1
            agree += res["clustered"].ranked[:1] == res["linear"].ranked[:1]
    n = len(queries)
    rows = {}
    for mode, a in acc.items():
        rows[mode] = {
            "rank1_acc": a["rank1"] / n if n else 0.0,
            "rankr_acc": a["rankr"] / n if n else 0.0,
            "mean_penetration": a["pen"] / n if n else 0.0,
            "mean_comparisons": a["cmp"] / n if n else 0.0,
        }
    return SearchReport(len(meta), rows, n,
                        hits / n if n else math.nan,
                        agree / hits if hits else math.nan)
