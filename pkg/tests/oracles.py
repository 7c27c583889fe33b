"""Slow, obviously-correct reference implementations used only by the tests."""
from __future__ import annotations

import itertools

from ridgekit.cluster import Merge, goodness


def brute_links(codes, theta):
    """Neighbour sets and common-neighbour counts straight from the definitions."""
    m = len(codes)
    n = len(codes[0]) if m else 0

    def s(a, b):
        same = sum(x == y for x, y in zip(a, b))
        return same / (2 * n - same)

    nbr = [{q for q in range(m) if q != p and s(codes[p], codes[q]) >= theta} for p in range(m)]
    link = [[len(nbr[p] & nbr[q]) if p != q else 0 for q in range(m)] for p in range(m)]
    return nbr, link


def brute_fprock(ids, codes, theta, k):
    """Rescan every live pair each round; returns (groups, merges, outlier indices).

    ``ids``/``codes`` must already be in sorted-id order.
    """
    m = len(ids)
    nbr, link = brute_links(codes, theta)
    outliers = [p for p in range(m) if not nbr[p]]
    live = {p: [p] for p in range(m) if nbr[p]}
    merges = []
    next_id = m
    while len(live) > k:
        best = None
        for u, v in itertools.combinations(sorted(live), 2):
            cross = sum(link[a][b] for a in live[u] for b in live[v])
            g = goodness(cross, len(live[u]), len(live[v]), theta)
            key = tuple(sorted((min(live[u]), min(live[v]))))
            cand = (-g, key, u, v)
            if best is None or cand[:2] < best[:2]:
                best = cand
        if best is None or best[0] >= 0:
            break
        negg, _, u, v = best
        left, right = (u, v) if min(live[u]) < min(live[v]) else (v, u)
        live[next_id] = sorted(live.pop(u) + live.pop(v))
        merges.append(Merge(left, right, next_id, round(-negg, 9)))
        next_id += 1
    groups = sorted(live.values(), key=lambda g: (-len(g), min(g)))
    for g in groups[k:]:
        outliers.extend(g)
    return sorted(groups[:k], key=min), merges, sorted(outliers)


def brute_medoid(members):
    """Member with the least summed Hamming distance; first one wins ties."""
    best = None
    for rec in members:
        cost = sum(sum(a != b for a, b in zip(rec.codes, o.codes)) for o in members)
        if best is None or cost < best[0]:
            best = (cost, rec)
    return best[1]
