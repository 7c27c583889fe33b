import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.cluster.hierarchy import fcluster, linkage

from ridgekit.cluster import (
    LINKAGES,
    ClusterModel,
    SimilarityParams,
    angular_embedding,
    compute_nhbr,
    fprock_cluster,
    goodness,
    linkage_cluster,
    linkage_merges,
    misclassification_error,
    sim,
)
from ridgekit.errors import ClusterError
from ridgekit.rfpcode import RidgeFlowPattern
from ridgekit.synth import SynthSpec, generate_codes

from oracles import brute_fprock, brute_links

codes32 = st.lists(st.integers(0, 7), min_size=32, max_size=32)


def rec(i, codes):
    return RidgeFlowPattern(f"r{i:03d}", tuple(codes))


def test_sim_examples():
    a = [0] * 32
    assert sim(a, a) == 1
    assert sim(a, [1] * 32) == 0
    b = [0] * 16 + [1] * 16
    assert sim(a, b) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        sim(a, [0] * 31)


@given(codes32, codes32)
def test_sim_symmetric_and_bounded(a, b):
    assert sim(a, b) == sim(b, a)
    assert 0 <= sim(a, b) <= 1
    assert sim(a, a) == 1


def test_nhbr_examples():
    _, links = compute_nhbr(np.zeros((2, 32), dtype=int), 0.5)
    assert links[0, 1] == 0
    _, links = compute_nhbr(np.zeros((3, 32), dtype=int), 0.5)
    assert links[0, 1] == links[0, 2] == links[1, 2] == 1
    codes = np.array([[c] * 32 for c in range(4)])
    adj, links = compute_nhbr(codes, 0.5)
    assert not adj.any() and not links.any()


@settings(max_examples=40, deadline=None)
@given(st.lists(codes32, min_size=2, max_size=10), st.sampled_from([0.3, 0.5, 0.7]))
def test_links_match_definition(rows, theta):
    _, links = compute_nhbr(np.array(rows), theta)
    _, ref = brute_links(rows, theta)
    assert links.tolist() == ref
    assert (links == links.T).all()
    assert links.max() <= len(rows) - 2 or len(rows) < 2


def test_goodness_examples():
    assert goodness(0, 3, 4, 0.5) == 0
    g = goodness(1, 1, 1, 0.5)
    assert 2 ** (5 / 3) - 2 == pytest.approx(1.1748, abs=1e-4)
    assert g == pytest.approx(0.8512, abs=1e-4)
    assert goodness(2, 1, 1, 0.5) == pytest.approx(2 * g)


def test_two_identical_groups():
    recs = [rec(i, [0] * 32) for i in range(5)] + [rec(i + 5, [4] * 32) for i in range(5)]
    model = fprock_cluster(recs, SimilarityParams(0.5, 2))
    assert sorted(model.clusters().values()) == [[r.image_id for r in recs[:5]],
                                                 [r.image_id for r in recs[5:]]]
    assert model.outliers == ()


def test_all_dissimilar_are_outliers():
    recs = [rec(i, [i] * 32) for i in range(4)]
    model = fprock_cluster(recs, SimilarityParams(0.5, 1))
    assert model.partition == {}
    assert len(model.outliers) == 4


def test_too_few_records():
    with pytest.raises(ClusterError):
        fprock_cluster([rec(0, [0] * 32)], SimilarityParams(0.5, 2))


def _random_dataset(rng, n):
    # a few noisy prototypes so that links actually form
    protos = [[rng.randrange(8) for _ in range(32)] for _ in range(rng.randint(1, 4))]
    out = []
    for i in range(n):
        p = rng.choice(protos)
        out.append(rec(i, [c if rng.random() > 0.3 else rng.randrange(8) for c in p]))
    return out


@pytest.mark.parametrize("seed", range(25))
def test_heap_matches_rescan(seed):
    rng = random.Random(seed)
    recs = _random_dataset(rng, rng.randint(3, 12))
    theta = rng.choice([0.3, 0.5, 0.7])
    k = rng.choice([2, 3])
    model = fprock_cluster(recs, SimilarityParams(theta, k))
    ids = [r.image_id for r in recs]
    groups, merges, outl = brute_fprock(ids, [r.codes for r in recs], theta, k)
    assert list(model.dendrogram) == merges
    got = sorted(sorted(ids.index(x) for x in g) for g in model.clusters().values())
    assert got == sorted(groups)
    assert sorted(ids.index(x) for x in model.outliers) == outl


@settings(max_examples=25, deadline=None)
@given(st.lists(codes32, min_size=6, max_size=14), st.randoms(use_true_random=False))
def test_permutation_invariance(rows, rnd):
    recs = [rec(i, c) for i, c in enumerate(rows)]
    shuffled = recs[:]
    rnd.shuffle(shuffled)
    a = fprock_cluster(recs, SimilarityParams(0.3, 2))
    b = fprock_cluster(shuffled, SimilarityParams(0.3, 2))
    assert a == b


def test_replay_and_partition_cover():
    data = generate_codes(SynthSpec(per_class=20, seed=3))
    model = fprock_cluster(data.meta.records, SimilarityParams(0.5, 6))
    assert model.replay() == model.partition
    assert set(model.partition) | set(model.outliers) == set(data.labels)
    assert not set(model.partition) & set(model.outliers)
    assert sorted(set(model.partition.values())) == list(range(1, model.k + 1))


def test_embedding_wraparound():
    x = angular_embedding([[0] + [0] * 31, [7] + [0] * 31])
    assert np.linalg.norm(x[0] - x[1]) == pytest.approx(2 * math.sin(math.pi / 8) / math.sqrt(32))


def test_identical_records_merge_first():
    recs = [rec(0, [1] * 32), rec(1, [5] * 32), rec(2, [1] * 32)]
    model = linkage_cluster(recs, "complete", k=1)
    first = model.dendrogram[0]
    assert (first.left, first.right, first.goodness) == (0, 2, 0.0)


@pytest.mark.parametrize("method", LINKAGES)
def test_linkage_matches_scipy(method):
    rng = np.random.default_rng(7)
    x = rng.normal(size=(25, 5))
    ours = linkage_merges(x, method)
    ref = linkage(x, method=method)
    assert np.allclose([m.goodness for m in ours], ref[:, 2], atol=1e-8)
    for k in (2, 3, 5):
        labels = fcluster(ref, k, criterion="maxclust")
        from ridgekit.cluster import partition_from_merges
        ids = tuple(str(i) for i in range(25))
        part = partition_from_merges(ids, ours[:25 - k], set())
        same = {(part[str(i)], labels[i]) for i in range(25)}
        assert len(same) == len(set(labels)) == k


def test_me_examples():
    before = {str(i): "a" if i < 6 else "b" for i in range(10)}
    after = {str(i): 1 if i < 5 else 2 for i in range(10)}
    assert misclassification_error(before, after) == pytest.approx(0.2)
    assert misclassification_error(before, {k: 1 if v == "a" else 2 for k, v in before.items()}) == 0
    with pytest.raises(ClusterError):
        misclassification_error(before, {str(i): 1 for i in range(10)})


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=3, max_size=30), st.randoms(use_true_random=False))
def test_me_bounds(labels, rnd):
    before = {str(i): lab for i, lab in enumerate(labels)}
    k = len(set(labels))
    after = {str(i): rnd.randrange(k) for i in range(len(labels))}
    if len(set(after.values())) != k:
        return
    me = misclassification_error(before, after)
    sizes = [labels.count(v) for v in set(labels)] + [list(after.values()).count(v) for v in range(k)]
    assert 0 <= me <= 2 * (k - 1) * max(sizes) / len(labels)
    assert misclassification_error(before, before) == 0


def test_model_is_frozen():
    model = ClusterModel(("a",), {"a": 1})
    with pytest.raises(AttributeError):
        model.method = "x"
