import numpy as np
import pytest

from wildset.dedup import (
    CandidateSet,
    DuplicateVerdict,
    exact_sq_distance,
    lower_bound_accuracy,
    review_manifest,
    run_dedup,
    stage1,
    stage2,
    summarize,
)
from wildset.errors import InvalidArgumentError
from wildset.ivf import IVFPQIndex


@pytest.fixture(scope="module")
def corpus():
    rng = np.random.default_rng(60)
    base = rng.standard_normal((1500, 32))
    idx = IVFPQIndex(n_components=16, coarse_bits=3, n_subquantizers=4, n_bits=5, opq_alternations=2).fit(base)
    idx.add(base, np.arange(1500))
    return idx, base


def test_exact_distance_matches_cosine():
    a, b = np.array([1.0, 0.0]), np.array([0.7, np.sqrt(1 - 0.49)]) * 3
    assert exact_sq_distance(a, b) == pytest.approx(2 - 2 * 0.7)
    with pytest.raises(InvalidArgumentError):
        exact_sq_distance(np.zeros(2), a)


def test_stage2_threshold_is_inclusive_and_sorted():
    store = {1: np.array([1.0, 0.0]), 2: np.array([0.7, 0.71414284285]), 3: np.array([0.0, 1.0])}
    cs = CandidateSet(9, np.array([3, 2, 1, 4], dtype=np.uint64), np.zeros(4))
    out = stage2(9, np.array([1.0, 0.0]), cs, store, threshold=0.6)
    assert [v.neighbor_id for v in out] == [1, 2, 3, 4]
    assert [v.flagged for v in out] == [True, True, False, False]
    assert out[-1].reason == "missing exact descriptor for 4"
    assert out[1].distance == pytest.approx(0.6, abs=1e-9)


def test_stage2_oracle_equivalence(rng):
    q = rng.standard_normal(16)
    store = {i: q + rng.standard_normal(16) * s for i, s in enumerate(np.linspace(0.05, 2, 40))}
    cs = CandidateSet(0, np.arange(40, dtype=np.uint64), np.zeros(40))
    out = stage2(0, q, cs, store)
    qn = q / np.linalg.norm(q)
    for v in out:
        x = store[v.neighbor_id]
        d = ((qn - x / np.linalg.norm(x)) ** 2).sum()
        assert abs(v.distance - d) < 1e-9 and v.flagged == (d <= 0.6)


def test_stage1_drops_self_and_reports_missing(corpus):
    idx, base = corpus
    store = {i: base[i] for i in range(5)}
    found, errors = stage1([0, 1, 2, 3, 4, 99999], store, idx, k=10, nprobe=16)
    assert [e.query_id for e in errors] == [99999]
    for cs in found:
        assert len(cs) == 10 and cs.query_id not in cs.ids.tolist()


def test_stage1_parallel_matches_serial(corpus):
    idx, base = corpus
    store = {i: base[i] + 0.01 for i in range(20)}
    a, _ = stage1(range(20), store, idx, k=8, nprobe=8, n_jobs=1)
    b, _ = stage1(range(20), store, idx, k=8, nprobe=8, n_jobs=3)
    assert [(c.query_id, c.ids.tolist()) for c in a] == [(c.query_id, c.ids.tolist()) for c in b]


def test_run_dedup_flags_planted_copy(corpus):
    idx, base = corpus
    queries = {5000: base[10] + 0.05 * np.random.default_rng(1).standard_normal(32)}
    exact = {i: base[i] for i in range(len(base))}
    run = run_dedup([5000], queries, queries, idx, exact, k=16, nprobe=64)
    assert any(v.flagged and v.neighbor_id == 10 for v in run.verdicts)
    assert len(run.manifests) == 1 and len(run.manifests[0].entries) == 16
    assert run.manifests[0].note == "only 16 scored neighbours available (requested 21)"


def test_review_manifest_none_when_nothing_flagged():
    vs = [DuplicateVerdict(1, 2, 1.5, False)]
    assert review_manifest(vs) is None


def test_verdict_record_roundtrip():
    v = DuplicateVerdict(3, 4, 0.25, True, "duplicate")
    rec = v.to_record()
    assert rec == {"query_id": 3, "neighbor_id": 4, "distance": 0.25, "flagged": True, "label": "duplicate"}
    assert DuplicateVerdict.from_record(rec) == v
    with pytest.raises(InvalidArgumentError):
        DuplicateVerdict.from_record({**rec, "label": "maybe"})


@pytest.mark.parametrize(
    "acc,dups,n,expected",
    [(0.842, 150, 50000, 0.839), (0.892, 10, 5794, 0.890), (0.580, 151, 36500, 0.576)],
)
def test_lower_bound_table(acc, dups, n, expected):
    assert abs(lower_bound_accuracy(acc, dups, n) - expected) < 0.0005


def test_lower_bound_edges():
    assert lower_bound_accuracy(0.9, 0, 10) == 0.9
    with pytest.warns(UserWarning):
        assert lower_bound_accuracy(0.1, 5, 10) == 0.0
    with pytest.raises(InvalidArgumentError):
        lower_bound_accuracy(0.5, 1, 0)
    with pytest.raises(InvalidArgumentError):
        lower_bound_accuracy(0.5, 11, 10)


def test_summary_percentages():
    vs = [DuplicateVerdict(q, 0, 0.1, True, "duplicate") for q in range(150)]
    s = summarize(vs, 50000, 0.842)
    assert s["duplicate_percent"] == "0.30%"
    assert s["lower_bound_accuracy"] == "83.9%"
