
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wildset.errors import CorruptIndexError, DuplicateIdError, InvalidArgumentError
from wildset.ivf import IVFPQIndex, bounded_heap_topk


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(50)
    X = rng.standard_normal((3000, 32))
    idx = IVFPQIndex(
        n_components=16, coarse_bits=3, n_subquantizers=4, n_bits=5, opq_alternations=2, nprobe=8, k=10
    ).fit(X)
    idx.add(X, np.arange(3000) * 3)
    return idx, X


def adc_oracle(idx, z, k):
    """Score every stored entry with its own residual table, then sort everything."""
    rows = []
    for cell, ids, codes in idx.entries():
        table = idx.residual_pq_.adc_table(z - idx.cell_centroids([cell])[0])
        d = table[np.arange(codes.shape[1]), codes].sum(1)
        rows.extend(zip(d.tolist(), ids.tolist()))
    rows.sort()
    return rows[:k]


def test_probe_cells_matches_full_enumeration(toy):
    idx, X = toy
    for z in idx.preprocess(X[:20]):
        cells, scores = idx.probe_cells(z, nprobe=idx.n_cells)
        a, b = np.divmod(np.arange(idx.n_cells), 1 << idx.coarse_bits)
        books = idx.coarse_.codebooks_
        full = ((books[0][a] - z[:8]) ** 2).sum(1) + ((books[1][b] - z[8:]) ** 2).sum(1)
        order = np.lexsort((np.arange(idx.n_cells), full))
        np.testing.assert_allclose(scores, full[order], atol=1e-12)
        # equal scores may swap, so compare as sorted score/cell pairs up to rounding
        assert sorted(cells.tolist()) == list(range(idx.n_cells))
        short, _ = idx.probe_cells(z, nprobe=5)
        np.testing.assert_allclose(full[short], full[order][:5], atol=1e-12)


def test_probe_nonempty_skips_empty_cells(toy):
    idx, X = toy
    z = idx.preprocess(X[:1])[0]
    cells, _ = idx.probe_cells(z, nprobe=6, nonempty_only=True)
    assert len(cells) == 6 and all(idx.list_length(c) > 0 for c in cells)


def test_probe_clamps_large_nprobe(toy):
    idx, X = toy
    with pytest.warns(UserWarning, match="clamping"):
        cells, _ = idx.probe_cells(idx.preprocess(X[:1])[0], nprobe=10**6)
    assert len(cells) == idx.n_cells


def test_full_probe_search_equals_linear_scan(toy):
    idx, X = toy
    Q = np.random.default_rng(51).standard_normal((15, 32))
    for q in Q:
        res = idx.search(q, k=25, nprobe=idx.n_cells)
        oracle = adc_oracle(idx, idx.preprocess(q)[0], 25)
        assert res.ids.tolist() == [i for _, i in oracle]
        np.testing.assert_allclose(res.distances, [d for d, _ in oracle], atol=1e-12)


def test_adc_distance_equals_reconstruction_distance(toy):
    idx, X = toy
    z = idx.preprocess(X[7])[0]
    res = idx.search(X[7], k=10, nprobe=idx.n_cells)
    by_id = {}
    for cell, ids, codes in idx.entries():
        for i, c in zip(ids.tolist(), codes):
            by_id[i] = (cell, c)
    for i, d in res.pairs():
        cell, code = by_id[i]
        recon = idx.reconstruct([cell], code[None])[0]
        assert d == pytest.approx(((z - recon) ** 2).sum(), abs=1e-9)


def test_search_finds_itself_first(toy):
    idx, X = toy
    hits = sum(idx.search(X[i], k=1, nprobe=16).ids[0] == 3 * i for i in range(30))
    assert hits >= 25


def test_more_probes_never_lose_the_true_best(toy):
    idx, X = toy
    q = X[100] + 0.01
    prev = np.inf
    for nprobe in (1, 2, 4, 8, 16, 64):
        d = idx.search(q, k=1, nprobe=nprobe).distances[0]
        assert d <= prev + 1e-12
        prev = d


def test_kneighbors_pads_short_results(toy):
    idx, X = toy
    small = IVFPQIndex(**{**idx.get_params()}).set_params(k=5)
    small.opq_, small.coarse_, small.residual_pq_ = idx.opq_, idx.coarse_, idx.residual_pq_
    small.n_features_in_ = idx.n_features_in_
    small.reset().add(X[:3], [1, 2, 3])
    dist, ind = small.kneighbors(X[:2], n_neighbors=5, nprobe=small.n_cells)
    assert (ind[:, 3:] == -1).all() and np.isinf(dist[:, 3:]).all()


def test_duplicate_ids_rejected(toy):
    idx, X = toy
    with pytest.raises(DuplicateIdError):
        idx.add(X[:1], [0])


def test_fit_validates_coarse_bits():
    with pytest.raises(InvalidArgumentError):
        IVFPQIndex(coarse_bits=17).fit(np.zeros((10, 4)))


def test_persistence_roundtrip(toy, tmp_path):
    idx, X = toy
    raw = idx.to_bytes()
    assert raw[:4] == b"WSI1"
    back = IVFPQIndex.from_bytes(raw)
    assert back.to_bytes() == raw
    q = X[42]
    assert back.search(q).pairs() == idx.search(q).pairs()
    path = tmp_path / "i.idx"
    idx.save(path)
    assert IVFPQIndex.load(path).ntotal_ == idx.ntotal_
    with pytest.raises(CorruptIndexError):
        IVFPQIndex.from_bytes(raw[:-5])


def test_add_order_does_not_change_results(toy):
    idx, X = toy
    other = IVFPQIndex.from_bytes(idx.to_bytes()).reset()
    perm = np.random.default_rng(52).permutation(3000)
    for chunk in np.array_split(perm, 7):
        other.add(X[chunk], chunk * 3)
    for q in X[:10]:
        assert other.search(q, nprobe=16).pairs() == idx.search(q, nprobe=16).pairs()


@given(
    st.lists(st.floats(0, 10, allow_nan=False).map(lambda v: round(v, 1)), max_size=200),
    st.integers(1, 30),
    st.integers(1, 50),
)
def test_bounded_heap_matches_sort(dists, k, chunk):
    ids = np.arange(len(dists), dtype=np.uint64)[::-1].copy()
    d = np.array(dists, dtype=np.float64)
    chunks = [(ids[i : i + chunk], d[i : i + chunk]) for i in range(0, len(d), chunk)]
    res = bounded_heap_topk(iter(chunks), k)
    oracle = sorted(zip(d.tolist(), ids.tolist()))[:k]
    assert res.pairs() == [(i, dd) for dd, i in oracle]
