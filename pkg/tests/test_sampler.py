import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from wildset.errors import InvalidArgumentError
from wildset.sampler import (
    SoftTargetEncoder,
    TaggedCorpus,
    build_epoch_list,
    expected_length,
    inject_noise,
    make_plan,
    make_target,
    read_epoch_list,
    replication_counts,
    replication_factor,
    resample,
    select_threshold,
    tag_frequencies,
)


def small_corpus():
    recs = [
        {"image_id": 10, "tags": ["a"]},
        {"image_id": 11, "tags": ["a", "b"]},
        {"image_id": 12, "tags": ["a"]},
        {"image_id": 13, "tags": ["a", "c"]},
        {"image_id": 14, "tags": []},
    ]
    return TaggedCorpus.from_records(recs)


def test_replication_factor_modes():
    assert replication_factor(1000, 10, "uniform") == 1.0
    assert replication_factor(10, 1000, "uniform") == 100.0
    assert replication_factor(10, 1000, "sqrt") == 10.0
    assert replication_factor(10, 1000, "natural") == 1.0
    with pytest.raises(InvalidArgumentError):
        replication_factor(0, 5, "uniform")
    with pytest.raises(InvalidArgumentError):
        replication_factor(5, 5, "linear")


def test_corpus_drops_untagged_images():
    c = small_corpus()
    assert len(c) == 4 and c.n_dropped == 1
    assert c.tag_counts().tolist() == [4, 1, 1]


def test_plan_image_factor_is_max_over_tags():
    c = small_corpus()
    plan = make_plan(c, 4.0, "uniform")
    assert plan.tag_factor.tolist() == [1.0, 4.0, 4.0]
    assert plan.image_factor.tolist() == [1.0, 4.0, 1.0, 4.0]
    assert plan.expected_length == 10.0


def test_threshold_search_hits_target():
    c = small_corpus()
    t = select_threshold(c, 10.0, "uniform")
    assert expected_length(c, t, "uniform") == pytest.approx(10.0, rel=1e-8)
    assert select_threshold(c, 4, "uniform") == 1.0
    with pytest.raises(InvalidArgumentError):
        select_threshold(c, 3, "uniform")
    with pytest.raises(InvalidArgumentError):
        select_threshold(c, 8, "natural")


@given(st.lists(st.integers(1, 400), min_size=1, max_size=30), st.floats(1, 5))
def test_threshold_matches_scan_oracle(freq_per_image, ratio):
    # each image carries one private tag repeated freq times via shared tags
    recs, iid = [], 0
    for j, f in enumerate(freq_per_image):
        for _ in range(f):
            recs.append({"image_id": iid, "tags": [f"h{j}"]})
            iid += 1
    c = TaggedCorpus.from_records(recs)
    target = ratio * len(c)
    t = select_threshold(c, target, "sqrt")
    # scan oracle: length(t) = sum_j f_j * max(1, sqrt(t / f_j))
    f = np.array(freq_per_image, dtype=float)
    assert (f * np.maximum(1, np.sqrt(t / f))).sum() == pytest.approx(target, rel=1e-6)


def test_replication_counts_keep_expectations():
    c = small_corpus()
    plan = make_plan(c, 2.5, "uniform")
    runs = [replication_counts(c, plan, s) for s in range(4000)]
    copies = np.mean([r[0] for r in runs], axis=0)
    np.testing.assert_allclose(copies, plan.image_factor, atol=0.06)
    for cp, ret in runs[:200]:
        assert np.all(ret <= cp[c.entry_image])


def test_epoch_list_structure(tmp_path):
    c = small_corpus()
    plan = make_plan(c, 3.0, "uniform")
    ep = build_epoch_list(c, plan, seed=5)
    copies, retained = replication_counts(c, plan, 5)
    assert len(ep) == copies.sum()
    assert sorted(ep.image_ids.tolist()) == sorted(np.repeat(c.image_ids, copies).tolist())
    totals = ep.tag_totals()
    np.testing.assert_array_equal(totals, np.bincount(c.tag_index, weights=retained, minlength=3))
    for i in range(len(ep)):
        assert ep.copy_tags(i)  # argmax tag kept on every copy
    ep.write(tmp_path / "e.ids", tmp_path / "e.masks")
    ids, masks = read_epoch_list(tmp_path / "e.ids", tmp_path / "e.masks")
    np.testing.assert_array_equal(ids, ep.image_ids.astype(np.uint64))
    np.testing.assert_array_equal(masks, ep.masks)


def test_resample_is_deterministic_and_seed_dependent():
    c = small_corpus()
    _, a = resample(c, "uniform", 12, seed=1)
    _, b = resample(c, "uniform", 12, seed=1)
    np.testing.assert_array_equal(a.rows, b.rows)
    np.testing.assert_array_equal(a.masks, b.masks)
    outs = {tuple(resample(c, "uniform", 12, seed=s)[1].rows.tolist()) for s in range(10)}
    assert len(outs) > 1


def test_make_target_examples():
    vocab = ["a", "b", "c", "d"]
    tv = make_target(["b", "d", "zzz", "b"], vocab)
    assert tv.indices.tolist() == [1, 3] and tv.values.tolist() == [0.5, 0.5]
    assert make_target(["zzz"], vocab) is None


def test_soft_target_encoder():
    enc = SoftTargetEncoder().fit([["x", "y"], ["z"]])
    M = enc.transform([["x", "y", "x"], ["q"], ["z"]])
    assert sp.issparse(M) and M.shape == (3, 3)
    np.testing.assert_allclose(M.sum(axis=1).A.ravel(), [1, 0, 1])
    assert enc.get_feature_names_out().tolist() == ["x", "y", "z"]


def test_noise_exact_count_and_no_self_replacement():
    lists = [["a", "b"], ["a"], ["c", "a", "b"]] * 50
    freqs = tag_frequencies(lists)
    noised, rep = inject_noise(lists, 0.25, freqs, seed=3)
    assert rep.replaced == round(0.25 * 300) == 75
    assert all(o != r for o, r in zip(rep.originals, rep.replacements))
    changed = sum(a != b for x, y in zip(lists, noised) for a, b in zip(x, y))
    assert changed == 75


def test_noise_rounding_half_up_and_errors():
    lists = [["a"], ["b"]]
    _, rep = inject_noise(lists, 0.25, {"a": 1, "b": 1}, seed=0)
    assert rep.replaced == 1  # 0.5 rounds up
    with pytest.raises(InvalidArgumentError):
        inject_noise(lists, 1.5, {"a": 1, "b": 1}, seed=0)
    with pytest.raises(InvalidArgumentError):
        inject_noise(lists, 0.1, {"a": 3}, seed=0)
