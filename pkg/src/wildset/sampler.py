"""Zipfian resampling, soft multi-label targets and label-noise injection.

Resampling replicates images so that rare hashtags are seen more often.
Each hashtag gets a factor ``r(h) = max(1, phi(t / f(h)))`` with ``phi`` the
identity (uniform) or square root (sqrt); an image is copied ``max_h r(h)``
times and each of its tags is kept on only ``r(h)`` of those copies.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

MODES = ("natural", "uniform", "sqrt")
MAX_TAGS_PER_IMAGE = 64

# stream labels for independent random draws within one seed
_ROUNDING, _SUBSET, _SHUFFLE = 1, 2, 3


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


def _check_mode(mode: str) -> None:
    if mode not in MODES:
        raise InvalidArgumentError(f"mode must be one of {MODES}, got {mode!r}")


def replication_factor(f, t: float, mode: str):
    """``max(1, phi(t / f))``; works elementwise on arrays."""
    _check_mode(mode)
    f_arr = np.asarray(f, dtype=np.float64)
    if np.any(f_arr < 1):
        raise InvalidArgumentError("hashtag frequencies must be >= 1")
    if not t > 0:
        raise InvalidArgumentError(f"threshold t must be positive, got {t}")
    if mode == "natural":
        r = np.ones_like(f_arr)
    elif mode == "uniform":
        r = np.maximum(1.0, t / f_arr)
    else:
        r = np.maximum(1.0, np.sqrt(t / f_arr))
    return float(r) if np.ndim(f) == 0 else r


@dataclass
class TaggedCorpus:
    """Images with their hashtag sets in compressed sparse row layout.

    Tags of image ``i`` are ``vocab[tag_index[indptr[i]:indptr[i + 1]]]`` in
    record order (duplicates removed).
    """

    image_ids: np.ndarray
    indptr: np.ndarray
    tag_index: np.ndarray
    vocab: list[str]
    n_dropped: int = 0

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "TaggedCorpus":
        vocab_index: dict[str, int] = {}
        ids, indptr, tags = [], [0], []
        dropped = 0
        for rec in records:
            seen = []
            for t in rec.get("tags", []):
                if t not in seen:
                    seen.append(t)
            if not seen:
                dropped += 1
                continue
            if len(seen) > MAX_TAGS_PER_IMAGE:
                raise InvalidArgumentError(
                    f"image {rec.get('image_id')} has {len(seen)} tags; at most {MAX_TAGS_PER_IMAGE} supported"
                )
            ids.append(int(rec["image_id"]))
            for t in seen:
                tags.append(vocab_index.setdefault(t, len(vocab_index)))
            indptr.append(len(tags))
        return cls(
            np.array(ids, dtype=np.int64),
            np.array(indptr, dtype=np.int64),
            np.array(tags, dtype=np.int64),
            list(vocab_index),
            dropped,
        )

    @classmethod
    def from_arrays(cls, image_ids, indptr, tag_index, vocab) -> "TaggedCorpus":
        return cls(
            np.asarray(image_ids, dtype=np.int64),
            np.asarray(indptr, dtype=np.int64),
            np.asarray(tag_index, dtype=np.int64),
            list(vocab),
        )

    def __len__(self) -> int:
        return len(self.image_ids)

    @property
    def tags_per_image(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def entry_image(self) -> np.ndarray:
        """Image row of every (image, tag) entry."""
        return np.repeat(np.arange(len(self)), self.tags_per_image)

    def tag_counts(self) -> np.ndarray:
        """``f(h)``: number of images carrying each vocabulary tag."""
        return np.bincount(self.tag_index, minlength=len(self.vocab))

    def tags_of(self, row: int) -> list[str]:
        return [self.vocab[j] for j in self.tag_index[self.indptr[row] : self.indptr[row + 1]]]

    def to_records(self) -> list[dict]:
        return [{"image_id": int(self.image_ids[i]), "tags": self.tags_of(i)} for i in range(len(self))]


@dataclass
class ReplicationPlan:
    mode: str
    threshold: float
    tag_factor: np.ndarray  # r(h) per vocabulary entry
    image_factor: np.ndarray  # r(I) per image
    entry_factor: np.ndarray  # r(h) per (image, tag) entry

    @property
    def expected_length(self) -> float:
        return float(self.image_factor.sum())


def make_plan(corpus: TaggedCorpus, threshold: float, mode: str, freqs=None) -> ReplicationPlan:
    """Replication factors for a corpus; ``freqs`` defaults to the corpus tag counts."""
    f = corpus.tag_counts() if freqs is None else np.asarray(freqs)
    if len(corpus) == 0:
        raise InvalidArgumentError("empty corpus")
    used = np.unique(corpus.tag_index)
    r_tag = np.ones(len(corpus.vocab))
    r_tag[used] = replication_factor(f[used], threshold, mode)
    r_entry = r_tag[corpus.tag_index]
    r_image = np.maximum.reduceat(r_entry, corpus.indptr[:-1])
    return ReplicationPlan(mode, float(threshold), r_tag, r_image, r_entry)


def _min_freq_per_image(corpus: TaggedCorpus, f) -> np.ndarray:
    # r(I) is decreasing in the rarest tag's frequency, so only that tag matters
    return np.minimum.reduceat(np.asarray(f, dtype=np.float64)[corpus.tag_index], corpus.indptr[:-1])


def expected_length(corpus: TaggedCorpus, threshold: float, mode: str, freqs=None) -> float:
    """``sum_I r(I)``; non-decreasing in ``threshold``."""
    f = corpus.tag_counts() if freqs is None else np.asarray(freqs)
    return float(replication_factor(_min_freq_per_image(corpus, f), threshold, mode).sum())


def select_threshold(
    corpus: TaggedCorpus,
    target_length: float,
    mode: str,
    freqs=None,
    rtol: float = 1e-9,
    max_iter: int = 200,
) -> float:
    """Threshold whose expected list length equals ``target_length``.

    Found by bisection on the monotone length curve. With
    ``target_length == len(corpus)`` the result is the smallest tag frequency,
    at which every factor is still 1.
    """
    _check_mode(mode)
    n = len(corpus)
    if n == 0:
        raise InvalidArgumentError("empty corpus")
    if target_length < n:
        raise InvalidArgumentError(f"target_length={target_length} is below the {n} unique images")
    f = corpus.tag_counts() if freqs is None else np.asarray(freqs)
    fmin = _min_freq_per_image(corpus, f)
    lo = float(fmin.min())
    if mode == "natural":
        if abs(target_length - n) > 0.01 * target_length:
            raise InvalidArgumentError("natural sampling keeps every image once; target_length must equal the corpus size")
        return lo

    def length(t):
        return float(replication_factor(fmin, t, mode).sum())

    if length(lo) >= target_length:
        return lo
    hi = lo * 2.0
    while length(hi) < target_length:
        hi *= 2.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if length(mid) < target_length:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * hi:
            break
    return hi


def replication_counts(corpus: TaggedCorpus, plan: ReplicationPlan, seed: int):
    """Stochastically rounded copy counts.

    Returns ``(copies, retained)``: copies per image and, per (image, tag)
    entry, the number of copies keeping that tag. One uniform draw per image
    is shared by all of its rounding decisions, so ``retained <= copies``
    always holds while every count keeps its expectation. The image's
    highest-factor tag is kept on every copy.
    """
    u = _rng(seed, _ROUNDING).random(len(corpus))
    r_img = plan.image_factor
    copies = np.floor(r_img).astype(np.int64) + (u < r_img - np.floor(r_img))
    r_e = plan.entry_factor
    u_e = u[corpus.entry_image]
    retained = np.floor(r_e).astype(np.int64) + (u_e < r_e - np.floor(r_e))
    copies_e = copies[corpus.entry_image]
    retained = np.minimum(retained, copies_e)
    is_max = r_e == r_img[corpus.entry_image]
    retained[is_max] = copies_e[is_max]
    return copies, retained


@dataclass
class EpochList:
    """Materialized training list: one row per copy, shuffled.

    ``masks[i]`` has bit ``j`` set when the copy keeps the ``j``-th tag of its
    image (record order).
    """

    rows: np.ndarray  # corpus row per copy
    masks: np.ndarray  # uint64 tag mask per copy
    corpus: TaggedCorpus

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def image_ids(self) -> np.ndarray:
        return self.corpus.image_ids[self.rows]

    def copy_tags(self, i: int) -> list[str]:
        tags = self.corpus.tags_of(int(self.rows[i]))
        m = int(self.masks[i])
        return [t for j, t in enumerate(tags) if m >> j & 1]

    def tag_totals(self) -> np.ndarray:
        c = self.corpus
        starts = c.indptr[self.rows]
        counts = c.tags_per_image[self.rows]
        totals = np.zeros(len(c.vocab), dtype=np.int64)
        for j in range(int(counts.max(initial=0))):
            sel = (counts > j) & ((self.masks >> np.uint64(j)) & np.uint64(1)).astype(bool)
            np.add.at(totals, c.tag_index[starts[sel] + j], 1)
        return totals

    def write(self, ids_path, masks_path) -> None:
        Path(ids_path).write_bytes(self.image_ids.astype("<u8").tobytes())
        Path(masks_path).write_bytes(self.masks.astype("<u8").tobytes())

    def records(self) -> list[dict]:
        return [{"image_id": int(self.image_ids[i]), "tags": self.copy_tags(i)} for i in range(len(self))]


def read_epoch_list(ids_path, masks_path) -> tuple[np.ndarray, np.ndarray]:
    ids = np.frombuffer(Path(ids_path).read_bytes(), dtype="<u8")
    masks = np.frombuffer(Path(masks_path).read_bytes(), dtype="<u8")
    if len(ids) != len(masks):
        raise InvalidArgumentError("epoch id stream and mask sidecar lengths differ")
    return ids, masks


def build_epoch_list(corpus: TaggedCorpus, plan: ReplicationPlan, seed: int) -> EpochList:
    """Replicate, trim tags per copy, and shuffle."""
    copies, retained = replication_counts(corpus, plan, seed)
    n_entries = len(corpus.tag_index)
    entry_img = corpus.entry_image
    entry_pos = np.arange(n_entries) - corpus.indptr[entry_img]

    copy_start = np.concatenate([[0], np.cumsum(copies)])
    total = int(copy_start[-1])
    rows = np.repeat(np.arange(len(corpus)), copies)

    # (entry, copy) pairs; each entry keeps a uniformly random subset of its image's copies
    pair_counts = copies[entry_img]
    pair_entry = np.repeat(np.arange(n_entries), pair_counts)
    pair_offset = np.arange(len(pair_entry)) - np.repeat(np.cumsum(pair_counts) - pair_counts, pair_counts)
    keys = _rng(seed, _SUBSET).random(len(pair_entry))
    order = np.lexsort((keys, pair_entry))
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order)) - np.repeat(np.cumsum(pair_counts) - pair_counts, pair_counts)
    keep = rank < retained[pair_entry]
    copy_of_pair = copy_start[entry_img[pair_entry]] + pair_offset
    masks = np.zeros(total, dtype=np.uint64)
    np.bitwise_or.at(masks, copy_of_pair[keep], np.left_shift(np.uint64(1), entry_pos[pair_entry[keep]].astype(np.uint64)))

    perm = _rng(seed, _SHUFFLE).permutation(total)
    return EpochList(rows[perm], masks[perm], corpus)


def resample(corpus: TaggedCorpus, mode: str, target_length: float, seed: int) -> tuple[ReplicationPlan, EpochList]:
    t = select_threshold(corpus, target_length, mode)
    plan = make_plan(corpus, t, mode)
    return plan, build_epoch_list(corpus, plan, seed)


# ---------------------------------------------------------------------------
# Soft targets
# ---------------------------------------------------------------------------


@dataclass
class TargetVector:
    indices: np.ndarray
    values: np.ndarray

    def dense(self, size: int) -> np.ndarray:
        out = np.zeros(size)
        out[self.indices] = self.values
        return out


def make_target(tags: Iterable[str], vocab: Mapping[str, int] | Sequence[str]) -> TargetVector | None:
    """Uniform ``1/k`` mass over the ``k`` distinct in-vocabulary tags.

    Returns ``None`` when no tag is in the vocabulary (the record is dropped).
    """
    index = vocab if isinstance(vocab, Mapping) else {t: i for i, t in enumerate(vocab)}
    hits = sorted({index[t] for t in tags if t in index})
    if not hits:
        return None
    k = len(hits)
    return TargetVector(np.array(hits, dtype=np.int64), np.full(k, 1.0 / k))


class SoftTargetEncoder(TransformerMixin, BaseEstimator):
    """Encode tag lists as rows of a sparse ``1/k`` target matrix.

    If ``vocabulary`` is not given it is learned in ``fit`` as the sorted set
    of observed tags. Records with no in-vocabulary tag become all-zero rows.
    """

    def __init__(self, vocabulary=None):
        self.vocabulary = vocabulary

    def fit(self, X, y=None):
        vocab = sorted({t for tags in X for t in tags}) if self.vocabulary is None else list(self.vocabulary)
        self.vocabulary_ = {t: i for i, t in enumerate(vocab)}
        return self

    def transform(self, X):
        check_is_fitted(self, "vocabulary_")
        indptr, indices, data = [0], [], []
        for tags in X:
            tv = make_target(tags, self.vocabulary_)
            if tv is not None:
                indices.extend(tv.indices.tolist())
                data.extend(tv.values.tolist())
            indptr.append(len(indices))
        return sp.csr_matrix((data, indices, indptr), shape=(len(indptr) - 1, len(self.vocabulary_)))

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "vocabulary_")
        return np.array(sorted(self.vocabulary_, key=self.vocabulary_.get), dtype=object)


# ---------------------------------------------------------------------------
# Label noise
# ---------------------------------------------------------------------------


@dataclass
class NoiseReport:
    total_occurrences: int
    replaced: int
    positions: np.ndarray
    originals: list[str]
    replacements: list[str]


def tag_frequencies(tag_lists: Iterable[Iterable[str]]) -> Counter:
    c: Counter = Counter()
    for tags in tag_lists:
        c.update(tags)
    return c


def inject_noise(
    tag_lists: Sequence[Sequence[str]],
    p: float,
    freqs: Mapping[str, int],
    seed: int,
) -> tuple[list[list[str]], NoiseReport]:
    """Replace ``round(p * N)`` of the ``N`` tag occurrences with sampled tags.

    Positions are chosen without replacement. Each replacement is drawn from
    the frequency-weighted marginal over ``freqs`` with the replaced tag
    excluded, so it always differs from the original.
    """
    if not 0.0 <= p <= 1.0:
        raise InvalidArgumentError(f"p must be in [0, 1], got {p}")
    vocab = sorted(t for t, c in freqs.items() if c > 0)
    if len(vocab) < 2:
        raise InvalidArgumentError("need at least two tags with positive frequency to exclude the replaced tag")
    weights = np.array([int(freqs[t]) for t in vocab], dtype=np.int64)
    cum = np.cumsum(weights)
    starts = cum - weights
    index = {t: i for i, t in enumerate(vocab)}

    flat = [t for tags in tag_lists for t in tags]
    N = len(flat)
    n_rep = int(math.floor(p * N + 0.5))
    rng = np.random.default_rng(seed)
    positions = np.sort(rng.choice(N, size=n_rep, replace=False)) if n_rep else np.empty(0, dtype=np.int64)

    orig_idx = np.array([index.get(flat[i], -1) for i in positions.tolist()], dtype=np.int64)
    known = orig_idx >= 0
    w_excl = np.where(known, weights[np.maximum(orig_idx, 0)], 0)
    s_excl = np.where(known, starts[np.maximum(orig_idx, 0)], 0)
    # exact integer draw over the total mass minus the excluded tag's share
    x = rng.integers(0, cum[-1] - w_excl) if n_rep else np.empty(0, dtype=np.int64)
    x = np.where(known & (x >= s_excl), x + w_excl, x)
    new_idx = np.searchsorted(cum, x, side="right")

    out_flat = list(flat)
    originals, replacements = [], []
    for pos, j in zip(positions.tolist(), new_idx.tolist()):
        originals.append(out_flat[pos])
        out_flat[pos] = vocab[j]
        replacements.append(vocab[j])
    out, k = [], 0
    for tags in tag_lists:
        out.append(out_flat[k : k + len(tags)])
        k += len(tags)
    logger.info("noise: replaced %d of %d tag occurrences", n_rep, N)
    return out, NoiseReport(N, n_rep, positions, originals, replacements)
