"""Two-stage near-duplicate detection between a query set and an indexed corpus.

Stage one retrieves approximate candidates from the compressed index; stage
two re-ranks them with exact squared distances between L2-normalized
uncompressed descriptors and flags pairs under a threshold. Queries with at
least one flagged pair get a review manifest of their nearest neighbours for
human annotation.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .errors import InvalidArgumentError
from .ivf import IVFPQIndex

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 0.6
LABELS = ("duplicate", "distinct", "unreviewed")


@dataclass
class CandidateSet:
    query_id: int
    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class QueryError:
    query_id: int
    reason: str


@dataclass
class DuplicateVerdict:
    query_id: int
    neighbor_id: int
    distance: float
    flagged: bool
    label: str = "unreviewed"
    reason: str | None = None

    def to_record(self) -> dict:
        rec = asdict(self)
        if rec["reason"] is None:
            del rec["reason"]
        if isinstance(rec["distance"], float) and math.isnan(rec["distance"]):
            rec["distance"] = None
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "DuplicateVerdict":
        label = rec.get("label", "unreviewed")
        if label not in LABELS:
            raise InvalidArgumentError(f"unknown label {label!r} for query {rec.get('query_id')}")
        dist = rec.get("distance")
        return cls(
            query_id=int(rec["query_id"]),
            neighbor_id=int(rec["neighbor_id"]),
            distance=float("nan") if dist is None else float(dist),
            flagged=bool(rec["flagged"]),
            label=label,
            reason=rec.get("reason"),
        )


@dataclass
class ReviewManifest:
    query_id: int
    entries: list[DuplicateVerdict]
    requested: int
    note: str | None = None

    def records(self) -> list[dict]:
        return [v.to_record() for v in self.entries]


def _search_one(index, qid, vec, k, nprobe):
    exclude_self = qid in index._ids
    res = index.search(vec, k + 1 if exclude_self else k, nprobe)
    keep = res.ids != np.uint64(qid)
    return CandidateSet(qid, res.ids[keep][:k], res.distances[keep][:k])


def stage1(
    query_ids: Sequence[int],
    query_store: Mapping,
    index: IVFPQIndex,
    k: int = 128,
    nprobe: int = 256,
    n_jobs: int = 1,
) -> tuple[list[CandidateSet], list[QueryError]]:
    """Approximate candidates for every query, self-matches removed.

    ``query_store`` maps query id to its storage-space descriptor. Queries with
    no descriptor produce a :class:`QueryError` and the batch continues.
    """
    found, errors = [], []
    for qid in query_ids:
        vec = query_store.get(qid) if hasattr(query_store, "get") else None
        if vec is None:
            errors.append(QueryError(int(qid), "missing query descriptor"))
        else:
            found.append((int(qid), vec))
    if index.ntotal_ == 0:
        empty = [CandidateSet(q, np.empty(0, np.uint64), np.empty(0)) for q, _ in found]
        return empty, errors
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_search_one)(index, q, v, k, nprobe) for q, v in found
    )
    return list(results), errors


def exact_sq_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InvalidArgumentError("cannot normalize an all-zero descriptor")
    diff = a / na - b / nb
    return float(diff @ diff)


def stage2(
    query_id: int,
    query_exact,
    candidates: CandidateSet,
    exact_store: Mapping,
    threshold: float = DEFAULT_THRESHOLD,
) -> list[DuplicateVerdict]:
    """Exact re-rank of one query's candidates.

    Distances are squared Euclidean between unit-normalized uncompressed
    descriptors, so ``threshold=0.6`` corresponds to cosine similarity >= 0.7.
    Verdicts come back sorted by (distance, neighbor id); unscorable
    candidates are appended last with a reason.
    """
    scored, missing = [], []
    for nid in candidates.ids.tolist():
        vec = exact_store.get(nid) if query_exact is not None else None
        if query_exact is None:
            missing.append(DuplicateVerdict(query_id, nid, float("nan"), False, reason="missing exact descriptor for query"))
        elif vec is None:
            missing.append(DuplicateVerdict(query_id, nid, float("nan"), False, reason=f"missing exact descriptor for {nid}"))
        else:
            d = exact_sq_distance(query_exact, vec)
            scored.append(DuplicateVerdict(query_id, nid, d, d <= threshold))
    scored.sort(key=lambda v: (v.distance, v.neighbor_id))
    return scored + missing


def review_manifest(verdicts: Sequence[DuplicateVerdict], n: int = 21) -> ReviewManifest | None:
    """Nearest ``n`` scored neighbours for annotation, or ``None`` if nothing was flagged."""
    if not any(v.flagged for v in verdicts):
        return None
    scored = sorted((v for v in verdicts if v.reason is None), key=lambda v: (v.distance, v.neighbor_id))
    entries = scored[:n]
    note = None
    if len(entries) < n:
        note = f"only {len(entries)} scored neighbours available (requested {n})"
    return ReviewManifest(verdicts[0].query_id, entries, n, note)


def lower_bound_accuracy(measured_acc: float, dup_count: int, test_size: int) -> float:
    """Accuracy if every test image with a training-set duplicate were misclassified."""
    if test_size <= 0:
        raise InvalidArgumentError(f"test_size must be positive, got {test_size}")
    if not 0 <= dup_count <= test_size:
        raise InvalidArgumentError(f"dup_count={dup_count} must be within [0, test_size={test_size}]")
    if not 0.0 <= measured_acc <= 1.0:
        raise InvalidArgumentError(f"measured_acc={measured_acc} must be a fraction in [0, 1]")
    bound = measured_acc - dup_count / test_size
    if bound < 0:
        warnings.warn(
            f"{dup_count} duplicates exceed the {measured_acc * test_size:.0f} correct predictions; clamping at 0",
            stacklevel=2,
        )
        return 0.0
    return bound


def format_percent(fraction: float, digits: int = 1) -> str:
    return f"{100.0 * fraction:.{digits}f}%"


@dataclass
class DedupRun:
    candidates: list[CandidateSet]
    verdicts: list[DuplicateVerdict]
    manifests: list[ReviewManifest]
    errors: list[QueryError] = field(default_factory=list)


def run_dedup(
    query_ids: Sequence[int],
    query_store: Mapping,
    query_exact: Mapping,
    index: IVFPQIndex,
    exact_store: Mapping,
    k: int = 128,
    nprobe: int = 256,
    threshold: float = DEFAULT_THRESHOLD,
    manifest_size: int = 21,
    n_jobs: int = 1,
) -> DedupRun:
    """Both stages plus manifests, ordered by query id."""
    ordered = sorted(int(q) for q in query_ids)
    cand_sets, errors = stage1(ordered, query_store, index, k, nprobe, n_jobs)
    verdicts, manifests = [], []
    for cs in cand_sets:
        vs = stage2(cs.query_id, query_exact.get(cs.query_id), cs, exact_store, threshold)
        verdicts.extend(vs)
        man = review_manifest(vs, manifest_size) if vs else None
        if man is not None:
            manifests.append(man)
    logger.info("dedup: %d queries, %d flagged for review", len(cand_sets), len(manifests))
    return DedupRun(cand_sets, verdicts, manifests, errors)


def summarize(verdicts: Sequence[DuplicateVerdict], test_size: int, measured_acc: float | None = None) -> dict:
    """Duplicate statistics from annotated verdicts.

    A query counts as a duplicate when any of its neighbours carries the
    ``duplicate`` label.
    """
    flagged_queries = sorted({v.query_id for v in verdicts if v.flagged})
    dup_queries = sorted({v.query_id for v in verdicts if v.label == "duplicate"})
    unreviewed = sum(1 for v in verdicts if v.flagged and v.label == "unreviewed")
    out = {
        "test_size": int(test_size),
        "flagged_queries": len(flagged_queries),
        "duplicate_queries": len(dup_queries),
        "duplicate_percent": format_percent(len(dup_queries) / test_size, 2),
        "unreviewed_flagged_pairs": unreviewed,
    }
    if measured_acc is not None:
        lb = lower_bound_accuracy(measured_acc, len(dup_queries), test_size)
        out["measured_accuracy"] = format_percent(measured_acc)
        out["lower_bound_accuracy"] = format_percent(lb)
        out["lower_bound_fraction"] = lb
    return out
