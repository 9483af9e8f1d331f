"""Vector quantization: k-means, product quantization and OPQ rotation training."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import CorruptIndexError, InvalidArgumentError
from .fileio import pack_blob, unpack_blob

logger = logging.getLogger(__name__)

_CHUNK_ELEMS = 1 << 22


class DuplicateCentroidWarning(UserWarning):
    pass


def squared_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Dense ``(n, k)`` squared Euclidean distances, clipped at zero."""
    d2 = (X * X).sum(axis=1)[:, None] - 2.0 * X @ C.T + (C * C).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0, out=d2)


def nearest_centroid(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of the nearest centroid per row (lowest index on ties) and the exact squared distance."""
    n = X.shape[0]
    labels = np.empty(n, dtype=np.int64)
    step = max(1, _CHUNK_ELEMS // max(1, C.shape[0]))
    c_norms = (C * C).sum(axis=1)
    for start in range(0, n, step):
        xs = X[start : start + step]
        scores = c_norms[None, :] - 2.0 * xs @ C.T
        labels[start : start + step] = scores.argmin(axis=1)
    diff = X - C[labels]
    return labels, np.einsum("ij,ij->i", diff, diff)


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    degenerate = False
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            degenerate = True
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers[j] = X[idx]
        np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1), out=d2)
    if degenerate:
        warnings.warn(
            f"fewer distinct training vectors than k={k}; duplicate centroids produced",
            DuplicateCentroidWarning,
            stacklevel=3,
        )
    return centers


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: list[float] = field(default_factory=list)

    @property
    def inertia(self) -> float:
        return self.objective[-1]


def kmeans(X, k: int, max_iter: int = 25, seed=0, tol: float = 1e-6, init=None) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    ``objective`` holds the mean squared quantization error after every
    assignment step; it never increases. Iteration stops at ``max_iter`` or
    when the relative improvement drops below ``tol``. Clusters that go empty
    are re-seeded from the points with the largest current error.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if n < k:
        raise InvalidArgumentError(f"need at least k={k} vectors, got {n}")
    if init is None:
        C = kmeans_plusplus(X, k, np.random.default_rng(seed))
    else:
        C = np.array(init, dtype=np.float64, copy=True)
        if C.shape != (k, X.shape[1]):
            raise InvalidArgumentError(f"init centroids must have shape {(k, X.shape[1])}, got {C.shape}")

    labels, d2 = nearest_centroid(X, C)
    trace = [float(d2.mean())]
    for _ in range(max_iter):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        C_new = C.copy()
        filled = counts > 0
        C_new[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            worst = np.argsort(-d2, kind="stable")[: empty.size]
            C_new[empty] = X[worst]
        new_labels, new_d2 = nearest_centroid(X, C_new)
        obj = float(new_d2.mean())
        if obj > trace[-1]:
            # rounding noise at convergence; keep the previous state
            break
        C, labels, d2 = C_new, new_labels, new_d2
        trace.append(obj)
        if trace[-2] - obj <= tol * trace[-2]:
            break
    return KMeansResult(C, labels, trace)


def _code_dtype(n_bits: int):
    return np.uint8 if n_bits <= 8 else np.uint16 if n_bits <= 16 else np.uint32


def pack_codes(codes, n_bits: int) -> np.ndarray:
    """Bit-pack ``(n, m)`` codes, least-significant bit first, into ``(n, ceil(m * n_bits / 8))`` bytes."""
    codes = np.asarray(codes, dtype=np.uint64)
    n, m = codes.shape
    if np.any(codes >= (1 << n_bits)):
        raise InvalidArgumentError(f"codes do not fit in {n_bits} bits")
    bits = ((codes[:, :, None] >> np.arange(n_bits, dtype=np.uint64)) & 1).astype(np.uint8)
    return np.packbits(bits.reshape(n, m * n_bits), axis=1, bitorder="little")


def unpack_codes(packed, m: int, n_bits: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    bits = np.unpackbits(packed, axis=1, count=m * n_bits, bitorder="little")
    weights = (1 << np.arange(n_bits, dtype=np.uint64))
    vals = (bits.reshape(packed.shape[0], m, n_bits).astype(np.uint64) * weights).sum(axis=2)
    return vals.astype(_code_dtype(n_bits))


class ProductQuantizer(TransformerMixin, BaseEstimator):
    """Product quantizer with ``n_subquantizers`` independent k-means codebooks.

    ``transform`` encodes to per-subspace centroid indices and
    ``inverse_transform`` decodes by concatenating the chosen centroids.
    With ``canonical_order`` the training set is lexicographically sorted
    first, so the learned codebooks do not depend on input order.
    """

    def __init__(self, n_subquantizers=32, n_bits=8, max_iter=25, random_state=0, canonical_order=True):
        self.n_subquantizers = n_subquantizers
        self.n_bits = n_bits
        self.max_iter = max_iter
        self.random_state = random_state
        self.canonical_order = canonical_order

    @property
    def ksub(self) -> int:
        return 1 << self.n_bits

    def _split(self, X):
        return X.reshape(X.shape[0], self.n_subquantizers, -1)

    def _validate_train(self, X):
        X = check_array(X, dtype=np.float64)
        n, d = X.shape
        m = self.n_subquantizers
        if m < 1 or d % m:
            raise InvalidArgumentError(f"dimension d={d} is not divisible by n_subquantizers m={m}")
        if n < self.ksub:
            raise InvalidArgumentError(f"need at least 2**n_bits={self.ksub} training vectors, got {n}")
        if self.canonical_order:
            X = X[np.lexsort(X.T[::-1])]
        return X

    def fit(self, X, y=None):
        X = self._validate_train(X)
        subs = self._split(X)
        m, K = self.n_subquantizers, self.ksub
        books = np.empty((m, K, subs.shape[2]))
        self.objective_ = []
        for s in range(m):
            res = kmeans(subs[:, s, :], K, self.max_iter, seed=[self.random_state, s])
            books[s] = res.centroids
            self.objective_.append(res.objective)
        self.codebooks_ = books
        self.n_features_in_ = X.shape[1]
        return self

    def refine(self, X, n_iter: int = 1):
        """Continue Lloyd iterations from the current codebooks."""
        check_is_fitted(self, "codebooks_")
        X = check_array(X, dtype=np.float64)
        subs = self._split(X)
        for s in range(self.n_subquantizers):
            res = kmeans(subs[:, s, :], self.ksub, n_iter, init=self.codebooks_[s])
            self.codebooks_[s] = res.centroids
        return self

    def _check_dim(self, X):
        check_is_fitted(self, "codebooks_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidArgumentError(f"expected vectors of dimension {self.n_features_in_}, got {X.shape[1]}")
        return X

    def transform(self, X) -> np.ndarray:
        X = self._check_dim(X)
        subs = self._split(X)
        codes = np.empty((X.shape[0], self.n_subquantizers), dtype=_code_dtype(self.n_bits))
        for s in range(self.n_subquantizers):
            codes[:, s], _ = nearest_centroid(np.ascontiguousarray(subs[:, s, :]), self.codebooks_[s])
        return codes

    encode = transform

    def inverse_transform(self, codes) -> np.ndarray:
        check_is_fitted(self, "codebooks_")
        codes = np.atleast_2d(np.asarray(codes))
        if codes.shape[1] != self.n_subquantizers:
            raise CorruptIndexError(f"expected {self.n_subquantizers} codes per vector, got {codes.shape[1]}")
        if codes.size and (codes.min() < 0 or codes.max() >= self.ksub):
            raise CorruptIndexError(f"code out of range [0, {self.ksub})")
        idx = codes.astype(np.int64)
        parts = self.codebooks_[np.arange(self.n_subquantizers)[None, :], idx]
        return parts.reshape(codes.shape[0], -1)

    decode = inverse_transform

    def adc_table(self, query) -> np.ndarray:
        """``(m, K)`` squared distances between each query sub-vector and every centroid."""
        q = self._check_dim(np.atleast_2d(query))[0]
        qs = q.reshape(self.n_subquantizers, 1, -1)
        return ((self.codebooks_ - qs) ** 2).sum(axis=2)

    def adc_tables(self, queries) -> np.ndarray:
        """Batched :meth:`adc_table` for ``(p, d)`` residual queries -> ``(p, m, K)``."""
        Q = self._check_dim(queries)
        qs = self._split(Q).transpose(1, 0, 2)  # (m, p, dsub)
        cross = np.matmul(qs, self.codebooks_.transpose(0, 2, 1))  # (m, p, K)
        t = (qs**2).sum(axis=2)[:, :, None] - 2.0 * cross + (self.codebooks_**2).sum(axis=2)[:, None, :]
        return np.maximum(t, 0.0).transpose(1, 0, 2)

    @staticmethod
    def adc_lookup(table, codes) -> np.ndarray:
        codes = np.atleast_2d(codes).astype(np.int64)
        return table[np.arange(table.shape[0])[None, :], codes].sum(axis=1)

    def quantization_error(self, X) -> float:
        X = self._check_dim(X)
        return float(((X - self.decode(self.encode(X))) ** 2).sum(axis=1).mean())

    def to_blob(self) -> bytes:
        check_is_fitted(self, "codebooks_")
        return pack_blob("pq", {"codebooks": self.codebooks_, "n_bits": np.uint64(self.n_bits)})

    @classmethod
    def from_blob(cls, raw: bytes) -> "ProductQuantizer":
        _, a = unpack_blob(raw, "pq")
        return cls._from_arrays(a["codebooks"], int(a["n_bits"]))

    @classmethod
    def _from_arrays(cls, codebooks, n_bits) -> "ProductQuantizer":
        m, K, dsub = codebooks.shape
        if K != 1 << n_bits:
            raise CorruptIndexError(f"codebook has {K} centroids but n_bits={n_bits}")
        est = cls(n_subquantizers=m, n_bits=n_bits)
        est.codebooks_ = np.ascontiguousarray(codebooks, dtype=np.float64)
        est.n_features_in_ = m * dsub
        return est


def pca_basis(X, n_components: int) -> np.ndarray:
    """Top principal directions of ``X`` as orthonormal columns ``(d, n_components)``."""
    Xc = X - X.mean(axis=0)
    eigvals, eigvecs = np.linalg.eigh(Xc.T @ Xc)
    basis = eigvecs[:, np.argsort(eigvals)[::-1][:n_components]]
    flip = np.sign(basis[np.abs(basis).argmax(axis=0), np.arange(n_components)])
    return basis * flip


class OPQ(TransformerMixin, BaseEstimator):
    """Optimized product quantization (non-parametric alternation).

    Learns a ``(d_in, n_components)`` rotation with orthonormal columns. Each
    alternation re-fits the rotation by orthogonal Procrustes against the
    current reconstructions, then refines the codebooks with warm-started
    Lloyd iterations. ``objective_`` is the mean squared reconstruction error
    in the input space and never increases.

    ``transform`` applies the rotation only; use :meth:`encode` for codes.
    """

    def __init__(
        self,
        n_components=256,
        n_subquantizers=32,
        n_bits=8,
        n_alternations=20,
        max_iter=25,
        refine_iter=2,
        random_state=0,
    ):
        self.n_components = n_components
        self.n_subquantizers = n_subquantizers
        self.n_bits = n_bits
        self.n_alternations = n_alternations
        self.max_iter = max_iter
        self.refine_iter = refine_iter
        self.random_state = random_state

    def _error(self, X, R, pq) -> float:
        Y = pq.decode(pq.encode(X @ R))
        return float(((X - Y @ R.T) ** 2).sum(axis=1).mean())

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        d = X.shape[1]
        if self.n_components > d:
            raise InvalidArgumentError(f"n_components={self.n_components} exceeds input dimension {d}")
        R = pca_basis(X, self.n_components)
        pq = ProductQuantizer(self.n_subquantizers, self.n_bits, self.max_iter, self.random_state).fit(X @ R)
        trace = [self._error(X, R, pq)]
        self.orthogonality_error_ = [float(np.abs(R.T @ R - np.eye(R.shape[1])).max())]
        for it in range(self.n_alternations):
            Y = pq.decode(pq.encode(X @ R))
            U, _, Vt = np.linalg.svd(X.T @ Y, full_matrices=False)
            R_new = U @ Vt
            if self._error(X, R_new, pq) <= trace[-1]:
                R = R_new
            pq.refine(X @ R, self.refine_iter)
            trace.append(self._error(X, R, pq))
            self.orthogonality_error_.append(float(np.abs(R.T @ R - np.eye(R.shape[1])).max()))
            logger.debug("opq alternation %d: error %.6g", it, trace[-1])
        self.rotation_ = R
        self.pq_ = pq
        self.objective_ = trace
        self.n_features_in_ = d
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "rotation_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidArgumentError(f"expected vectors of dimension {self.n_features_in_}, got {X.shape[1]}")
        return X @ self.rotation_

    def inverse_transform(self, Z) -> np.ndarray:
        check_is_fitted(self, "rotation_")
        return np.asarray(Z, dtype=np.float64) @ self.rotation_.T

    def encode(self, X) -> np.ndarray:
        return self.pq_.encode(self.transform(X))

    def decode(self, codes) -> np.ndarray:
        return self.inverse_transform(self.pq_.decode(codes))

    def quantization_error(self, X) -> float:
        check_is_fitted(self, "rotation_")
        return self._error(check_array(X, dtype=np.float64), self.rotation_, self.pq_)

    def to_blob(self) -> bytes:
        check_is_fitted(self, "rotation_")
        return pack_blob(
            "opq",
            {"rotation": self.rotation_, "codebooks": self.pq_.codebooks_, "n_bits": np.uint64(self.n_bits)},
        )

    @classmethod
    def from_blob(cls, raw: bytes) -> "OPQ":
        _, a = unpack_blob(raw, "opq")
        pq = ProductQuantizer._from_arrays(a["codebooks"], int(a["n_bits"]))
        R = a["rotation"]
        est = cls(n_components=R.shape[1], n_subquantizers=pq.n_subquantizers, n_bits=pq.n_bits)
        est.rotation_ = R
        est.pq_ = pq
        est.n_features_in_ = R.shape[0]
        return est
