"""Inverted multi-index over OPQ-rotated descriptors with residual PQ codes.

A stored vector is L2-normalized, rotated to ``n_components`` dimensions,
assigned to a cell of a two-part coarse product quantizer (cell id
``(code_a << coarse_bits) | code_b``), and its residual to the cell centroid is
PQ-encoded. Queries visit cells in increasing coarse distance and score
entries with per-cell ADC tables, keeping the best ``k`` in a bounded max-heap.
"""

from __future__ import annotations

import heapq
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .descriptor import ScalarQuantizer, l2_normalize
from .errors import CorruptIndexError, DuplicateIdError, InvalidArgumentError
from .fileio import pack_blob, unpack_blob
from .quantizer import OPQ, ProductQuantizer, _code_dtype

INDEX_MAGIC = b"WSI1"
INDEX_VERSION = 1
_TABLE_CHUNK = 256


@dataclass
class SearchResult:
    ids: np.ndarray
    distances: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def pairs(self) -> list[tuple[int, float]]:
        return [(int(i), float(d)) for i, d in zip(self.ids, self.distances)]


def bounded_heap_topk(chunks, k: int) -> SearchResult:
    """Keep the ``k`` smallest ``(distance, id)`` pairs from a stream of array chunks.

    ``chunks`` yields ``(ids, distances)`` array pairs. A max-heap of size ``k``
    holds the current best; ties on distance favour the lower id.
    """
    heap: list[tuple[float, int]] = []  # (-distance, -id): heap[0] is the worst kept entry
    if k <= 0:
        return SearchResult(np.empty(0, np.uint64), np.empty(0))
    for ids, dists in chunks:
        if len(heap) == k:
            worst = -heap[0][0]
            keep = dists <= worst
            ids, dists = ids[keep], dists[keep]
        for i, d in zip(ids.tolist(), dists.tolist()):
            item = (-d, -i)
            if len(heap) < k:
                heapq.heappush(heap, item)
            elif item > heap[0]:
                heapq.heapreplace(heap, item)
    best = sorted((-nd, -ni) for nd, ni in heap)
    return SearchResult(
        np.array([i for _, i in best], dtype=np.uint64),
        np.array([d for d, _ in best], dtype=np.float64),
    )


class IVFPQIndex(BaseEstimator):
    """Two-level product-quantized inverted index.

    Parameters
    ----------
    n_components : int
        Dimension after the OPQ rotation.
    coarse_bits : int
        Bits per coarse sub-quantizer; the index addresses ``2 ** (2 * coarse_bits)`` cells.
    n_subquantizers, n_bits : int
        Residual product quantizer layout (stored code is ``n_subquantizers`` bytes for 8 bits).
    opq_alternations : int
        OPQ rotation/codebook alternations.
    nprobe, k : int
        Search defaults.
    duplicate_ids : {"reject", "allow"}
    """

    def __init__(
        self,
        n_components=256,
        coarse_bits=14,
        n_subquantizers=32,
        n_bits=8,
        opq_alternations=20,
        max_iter=25,
        nprobe=256,
        k=128,
        duplicate_ids="reject",
        random_state=0,
    ):
        self.n_components = n_components
        self.coarse_bits = coarse_bits
        self.n_subquantizers = n_subquantizers
        self.n_bits = n_bits
        self.opq_alternations = opq_alternations
        self.max_iter = max_iter
        self.nprobe = nprobe
        self.k = k
        self.duplicate_ids = duplicate_ids
        self.random_state = random_state

    # -- training -----------------------------------------------------------

    def fit(self, X, y=None):
        """Train the OPQ rotation, coarse quantizer and residual codebooks on storage vectors."""
        if self.duplicate_ids not in ("reject", "allow"):
            raise InvalidArgumentError(f"duplicate_ids must be 'reject' or 'allow', got {self.duplicate_ids!r}")
        if not 1 <= self.coarse_bits <= 16:
            raise InvalidArgumentError(f"coarse_bits={self.coarse_bits} must be in [1, 16] (cell ids are stored as u32)")
        if self.n_components % 2:
            raise InvalidArgumentError(f"n_components={self.n_components} must split into two coarse halves")
        Xn = l2_normalize(check_array(X, dtype=np.float64))
        rs = self.random_state
        self.opq_ = OPQ(
            n_components=self.n_components,
            n_subquantizers=self.n_subquantizers,
            n_bits=self.n_bits,
            n_alternations=self.opq_alternations,
            max_iter=self.max_iter,
            random_state=rs,
        ).fit(Xn)
        Z = self.opq_.transform(Xn)
        self.coarse_ = ProductQuantizer(2, self.coarse_bits, self.max_iter, rs + 1).fit(Z)
        residual = Z - self.coarse_.decode(self.coarse_.encode(Z))
        self.residual_pq_ = ProductQuantizer(self.n_subquantizers, self.n_bits, self.max_iter, rs + 2).fit(residual)
        self.n_features_in_ = Xn.shape[1]
        self.reset()
        return self

    def reset(self):
        """Drop all stored entries, keeping the trained quantizers."""
        self._lists: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        self._ids: set[int] = set()
        self.ntotal_ = 0
        return self

    @property
    def n_cells(self) -> int:
        return 1 << (2 * self.coarse_bits)

    # -- encoding pipeline --------------------------------------------------

    def preprocess(self, X) -> np.ndarray:
        """Storage vectors -> normalized, rotated index-space vectors."""
        check_is_fitted(self, "residual_pq_")
        X = check_array(np.atleast_2d(X), dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidArgumentError(f"expected vectors of dimension {self.n_features_in_}, got {X.shape[1]}")
        return self.opq_.transform(l2_normalize(X))

    def coarse_assign(self, Z) -> np.ndarray:
        """Cell ids for index-space vectors."""
        check_is_fitted(self, "coarse_")
        codes = self.coarse_.encode(np.atleast_2d(Z)).astype(np.int64)
        return (codes[:, 0] << self.coarse_bits) | codes[:, 1]

    def split_cell(self, cells):
        cells = np.asarray(cells, dtype=np.int64)
        return cells >> self.coarse_bits, cells & ((1 << self.coarse_bits) - 1)

    def cell_centroids(self, cells) -> np.ndarray:
        a, b = self.split_cell(cells)
        return self.coarse_.decode(np.stack([a, b], axis=1))

    def encode(self, Z) -> tuple[np.ndarray, np.ndarray]:
        """Cell ids and residual codes for index-space vectors."""
        cells = self.coarse_assign(Z)
        residual = np.atleast_2d(Z) - self.cell_centroids(cells)
        return cells, self.residual_pq_.encode(residual)

    def reconstruct(self, cells, codes) -> np.ndarray:
        return self.cell_centroids(cells) + self.residual_pq_.decode(codes)

    # -- building -----------------------------------------------------------

    def add(self, X, ids):
        """Append storage vectors with their image ids."""
        ids = np.asarray(ids, dtype=np.uint64).ravel()
        Z = self.preprocess(X)
        if len(ids) != len(Z):
            raise InvalidArgumentError(f"got {len(Z)} vectors but {len(ids)} ids")
        if self.duplicate_ids == "reject":
            seen = set()
            for i in ids.tolist():
                if i in self._ids or i in seen:
                    raise DuplicateIdError(f"image id {i} is already in the index")
                seen.add(i)
        cells, codes = self.encode(Z)
        order = np.argsort(cells, kind="stable")
        cells_sorted = cells[order]
        bounds = np.flatnonzero(np.diff(cells_sorted)) + 1
        for grp in np.split(order, bounds):
            if grp.size == 0:
                continue
            cell = int(cells[grp[0]])
            segs = self._lists.setdefault(cell, [])
            if segs:
                # merge now so searches never mutate the lists
                segs[0] = (np.concatenate([segs[0][0], ids[grp]]), np.concatenate([segs[0][1], codes[grp]]))
            else:
                segs.append((ids[grp], codes[grp]))
        self._ids.update(ids.tolist())
        self.ntotal_ += len(ids)
        return self

    def add_quantized(self, codes, quantizer: ScalarQuantizer, ids):
        """Add 8-bit storage descriptors: dequantize, then :meth:`add`."""
        return self.add(quantizer.inverse_transform(codes), ids)

    def _cell(self, cell: int) -> tuple[np.ndarray, np.ndarray]:
        return self._lists[cell][0]

    def nonempty_cells(self) -> np.ndarray:
        return np.array(sorted(self._lists), dtype=np.int64)

    def list_length(self, cell: int) -> int:
        return sum(len(s[0]) for s in self._lists.get(int(cell), []))

    def entries(self):
        """All ``(cell, ids, codes)`` in ascending cell order."""
        for cell in self.nonempty_cells().tolist():
            ids, codes = self._cell(cell)
            yield cell, ids, codes

    # -- search -------------------------------------------------------------

    def _coarse_scores(self, z):
        half = self.n_components // 2
        books = self.coarse_.codebooks_
        da = ((books[0] - z[:half]) ** 2).sum(axis=1)
        db = ((books[1] - z[half:]) ** 2).sum(axis=1)
        return da, db

    def probe_cells(self, z, nprobe: int | None = None, nonempty_only: bool = False):
        """Cells in increasing ``dist(z_a, c_a) + dist(z_b, c_b)`` order (ties: lower cell id).

        Uses the multi-sequence traversal over the two sorted per-half distance
        lists. With ``nonempty_only`` empty cells are skipped and do not count
        toward ``nprobe``. Returns ``(cells, coarse_scores)``.
        """
        check_is_fitted(self, "coarse_")
        nprobe = self.nprobe if nprobe is None else int(nprobe)
        if nprobe > self.n_cells:
            warnings.warn(f"nprobe={nprobe} exceeds the {self.n_cells} cells; clamping", stacklevel=2)
            nprobe = self.n_cells
        z = np.asarray(z, dtype=np.float64).ravel()
        da, db = self._coarse_scores(z)
        bits = self.coarse_bits

        if nonempty_only:
            nonempty = self.nonempty_cells()
            if nprobe >= len(nonempty):
                a, b = self.split_cell(nonempty)
                scores = da[a] + db[b]
                order = np.lexsort((nonempty, scores))
                return nonempty[order], scores[order]

        sa = np.argsort(da, kind="stable")
        sb = np.argsort(db, kind="stable")
        K = len(sa)
        heap = [(da[sa[0]] + db[sb[0]], (int(sa[0]) << bits) | int(sb[0]), 0, 0)]
        visited = {(0, 0)}
        out_cells, out_scores = [], []
        while heap and len(out_cells) < nprobe:
            score, cell, i, j = heapq.heappop(heap)
            if not nonempty_only or cell in self._lists:
                out_cells.append(cell)
                out_scores.append(score)
            for ni, nj in ((i + 1, j), (i, j + 1)):
                if ni < K and nj < K and (ni, nj) not in visited:
                    visited.add((ni, nj))
                    ncell = (int(sa[ni]) << bits) | int(sb[nj])
                    heapq.heappush(heap, (da[sa[ni]] + db[sb[nj]], ncell, ni, nj))
        return np.array(out_cells, dtype=np.int64), np.array(out_scores, dtype=np.float64)

    def _scan(self, z, cells):
        for start in range(0, len(cells), _TABLE_CHUNK):
            chunk = cells[start : start + _TABLE_CHUNK]
            tables = self.residual_pq_.adc_tables(z[None, :] - self.cell_centroids(chunk))
            for cell, table in zip(chunk.tolist(), tables):
                ids, codes = self._cell(cell)
                yield ids, ProductQuantizer.adc_lookup(table, codes)

    def search(self, x, k: int | None = None, nprobe: int | None = None) -> SearchResult:
        """Approximate ``k`` nearest stored entries of one storage-space query."""
        k = self.k if k is None else int(k)
        z = self.preprocess(x)[0]
        cells, _ = self.probe_cells(z, nprobe, nonempty_only=True)
        return bounded_heap_topk(self._scan(z, cells), k)

    def search_index_space(self, z, k: int | None = None, nprobe: int | None = None) -> SearchResult:
        k = self.k if k is None else int(k)
        z = np.asarray(z, dtype=np.float64).ravel()
        cells, _ = self.probe_cells(z, nprobe, nonempty_only=True)
        return bounded_heap_topk(self._scan(z, cells), k)

    def kneighbors(self, X, n_neighbors: int | None = None, nprobe: int | None = None):
        """Batch search; rows shorter than ``n_neighbors`` are padded with ``inf`` / ``-1``."""
        k = self.k if n_neighbors is None else int(n_neighbors)
        Z = self.preprocess(X)
        dist = np.full((len(Z), k), np.inf)
        ind = np.full((len(Z), k), -1, dtype=np.int64)
        for row, z in enumerate(Z):
            res = self.search_index_space(z, k, nprobe)
            dist[row, : len(res)] = res.distances
            ind[row, : len(res)] = res.ids.astype(np.int64)
        return dist, ind

    # -- persistence --------------------------------------------------------

    def _quantizer_blob(self) -> bytes:
        return pack_blob(
            "ivfpq",
            {
                "rotation": self.opq_.rotation_,
                "opq_codebooks": self.opq_.pq_.codebooks_,
                "opq_bits": np.uint64(self.opq_.n_bits),
                "coarse_codebooks": self.coarse_.codebooks_,
                "coarse_bits": np.uint64(self.coarse_bits),
                "residual_codebooks": self.residual_pq_.codebooks_,
                "residual_bits": np.uint64(self.n_bits),
                "allow_duplicates": np.uint8(self.duplicate_ids == "allow"),
                "params": np.array(
                    [self.nprobe, self.k, self.opq_alternations, self.max_iter, self.random_state], dtype=np.int64
                ),
            },
        )

    def to_bytes(self) -> bytes:
        check_is_fitted(self, "residual_pq_")
        blob = self._quantizer_blob()
        cells = self.nonempty_cells().tolist()
        directory, id_parts, code_parts = [], [], []
        offset = 0
        for cell in cells:
            ids, codes = self._cell(cell)
            directory.append(struct.pack("<IQQ", cell, offset, len(ids)))
            id_parts.append(ids.astype("<u8").tobytes())
            code_parts.append(np.ascontiguousarray(codes).tobytes())
            offset += len(ids)
        header = INDEX_MAGIC + struct.pack("<HQ", INDEX_VERSION, len(blob)) + blob
        header += struct.pack("<QQ", self.ntotal_, len(cells))
        return header + b"".join(directory) + b"".join(id_parts) + b"".join(code_parts)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "IVFPQIndex":
        try:
            return cls._from_bytes(raw)
        except (struct.error, ValueError, KeyError) as exc:
            raise CorruptIndexError(f"unreadable index: {exc}") from None

    @classmethod
    def _from_bytes(cls, raw: bytes) -> "IVFPQIndex":
        if raw[:4] != INDEX_MAGIC:
            raise CorruptIndexError(f"bad index magic {raw[:4]!r}")
        version, blob_len = struct.unpack_from("<HQ", raw, 4)
        if version != INDEX_VERSION:
            raise CorruptIndexError(f"unsupported index version {version}")
        off = 14
        _, a = unpack_blob(raw[off : off + blob_len], "ivfpq")
        off += blob_len
        ntotal, n_cells = struct.unpack_from("<QQ", raw, off)
        off += 16

        R = a["rotation"]
        coarse = ProductQuantizer._from_arrays(a["coarse_codebooks"], int(a["coarse_bits"]))
        residual = ProductQuantizer._from_arrays(a["residual_codebooks"], int(a["residual_bits"]))
        opq_pq = ProductQuantizer._from_arrays(a["opq_codebooks"], int(a["opq_bits"]))
        idx = cls(
            n_components=R.shape[1],
            coarse_bits=coarse.n_bits,
            n_subquantizers=residual.n_subquantizers,
            n_bits=residual.n_bits,
            duplicate_ids="allow" if int(a["allow_duplicates"]) else "reject",
        )
        nprobe, k, alternations, max_iter, seed = (int(v) for v in a["params"])
        idx.set_params(nprobe=nprobe, k=k, opq_alternations=alternations, max_iter=max_iter, random_state=seed)
        opq = OPQ(n_components=R.shape[1], n_subquantizers=opq_pq.n_subquantizers, n_bits=opq_pq.n_bits)
        opq.rotation_, opq.pq_, opq.n_features_in_ = R, opq_pq, R.shape[0]
        idx.opq_, idx.coarse_, idx.residual_pq_ = opq, coarse, residual
        idx.n_features_in_ = R.shape[0]
        idx.reset()

        directory = np.frombuffer(raw, dtype=np.dtype([("cell", "<u4"), ("off", "<u8"), ("len", "<u8")]),
                                  count=n_cells, offset=off)
        off += directory.nbytes
        all_ids = np.frombuffer(raw, dtype="<u8", count=ntotal, offset=off)
        off += all_ids.nbytes
        m = residual.n_subquantizers
        code_dtype = np.dtype(_code_dtype(residual.n_bits))
        all_codes = np.frombuffer(raw, dtype=code_dtype, count=ntotal * m, offset=off).reshape(ntotal, m)
        off += all_codes.nbytes
        if off != len(raw):
            raise CorruptIndexError("index payload size does not match its directory")
        if all_codes.size and int(all_codes.max()) >= residual.ksub:
            raise CorruptIndexError("stored residual code out of range")
        for cell, start, length in directory.tolist():
            if start + length > ntotal or cell >= idx.n_cells:
                raise CorruptIndexError(f"directory entry for cell {cell} is out of bounds")
            idx._lists[int(cell)] = [(all_ids[start : start + length].copy(), all_codes[start : start + length].copy())]
        idx._ids = set(all_ids.tolist())
        idx.ntotal_ = int(ntotal)
        return idx

    @classmethod
    def load(cls, path) -> "IVFPQIndex":
        return cls.from_bytes(Path(path).read_bytes())
