"""Image descriptors for duplicate detection.

Feature maps from a truncated convolutional network are pooled into R-MAC
vectors, whitened and reduced with PCA, then scalar-quantized to one byte per
dimension for storage.
"""

from __future__ import annotations

import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import DegenerateInputError, InvalidArgumentError
from .fileio import pack_blob, unpack_blob

RMAC_OVERLAP = 0.4


class RankDeficiencyWarning(UserWarning):
    pass


def resize_plan(width: int, height: int, target_long_side: int = 400) -> tuple[int, int]:
    """Output size that scales the longer side to ``target_long_side``.

    The shorter side is rounded half-up and never drops below one pixel.
    """
    for name, val in (("width", width), ("height", height), ("target_long_side", target_long_side)):
        if int(val) != val or val < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {val!r}")
    width, height, target = int(width), int(height), int(target_long_side)
    long_side, short_side = max(width, height), min(width, height)
    # integer round-half-up of short * target / long
    new_short = max(1, (2 * short_side * target + long_side) // (2 * long_side))
    if width >= height:
        return target, new_short
    return new_short, target


def l2_normalize(X, eps: float = 0.0) -> np.ndarray:
    """Row-wise L2 normalization; all-zero rows are left at zero."""
    X = np.asarray(X, dtype=np.float64)
    norms = np.linalg.norm(X, axis=-1, keepdims=True)
    return np.divide(X, norms + eps, out=np.zeros_like(X), where=norms > 0)


def rmac_regions(height: int, width: int, scales: int = 3) -> list[tuple[int, int, int]]:
    """Square R-MAC regions as ``(top, left, side)`` triples.

    Scale ``l`` uses regions of side ``floor(2 * min(H, W) / (l + 1))`` laid
    out on a uniform grid; the number of regions along the longer side is
    chosen so consecutive regions overlap by close to 40%.
    """
    if scales < 1:
        raise InvalidArgumentError(f"scales must be >= 1, got {scales}")
    H, W = int(height), int(width)
    short = min(H, W)
    smallest = (2 * short) // (scales + 1)
    if smallest < 1:
        dim = "height" if H <= W else "width"
        raise DegenerateInputError(
            f"feature map {dim}={short} is too small for {scales} R-MAC scales "
            f"(needs >= {(scales + 1 + 1) // 2})"
        )

    steps = np.arange(2, 8)
    b = (max(H, W) - short) / (steps - 1)
    idx = int(np.argmin(np.abs((short**2 - short * b) / short**2 - RMAC_OVERLAP)))
    extra_w = idx + 1 if H < W else 0
    extra_h = idx + 1 if H > W else 0

    regions = []
    for level in range(1, scales + 1):
        side = (2 * short) // (level + 1)
        half = int(np.floor(side / 2 - 1))

        def starts(extent, extra):
            n = level + extra
            step = 0.0 if n == 1 else (extent - side) / (n - 1)
            return (np.floor(half + np.arange(n) * step) - half).astype(int)

        for top in starts(H, extra_h):
            for left in starts(W, extra_w):
                regions.append((int(top), int(left), side))
    return regions


def _window_max(fmap: np.ndarray, side: int) -> np.ndarray:
    # separable running max: rows then columns -> (C, H - side + 1, W - side + 1)
    m = sliding_window_view(fmap, side, axis=2).max(axis=-1)
    return sliding_window_view(m, side, axis=1).max(axis=-1)


def rmac_pool(fmap, scales: int = 3) -> np.ndarray:
    """Pool a ``(C, H, W)`` feature map into a unit-norm R-MAC vector of length C."""
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 3 or min(fmap.shape) < 1:
        raise InvalidArgumentError(f"feature map must be (C, H, W) with all dims >= 1, got {fmap.shape}")
    if not np.all(np.isfinite(fmap)):
        raise InvalidArgumentError("feature map contains non-finite activations")
    _, H, W = fmap.shape
    regions = rmac_regions(H, W, scales)

    by_side: dict[int, list[tuple[int, int]]] = {}
    for top, left, side in regions:
        by_side.setdefault(side, []).append((top, left))
    vecs = []
    for side, corners in by_side.items():
        pooled = _window_max(fmap, side)
        tops, lefts = np.array(corners).T
        vecs.append(pooled[:, tops, lefts].T)
    region_vecs = l2_normalize(np.concatenate(vecs, axis=0))
    total = region_vecs.sum(axis=0)
    norm = np.linalg.norm(total)
    if norm == 0:
        raise DegenerateInputError("R-MAC regions cancel out; map yields a zero descriptor")
    return total / norm


def rmac_pool_batch(fmaps, scales: int = 3) -> np.ndarray:
    return np.stack([rmac_pool(f, scales) for f in fmaps])


class PCAWhitening(TransformerMixin, BaseEstimator):
    """Centered PCA projection with per-component whitening.

    Parameters
    ----------
    n_components : int
        Output dimension.
    eig_floor : float
        Eigenvalues are floored at this value before taking the inverse
        square root, so rank-deficient training data cannot blow up the scales.
    """

    def __init__(self, n_components: int = 512, eig_floor: float = 1e-10):
        self.n_components = n_components
        self.eig_floor = eig_floor

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n, d = X.shape
        k = self.n_components
        if k > d:
            raise InvalidArgumentError(f"n_components={k} exceeds input dimension {d}")
        if n <= k:
            raise InvalidArgumentError(f"need more than n_components={k} samples, got {n}")
        self.mean_ = X.mean(axis=0)
        Xc = X - self.mean_
        cov = (Xc.T @ Xc) / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1][:k]
        eigvals = np.clip(eigvals[order], 0.0, None)
        components = eigvecs[:, order].T
        # deterministic sign: largest-magnitude loading positive
        flip = np.sign(components[np.arange(k), np.abs(components).argmax(axis=1)])
        self.components_ = components * flip[:, None]
        self.explained_variance_ = eigvals
        n_floored = int(np.sum(eigvals < self.eig_floor))
        if n_floored:
            warnings.warn(
                f"{n_floored} of {k} retained eigenvalues fall below eig_floor={self.eig_floor}; "
                "their whitening scales are floor-dominated",
                RankDeficiencyWarning,
                stacklevel=2,
            )
        self.scales_ = 1.0 / np.sqrt(np.maximum(eigvals, self.eig_floor))
        self.n_features_in_ = d
        return self

    def _check_dim(self, X, expected):
        if X.shape[1] != expected:
            raise InvalidArgumentError(f"expected vectors of dimension {expected}, got {X.shape[1]}")

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        self._check_dim(X, self.n_features_in_)
        return ((X - self.mean_) @ self.components_.T) * self.scales_

    def inverse_transform(self, Z):
        check_is_fitted(self, "components_")
        Z = check_array(Z, dtype=np.float64)
        self._check_dim(Z, self.components_.shape[0])
        return (Z / self.scales_) @ self.components_ + self.mean_

    def to_blob(self) -> bytes:
        check_is_fitted(self, "components_")
        return pack_blob(
            "pca",
            {
                "mean": self.mean_,
                "components": self.components_,
                "explained_variance": self.explained_variance_,
                "scales": self.scales_,
                "eig_floor": np.float64(self.eig_floor),
            },
        )

    @classmethod
    def from_blob(cls, raw: bytes) -> "PCAWhitening":
        _, a = unpack_blob(raw, "pca")
        est = cls(n_components=a["components"].shape[0], eig_floor=float(a["eig_floor"]))
        est.mean_ = a["mean"]
        est.components_ = a["components"]
        est.explained_variance_ = a["explained_variance"]
        est.scales_ = a["scales"]
        est.n_features_in_ = a["mean"].shape[0]
        return est


class ScalarQuantizer(TransformerMixin, BaseEstimator):
    """Per-dimension uniform 8-bit quantizer.

    Each dimension's [min, max] range is split into 256 equal buckets; codes
    dequantize to bucket midpoints. Values outside the fitted range clamp to
    the end buckets.
    """

    levels = 256

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.min_ = X.min(axis=0)
        self.max_ = X.max(axis=0)
        self.step_ = (self.max_ - self.min_) / self.levels
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_tables(cls, sq_min, sq_step) -> "ScalarQuantizer":
        est = cls()
        est.min_ = np.asarray(sq_min, dtype=np.float64)
        est.step_ = np.asarray(sq_step, dtype=np.float64)
        est.max_ = est.min_ + est.step_ * cls.levels
        est.n_features_in_ = est.min_.shape[0]
        return est

    def _scaled(self, X):
        check_is_fitted(self, "step_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidArgumentError(f"expected vectors of dimension {self.n_features_in_}, got {X.shape[1]}")
        pos = self.step_ > 0
        scaled = np.zeros_like(X)
        scaled[:, pos] = (X[:, pos] - self.min_[pos]) / self.step_[pos]
        return X, scaled

    def transform(self, X) -> np.ndarray:
        _, scaled = self._scaled(X)
        return np.clip(np.floor(scaled), 0, self.levels - 1).astype(np.uint8)

    def count_clamped(self, X) -> int:
        """Number of entries falling outside the fitted per-dimension range."""
        X, _ = self._scaled(X)
        return int(np.sum((X < self.min_) | (X > self.max_)))

    def inverse_transform(self, codes) -> np.ndarray:
        check_is_fitted(self, "step_")
        codes = np.asarray(codes)
        if codes.ndim == 1:
            codes = codes[None, :]
        return self.min_ + (codes.astype(np.float64) + 0.5) * self.step_

    def to_blob(self) -> bytes:
        check_is_fitted(self, "step_")
        return pack_blob("scalar_quantizer", {"min": self.min_, "step": self.step_})

    @classmethod
    def from_blob(cls, raw: bytes) -> "ScalarQuantizer":
        _, a = unpack_blob(raw, "scalar_quantizer")
        return cls.from_tables(a["min"], a["step"])
