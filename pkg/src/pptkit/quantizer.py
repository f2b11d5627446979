"""Mini-batch k-means codebook training and nearest-centroid assignment."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import FeatureKind, FeatureMatrix
from .errors import DimensionMismatch, InsufficientData, MalformedFile, VersionMismatch

logger = logging.getLogger(__name__)

# rows of a point chunk are sized so the (rows, K) distance block stays small
_CHUNK_ELEMS = 1 << 22


@dataclass
class Codebook:
    centroids: np.ndarray
    feature_kind: FeatureKind = FeatureKind.EXTERNAL
    seed: int = 0
    trained_iterations: int = 0
    # per-iteration batch inertia measured at the assignment step; not serialized
    inertia_history: list = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float32)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError(f"centroids must be a non-empty 2-D array, got {self.centroids.shape}")
        if not np.all(np.isfinite(self.centroids)):
            raise ValueError("centroids contain NaN or Inf")
        self.feature_kind = FeatureKind(self.feature_kind)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def d(self) -> int:
        return self.centroids.shape[1]


def _as_points(features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        return features.data
    if isinstance(features, np.ndarray):
        x = features
    else:
        parts = [f.data if isinstance(f, FeatureMatrix) else np.asarray(f, dtype=np.float64) for f in features]
        if not parts:
            return np.zeros((0, 0))
        x = np.concatenate([p.reshape(-1, p.shape[-1]) for p in parts], axis=0)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def nearest_centroid(points: np.ndarray, centroids: np.ndarray):
    """Index and squared distance of each point's nearest centroid.

    Candidates are screened with the expanded-norm formula and re-scored with
    exact differences, so ties go to the lowest index.
    """
    x = np.asarray(points, dtype=np.float64)
    c = np.asarray(centroids, dtype=np.float64)
    if x.shape[1] != c.shape[1]:
        raise DimensionMismatch(f"points have dim {x.shape[1]}, centroids have dim {c.shape[1]}")
    n, k = x.shape[0], c.shape[0]
    labels = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    c_sq = np.einsum("ij,ij->i", c, c)
    rows = max(1, _CHUNK_ELEMS // max(k, 1))
    for start in range(0, n, rows):
        xb = x[start:start + rows]
        x_sq = np.einsum("ij,ij->i", xb, xb)
        approx = x_sq[:, None] - 2.0 * (xb @ c.T) + c_sq[None, :]
        best = approx.min(axis=1)
        slack = 1e-9 * (x_sq + c_sq.max()) + 1e-12
        cand = approx <= (best + slack)[:, None]
        lab = np.argmax(cand, axis=1)
        multi = cand.sum(axis=1) > 1
        exact = np.sum((xb - c[lab]) ** 2, axis=1)
        for i in np.nonzero(multi)[0]:
            idx = np.nonzero(cand[i])[0]
            dd = np.sum((xb[i] - c[idx]) ** 2, axis=1)
            j = int(np.argmin(dd))
            lab[i] = idx[j]
            exact[i] = dd[j]
        labels[start:start + len(xb)] = lab
        dist[start:start + len(xb)] = exact
    return labels, dist


def assign(cb: Codebook, features) -> np.ndarray:
    """Per-frame nearest-centroid index (ties go to the lowest index)."""
    x = _as_points(features)
    if x.shape[1] != cb.d:
        raise DimensionMismatch(f"features have dim {x.shape[1]}, codebook has dim {cb.d}")
    return nearest_centroid(x, cb.centroids)[0]


def inertia(cb: Codebook, features) -> float:
    """Sum of squared distances from each point to its nearest centroid."""
    x = _as_points(features)
    if x.shape[1] != cb.d:
        raise DimensionMismatch(f"features have dim {x.shape[1]}, codebook has dim {cb.d}")
    return float(np.sum(nearest_centroid(x, cb.centroids)[1]))


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(len(x))]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            j = rng.choice(len(x), p=d2 / total)
        else:
            j = rng.integers(len(x))
        centers[i] = x[j]
        d2 = np.minimum(d2, np.sum((x - centers[i]) ** 2, axis=1))
    return centers


def fit_minibatch_kmeans(
    features,
    k: int = 200,
    batch_size: int = 10000,
    max_iters: int = 300,
    tol: float = 1e-4,
    seed: int = 0,
    reservoir_size: int = 20000,
    feature_kind: FeatureKind = FeatureKind.EXTERNAL,
) -> Codebook:
    """Train a k-means codebook with mini-batch updates.

    Centroids start from k-means++ over a seeded reservoir sample. Each
    iteration assigns a batch and moves every centroid to the running mean
    of all points it has received (learning rate ``1 / count``). When the
    batch covers the whole data set the counts restart every iteration, which
    makes the update an exact Lloyd step, and points are put in a canonical
    order first so the result does not depend on input order. Training stops
    after ``max_iters`` iterations or once the mean centroid displacement
    drops below ``tol``.
    """
    x = _as_points(features)
    if x.size == 0:
        raise InsufficientData("no feature points")
    if k < 1 or batch_size < 1:
        raise ValueError("k and batch_size must be positive")
    uniq = np.unique(x, axis=0)
    if len(uniq) < k:
        raise InsufficientData(f"{len(uniq)} distinct points for {k} clusters")

    n = len(x)
    full_batch = batch_size >= n
    if full_batch:
        # canonical row order makes the whole fit independent of input order
        x = x[np.lexsort(x.T[::-1])]
    rng = np.random.default_rng(seed)
    sample = x if n <= reservoir_size else x[np.sort(rng.choice(n, reservoir_size, replace=False))]
    if len(np.unique(sample, axis=0)) < k:
        sample = uniq
    centers = _kmeans_pp(sample, k, rng)

    counts = np.zeros(k)
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        batch = x if full_batch else x[rng.choice(n, batch_size, replace=False)]
        labels, d2 = nearest_centroid(batch, centers)
        history.append(float(d2.sum()))

        if full_batch:
            counts[:] = 0
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, batch)
        hits = np.bincount(labels, minlength=k).astype(np.float64)
        new = centers.copy()
        got = hits > 0
        counts[got] += hits[got]
        # running mean: c <- c + (sum - hits * c) / count
        new[got] += (sums[got] - hits[got, None] * centers[got]) / counts[got, None]

        empty = np.nonzero(counts == 0)[0]
        if empty.size:
            far = np.argsort(-d2, kind="stable")[: empty.size]
            new[empty] = batch[far]
            logger.debug("iteration %d: reinitialized %d empty centroids", it, empty.size)

        shift = float(np.mean(np.linalg.norm(new - centers, axis=1)))
        centers = new
        if shift < tol:
            break

    logger.info("k-means stopped after %d iterations", it)
    cb = Codebook(centers.astype(np.float32), feature_kind, seed, it)
    cb.inertia_history = history
    return cb


# ------------------------------------------------------------------------- IO

_PPTC_MAGIC = b"PPTC"
_PPTC_VERSION = 1
_PPTC_HEADER = struct.Struct("<4sIIIQIB")


def save_codebook(path, cb: Codebook):
    header = _PPTC_HEADER.pack(_PPTC_MAGIC, _PPTC_VERSION, cb.k, cb.d, cb.seed, cb.trained_iterations, int(cb.feature_kind))
    Path(path).write_bytes(header + np.ascontiguousarray(cb.centroids, dtype="<f4").tobytes())


def load_codebook(path) -> Codebook:
    raw = Path(path).read_bytes()
    if len(raw) < _PPTC_HEADER.size:
        raise MalformedFile(f"{path}: truncated header")
    magic, version, k, d, seed, iters, kind = _PPTC_HEADER.unpack_from(raw)
    if magic != _PPTC_MAGIC:
        raise MalformedFile(f"{path}: bad magic {magic!r}")
    if version != _PPTC_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {_PPTC_VERSION}")
    payload = raw[_PPTC_HEADER.size:]
    if len(payload) != 4 * k * d or k == 0:
        raise MalformedFile(f"{path}: payload has {len(payload)} bytes, header implies {4 * k * d}")
    if kind not in FeatureKind._value2member_map_:
        raise MalformedFile(f"{path}: unknown feature kind {kind}")
    centroids = np.frombuffer(payload, dtype="<f4").reshape(k, d).astype(np.float32)
    try:
        return Codebook(centroids, FeatureKind(kind), seed, iters)
    except ValueError as e:
        raise MalformedFile(f"{path}: {e}") from e
