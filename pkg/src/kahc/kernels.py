"""Pairwise similarity under the Gaussian, adaptive Gaussian and Isolation kernels.

All matrix builders return a :class:`SimilarityMatrix`; the Euclidean
baseline is the only one tagged as a dissimilarity.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist, pdist, squareform

from .dataio import LabeledDataset

SIMILARITY = "similarity"
DISSIMILARITY = "dissimilarity"


@dataclass(frozen=True)
class SimilarityMatrix:
    values: np.ndarray
    kind: str = SIMILARITY
    measure_tag: str = ""

    def __post_init__(self):
        if self.kind not in (SIMILARITY, DISSIMILARITY):
            raise ValueError(f"unknown matrix kind {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("matrix must be square")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def is_similarity(self) -> bool:
        return self.kind == SIMILARITY

    def check(self, atol: float = 0.0) -> None:
        """Raise ``ValueError`` if the matrix breaks its kind's invariants."""
        v = self.values
        if not np.allclose(v, v.T, rtol=0.0, atol=atol):
            raise ValueError("matrix is not symmetric")
        diag = np.diag(v)
        if self.is_similarity:
            if np.any(v < -atol) or np.any(v > 1 + atol):
                raise ValueError("similarity values must lie in [0, 1]")
            if np.any(np.abs(diag - 1) > atol):
                raise ValueError("similarity diagonal must be 1")
        else:
            if np.any(v < -atol):
                raise ValueError("dissimilarities must be non-negative")
            if np.any(np.abs(diag) > atol):
                raise ValueError("dissimilarity diagonal must be 0")


@dataclass(frozen=True)
class Measure:
    """Kernel descriptor: ``name`` in {dist, gk, agk, ik} plus its parameters."""

    name: str
    sigma: Optional[float] = None
    k: Optional[int] = None
    psi: Optional[int] = None
    t: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.name not in ("dist", "gk", "agk", "ik"):
            raise ValueError(f"unknown measure {self.name!r}")

    @property
    def tag(self) -> str:
        if self.name == "gk":
            return f"gk(sigma={self.sigma:g})"
        if self.name == "agk":
            return f"agk(k={self.k})"
        if self.name == "ik":
            return f"ik(psi={self.psi};t={self.t};seed={self.seed})"
        return "dist"


def _points(D) -> np.ndarray:
    return D.points if isinstance(D, LabeledDataset) else np.asarray(D, dtype=float)


# --- Gaussian ---------------------------------------------------------------

def gaussian_similarity(x, y, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("points must share one dimension")
    return float(np.exp(-np.sum((x - y) ** 2) / (2.0 * sigma * sigma)))


def gaussian_matrix(X, sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    sq = squareform(pdist(_points(X), "sqeuclidean"))
    return np.exp(-sq / (2.0 * sigma * sigma))


# --- Adaptive Gaussian --------------------------------------------------------

def knn_bandwidths(X, k: int) -> np.ndarray:
    """Distance from every point to its k-th nearest other point.

    A zero bandwidth (the k-th neighbour duplicates the point) is replaced by
    the point's smallest positive distance to any other point; it stays 0 only
    when every point coincides with it.
    """
    X = _points(X)
    n = X.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must lie in [1, {n - 1}]")
    dist = squareform(pdist(X))
    # column 0 of the sorted row is the point itself
    sigma = np.partition(dist, k, axis=1)[:, k]
    zero = sigma == 0
    if np.any(zero):
        pos = np.where(dist[zero] > 0, dist[zero], np.inf).min(axis=1)
        sigma[zero] = np.where(np.isfinite(pos), pos, 0.0)
    return sigma


def _agk_from(sq: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    scale = np.outer(sigma, sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.exp(-sq / scale)
    # zero bandwidth only happens for points with no distinct neighbour
    out[scale == 0] = 1.0
    np.fill_diagonal(out, 1.0)
    return out


def adaptive_gaussian_similarity(i: int, j: int, k: int, D) -> float:
    X = _points(D)
    if i == j:
        return 1.0
    sigma = knn_bandwidths(X, k)
    sq = float(np.sum((X[i] - X[j]) ** 2))
    s = sigma[i] * sigma[j]
    if s == 0:
        return 1.0
    return float(np.exp(-sq / s))


def adaptive_gaussian_matrix(X, k: int) -> np.ndarray:
    X = _points(X)
    sigma = knn_bandwidths(X, k)
    return _agk_from(squareform(pdist(X, "sqeuclidean")), sigma)


# --- Isolation kernel -------------------------------------------------------

@dataclass(frozen=True)
class IsolationKernelModel:
    """``t`` Voronoi partitions, each defined by ``psi`` centres drawn from D.

    ``center_index[i]`` holds the dataset rows used as centres of partition
    ``i`` in ascending order; a point belongs to the cell of its nearest centre,
    ties going to the lowest position.
    """

    center_index: np.ndarray
    centers: np.ndarray
    psi: int
    t: int
    seed: int

    @property
    def dim(self) -> int:
        return self.centers.shape[2]

    def cells(self, X, chunk: int = 8192) -> np.ndarray:
        """Cell position (0..psi-1) of every row of ``X`` in every partition, shape (m, t)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"points must have dimension {self.dim}")
        out = np.empty((X.shape[0], self.t), dtype=np.int32)
        for start in range(0, X.shape[0], chunk):
            block = X[start:start + chunk]
            for i in range(self.t):
                out[start:start + chunk, i] = cdist(block, self.centers[i], "sqeuclidean").argmin(axis=1)
        return out

    def feature_map(self, X) -> sparse.csr_matrix:
        """One-hot cell membership, shape (m, t*psi); <phi(x), phi(y)> / t is the kernel."""
        cells = self.cells(X)
        m = cells.shape[0]
        cols = (cells + np.arange(self.t, dtype=np.int64) * self.psi).ravel()
        rows = np.repeat(np.arange(m), self.t)
        data = np.ones(m * self.t, dtype=np.float64)
        return sparse.csr_matrix((data, (rows, cols)), shape=(m, self.t * self.psi))


def build_ik_model(D, psi: int, t: int = 200, seed: int = 0) -> IsolationKernelModel:
    X = _points(D)
    n = X.shape[0]
    if psi < 2:
        raise ValueError("psi must be at least 2")
    if psi > n:
        raise ValueError(f"psi={psi} exceeds dataset size {n}")
    if t < 1:
        raise ValueError("t must be at least 1")
    rng = np.random.default_rng(seed)
    idx = np.empty((t, psi), dtype=np.int64)
    for i in range(t):
        idx[i] = np.sort(rng.choice(n, size=psi, replace=False))
    centers = X[idx]
    idx.flags.writeable = False
    centers.flags.writeable = False
    return IsolationKernelModel(idx, centers, int(psi), int(t), int(seed))


def ik_similarity(model: IsolationKernelModel, x, y) -> float:
    cells = model.cells(np.vstack([np.asarray(x, dtype=float), np.asarray(y, dtype=float)]))
    return float(np.count_nonzero(cells[0] == cells[1])) / model.t


def ik_matrix(X, psi: int, t: int = 200, seed: int = 0,
              model: Optional[IsolationKernelModel] = None) -> np.ndarray:
    """Gram matrix of the sparse feature map, divided by t."""
    X = _points(X)
    if model is None:
        model = build_ik_model(X, psi, t, seed)
    Phi = model.feature_map(X)
    return (Phi @ Phi.T).toarray() / float(model.t)


# --- matrices ---------------------------------------------------------------

def euclidean_matrix(X) -> np.ndarray:
    return squareform(pdist(_points(X)))


def similarity_matrix(measure: Measure, D) -> SimilarityMatrix:
    X = _points(D)
    if measure.name == "dist":
        return SimilarityMatrix(euclidean_matrix(X), DISSIMILARITY, measure.tag)
    if measure.name == "gk":
        values = gaussian_matrix(X, measure.sigma)
    elif measure.name == "agk":
        values = adaptive_gaussian_matrix(X, measure.k)
    else:
        values = ik_matrix(X, measure.psi, measure.t, measure.seed)
    return SimilarityMatrix(values, SIMILARITY, measure.tag)


def to_dissimilarity(M: SimilarityMatrix) -> SimilarityMatrix:
    if not M.is_similarity:
        raise ValueError("matrix is already a dissimilarity")
    return SimilarityMatrix(1.0 - M.values, DISSIMILARITY, M.measure_tag)


def write_matrix(M: SimilarityMatrix, path, fmt: str = "csv") -> Path:
    """Dump ``M`` behind a ``kind,measure_tag,n`` header line.

    ``fmt="csv"`` writes text rows with full float precision; ``fmt="bin"``
    follows the header with the raw little-endian float64 matrix.
    """
    path = Path(path)
    header = f"{M.kind},{M.measure_tag},{M.n}\n"
    if "," in M.measure_tag:
        raise ValueError("measure tag must not contain commas")
    if fmt == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header)
            for row in M.values:
                fh.write(",".join(repr(float(v)) for v in row))
                fh.write("\n")
    elif fmt == "bin":
        with open(path, "wb") as fh:
            fh.write(header.encode("utf-8"))
            fh.write(np.ascontiguousarray(M.values, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def read_matrix(path, fmt: str = "csv") -> SimilarityMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.readline().decode("utf-8").strip()
        kind, tag, n = header.split(",")
        n = int(n)
        body = fh.read()
    if fmt == "bin":
        values = np.frombuffer(body, dtype="<f8").reshape(n, n)
    elif fmt == "csv":
        values = np.loadtxt(body.decode("utf-8").splitlines(), delimiter=",", ndmin=2)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return SimilarityMatrix(values, kind, tag)
