"""Agglomerative merging over a similarity or dissimilarity matrix.

Node ids follow the scipy convention internally: leaves are ``0..n-1`` and the
cluster created at merge step ``s`` (1-based) is node ``n + s - 1``.  The text
serialisation shifts everything by one (leaves ``1..n``, internal
``n+1..2n-1``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .kernels import DISSIMILARITY, SIMILARITY, SimilarityMatrix

LINKAGES = ("single", "complete", "average", "weighted")


@dataclass(frozen=True)
class Dendrogram:
    left: np.ndarray
    right: np.ndarray
    heights: np.ndarray
    kind: str = SIMILARITY

    def __post_init__(self):
        left = np.asarray(self.left, dtype=np.int64).copy()
        right = np.asarray(self.right, dtype=np.int64).copy()
        heights = np.asarray(self.heights, dtype=float).copy()
        if not (left.shape == right.shape == heights.shape) or left.ndim != 1:
            raise ValueError("merge arrays must be 1-d and equally long")
        n = left.size + 1
        seen = np.zeros(2 * n - 1, dtype=bool)
        for s, (a, b) in enumerate(zip(left, right)):
            for c in (a, b):
                if not 0 <= c < n + s or seen[c]:
                    raise ValueError(f"invalid child {c} at step {s + 1}")
                seen[c] = True
        for arr in (left, right, heights):
            arr.flags.writeable = False
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "heights", heights)

    @property
    def n(self) -> int:
        return self.left.size + 1

    leaf_count = n

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, self.n)

    @property
    def merges(self) -> list[tuple[int, int, float, int]]:
        return [(int(a), int(b), float(h), s + 1)
                for s, (a, b, h) in enumerate(zip(self.left, self.right, self.heights))]

    def merge_pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.left.tolist(), self.right.tolist()))

    def parents(self) -> np.ndarray:
        """Parent node of every node (-1 for the root)."""
        n = self.n
        par = np.full(2 * n - 1, -1, dtype=np.int64)
        nodes = np.arange(n, 2 * n - 1)
        par[self.left] = nodes
        par[self.right] = nodes
        return par

    def sizes(self) -> np.ndarray:
        n = self.n
        size = np.ones(2 * n - 1, dtype=np.int64)
        for s in range(n - 1):
            size[n + s] = size[self.left[s]] + size[self.right[s]]
        return size

    def leaves(self, node: int) -> np.ndarray:
        """Sorted leaf indices below ``node``."""
        n = self.n
        out, stack = [], [node]
        while stack:
            v = stack.pop()
            if v < n:
                out.append(v)
            else:
                stack.append(int(self.left[v - n]))
                stack.append(int(self.right[v - n]))
        return np.sort(np.array(out, dtype=np.int64))

    def is_monotone(self) -> bool:
        d = np.diff(self.heights)
        return bool(np.all(d <= 0) if self.kind == SIMILARITY else np.all(d >= 0))

    # --- serialisation ---------------------------------------------------

    def to_text(self) -> str:
        lines = ["step,left,right,height"]
        for a, b, h, s in self.merges:
            lines.append(f"{s},{a + 1},{b + 1},{h!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, kind: str = SIMILARITY) -> "Dendrogram":
        left, right, heights = [], [], []
        for s, line in enumerate(l for l in text.splitlines()[1:] if l.strip()):
            step, a, b, h = line.split(",")
            if int(step) != s + 1:
                raise ValueError(f"merge steps out of order at line {s + 2}")
            left.append(int(a) - 1)
            right.append(int(b) - 1)
            heights.append(float(h))
        return cls(np.array(left), np.array(right), np.array(heights), kind)

    def to_newick(self) -> str:
        """Nested-parenthesis export, leaves 1-based, merge heights as internal labels."""
        n = self.n
        text: dict[int, str] = {i: str(i + 1) for i in range(n)}
        for s in range(n - 1):
            a, b = int(self.left[s]), int(self.right[s])
            text[n + s] = f"({text.pop(a)},{text.pop(b)}){float(self.heights[s])!r}"
        return text[2 * n - 2] + ";"

    def to_scipy(self) -> np.ndarray:
        """(n-1, 4) linkage array in scipy's layout (heights as stored)."""
        return np.column_stack([self.left, self.right, self.heights,
                                self.sizes()[self.n:]]).astype(float)


@dataclass(frozen=True)
class FlatClustering:
    """Per-point labels ``1..k``, 0 marking noise."""

    labels: np.ndarray
    k: int
    warning: Optional[str] = field(default=None, compare=False)

    @classmethod
    def from_assignment(cls, raw, noise=None, warning: Optional[str] = None) -> "FlatClustering":
        """Relabel arbitrary cluster ids to ``1..k`` by first appearance; ``noise`` maps to 0."""
        raw = np.asarray(raw)
        labels = np.zeros(raw.size, dtype=np.int64)
        mapping: dict = {}
        for i, v in enumerate(raw.tolist()):
            if noise is not None and v == noise:
                continue
            if v not in mapping:
                mapping[v] = len(mapping) + 1
            labels[i] = mapping[v]
        labels.flags.writeable = False
        return cls(labels, len(mapping), warning)

    @property
    def n(self) -> int:
        return self.labels.size

    @property
    def noise_count(self) -> int:
        return int(np.count_nonzero(self.labels == 0))

    def to_csv(self) -> str:
        return "index,label\n" + "".join(f"{i},{int(l)}\n" for i, l in enumerate(self.labels))


# --- linkage -----------------------------------------------------------------

def _flatten(cluster) -> list[int]:
    if isinstance(cluster, (int, np.integer)):
        return [int(cluster)]
    out = []
    for c in cluster:
        out.extend(_flatten(c))
    return out


def _weighted(Ci, Cj, V) -> float:
    if not isinstance(Ci, (int, np.integer)):
        parts = list(Ci)
        if len(parts) == 1:
            return _weighted(parts[0], Cj, V)
        if len(parts) != 2:
            raise ValueError("weighted linkage needs binary merge trees")
        return 0.5 * (_weighted(parts[0], Cj, V) + _weighted(parts[1], Cj, V))
    if not isinstance(Cj, (int, np.integer)):
        return _weighted(Cj, Ci, V)
    return float(V[Ci, Cj])


def linkage_value(kind: str, Ci, Cj, M: SimilarityMatrix) -> float:
    """Linkage between two disjoint clusters, straight from the definitions.

    Clusters are index collections; for ``weighted`` they are binary merge
    trees written as nested pairs, e.g. ``((0, 1), 2)``. On a dissimilarity
    matrix single takes the minimum and complete the maximum.
    """
    if kind not in LINKAGES:
        raise ValueError(f"unknown linkage {kind!r}")
    a, b = _flatten(Ci), _flatten(Cj)
    if not a or not b:
        raise ValueError("clusters must be non-empty")
    if set(a) & set(b) or len(set(a)) != len(a) or len(set(b)) != len(b):
        raise ValueError("clusters overlap")
    V = M.values
    if kind == "weighted":
        return _weighted(Ci, Cj, V)
    block = V[np.ix_(a, b)]
    if kind == "average":
        return float(block.mean())
    high = kind == "single" if M.is_similarity else kind == "complete"
    return float(block.max() if high else block.min())


def _update(kind: str, ri: np.ndarray, rj: np.ndarray, si: float, sj: float) -> np.ndarray:
    # scores are "larger is better" so single is max and complete is min
    if kind == "single":
        return np.maximum(ri, rj)
    if kind == "complete":
        return np.minimum(ri, rj)
    if kind == "average":
        with np.errstate(invalid="ignore"):
            return (si * ri + sj * rj) / (si + sj)
    return 0.5 * (ri + rj)


def agglomerate(S: np.ndarray, combine, steps: int, floor: float = -np.inf):
    """Greedy best-pair merging over a score matrix (larger is better).

    ``S`` is modified in place and only its active rows and columns stay
    meaningful. ``combine(i, j)``
    returns the merged cluster's score row (it lands in slot ``i``, the smaller
    of the pair) and is called before ``S`` changes. Ties go to the
    lexicographically smallest slot pair. Stops after ``steps`` merges or when
    the best score is not above ``floor``. Returns ``(i, j, score)`` triples.

    Each row caches its best partner to the right, so a step costs O(m) apart
    from rows whose cached partner was just merged.
    """
    m = S.shape[0]
    np.fill_diagonal(S, -np.inf)
    cols = np.arange(m)
    active = np.ones(m, dtype=bool)
    best_val = np.full(m, -np.inf)
    best_col = np.full(m, -1, dtype=np.int64)

    def refresh(rows: np.ndarray) -> None:
        if rows.size == 0:
            return
        sub = np.where(active, S[rows], -np.inf)
        sub[cols[None, :] <= rows[:, None]] = -np.inf
        j = sub.argmax(axis=1)
        best_col[rows] = j
        best_val[rows] = sub[np.arange(rows.size), j]
        best_col[rows[best_val[rows] == -np.inf]] = -1

    for start in range(0, m, 512):
        refresh(cols[start:start + 512])

    merges = []
    for _ in range(steps):
        i = int(np.argmax(best_val))
        j = int(best_col[i])
        h = best_val[i]
        if j < 0 or not h > floor:
            break
        merges.append((i, j, h))

        new = np.array(combine(i, j), dtype=float)
        active[j] = False
        new[~active] = -np.inf
        new[i] = -np.inf
        # slot j is masked through ``active`` instead of being overwritten
        S[i, :] = new
        S[:, i] = new
        best_val[j] = -np.inf
        best_col[j] = -1

        stale = active & ((best_col == i) | (best_col == j))
        stale[i] = True
        # rows left of i keep their cached partner unless the merged slot beats it
        upd = np.flatnonzero(active[:i] & ~stale[:i])
        if upd.size:
            val = new[upd]
            better = (val > best_val[upd]) | ((val == best_val[upd]) & (i < best_col[upd]))
            sel = upd[better]
            best_val[sel] = val[better]
            best_col[sel] = i
        refresh(np.flatnonzero(stale))
    return merges


class _Tracker:
    """Maps matrix slots to dendrogram node ids while merging."""

    def __init__(self, n: int):
        self.n = n
        self.node = np.arange(n, dtype=np.int64)
        self.left: list[int] = []
        self.right: list[int] = []
        self.heights: list[float] = []

    def record(self, i: int, j: int, height: float) -> None:
        a, b = int(self.node[i]), int(self.node[j])
        self.left.append(min(a, b))
        self.right.append(max(a, b))
        self.heights.append(float(height))
        self.node[i] = self.n + len(self.left) - 1

    def dendrogram(self, kind: str) -> "Dendrogram":
        return Dendrogram(np.array(self.left, dtype=np.int64),
                          np.array(self.right, dtype=np.int64),
                          np.array(self.heights), kind)


def build_dendrogram(M: SimilarityMatrix, kind: str = "single") -> Dendrogram:
    """Merge the most similar pair of active clusters until one remains.

    Active clusters live in the matrix slot of their smallest member and ties
    go to the lexicographically smallest slot pair. Linkages are updated with
    the usual pairwise recurrences.
    """
    if kind not in LINKAGES:
        raise ValueError(f"unknown linkage {kind!r}")
    V = M.values
    n = V.shape[0]
    if n < 2:
        raise ValueError("need at least two points")
    if not np.array_equal(V, V.T):
        raise ValueError("matrix is not symmetric")
    if np.isnan(V).any():
        raise ValueError("matrix contains NaN")
    S = np.array(V, dtype=float) if M.is_similarity else -np.array(V, dtype=float)
    size = np.ones(n)
    track = _Tracker(n)
    sign = 1.0 if M.is_similarity else -1.0

    def combine(i, j):
        row = _update(kind, S[i], S[j], size[i], size[j])
        track.record(i, j, sign * S[i, j])
        size[i] += size[j]
        return row

    merges = agglomerate(S, combine, n - 1)
    if len(merges) != n - 1:
        raise ValueError("matrix has no finite linkage between remaining clusters")
    return track.dendrogram(M.kind)


# --- flat extraction -------------------------------------------------------

def _label_by_root(n: int, root_of: np.ndarray) -> FlatClustering:
    return FlatClustering.from_assignment(root_of)


def cut(T: Dendrogram, eta: float) -> FlatClustering:
    """Maximal subtrees whose merges are all at least as tight as ``eta``.

    Tight means similarity >= eta or dissimilarity <= eta; each subtree is
    checked on its own, so non-monotone trees are handled literally.
    """
    n = T.n
    ok = np.ones(2 * n - 1, dtype=bool)
    tight = T.heights >= eta if T.kind == SIMILARITY else T.heights <= eta
    for s in range(n - 1):
        ok[n + s] = tight[s] and ok[T.left[s]] and ok[T.right[s]]
    root_of = np.empty(n, dtype=np.int64)
    stack = [2 * n - 2]
    while stack:
        v = stack.pop()
        if ok[v]:
            root_of[T.leaves(v)] = v
        else:
            stack.append(int(T.left[v - n]))
            stack.append(int(T.right[v - n]))
    return _label_by_root(n, root_of)


def extract_k(T: Dendrogram, kappa: int) -> FlatClustering:
    """Clusters left after undoing the last ``kappa - 1`` merges."""
    n = T.n
    if not 1 <= kappa <= n:
        raise ValueError(f"kappa must lie in [1, {n}]")
    parent = np.arange(2 * n - 1)
    for s in range(n - kappa):
        parent[T.left[s]] = n + s
        parent[T.right[s]] = n + s
    root = np.arange(2 * n - 1)
    # parents always have larger ids, so one descending pass resolves roots
    for v in range(n + (n - kappa) - 1, -1, -1):
        root[v] = root[parent[v]] if parent[v] != v else v
    return _label_by_root(n, root[:n])


def merge_sets(T: Dendrogram) -> list[frozenset]:
    """Leaf sets of the two children at every step (order-free)."""
    n = T.n
    members: dict[int, frozenset] = {i: frozenset([i]) for i in range(n)}
    out = []
    for s in range(n - 1):
        a, b = members[int(T.left[s])], members[int(T.right[s])]
        out.append(frozenset([a, b]))
        members[n + s] = a | b
    return out
