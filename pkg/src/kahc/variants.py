"""HDBSCAN, PHA and GDL driven by any distance or kernel similarity matrix.

Each algorithm looks only at ``M.kind``: a dissimilarity is used as is, a
similarity ``K`` enters through ``1 - K`` wherever the distance version uses a
distance.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .ahc import Dendrogram, FlatClustering, _Tracker, agglomerate
from .kernels import DISSIMILARITY, SIMILARITY, SimilarityMatrix


class GDLWarning(UserWarning):
    """GDL stopped before reaching the requested number of clusters."""


def _as_distance(M: SimilarityMatrix) -> np.ndarray:
    V = np.array(M.values, dtype=float)
    return 1.0 - V if M.is_similarity else V


# --- HDBSCAN -------------------------------------------------------------------

@dataclass(frozen=True)
class ReachabilityMatrix:
    values: np.ndarray
    k: int
    kind: str

    def as_distance(self) -> np.ndarray:
        return 1.0 - self.values if self.kind == SIMILARITY else self.values


def core_values(M: SimilarityMatrix, k: int) -> np.ndarray:
    """Measure to the (k-1)-th nearest (most similar) other point; k=1 gives the self value."""
    n = M.n
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    V = np.array(M.values, dtype=float)
    if M.is_similarity:
        np.fill_diagonal(V, 1.0)
        return -np.partition(-V, k - 1, axis=1)[:, k - 1]
    np.fill_diagonal(V, 0.0)
    return np.partition(V, k - 1, axis=1)[:, k - 1]


def reachability_matrix(M: SimilarityMatrix, k: int) -> ReachabilityMatrix:
    core = core_values(M, k)
    V = np.array(M.values, dtype=float)
    if M.is_similarity:
        R = np.minimum(V, np.minimum(core[:, None], core[None, :]))
        np.fill_diagonal(R, 1.0)
    else:
        R = np.maximum(V, np.maximum(core[:, None], core[None, :]))
        np.fill_diagonal(R, 0.0)
    R.flags.writeable = False
    return ReachabilityMatrix(R, k, M.kind)


def minimum_spanning_tree(D: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Prim's algorithm on a dense matrix; returns (u, v, weight) edge arrays.

    As in the reference HDBSCAN code, each edge is recorded from the node added
    last rather than from its closest tree node. The weights are the MST
    weights and the single-linkage hierarchy built from them is unchanged,
    while equal-weight merges resolve the same way as the reference.
    """
    n = D.shape[0]
    remaining = np.arange(n, dtype=np.int64)
    best = np.full(n, np.inf)
    u = np.empty(n - 1, dtype=np.int64)
    v = np.empty(n - 1, dtype=np.int64)
    w = np.empty(n - 1)
    cur = 0
    for e in range(n - 1):
        keep = remaining != cur
        remaining = remaining[keep]
        best = np.minimum(best[keep], D[cur, remaining])
        k = int(np.argmin(best))
        u[e], v[e], w[e] = cur, remaining[k], best[k]
        cur = int(remaining[k])
    return u, v, w


def mst_single_linkage(D: np.ndarray) -> Dendrogram:
    """Single-linkage dendrogram from the MST edges taken in weight order."""
    n = D.shape[0]
    u, v, w = minimum_spanning_tree(D)
    # default (non-stable) sort on purpose: matches the reference tie order
    order = np.argsort(w)
    parent = np.arange(2 * n - 1)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    left = np.empty(n - 1, dtype=np.int64)
    right = np.empty(n - 1, dtype=np.int64)
    for s, e in enumerate(order):
        a, b = find(u[e]), find(v[e])
        left[s], right[s] = min(a, b), max(a, b)
        parent[a] = parent[b] = n + s
    return Dendrogram(left, right, w[order], DISSIMILARITY)


def condense_tree(T: Dendrogram, min_cluster_size: int):
    """Condensed cluster tree as rows ``(parent, child, lambda, child_size)``.

    Cluster ids start at ``n`` (the root). ``lambda = 1/height``, infinite for
    zero heights. Children smaller than ``min_cluster_size`` fall out of their
    parent as individual points.
    """
    n = T.n
    sizes = T.sizes()
    root = 2 * n - 2
    relabel = {root: n}
    next_label = n + 1
    rows = []

    def leaves_of(v):
        return T.leaves(v) if v >= n else np.array([v])

    queue = deque([root])
    while queue:
        v = queue.popleft()
        if v < n:
            continue
        s = v - n
        a, b = int(T.left[s]), int(T.right[s])
        h = T.heights[s]
        lam = 1.0 / h if h > 0 else np.inf
        ca, cb = sizes[a], sizes[b]
        big_a, big_b = ca >= min_cluster_size, cb >= min_cluster_size
        if big_a and big_b:
            for c, size in ((a, ca), (b, cb)):
                relabel[c] = next_label
                next_label += 1
                rows.append((relabel[v], relabel[c], lam, int(size)))
                queue.append(c)
        elif not big_a and not big_b:
            for c in (a, b):
                for p in leaves_of(c):
                    rows.append((relabel[v], int(p), lam, 1))
        else:
            small, big = (a, b) if big_b else (b, a)
            for p in leaves_of(small):
                rows.append((relabel[v], int(p), lam, 1))
            relabel[big] = relabel[v]
            queue.append(big)
    dtype = [("parent", np.int64), ("child", np.int64), ("lambda_val", float), ("child_size", np.int64)]
    return np.array(rows, dtype=dtype)


def cluster_stability(tree) -> dict:
    parents = tree["parent"]
    smallest = int(parents.min())
    largest = int(parents.max())
    births = np.zeros(max(largest, int(tree["child"].max())) + 1)
    births[tree["child"]] = tree["lambda_val"]
    births[smallest] = 0.0
    stability = {c: 0.0 for c in range(smallest, largest + 1)}
    with np.errstate(invalid="ignore"):
        for p, lam, size in zip(parents, tree["lambda_val"], tree["child_size"]):
            stability[int(p)] += (lam - births[p]) * size
    return stability


def select_eom(tree, stability: dict, allow_single_cluster: bool = False) -> list[int]:
    """Excess-of-mass selection: keep a cluster unless its children are jointly more stable."""
    stability = dict(stability)
    nodes = sorted(stability, reverse=True)
    if not allow_single_cluster:
        nodes = nodes[:-1]
    ctree = tree[tree["child_size"] > 1]
    children: dict[int, list[int]] = {}
    for p, c in zip(ctree["parent"], ctree["child"]):
        children.setdefault(int(p), []).append(int(c))
    selected = {c: True for c in nodes}
    for node in nodes:
        kids = children.get(node, [])
        sub = sum(stability[c] for c in kids)
        if sub > stability[node]:
            selected[node] = False
            stability[node] = sub
        else:
            stack = list(kids)
            while stack:
                c = stack.pop()
                if c in selected:
                    selected[c] = False
                stack.extend(children.get(c, []))
    return sorted(c for c, keep in selected.items() if keep)


def label_points(tree, clusters: list[int], n: int) -> np.ndarray:
    """Assign each point to its selected ancestor cluster, -1 for noise."""
    root = int(tree["parent"].min())
    chosen = set(clusters)
    parent_of = {}
    for p, c in zip(tree["parent"], tree["child"]):
        parent_of[int(c)] = int(p)
    out = np.full(n, -1, dtype=np.int64)
    for p in range(n):
        c = parent_of.get(p, root)
        while c not in chosen and c != root:
            c = parent_of[c]
        if c in chosen:
            out[p] = c
    return out


def hdbscan_tree(M: SimilarityMatrix, c: int) -> Dendrogram:
    """Single-linkage dendrogram over reachability with min samples ``c``."""
    n = M.n
    if c < 1:
        raise ValueError("min samples c must be >= 1")
    if c >= n:
        raise ValueError(f"min samples c={c} must be below n={n}")
    return mst_single_linkage(reachability_matrix(M, c).as_distance())


def hdbscan_flat(T: Dendrogram, l: int) -> FlatClustering:
    """EOM-selected flat clusters from the ``l``-condensed tree; noise gets label 0."""
    if l < 2:
        raise ValueError("min cluster size l must be >= 2")
    n = T.n
    tree = condense_tree(T, l)
    if tree.size == 0:
        return FlatClustering.from_assignment(np.full(n, -1), noise=-1)
    clusters = select_eom(tree, cluster_stability(tree))
    return FlatClustering.from_assignment(label_points(tree, clusters, n), noise=-1)


def hdbscan_cluster(M: SimilarityMatrix, l: int, c: int):
    """Single linkage over reachability, condensed by ``l``, EOM-selected flat clusters.

    Returns ``(dendrogram, flat)``; the dendrogram's heights are reachability
    distances (``1 -`` reach-similarity for kernel input) and unselected points
    get label 0.
    """
    if l < 2:
        raise ValueError("min cluster size l must be >= 2")
    T = hdbscan_tree(M, c)
    return T, hdbscan_flat(T, l)


# --- PHA ----------------------------------------------------------------------

def potentials(D: np.ndarray, lam: float) -> np.ndarray:
    """Total potential per point: sum over others of ``-1 / max(measure, lam)``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    P = -1.0 / np.maximum(D, lam)
    np.fill_diagonal(P, 0.0)
    return P.sum(axis=1)


def pha_lambda(D: np.ndarray, s: float) -> float:
    """Singularity cutoff: mean off-diagonal measure divided by the scale factor."""
    if not s > 0:
        raise ValueError("scale factor must be positive")
    n = D.shape[0]
    mean = D[~np.eye(n, dtype=bool)].mean() if n > 1 else 0.0
    # all-duplicate data: any positive cutoff gives identical potentials
    return mean / s if mean > 0 else 1.0


def pha_cluster(M: SimilarityMatrix, s: float, kappa: int, lam: float | None = None):
    """Potential-based agglomeration; returns ``(dendrogram, flat with kappa clusters)``.

    The pair linkage is the measure between two representatives: the
    shallower cluster (higher minimum potential) contributes its lowest-potential
    point, the other cluster its nearest member whose potential is at most
    that point's. On equal minimum potentials the lower slot plays the
    shallower role.
    """
    n = M.n
    if not 1 <= kappa <= n:
        raise ValueError(f"kappa must lie in [1, {n}]")
    D = _as_distance(M)
    if lam is None:
        lam = pha_lambda(D, s)
    phi = potentials(D, lam)

    members: dict[int, np.ndarray] = {i: np.array([i]) for i in range(n)}
    center = np.arange(n)
    slot_of = np.arange(n)
    track = _Tracker(n)
    S = -D.copy()

    def link_row(i: int) -> np.ndarray:
        """Linkage of the cluster in slot i against every active slot, as -measure."""
        ci = center[i]
        mi = members[i]
        out = np.full(n, -np.inf)
        others = np.array([k for k in members if k != i], dtype=np.int64)
        if others.size == 0:
            return out
        oc = center[others]
        deeper = (phi[oc] < phi[ci]) | ((phi[oc] == phi[ci]) & (others > i))
        # other cluster deeper: i's centre against eligible members of the other
        if deeper.any():
            vals = np.where(phi <= phi[ci], D[ci], np.inf)
            best = np.full(n, np.inf)
            np.minimum.at(best, slot_of, vals)
            out[others[deeper]] = -best[others[deeper]]
        # i deeper: the other's centre against eligible members of i
        shallow = others[~deeper]
        if shallow.size:
            sc = center[shallow]
            sub = D[np.ix_(mi, sc)]
            sub = np.where(phi[mi][:, None] <= phi[sc][None, :], sub, np.inf)
            out[shallow] = -sub.min(axis=0)
        return out

    def combine(i, j):
        track.record(i, j, -S[i, j])
        members[i] = np.concatenate([members[i], members.pop(j)])
        slot_of[members[i]] = i
        mi = members[i]
        center[i] = mi[np.lexsort((mi, phi[mi]))[0]]
        return link_row(i)

    agglomerate(S, combine, n - 1)
    from .ahc import extract_k

    T = track.dendrogram(DISSIMILARITY)
    return T, extract_k(T, kappa)


# --- GDL -----------------------------------------------------------------------

@dataclass(frozen=True)
class DegreeGraph:
    weights: csr_matrix
    K: int
    sigma2: float
    a: float


def knn_graph(M: SimilarityMatrix, K: int, a: float = 1.0) -> DegreeGraph:
    """Directed K-NN graph with Gaussian edge weights on the (kernel) distance."""
    n = M.n
    if not 1 <= K < n:
        raise ValueError(f"K must lie in [1, {n - 1}]")
    D = _as_distance(M)
    order = np.argsort(np.where(np.eye(n, dtype=bool), np.inf, D), axis=1, kind="stable")[:, :K]
    rows = np.repeat(np.arange(n), K)
    cols = order.ravel()
    d2 = D[rows, cols] ** 2
    sigma2 = a * d2.sum() / (n * K)
    w = np.exp(-d2 / sigma2) if sigma2 > 0 else np.ones_like(d2)
    W = csr_matrix((w, (rows, cols)), shape=(n, n))
    return DegreeGraph(W, K, float(sigma2), float(a))


def initial_clusters(M: SimilarityMatrix) -> np.ndarray:
    """Weakly connected components of the 1-NN digraph, labelled 0..m-1."""
    n = M.n
    D = _as_distance(M)
    nn = np.argsort(np.where(np.eye(n, dtype=bool), np.inf, D), axis=1, kind="stable")[:, 0]
    G = csr_matrix((np.ones(n), (np.arange(n), nn)), shape=(n, n))
    _, comp = connected_components(G, directed=True, connection="weak")
    return FlatClustering.from_assignment(comp).labels - 1


def gdl_affinity(W, Ca, Cb) -> float:
    """Graph degree affinity between two index sets, straight from the definition."""
    W = W.toarray() if hasattr(W, "toarray") else np.asarray(W)
    Ca, Cb = np.asarray(Ca), np.asarray(Cb)

    def part(src, dst):
        indeg = W[np.ix_(dst, src)].sum(axis=0) / dst.size
        outdeg = W[np.ix_(src, dst)].sum(axis=1) / dst.size
        return float(np.sum(indeg * outdeg))

    return part(Cb, Ca) + part(Ca, Cb)


def gdl_cluster(M: SimilarityMatrix, K: int, a: float = 1.0, target: int = 2) -> FlatClustering:
    """Merge initial 1-NN components by maximum graph-degree affinity down to ``target``.

    Stops early, with a warning, when no remaining pair has positive affinity.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    n = M.n
    graph = knn_graph(M, K, a)
    W = graph.weights
    init = initial_clusters(M)
    m = int(init.max()) + 1
    Ind = csr_matrix((np.ones(n), (np.arange(n), init)), shape=(n, m))
    IN = np.asarray((W.T @ Ind).todense())     # IN[i, c] = sum_{j in c} w_ji
    OUT = np.asarray((W @ Ind).todense())      # OUT[i, c] = sum_{j in c} w_ij
    P = IN * OUT
    Tm = np.asarray((Ind.T @ P))               # Tm[c', c] = sum_{i in c'} P[i, c]
    size = np.bincount(init, minlength=m).astype(float)
    A = Tm.T / size[:, None] ** 2 + Tm / size[None, :] ** 2
    labels = init.copy()

    def combine(i, j):
        IN[:, i] += IN[:, j]
        OUT[:, i] += OUT[:, j]
        labels[labels == j] = i
        size[i] += size[j]
        size[j] = np.inf
        Tm[i, :] += Tm[j, :]
        Tm[:, i] = np.bincount(labels, weights=IN[:, i] * OUT[:, i], minlength=m)
        return Tm[:, i] / size[i] ** 2 + Tm[i, :] / size ** 2

    steps = max(m - target, 0)
    merges = agglomerate(A, combine, steps, floor=0.0)
    warning = None
    if len(merges) < steps or m < target:
        warning = (f"stopped at {m - len(merges)} clusters; "
                   f"{target} requested")
        warnings.warn(warning, GDLWarning, stacklevel=2)
    return FlatClustering.from_assignment(labels, warning=warning)
