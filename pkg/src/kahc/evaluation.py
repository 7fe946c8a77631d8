"""Dendrogram and flat-clustering quality: purity, entanglements, matched F1."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .ahc import Dendrogram, FlatClustering

EXACT_PURITY_MAX_N = 5000


def _check_labels(T: Dendrogram, labels) -> tuple[np.ndarray, int]:
    """Return labels re-coded to 0..kappa-1 and kappa."""
    labels = np.asarray(labels)
    if labels.shape != (T.n,):
        raise ValueError("labels must cover every leaf")
    if labels.dtype.kind == "f" and np.isnan(labels).any():
        raise ValueError("unlabelled leaf")
    if labels.dtype == object and any(l is None for l in labels):
        raise ValueError("unlabelled leaf")
    _, codes = np.unique(labels, return_inverse=True)
    return codes.reshape(-1), int(codes.max()) + 1


def _node_counts(T: Dendrogram, codes: np.ndarray, kappa: int) -> np.ndarray:
    n = T.n
    counts = np.zeros((2 * n - 1, kappa), dtype=np.int64)
    counts[np.arange(n), codes] = 1
    for s in range(n - 1):
        counts[n + s] = counts[T.left[s]] + counts[T.right[s]]
    return counts


# --- dendrogram purity ------------------------------------------------------

def dendrogram_purity_exact(T: Dendrogram, labels) -> float:
    """Mean over same-class leaf pairs of the class share under their LCA.

    One bottom-up pass: the pairs whose LCA is node v are exactly the pairs
    split between v's children, so class c contributes
    ``left[c] * right[c] * share_v[c]``.
    """
    codes, kappa = _check_labels(T, labels)
    n = T.n
    counts = _node_counts(T, codes, kappa)
    cl = counts[T.left].astype(float)
    cr = counts[T.right].astype(float)
    internal = counts[n:]
    share = internal / internal.sum(axis=1, keepdims=True)
    total = float(np.sum(cl * cr * share))
    sizes = counts[2 * n - 2].astype(float)
    pairs = float(np.sum(sizes * (sizes - 1) / 2))
    if pairs == 0:
        # every class is a singleton: no pair can be impure
        return 1.0
    return total / pairs


class _LCA:
    """Euler tour + sparse table; O(1) vectorised queries."""

    def __init__(self, T: Dendrogram):
        n = T.n
        m = 2 * n - 1
        root = m - 1
        depth = np.zeros(m, dtype=np.int64)
        for s in range(n - 2, -1, -1):
            v = n + s
            depth[T.left[s]] = depth[v] + 1
            depth[T.right[s]] = depth[v] + 1
        euler = []
        first = np.empty(m, dtype=np.int64)
        stack = [(root, 0)]
        while stack:
            v, state = stack.pop()
            if state == 0:
                first[v] = len(euler)
            euler.append(v)
            if v >= n and state < 2:
                stack.append((v, state + 1))
                child = T.left[v - n] if state == 0 else T.right[v - n]
                stack.append((int(child), 0))
        self.euler = np.array(euler, dtype=np.int64)
        self.first = first
        ed = depth[self.euler]
        table = [np.arange(self.euler.size)]
        span = 1
        while 2 * span <= self.euler.size:
            prev = table[-1]
            a, b = prev[:-span], prev[span:]
            table.append(np.where(ed[a] <= ed[b], a, b))
            span *= 2
        self.table = table
        self.edepth = ed

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        lo = np.minimum(self.first[x], self.first[y])
        hi = np.maximum(self.first[x], self.first[y]) + 1
        level = np.floor(np.log2(hi - lo)).astype(np.int64)
        out = np.empty(lo.size, dtype=np.int64)
        for k in np.unique(level):
            sel = level == k
            t = self.table[k]
            a = t[lo[sel]]
            b = t[hi[sel] - (1 << k)]
            out[sel] = np.where(self.edepth[a] <= self.edepth[b], a, b)
        return self.euler[out]


def dendrogram_purity_mc(T: Dendrogram, labels, samples: int = 1_000_000, seed: int = 0) -> float:
    """Unbiased Monte Carlo estimate of dendrogram purity from uniform same-class pairs."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    codes, kappa = _check_labels(T, labels)
    rng = np.random.default_rng(seed)
    members = [np.flatnonzero(codes == c) for c in range(kappa)]
    sizes = np.array([m.size for m in members], dtype=float)
    weights = sizes * (sizes - 1) / 2
    if weights.sum() == 0:
        return 1.0
    cls = rng.choice(kappa, size=samples, p=weights / weights.sum())
    x = np.empty(samples, dtype=np.int64)
    y = np.empty(samples, dtype=np.int64)
    for c in np.unique(cls):
        sel = np.flatnonzero(cls == c)
        m = members[c]
        a = rng.integers(0, m.size, size=sel.size)
        b = rng.integers(0, m.size - 1, size=sel.size)
        b = b + (b >= a)
        x[sel], y[sel] = m[a], m[b]
    counts = _node_counts(T, codes, kappa)
    lca = _LCA(T)(x, y)
    share = counts[lca, cls] / counts[lca].sum(axis=1)
    return float(share.mean())


def dendrogram_purity(T: Dendrogram, labels, samples: int = 1_000_000, seed: int = 0,
                      exact_max_n: int = EXACT_PURITY_MAX_N) -> float:
    if T.n <= exact_max_n:
        return dendrogram_purity_exact(T, labels)
    return dendrogram_purity_mc(T, labels, samples, seed)


# --- entanglements --------------------------------------------------------

@dataclass(frozen=True)
class EntanglementReport:
    count: int
    total_level: int
    avg_level: float
    per_merge_flags: tuple = field(repr=False)


def entanglements(T: Dendrogram, labels) -> EntanglementReport:
    """Label merges bottom-up; a merge of two equal class labels keeps the label,
    anything else is neutral and counts as an entanglement at its step."""
    codes, _ = _check_labels(T, labels)
    n = T.n
    lab = np.full(2 * n - 1, -1, dtype=np.int64)
    lab[:n] = codes
    flags = np.zeros(n - 1, dtype=bool)
    for s in range(n - 1):
        a, b = lab[T.left[s]], lab[T.right[s]]
        if a >= 0 and a == b:
            lab[n + s] = a
        else:
            flags[s] = True
    count = int(flags.sum())
    total = int(np.sum(np.flatnonzero(flags) + 1))
    return EntanglementReport(count, total, total / count if count else 0.0, tuple(flags.tolist()))


class Violation(NamedTuple):
    """A cross-cluster merge before either cluster finished merging its own members.

    ``s`` and ``t`` are the 1-based positions in each cluster's own merge
    sequence, ``step`` the global merge step and ``nodes`` the two merged
    dendrogram nodes.
    """

    s: int
    t: int
    step: int
    nodes: tuple


def check_separation_condition(T: Dendrogram, labels, pair) -> list[Violation]:
    """Replay the merges restricted to the two classes in ``pair``.

    An empty result means both classes appear as whole subtrees of the
    restricted dendrogram.
    """
    labels = np.asarray(labels)
    if labels.shape != (T.n,):
        raise ValueError("labels must cover every leaf")
    ci, cj = pair
    if ci == cj:
        raise ValueError("pair must name two different clusters")
    for c in (ci, cj):
        if not np.any(labels == c):
            raise ValueError(f"unknown cluster label {c!r}")
    n = T.n
    # per node: count of members from class i and class j
    cnt = np.zeros((2 * n - 1, 2), dtype=np.int64)
    cnt[:n, 0] = labels == ci
    cnt[:n, 1] = labels == cj
    total_i, total_j = int(cnt[:n, 0].sum()), int(cnt[:n, 1].sum())
    done_i = done_j = 0
    out: list[Violation] = []
    for s in range(n - 1):
        a, b = int(T.left[s]), int(T.right[s])
        cnt[n + s] = cnt[a] + cnt[b]
        ra, rb = cnt[a], cnt[b]
        if ra.sum() == 0 or rb.sum() == 0:
            continue
        if ra[1] == 0 and rb[1] == 0:
            done_i += 1
        elif ra[0] == 0 and rb[0] == 0:
            done_j += 1
        else:
            complete_i = done_i == total_i - 1
            complete_j = done_j == total_j - 1
            whole = ((ra[1] == 0 and ra[0] == total_i and rb[0] == 0 and rb[1] == total_j) or
                     (rb[1] == 0 and rb[0] == total_i and ra[0] == 0 and ra[1] == total_j))
            if not (complete_i and complete_j and whole):
                out.append(Violation(done_i + 1, done_j + 1, s + 1, (a, b)))
    return out


# --- flat F1 ----------------------------------------------------------------

def f1_flat(pred: FlatClustering, truth) -> tuple[float, list[float], list[float]]:
    """Hungarian-matched F1 averaged over ground-truth clusters.

    Noise (label 0) is left out of every predicted cluster but still counts
    toward the true cluster sizes. Returns ``(f1, precision, recall)`` with one
    precision/recall entry per ground-truth cluster (0 when unmatched).
    """
    pl = np.asarray(pred.labels)
    truth = np.asarray(truth)
    if pl.shape != truth.shape:
        raise ValueError("prediction and truth must cover the same points")
    tvals, tcodes = np.unique(truth, return_inverse=True)
    kappa = tvals.size
    tsize = np.bincount(tcodes, minlength=kappa).astype(float)
    pvals = np.unique(pl[pl != 0])
    if pvals.size == 0:
        return 0.0, [0.0] * kappa, [0.0] * kappa
    keep = pl != 0
    pcodes = np.searchsorted(pvals, pl[keep])
    conf = np.zeros((pvals.size, kappa))
    np.add.at(conf, (pcodes, tcodes[keep]), 1)
    psize = conf.sum(axis=1)
    f1 = 2 * conf / (psize[:, None] + tsize[None, :])
    rows, cols = linear_sum_assignment(f1, maximize=True)
    precision = [0.0] * kappa
    recall = [0.0] * kappa
    for r, c in zip(rows, cols):
        precision[c] = float(conf[r, c] / psize[r])
        recall[c] = float(conf[r, c] / tsize[c])
    return float(f1[rows, cols].sum() / kappa), precision, recall


# --- reports ------------------------------------------------------------------

@dataclass
class EvaluationReport:
    dendrogram_purity: Optional[float]
    entanglement: Optional[EntanglementReport]
    f1: Optional[float]
    precision: list = field(default_factory=list)
    recall: list = field(default_factory=list)
    measure_tag: str = ""
    params: dict = field(default_factory=dict)

    FIELDS = ("measure_tag", "params", "dendrogram_purity", "entanglement_count",
              "entanglement_avg_level", "f1", "precision", "recall")

    def flat(self) -> dict:
        ent = self.entanglement
        return {
            "measure_tag": self.measure_tag,
            "params": dict(sorted(self.params.items())),
            "dendrogram_purity": self.dendrogram_purity,
            "entanglement_count": ent.count if ent else None,
            "entanglement_avg_level": ent.avg_level if ent else None,
            "f1": self.f1,
            "precision": list(self.precision),
            "recall": list(self.recall),
        }

    def to_json(self) -> str:
        return json.dumps(self.flat())

    def csv_row(self) -> list:
        d = self.flat()
        d["params"] = ";".join(f"{k}={v}" for k, v in d["params"].items())
        d["precision"] = ";".join(f"{v:.6g}" for v in d["precision"])
        d["recall"] = ";".join(f"{v:.6g}" for v in d["recall"])
        return ["" if d[k] is None else d[k] for k in self.FIELDS]


def evaluate(T: Optional[Dendrogram], flat: Optional[FlatClustering], labels,
             measure_tag: str = "", params: Optional[dict] = None) -> EvaluationReport:
    purity = ent = None
    if T is not None:
        purity = dendrogram_purity(T, labels)
        ent = entanglements(T, labels)
    f1 = None
    precision: list = []
    recall: list = []
    if flat is not None:
        f1, precision, recall = f1_flat(flat, labels)
    return EvaluationReport(purity, ent, f1, precision, recall, measure_tag, dict(params or {}))
