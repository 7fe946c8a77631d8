import itertools

import numpy as np
import pytest

from kahc.ahc import Dendrogram
from kahc.kernels import SIMILARITY


def random_dendrogram(n, rng, kind=SIMILARITY):
    """Uniformly random merge order over n leaves."""
    active = list(range(n))
    left, right = [], []
    for s in range(n - 1):
        a, b = sorted(rng.choice(len(active), size=2, replace=False))
        x, y = active[a], active[b]
        left.append(min(x, y))
        right.append(max(x, y))
        del active[b]
        del active[a]
        active.append(n + s)
    heights = np.sort(rng.random(n - 1))[::-1]
    return Dendrogram(np.array(left), np.array(right), heights, kind)


def leaf_sets(T):
    n = T.n
    sets = {i: frozenset([i]) for i in range(n)}
    for s in range(n - 1):
        sets[n + s] = sets[int(T.left[s])] | sets[int(T.right[s])]
    return sets


def purity_oracle(T, labels):
    """Mean over same-class pairs of the class share under their lowest common ancestor."""
    sets = leaf_sets(T)
    by_size = sorted(sets.values(), key=len)
    total, pairs = 0.0, 0
    for i, j in itertools.combinations(range(T.n), 2):
        if labels[i] != labels[j]:
            continue
        lca = next(s for s in by_size if i in s and j in s)
        total += sum(labels[k] == labels[i] for k in lca) / len(lca)
        pairs += 1
    return total / pairs if pairs else 1.0


def f1_oracle(pred, truth):
    """Best one-to-one matching by enumerating every assignment."""
    truth = np.asarray(truth)
    tvals = sorted(set(truth.tolist()))
    pvals = sorted(set(pred.tolist()) - {0})
    size = max(len(tvals), len(pvals))
    best = 0.0
    for perm in itertools.permutations(range(size), len(tvals)):
        total = 0.0
        for ti, pi in enumerate(perm):
            if pi >= len(pvals):
                continue
            inter = np.sum((truth == tvals[ti]) & (pred == pvals[pi]))
            total += 2 * inter / (np.sum(pred == pvals[pi]) + np.sum(truth == tvals[ti]))
        best = max(best, total / len(tvals))
    return best


def random_labels(n, kappa, rng):
    labels = rng.integers(1, kappa + 1, size=n)
    labels[:kappa] = np.arange(1, kappa + 1)
    return rng.permutation(labels)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
