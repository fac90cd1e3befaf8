"""Reference implementations used only by the tests. They are deliberately
plain (loops, sorting) and share no code with the library."""

import math


def quantile_sorted(sample, q):
    """Linear interpolation between order statistics at rank (n - 1) q."""
    xs = sorted(float(x) for x in sample)
    h = (len(xs) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def chamfer_loops(a, b, diag):
    """Sum of mean nearest-neighbour distances, O(N*M) with numpy rows."""
    import numpy as np
    a = np.asarray(a, dtype=float) / diag
    b = np.asarray(b, dtype=float) / diag

    def one_way(p, q):
        total = 0.0
        for row in p:
            d = q - row
            total += math.sqrt(float(np.min(np.sum(d * d, axis=1))))
        return total / len(p)

    return one_way(a, b) + one_way(b, a)


def dbscan_reference(x, eps, min_samples):
    """Textbook DBSCAN on a full distance matrix, visiting points in index
    order; border points keep the first cluster that claims them."""
    import numpy as np
    x = np.asarray(x, dtype=float)
    n = len(x)
    dist = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    nbrs = [[j for j in range(n) if dist[i, j] <= eps] for i in range(n)]
    core = [len(nb) >= min_samples for nb in nbrs]
    labels = [-1] * n
    visited = [False] * n
    cid = 0
    for i in range(n):
        if visited[i] or not core[i]:
            continue
        stack = [i]
        visited[i] = True
        labels[i] = cid
        while stack:
            p = stack.pop()
            for q in nbrs[p]:
                if labels[q] == -1:
                    labels[q] = cid
                if core[q] and not visited[q]:
                    visited[q] = True
                    stack.append(q)
        cid += 1
    return labels, core


def same_partition(a, b):
    """True when two labelings agree up to renaming of non-noise clusters."""
    fwd, bwd = {}, {}
    for x, y in zip(a, b):
        if (x == -1) != (y == -1):
            return False
        if x == -1:
            continue
        if fwd.setdefault(x, y) != y or bwd.setdefault(y, x) != x:
            return False
    return True
