"""High-order proximity (shifted PPMI) and pairwise perturbation scales."""

import numpy as np
import scipy.sparse as sp


def adjacency_matrix(graph):
    """CSR adjacency with arc weights (rows = sources)."""
    deg = np.diff(graph.indptr)
    return sp.csr_matrix(
        (graph.weights, graph.indices, graph.indptr),
        shape=(graph.num_nodes, graph.num_nodes),
    )


def transition_matrix(graph):
    """Row-normalized adjacency: T[i, j] = A[i, j] / sum_k A[i, k].

    Every row sums to 1 (out-degree >= 1 guarantees a positive row sum).
    """
    a = adjacency_matrix(graph)
    rowsum = np.asarray(a.sum(axis=1)).reshape(-1)
    inv = sp.diags(1.0 / rowsum)
    return (inv @ a).tocsr()


def shifted_ppmi(graph, steps=2, shift=None):
    """Shifted positive pointwise mutual information over multi-step
    transitions.

    Accumulates S = T + T^2 + ... + T^steps, then for each stored (i, j):
        m_ij = max(log(S_ij / colsum_j) - log(shift), 0)
    with colsum_j = sum_k S_kj. Entries <= 0 are not stored. The default
    shift is 1/N. Stored entries always have a positive column sum, so the
    normalizer is well defined wherever it is evaluated.

    Returns a CSR matrix with only positive entries.
    """
    n = graph.num_nodes
    if shift is None:
        shift = 1.0 / n
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if shift <= 0:
        raise ValueError("shift must be positive")
    t = transition_matrix(graph)
    acc = t.copy()
    power = t.copy()
    for _ in range(steps - 1):
        power = (power @ t).tocsr()
        acc = (acc + power).tocsr()
    colsum = np.asarray(acc.sum(axis=0)).reshape(-1)
    coo = acc.tocoo()
    vals = np.log(coo.data) - np.log(colsum[coo.col]) - np.log(shift)
    keep = vals > 0
    m = sp.csr_matrix((vals[keep], (coo.row[keep], coo.col[keep])), shape=(n, n))
    m.sort_indices()
    return m


class ScaleMatrix:
    """Per-pair perturbation scales Phi derived from a proximity matrix M:
    Phi[i, j] = 1 - M[i, j] / max(M), and exactly 1 for pairs absent from M.

    The lookup is total: any (i, j) id pair maps to a finite scale in [0, 1].
    """

    def __init__(self, m):
        self.m = m.tocsr()
        self.max_m = float(self.m.data.max()) if self.m.nnz else 0.0

    def lookup(self, targets, contexts):
        """Vectorized Phi for parallel arrays of node ids."""
        if self.max_m == 0.0:
            return np.ones(len(targets))
        vals = np.asarray(self.m[targets, contexts]).reshape(-1)
        return 1.0 - vals / self.max_m

    def value(self, i, j):
        if self.max_m == 0.0:
            return 1.0
        return 1.0 - self.m[i, j] / self.max_m


def scale_factors(m, pairs=None):
    """Build a ScaleMatrix from a proximity matrix; when `pairs` is given,
    also return the scales for those (target, context) arrays."""
    sm = ScaleMatrix(m)
    if pairs is None:
        return sm
    t, c = pairs
    return sm, sm.lookup(t, c)


def dump_ppmi(m, scale, graph, path):
    """Write stored proximity entries as TSV: src, dst, m_ij, phi_ij (debug aid)."""
    coo = m.tocoo()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("src\tdst\tproximity\tscale\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{graph.node_names[i]}\t{graph.node_names[j]}\t"
                     f"{float(v)!r}\t{float(scale.value(i, j))!r}\n")
