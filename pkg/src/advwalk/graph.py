"""Graph ingestion, preprocessing, and O(1) weighted sampling.

Graphs are stored in CSR form over integer node ids. Node ids are assigned
by first appearance in the input edge list (restricted to nodes that survive
preprocessing), so a given file always produces the same id assignment.
"""

import numpy as np


class GraphParseError(ValueError):
    """Raised when an edge-list or label file line cannot be parsed."""


class AliasTable:
    """Walker's alias method for O(1) sampling from a discrete distribution.

    Built over the support of the weight vector: zero-weight entries never
    appear in the table, and samples are mapped back to original indices.
    """

    def __init__(self, prob, alias, support):
        self.prob = prob        # (n,) float64, acceptance thresholds
        self.alias = alias      # (n,) int64, fallback slots
        self.support = support  # (n,) int64, slot -> original index
        self.n = len(prob)

    def sample(self, rng, size=None):
        """Draw indices from the distribution. Returns a scalar when size is None."""
        scalar = size is None
        m = 1 if scalar else int(size)
        slots = rng.integers(0, self.n, size=m)
        coins = rng.random(m)
        take_alias = coins >= self.prob[slots]
        slots = np.where(take_alias, self.alias[slots], slots)
        out = self.support[slots]
        return int(out[0]) if scalar else out

    def probabilities(self):
        """Reconstruct the sampling distribution over original indices (for tests)."""
        n_orig = int(self.support.max()) + 1 if self.n else 0
        p = np.zeros(n_orig)
        for s in range(self.n):
            p[self.support[s]] += self.prob[s] / self.n
            p[self.support[self.alias[s]]] += (1.0 - self.prob[s]) / self.n
        return p


def build_alias_table(weights):
    """Construct an alias table from non-negative weights.

    Two-queue construction: scale weights so the mean bucket mass is 1, then
    repeatedly pair an under-full bucket with an over-full one.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("weights must be one-dimensional")
    if np.any(w < 0):
        raise ValueError("negative weight in alias table input")
    support = np.flatnonzero(w > 0).astype(np.int64)
    if len(support) == 0:
        raise ValueError("all weights are zero")
    ws = w[support]
    n = len(ws)
    scaled = ws * (n / ws.sum())
    prob = np.ones(n)
    alias = np.arange(n, dtype=np.int64)

    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] - (1.0 - scaled[s])
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    # leftovers are numerically == 1
    for i in small + large:
        prob[i] = 1.0
        alias[i] = i
    return AliasTable(prob, alias, support)


class Graph:
    """Weighted graph in CSR form with per-node alias tables for walk steps.

    Attributes
    ----------
    indptr, indices, weights : CSR arrays (arcs sorted by (src, dst) id)
    node_names : list of str, id -> name
    name_to_id : dict, name -> id
    directed : bool, whether arcs were mirrored at build time
    """

    def __init__(self, indptr, indices, weights, node_names, directed):
        self.indptr = indptr
        self.indices = indices
        self.weights = weights
        self.node_names = node_names
        self.name_to_id = {n: i for i, n in enumerate(node_names)}
        self.directed = directed
        self.num_nodes = len(node_names)
        self.num_arcs = len(indices)
        self._check_invariants()
        self._build_step_tables()

    def _check_invariants(self):
        if self.num_nodes == 0:
            raise ValueError("empty graph after preprocessing")
        deg = np.diff(self.indptr)
        if np.any(deg < 1):
            raise ValueError("node with zero out-degree survived preprocessing")
        if np.any(self.weights <= 0):
            raise ValueError("non-positive arc weight")
        src = np.repeat(np.arange(self.num_nodes), deg)
        if np.any(src == self.indices):
            raise ValueError("self-loop survived preprocessing")

    def _build_step_tables(self):
        # Packed per-node alias tables aligned with CSR slots: sampling a
        # neighbour of node u is an alias draw over slots indptr[u]:indptr[u+1].
        n_arcs = self.num_arcs
        self.step_prob = np.empty(n_arcs)
        self.step_alias = np.empty(n_arcs, dtype=np.int64)  # local slot offsets
        for u in range(self.num_nodes):
            lo, hi = self.indptr[u], self.indptr[u + 1]
            t = build_alias_table(self.weights[lo:hi])
            # weights are strictly positive so support is the identity
            self.step_prob[lo:hi] = t.prob
            self.step_alias[lo:hi] = t.alias

    @property
    def out_degree(self):
        return np.diff(self.indptr)

    def neighbors(self, u):
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def has_arc(self, u, v):
        lo, hi = self.indptr[u], self.indptr[u + 1]
        k = np.searchsorted(self.indices[lo:hi], v)
        return k < hi - lo and self.indices[lo + k] == v

    def arc_set(self):
        """Set of (u, v) id pairs for membership tests."""
        deg = np.diff(self.indptr)
        src = np.repeat(np.arange(self.num_nodes), deg)
        return set(zip(src.tolist(), self.indices.tolist()))


def build_graph(edges, directed=False):
    """Build a Graph from an iterable of (src_name, dst_name, weight) triples.

    Preprocessing: self-loops and zero-weight edges are dropped, duplicate
    arcs merge by summing weights, undirected graphs get both arc directions,
    and nodes with zero out-degree are removed (iterated to a fixpoint, since
    removing a node can orphan others in directed graphs).
    """
    arcs = {}
    appearance = []  # node names in first-appearance order
    seen = set()

    def note(name):
        if name not in seen:
            seen.add(name)
            appearance.append(name)

    for src, dst, w in edges:
        w = float(w)
        if w < 0:
            raise GraphParseError(f"negative edge weight {w} on ({src}, {dst})")
        note(src)
        note(dst)
        if src == dst or w == 0.0:
            continue
        arcs[(src, dst)] = arcs.get((src, dst), 0.0) + w
        if not directed:
            arcs[(dst, src)] = arcs.get((dst, src), 0.0) + w

    # iteratively drop zero-out-degree nodes
    alive = set(seen)
    while True:
        has_out = {u for (u, _) in arcs}
        dead = alive - has_out
        if not dead:
            break
        alive -= dead
        arcs = {(u, v): w for (u, v), w in arcs.items() if v not in dead}

    if not alive:
        raise ValueError("empty graph after preprocessing")

    names = [n for n in appearance if n in alive]
    ids = {n: i for i, n in enumerate(names)}
    n = len(names)

    src_ids = np.fromiter((ids[u] for (u, v) in arcs), dtype=np.int64, count=len(arcs))
    dst_ids = np.fromiter((ids[v] for (u, v) in arcs), dtype=np.int64, count=len(arcs))
    w_arr = np.fromiter(arcs.values(), dtype=np.float64, count=len(arcs))
    order = np.lexsort((dst_ids, src_ids))
    src_ids, dst_ids, w_arr = src_ids[order], dst_ids[order], w_arr[order]

    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, src_ids + 1, 1)
    indptr = np.cumsum(indptr)
    return Graph(indptr, dst_ids, w_arr, names, directed)


def load_edge_list(path, directed=False, weighted=False):
    """Load a graph from a whitespace-separated edge list.

    Each non-blank, non-comment line is `src dst` or `src dst weight`.
    Lines starting with '#' are comments. The weight column is only honoured
    when weighted=True; otherwise every edge gets weight 1.
    """
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise GraphParseError(f"{path}:{ln}: expected 2 or 3 fields, got {len(parts)}")
            w = 1.0
            if len(parts) == 3 and weighted:
                try:
                    w = float(parts[2])
                except ValueError:
                    raise GraphParseError(f"{path}:{ln}: bad weight {parts[2]!r}") from None
                if not np.isfinite(w) or w < 0:
                    raise GraphParseError(f"{path}:{ln}: bad weight {parts[2]!r}")
            edges.append((parts[0], parts[1], w))
    return build_graph(edges, directed=directed)


def save_edge_list(graph, path):
    """Write a canonical edge list: one line per arc (or per undirected
    edge), tab-separated `src dst weight`, endpoints and lines ordered
    lexicographically by node name. The output depends only on the
    name-level edge set, so saving and reloading is idempotent at the file
    level (node ids may be renumbered; evaluation realigns by name)."""
    deg = np.diff(graph.indptr)
    src = np.repeat(np.arange(graph.num_nodes), deg)
    lines = []
    for k in range(graph.num_arcs):
        u, v = int(src[k]), int(graph.indices[k])
        a, b = graph.node_names[u], graph.node_names[v]
        if not graph.directed:
            if u > v:
                continue  # undirected: write each edge once
            if a > b:
                a, b = b, a
        lines.append((a, b, float(graph.weights[k])))
    lines.sort()
    with open(path, "w", encoding="utf-8") as fh:
        for a, b, w in lines:
            fh.write(f"{a}\t{b}\t{w!r}\n")


def negative_distribution(graph):
    """Unigram noise distribution over nodes: P(v) proportional to out-degree^0.75."""
    return build_alias_table(graph.out_degree.astype(np.float64) ** 0.75)


def load_labels(path):
    """Load `node_name label` lines into a dict. Duplicate names must agree."""
    labels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise GraphParseError(f"{path}:{ln}: expected 2 fields, got {len(parts)}")
            name, lab = parts
            if name in labels and labels[name] != lab:
                raise GraphParseError(f"{path}:{ln}: conflicting labels for {name!r}")
            labels[name] = lab
    return labels
