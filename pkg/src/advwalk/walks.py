"""Truncated random walks and skip-gram pair extraction."""

from dataclasses import dataclass

import numpy as np


@dataclass
class WalkConfig:
    """Corpus-generation settings for one embedding run."""

    walks_per_node: int = 1
    walk_length: int = 40
    window: int = 5
    negatives: int = 5

    def __post_init__(self):
        if self.walks_per_node < 1:
            raise ValueError("walks_per_node must be >= 1")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.negatives < 0:
            raise ValueError("negatives must be >= 0")


def generate_walks(graph, config, rng):
    """Sample truncated random walks: `walks_per_node` passes over all nodes,
    each pass visiting start nodes in a fresh random order. Steps follow
    arc weights, so every walk has the full configured length (out-degree
    is >= 1 for every surviving node).

    Returns an int64 array of shape (walks_per_node * num_nodes, walk_length).
    """
    n = graph.num_nodes
    l = config.walk_length
    walks = np.empty((config.walks_per_node * n, l), dtype=np.int64)
    indptr = graph.indptr
    indices = graph.indices
    prob = graph.step_prob
    alias = graph.step_alias
    for p in range(config.walks_per_node):
        block = walks[p * n:(p + 1) * n]
        block[:, 0] = rng.permutation(n)
        cur = block[:, 0].copy()
        for t in range(1, l):
            lo = indptr[cur]
            deg = indptr[cur + 1] - lo
            # alias draw over each walker's neighbour slots
            slot = lo + rng.integers(0, deg)
            coin = rng.random(n)
            take_alias = coin >= prob[slot]
            slot = np.where(take_alias, lo + alias[slot], slot)
            cur = indices[slot]
            block[:, t] = cur
    return walks


def build_pairs(walks, window):
    """Extract (target, context) pairs: all ordered position pairs (i, j)
    with 0 < |i - j| <= window. A walk of length l yields
    2 * (window*l - window*(window+1)/2) pairs.

    Returns (targets, contexts) int64 arrays, ordered by walk, then target
    position, then offset (-window..+window skipping 0).
    """
    n_walks, l = walks.shape
    t_idx = []
    c_idx = []
    for i in range(l):
        for off in range(-window, window + 1):
            j = i + off
            if off == 0 or j < 0 or j >= l:
                continue
            t_idx.append(i)
            c_idx.append(j)
    t_idx = np.asarray(t_idx, dtype=np.int64)
    c_idx = np.asarray(c_idx, dtype=np.int64)
    targets = walks[:, t_idx].reshape(-1)
    contexts = walks[:, c_idx].reshape(-1)
    return targets, contexts


class PairBatch:
    """One minibatch of skip-gram training examples.

    targets, contexts: (B,) int64 node ids
    negatives: (B, K) int64 node ids drawn from the noise distribution
    scale: (B,) float64 per-pair perturbation weights (1.0 when unused)
    """

    def __init__(self, targets, contexts, negatives, scale=None):
        self.targets = targets
        self.contexts = contexts
        self.negatives = negatives
        self.scale = scale if scale is not None else np.ones(len(targets))

    def __len__(self):
        return len(self.targets)

    def slice(self, lo, hi):
        return PairBatch(self.targets[lo:hi], self.contexts[lo:hi],
                         self.negatives[lo:hi], self.scale[lo:hi])

    def iter_minibatches(self, batch_size):
        for lo in range(0, len(self), batch_size):
            yield self.slice(lo, min(lo + batch_size, len(self)))


def attach_negatives(targets, contexts, neg_table, k, rng):
    """Draw k noise nodes per pair and redraw any that collide with the
    pair's own context (up to 10 attempts per slot, then keep the collision).

    Returns a PairBatch over the full corpus; slice it for minibatches.
    """
    m = len(targets)
    negs = neg_table.sample(rng, m * k).reshape(m, k)
    if k > 0:
        for _ in range(10):
            clash = negs == contexts[:, None]
            n_clash = int(clash.sum())
            if n_clash == 0:
                break
            negs[clash] = neg_table.sample(rng, n_clash)
    return PairBatch(targets, contexts, negs)


def dump_walks(walks, graph, path):
    """Write one walk per line as space-separated node names (debug aid)."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in walks:
            fh.write(" ".join(graph.node_names[i] for i in row))
            fh.write("\n")
