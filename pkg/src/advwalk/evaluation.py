"""Downstream evaluation: link prediction, node classification, attacks."""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from . import seeding
from .graph import Graph
from .training import EmbeddingModel, corpus_gradients
from .walks import WalkConfig, attach_negatives, build_pairs, generate_walks
from .graph import negative_distribution

_ZERO_TOL = 1e-12


@dataclass
class EvalSplit:
    """A frozen train/test division for one evaluation task.

    Link prediction fills the edge arrays (id pairs, smaller id first) and
    keeps a reference to the graph the split was cut from so later stages
    can test non-edge membership against the ORIGINAL edge set.
    """

    kind: str
    ratio: float
    seed: int
    source_graph: Graph = None
    train_edges: np.ndarray = None
    test_edges: np.ndarray = None
    negative_test_edges: np.ndarray = None
    train_nodes: np.ndarray = None
    test_nodes: np.ndarray = None


def _undirected_edges(graph):
    deg = np.diff(graph.indptr)
    src = np.repeat(np.arange(graph.num_nodes), deg)
    mask = src < graph.indices
    return np.stack([src[mask], graph.indices[mask]], axis=1)


def _sample_non_edges(graph, count, rng, forbidden=()):
    """Uniform distinct non-edges (i < j) of the graph, rejection sampled.
    Gives up after 100 * count attempts (pathologically dense graphs)."""
    arcs = graph.arc_set()
    n = graph.num_nodes
    chosen = set(forbidden)
    out = []
    attempts = 0
    cap = 100 * max(count, 1)
    while len(out) < count:
        attempts += 1
        if attempts > cap:
            raise RuntimeError(f"could not sample {count} non-edges in {cap} attempts")
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u == v:
            continue
        a, b = (u, v) if u < v else (v, u)
        if (a, b) in arcs or (a, b) in chosen:
            continue
        chosen.add((a, b))
        out.append((a, b))
    return np.asarray(out, dtype=np.int64).reshape(count, 2)


def split_link_prediction(graph, keep_ratio=0.8, seed=0):
    """Hide a fraction of edges for testing, keeping every node with
    degree >= 1 in the residual graph.

    Edges are visited in random order and hidden greedily while both
    endpoints retain degree > 1. Test negatives are twice the hidden count,
    sampled from the non-edges of the original graph.
    """
    if graph.directed:
        raise ValueError("link-prediction splits require an undirected graph")
    if not 0.0 < keep_ratio < 1.0:
        raise ValueError("keep_ratio must be in (0, 1)")
    edges = _undirected_edges(graph)
    n_edges = len(edges)
    n_hide = int(round((1.0 - keep_ratio) * n_edges))
    rng = seeding.stream(seed, seeding.EVAL_SPLIT)
    order = rng.permutation(n_edges)
    deg = graph.out_degree.copy()
    hide_mask = np.zeros(n_edges, dtype=bool)
    hidden = 0
    for e in order:
        if hidden == n_hide:
            break
        u, v = edges[e]
        if deg[u] > 1 and deg[v] > 1:
            hide_mask[e] = True
            deg[u] -= 1
            deg[v] -= 1
            hidden += 1
    test_edges = edges[hide_mask]
    train_edges = edges[~hide_mask]
    neg = _sample_non_edges(graph, 2 * len(test_edges), rng)
    return EvalSplit(kind="link_prediction", ratio=keep_ratio, seed=seed,
                     source_graph=graph, train_edges=train_edges,
                     test_edges=test_edges, negative_test_edges=neg)


def residual_graph(graph, split):
    """Graph over the split's train edges only, preserving the parent's node
    ids and weights, so embeddings trained on it align with the parent."""
    deg = np.diff(graph.indptr)
    src = np.repeat(np.arange(graph.num_nodes), deg)
    weight_of = {}
    for k in range(graph.num_arcs):
        weight_of[(int(src[k]), int(graph.indices[k]))] = graph.weights[k]

    kept = split.train_edges
    s = np.concatenate([kept[:, 0], kept[:, 1]])
    t = np.concatenate([kept[:, 1], kept[:, 0]])
    w = np.fromiter((weight_of[(int(a), int(b))] for a, b in zip(s, t)),
                    dtype=np.float64, count=len(s))
    order = np.lexsort((t, s))
    s, t, w = s[order], t[order], w[order]
    indptr = np.zeros(graph.num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, s + 1, 1)
    indptr = np.cumsum(indptr)
    return Graph(indptr, t, w, graph.node_names, directed=False)


def hadamard_features(model, pairs):
    """Element-wise products of the endpoint target embeddings, (P, dim)."""
    pairs = np.asarray(pairs)
    return model.target[pairs[:, 0]] * model.target[pairs[:, 1]]


class LinearClassifier:
    """Logistic regression trained by full-batch gradient descent.

    Binary problems train one weight vector; multi-class problems train one
    per class (one vs rest). Features are standardized internally. The step
    size is the inverse Lipschitz constant of the regularized loss gradient,
    so training is monotone and deterministic.
    """

    def __init__(self, max_iter=500, tol=1e-6):
        self.max_iter = max_iter
        self.tol = tol
        self.classes_ = None
        self.weights_ = None  # (n_models, d + 1), bias last
        self.mu_ = None
        self.sd_ = None

    def _standardize(self, x):
        return (x - self.mu_) / self.sd_

    def fit(self, x, y, seed=0):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y)
        n, d = x.shape
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        self.mu_ = x.mean(axis=0)
        sd = x.std(axis=0)
        sd[sd < _ZERO_TOL] = 1.0
        self.sd_ = sd
        xs = self._standardize(x)
        xb = np.concatenate([xs, np.ones((n, 1))], axis=1)

        alpha = 1.0 / n  # inverse-squared-regularization at C = 1
        gram = xb.T @ xb
        lam_max = float(np.linalg.eigvalsh(gram)[-1])
        lr = 1.0 / (0.25 * lam_max / n + alpha)

        if len(self.classes_) == 2:
            targets = [(y == self.classes_[1]).astype(np.float64)]
        else:
            targets = [(y == c).astype(np.float64) for c in self.classes_]

        ws = []
        reg_mask = np.ones(d + 1)
        reg_mask[-1] = 0.0  # bias unpenalized
        for t in targets:
            w = np.zeros(d + 1)
            for _ in range(self.max_iter):
                p = expit(xb @ w)
                g = xb.T @ (p - t) / n + alpha * reg_mask * w
                if np.max(np.abs(g)) < self.tol:
                    break
                w -= lr * g
            ws.append(w)
        self.weights_ = np.stack(ws)
        return self

    def decision(self, x):
        """Margins: (n,) for binary problems, (n, n_classes) otherwise."""
        xb = np.concatenate([self._standardize(np.asarray(x, dtype=np.float64)),
                             np.ones((len(x), 1))], axis=1)
        scores = xb @ self.weights_.T
        return scores[:, 0] if len(self.classes_) == 2 else scores

    def predict(self, x):
        scores = self.decision(x)
        if len(self.classes_) == 2:
            return np.where(scores > 0, self.classes_[1], self.classes_[0])
        return self.classes_[np.argmax(scores, axis=1)]


def auc_score(pos_scores, neg_scores):
    """Area under the ROC curve from score samples, computed with the rank
    statistic (ties share averaged ranks)."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    n_pos = len(pos_scores)
    n_neg = len(neg_scores)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("need scores for both classes")
    ranks = rankdata(np.concatenate([pos_scores, neg_scores]))
    return float((ranks[:n_pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_link_prediction(model, split, seed=0):
    """Train an edge classifier on the split's kept edges vs sampled
    non-edges (equal counts), then score the hidden edges against the
    split's test negatives. Returns AUC."""
    if split.kind != "link_prediction":
        raise ValueError("expected a link-prediction split")
    graph = split.source_graph
    rng = seeding.stream(seed, seeding.EVAL_NEG)
    train_neg = _sample_non_edges(graph, len(split.train_edges), rng)
    x = np.concatenate([hadamard_features(model, split.train_edges),
                        hadamard_features(model, train_neg)])
    y = np.concatenate([np.ones(len(split.train_edges), dtype=np.int64),
                        np.zeros(len(train_neg), dtype=np.int64)])
    clf = LinearClassifier().fit(x, y, seed=seed)
    pos = clf.decision(hadamard_features(model, split.test_edges))
    neg = clf.decision(hadamard_features(model, split.negative_test_edges))
    return auc_score(pos, neg)


def split_classification(node_ids, node_labels, train_ratio, rng):
    """Stratified split over labeled nodes: per class, a shuffled
    train_ratio share (at least 1, at most all-but-one when the class has
    two or more members) goes to train."""
    node_ids = np.asarray(node_ids)
    node_labels = np.asarray(node_labels)
    train_idx = []
    test_idx = []
    for c in np.unique(node_labels):
        idx = np.flatnonzero(node_labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_tr = int(round(train_ratio * len(idx)))
        n_tr = max(1, min(n_tr, len(idx) - 1 if len(idx) > 1 else 1))
        train_idx.append(idx[:n_tr])
        test_idx.append(idx[n_tr:])
    return np.concatenate(train_idx), np.concatenate(test_idx)


def node_classification(model, node_ids, node_labels, train_ratio=0.5, seed=0):
    """Micro-averaged accuracy of logistic regression on target embeddings
    under a stratified split of the labeled nodes."""
    if not 0.0 < train_ratio < 1.0:
        raise ValueError("train_ratio must be in (0, 1)")
    node_ids = np.asarray(node_ids, dtype=np.int64)
    node_labels = np.asarray(node_labels)
    rng = seeding.stream(seed, seeding.CLASS_SPLIT)
    tr, te = split_classification(node_ids, node_labels, train_ratio, rng)
    if len(te) == 0:
        raise ValueError("classification split produced an empty test set")
    x = model.target[node_ids]
    clf = LinearClassifier().fit(x[tr], node_labels[tr], seed=seed)
    pred = clf.predict(x[te])
    return float(np.mean(pred == node_labels[te]))


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1)
    out = np.zeros_like(x)
    ok = norms > _ZERO_TOL
    out[ok] = x[ok] / norms[ok][:, None]
    return out


def attack(model, graph, node_ids, node_labels, eps_grid, mode="both",
           train_ratio=0.8, seed=0, walk_config=None):
    """Degrade embeddings with norm-eps per-node shifts and re-run node
    classification.

    adversarial: shift each target row along its clean-loss gradient over a
    freshly sampled walk corpus. random: shift along fixed Gaussian unit
    directions. The classification seed is held constant so only the
    embeddings vary across the grid. Returns [(mode, eps, accuracy), ...].
    """
    if mode not in ("both", "adversarial", "random"):
        raise ValueError("mode must be 'both', 'adversarial' or 'random'")
    walk_config = walk_config or WalkConfig()
    walks = generate_walks(graph, walk_config, seeding.stream(seed, seeding.ATTACK_WALKS))
    targets, contexts = build_pairs(walks, walk_config.window)
    corpus = attach_negatives(targets, contexts, negative_distribution(graph),
                              walk_config.negatives, seeding.stream(seed, seeding.ATTACK_NEGS))
    _, g_target, _ = corpus_gradients(model, corpus)

    directions = {}
    if mode in ("both", "adversarial"):
        directions["adversarial"] = _unit_rows(g_target)
    if mode in ("both", "random"):
        rng = seeding.stream(seed, seeding.ATTACK_NOISE)
        directions["random"] = _unit_rows(rng.standard_normal(model.target.shape))

    results = []
    for m in ("adversarial", "random"):
        if m not in directions:
            continue
        for eps in eps_grid:
            shifted = EmbeddingModel(model.target + float(eps) * directions[m],
                                     model.context)
            acc = node_classification(shifted, node_ids, node_labels,
                                      train_ratio=train_ratio, seed=seed)
            results.append((m, float(eps), acc))
    return results
