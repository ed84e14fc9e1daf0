"""Skip-gram negative-sampling embeddings with adversarial regularization.

Four training methods share one loop:

  dwns   plain skip-gram with negative sampling over random-walk pairs
  rand   + regularizer built from random noise of fixed norm
  advt   + regularizer built from the fast-gradient direction
  iadvt  + regularizer restricted to spans of nearest-neighbour directions

Regularized methods optimize  L_clean(theta) + lam * L_noise(theta)  where
L_noise evaluates the same batch under fixed perturbations of the embedding
rows. In the positive term both sides are perturbed with noise scaled by a
per-pair proximity weight; negative terms use the unscaled noise. No
gradient flows through the noise itself.

All heavy lifting runs through the numba kernels in `_kernels`; a pure
numpy engine implements identical semantics for verification.
"""

import time
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _kernels, seeding
from .graph import GraphParseError, negative_distribution
from .proximity import ScaleMatrix, shifted_ppmi
from .walks import attach_negatives, build_pairs, generate_walks

METHODS = ("dwns", "rand", "advt", "iadvt")
_ZERO_TOL = 1e-12


class NumericalError(RuntimeError):
    """Loss or embeddings became non-finite during training."""

    def __init__(self, epoch, batch, detail=""):
        self.epoch = epoch
        self.batch = batch
        msg = f"non-finite value at epoch {epoch}, batch {batch}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass
class TrainConfig:
    """Settings for one training run.

    `epochs` counts the method-specific phase; regularized methods run
    `pretrain_epochs` of clean training first, then `epochs` with the
    regularizer on. For dwns the two phases are indistinguishable.
    """

    method: str = "dwns"
    dim: int = 128
    epochs: int = 20
    pretrain_epochs: int = 10
    batch_size: int = 1024
    learning_rate: float = 1e-3
    eps: float = 1.0
    reg_weight: float = 1.0
    neighbors: int = 5
    ppmi_steps: int = 2
    ppmi_shift: float = 0.0  # 0 means 1/N, resolved at train time
    seed: int = 0
    engine: str = "numba"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}, expected one of {METHODS}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.epochs < 0 or self.pretrain_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.reg_weight < 0:
            raise ValueError("reg_weight must be >= 0")
        if self.neighbors < 1:
            raise ValueError("neighbors must be >= 1")
        if self.ppmi_steps < 1:
            raise ValueError("ppmi_steps must be >= 1")
        if self.ppmi_shift < 0:
            raise ValueError("ppmi_shift must be >= 0")
        if self.engine not in ("numba", "numpy"):
            raise ValueError("engine must be 'numba' or 'numpy'")


class EmbeddingModel:
    """Target and context embedding matrices, both (num_nodes, dim)."""

    def __init__(self, target, context):
        if target.shape != context.shape:
            raise ValueError("target and context shapes differ")
        self.target = target
        self.context = context

    @property
    def num_nodes(self):
        return self.target.shape[0]

    @property
    def dim(self):
        return self.target.shape[1]

    def copy(self):
        return EmbeddingModel(self.target.copy(), self.context.copy())


def init_model(n_nodes, dim, rng):
    """Target rows uniform in [-0.5/dim, 0.5/dim); context rows zero."""
    half = 0.5 / dim
    target = rng.uniform(-half, half, size=(n_nodes, dim))
    context = np.zeros((n_nodes, dim))
    return EmbeddingModel(target, context)


class PerturbationSet:
    """Fixed per-node noise rows covering every node a batch consumes.

    nodes: sorted unique ids; target/context: (m, dim) noise for each role.
    zero_target/zero_context count nodes whose generating gradient vanished
    (only nodes actually consumed in that role are counted).
    """

    def __init__(self, nodes, target, context, zero_target=0, zero_context=0):
        self.nodes = nodes
        self.target = target
        self.context = context
        self.zero_target = zero_target
        self.zero_context = zero_context

    def _rows(self, ids):
        flat = np.asarray(ids).reshape(-1)
        pos = np.searchsorted(self.nodes, flat)
        if flat.size:
            bad = (pos >= len(self.nodes)) | (self.nodes[np.minimum(pos, len(self.nodes) - 1)] != flat)
            if np.any(bad):
                raise KeyError("node id not covered by this perturbation set")
        return pos

    def target_rows(self, ids):
        out = self.target[self._rows(ids)]
        return out.reshape(np.shape(ids) + (self.target.shape[1],))

    def context_rows(self, ids):
        out = self.context[self._rows(ids)]
        return out.reshape(np.shape(ids) + (self.context.shape[1],))


def _effective_inputs(model, batch, perturb, use_scale):
    """Embedding rows entering the loss, with noise applied where requested.

    Returns (ui_pos, vj_pos, ui_neg, vk_neg): the positive term uses
    scale-weighted noise on both sides, negative terms use raw noise.
    """
    u = model.target[batch.targets]
    vj = model.context[batch.contexts]
    vk = model.context[batch.negatives]
    if perturb is None:
        return u, vj, u, vk
    nt = perturb.target_rows(batch.targets)
    nc = perturb.context_rows(batch.contexts)
    nk = perturb.context_rows(batch.negatives)
    if use_scale:
        s = batch.scale[:, None]
        ui_pos = u + s * nt
        vj_pos = vj + s * nc
    else:
        ui_pos = u + nt
        vj_pos = vj + nc
    return ui_pos, vj_pos, u + nt, vk + nk


def batch_loss(model, batch, perturb=None, use_scale=False):
    """Summed skip-gram loss of one batch:
    sum_pairs [ -log sigmoid(u'_j . u_i) - sum_k log sigmoid(-u'_k . u_i) ].
    """
    ui_pos, vj_pos, ui_neg, vk_neg = _effective_inputs(model, batch, perturb, use_scale)
    pos = np.einsum("bd,bd->b", ui_pos, vj_pos)
    sneg = np.einsum("bkd,bd->bk", vk_neg, ui_neg)
    return float(np.logaddexp(0.0, -pos).sum() + np.logaddexp(0.0, sneg).sum())


def batch_gradients(model, batch, perturb=None, use_scale=False):
    """Loss plus dense per-node gradients w.r.t. the embedding matrices.

    Perturbations (when given) are treated as constants, so the gradient
    w.r.t. a row is the gradient w.r.t. its perturbed copy.
    Returns (loss, grad_target, grad_context), gradients shaped like the model.
    """
    ui_pos, vj_pos, ui_neg, vk_neg = _effective_inputs(model, batch, perturb, use_scale)
    pos = np.einsum("bd,bd->b", ui_pos, vj_pos)
    sneg = np.einsum("bkd,bd->bk", vk_neg, ui_neg)
    loss = float(np.logaddexp(0.0, -pos).sum() + np.logaddexp(0.0, sneg).sum())

    a = -expit(-pos)
    b = expit(sneg)
    gU = np.zeros_like(model.target)
    gV = np.zeros_like(model.context)
    np.add.at(gU, batch.targets, a[:, None] * vj_pos + np.einsum("bk,bkd->bd", b, vk_neg))
    np.add.at(gV, batch.contexts, a[:, None] * ui_pos)
    np.add.at(gV, batch.negatives.reshape(-1), (b[..., None] * ui_neg[:, None, :]).reshape(-1, model.dim))
    return loss, gU, gV


def _consumed_nodes(batch):
    """Sorted union of ids the batch touches, plus per-role membership masks."""
    t_nodes = np.unique(batch.targets)
    c_nodes = np.unique(np.concatenate([batch.contexts, batch.negatives.reshape(-1)]))
    nodes = np.union1d(t_nodes, c_nodes)
    return nodes, np.isin(nodes, t_nodes), np.isin(nodes, c_nodes)


def _normalize_rows(rows, mask, eps):
    """eps * row / ||row|| where mask holds; zero rows counted separately."""
    norms = np.linalg.norm(rows, axis=1)
    zero = mask & (norms < _ZERO_TOL)
    ok = mask & ~zero
    out = np.zeros_like(rows)
    out[ok] = rows[ok] * (eps / norms[ok])[:, None]
    return out, int(zero.sum())


def fast_gradient_perturbations(model, batch, eps):
    """Adversarial noise: per consumed node, eps times the unit clean-loss
    gradient of that node's embedding row (each role independently)."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    _, gU, gV = batch_gradients(model, batch)
    nodes, t_mask, c_mask = _consumed_nodes(batch)
    nt, zt = _normalize_rows(gU[nodes], t_mask, eps)
    nc, zc = _normalize_rows(gV[nodes], c_mask, eps)
    return PerturbationSet(nodes, nt, nc, zt, zc)


def random_perturbations(batch, dim, eps, rng):
    """Isotropic noise of exact norm eps per consumed node and role."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    nodes, _, _ = _consumed_nodes(batch)
    m = len(nodes)

    def draw():
        x = rng.standard_normal((m, dim))
        n = np.linalg.norm(x, axis=1)
        n[n < _ZERO_TOL] = 1.0
        return x * (eps / n)[:, None]

    return PerturbationSet(nodes, draw(), draw(), 0, 0)


class NeighborDirections:
    """Unit direction vectors from each node's embedding to its nearest
    neighbours, frozen at construction time. Directions to coincident
    points are zero and flagged invalid."""

    def __init__(self, target_neighbors, target_dirs, target_valid,
                 context_neighbors, context_dirs, context_valid):
        self.target_neighbors = target_neighbors
        self.target_dirs = target_dirs
        self.target_valid = target_valid
        self.context_neighbors = context_neighbors
        self.context_dirs = context_dirs
        self.context_valid = context_valid

    @property
    def n_neighbors(self):
        return self.target_dirs.shape[1]


def _topk_directions(points, k):
    n, d = points.shape
    k_eff = min(k, n - 1)
    nbrs = np.zeros((n, k), dtype=np.int64)
    dirs = np.zeros((n, k, d))
    valid = np.zeros((n, k), dtype=bool)
    if k_eff <= 0:
        return nbrs, dirs, valid
    sq = np.einsum("nd,nd->n", points, points)
    chunk = max(1, 4_000_000 // max(n, 1))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        d2 = sq[lo:hi, None] + sq[None, :] - 2.0 * (points[lo:hi] @ points.T)
        np.maximum(d2, 0.0, out=d2)
        d2[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        # stable sort: distance ties broken by node id
        idx = np.argsort(d2, axis=1, kind="stable")[:, :k_eff]
        diffs = points[idx] - points[lo:hi, None, :]
        norms = np.linalg.norm(diffs, axis=2)
        ok = norms > _ZERO_TOL
        safe = np.where(ok, norms, 1.0)
        nbrs[lo:hi, :k_eff] = idx
        dirs[lo:hi, :k_eff] = np.where(ok[..., None], diffs / safe[..., None], 0.0)
        valid[lo:hi, :k_eff] = ok
    return nbrs, dirs, valid


def build_neighbor_directions(model, n_neighbors):
    """Nearest neighbours by Euclidean distance, computed independently on
    the target and context matrices."""
    if n_neighbors < 1:
        raise ValueError("n_neighbors must be >= 1")
    tn, td, tv = _topk_directions(model.target, n_neighbors)
    cn, cd, cv = _topk_directions(model.context, n_neighbors)
    return NeighborDirections(tn, td, tv, cn, cd, cv)


def interpretable_perturbations(model, batch, directions, eps):
    """Noise constrained to the span of each node's neighbour directions:
    project the clean gradient onto the directions, normalize the coefficient
    vector to length eps, recombine."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    _, gU, gV = batch_gradients(model, batch)
    nodes, t_mask, c_mask = _consumed_nodes(batch)

    def side(g, dirs, dvalid, mask):
        gr = g[nodes]
        dr = dirs[nodes]
        w = np.einsum("mtd,md->mt", dr, gr)
        w[~dvalid[nodes]] = 0.0
        norms = np.linalg.norm(w, axis=1)
        zero = mask & (norms < _ZERO_TOL)
        ok = mask & ~zero
        out = np.zeros((len(nodes), model.dim))
        if np.any(ok):
            coef = w[ok] * (eps / norms[ok])[:, None]
            out[ok] = np.einsum("mt,mtd->md", coef, dr[ok])
        return out, int(zero.sum())

    nt, zt = side(gU, directions.target_dirs, directions.target_valid, t_mask)
    nc, zc = side(gV, directions.context_dirs, directions.context_valid, c_mask)
    return PerturbationSet(nodes, nt, nc, zt, zc)


@dataclass
class EpochStats:
    """Per-epoch telemetry handed to the on_epoch callback."""

    epoch: int
    n_pairs: int
    clean_loss: float
    reg_loss: float
    reg_active: bool
    zero_grad_target: int
    zero_grad_context: int
    duration_s: float


def _build_scale(graph, config):
    shift = config.ppmi_shift if config.ppmi_shift > 0 else None
    return ScaleMatrix(shifted_ppmi(graph, steps=config.ppmi_steps, shift=shift))


class _NumbaEngine:
    """Batch executor backed by the compiled kernels."""

    def __init__(self, model):
        n, d = model.target.shape
        self.gU = np.zeros((n, d))
        self.gV = np.zeros((n, d))
        self.nT = np.zeros((n, d))
        self.nC = np.zeros((n, d))
        self.seenU = np.zeros(n, dtype=np.bool_)
        self.seenV = np.zeros(n, dtype=np.bool_)
        self.touchU = np.zeros(n, dtype=np.int64)
        self.touchV = np.zeros(n, dtype=np.int64)

    def step(self, model, batch, config, reg_active, rng_pert, directions):
        U, V = model.target, model.context
        loss_c, nU, nV = _kernels.clean_accumulate(
            U, V, batch.targets, batch.contexts, batch.negatives,
            self.gU, self.gV, self.seenU, self.seenV, self.touchU, self.touchV)
        loss_r = 0.0
        zt = zc = 0
        if reg_active:
            if config.method == "advt":
                zt = _kernels.grad_noise(self.gU, self.touchU, nU, config.eps, self.nT)
                zc = _kernels.grad_noise(self.gV, self.touchV, nV, config.eps, self.nC)
            elif config.method == "iadvt":
                zt = _kernels.dir_noise(self.gU, self.touchU, nU, config.eps,
                                        directions.target_dirs, directions.target_valid, self.nT)
                zc = _kernels.dir_noise(self.gV, self.touchV, nV, config.eps,
                                        directions.context_dirs, directions.context_valid, self.nC)
            else:  # rand: same draw order as random_perturbations
                nodes = np.unique(np.concatenate([batch.targets, batch.contexts,
                                                  batch.negatives.reshape(-1)]))

                def draw():
                    x = rng_pert.standard_normal((len(nodes), config.dim))
                    norm = np.linalg.norm(x, axis=1)
                    norm[norm < _ZERO_TOL] = 1.0
                    return x * (config.eps / norm)[:, None]

                self.nT[nodes] = draw()
                self.nC[nodes] = draw()
            loss_r = _kernels.perturbed_accumulate(
                U, V, batch.targets, batch.contexts, batch.negatives,
                batch.scale, self.nT, self.nC, config.reg_weight, self.gU, self.gV)
        _kernels.apply_update(U, V, self.gU, self.gV, self.touchU, nU, self.touchV, nV,
                              config.learning_rate, self.seenU, self.seenV)
        return loss_c, loss_r, zt, zc


class _NumpyEngine:
    """Reference executor: same semantics, plain numpy."""

    def __init__(self, model):
        pass

    def step(self, model, batch, config, reg_active, rng_pert, directions):
        loss_c, gU, gV = batch_gradients(model, batch)
        loss_r = 0.0
        zt = zc = 0
        if reg_active:
            if config.method == "advt":
                pert = fast_gradient_perturbations(model, batch, config.eps)
            elif config.method == "iadvt":
                pert = interpretable_perturbations(model, batch, directions, config.eps)
            else:
                pert = random_perturbations(batch, config.dim, config.eps, rng_pert)
            zt, zc = pert.zero_target, pert.zero_context
            loss_r, gU2, gV2 = batch_gradients(model, batch, perturb=pert, use_scale=True)
            gU += config.reg_weight * gU2
            gV += config.reg_weight * gV2
        model.target -= config.learning_rate * gU
        model.context -= config.learning_rate * gV
        return loss_c, loss_r, zt, zc


def train(graph, walk_config, config, on_epoch=None, scale=None):
    """Train embeddings on a graph.

    Each epoch samples a fresh walk corpus, shuffles its pairs, attaches
    negatives, and runs minibatch SGD. Regularized methods switch the
    regularizer on after `pretrain_epochs`; the direction-constrained
    method freezes its neighbour directions at that same point.

    `scale` may inject a prebuilt ScaleMatrix (otherwise one is computed
    from the graph when needed). Raises NumericalError if any batch loss
    turns non-finite. Returns the trained EmbeddingModel.
    """
    cfg = config
    n = graph.num_nodes
    total_epochs = cfg.pretrain_epochs + cfg.epochs
    regularized = cfg.method != "dwns" and cfg.reg_weight > 0 and cfg.epochs > 0

    model = init_model(n, cfg.dim, seeding.stream(cfg.seed, seeding.INIT))
    neg_table = negative_distribution(graph)
    if regularized and scale is None:
        scale = _build_scale(graph, cfg)

    engine = _NumbaEngine(model) if cfg.engine == "numba" else _NumpyEngine(model)
    directions = None

    for epoch in range(total_epochs):
        t0 = time.perf_counter()
        walks = generate_walks(graph, walk_config, seeding.stream(cfg.seed, seeding.WALKS, epoch))
        targets, contexts = build_pairs(walks, walk_config.window)
        perm = seeding.stream(cfg.seed, seeding.SHUFFLE, epoch).permutation(targets.size)
        targets = targets[perm]
        contexts = contexts[perm]
        corpus = attach_negatives(targets, contexts, neg_table, walk_config.negatives,
                                  seeding.stream(cfg.seed, seeding.NEGATIVES, epoch))
        reg_active = regularized and epoch >= cfg.pretrain_epochs
        rng_pert = seeding.stream(cfg.seed, seeding.PERTURB, epoch) if reg_active else None
        if reg_active:
            if cfg.method == "iadvt" and directions is None:
                directions = build_neighbor_directions(model, cfg.neighbors)
            corpus.scale = scale.lookup(corpus.targets, corpus.contexts)

        clean_sum = 0.0
        reg_sum = 0.0
        zt_sum = 0
        zc_sum = 0
        for b_idx, batch in enumerate(corpus.iter_minibatches(cfg.batch_size)):
            loss_c, loss_r, zt, zc = engine.step(model, batch, cfg, reg_active, rng_pert, directions)
            if not (np.isfinite(loss_c) and np.isfinite(loss_r)):
                raise NumericalError(epoch, b_idx, f"clean={loss_c}, reg={loss_r}")
            clean_sum += loss_c
            reg_sum += loss_r
            zt_sum += zt
            zc_sum += zc
        if on_epoch is not None:
            on_epoch(EpochStats(epoch, len(corpus), clean_sum, reg_sum, reg_active,
                                zt_sum, zc_sum, time.perf_counter() - t0))
    return model


def corpus_gradients(model, batch):
    """Clean loss and dense gradients over an arbitrarily large pair set,
    computed with the compiled kernels (no per-pair temporaries)."""
    n, d = model.target.shape
    gU = np.zeros((n, d))
    gV = np.zeros((n, d))
    seenU = np.zeros(n, dtype=np.bool_)
    seenV = np.zeros(n, dtype=np.bool_)
    touchU = np.zeros(n, dtype=np.int64)
    touchV = np.zeros(n, dtype=np.int64)
    loss, _, _ = _kernels.clean_accumulate(
        model.target, model.context, batch.targets, batch.contexts, batch.negatives,
        gU, gV, seenU, seenV, touchU, touchV)
    return loss, gU, gV


def save_embeddings(path, matrix, names):
    """Text format: header `N d`, then `name v_1 ... v_d` per node with
    full round-trip precision."""
    n, d = matrix.shape
    if len(names) != n:
        raise ValueError("name count does not match matrix rows")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{n} {d}\n")
        for i in range(n):
            fh.write(names[i])
            row = matrix[i]
            for q in range(d):
                fh.write(f" {float(row[q])!r}")
            fh.write("\n")


def load_embeddings(path):
    """Inverse of save_embeddings. Returns (names, matrix)."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise GraphParseError(f"{path}:1: expected header 'N d'")
        try:
            n, d = int(header[0]), int(header[1])
        except ValueError:
            raise GraphParseError(f"{path}:1: expected header 'N d'") from None
        names = []
        matrix = np.empty((n, d))
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) != d + 1:
                raise GraphParseError(f"{path}:{i + 2}: expected {d + 1} fields, got {len(parts)}")
            names.append(parts[0])
            matrix[i] = [float(x) for x in parts[1:]]
    return names, matrix
