"""Minimal numpy GNN stack for node classification.

Three models, all trained full-batch with manual backpropagation and
Adam:

- SGC: multinomial logistic regression on pre-propagated features
- GCN: two layers of S X W with ReLU in between, S the symmetrically
  normalized adjacency with self-loops
- GraphSAGE: two layers of X W_self + mean_neighbor(X) W_neigh with
  weighted-mean aggregation, no neighbor sampling

Losses are softmax cross-entropy over the train mask plus a coupled L2
penalty on the weight matrices (biases excluded), so analytic gradients
are checkable against finite differences of the reported loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import PreconditionError, TrainingDivergenceError
from .spectral import SvdFactors

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    dropout: float = 0.5
    hidden: int = 16
    seed: int = 0
    early_stop_patience: int = 0   # 0 disables early stopping
    normalize_features: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise PreconditionError("epochs must be at least 1")
        if self.learning_rate <= 0:
            raise PreconditionError("learning rate must be positive")
        if self.weight_decay < 0:
            raise PreconditionError("weight decay must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise PreconditionError("dropout must lie in [0, 1)")
        if self.hidden < 1:
            raise PreconditionError("hidden size must be at least 1")


@dataclass
class ModelParams:
    """Trained weights keyed by name, with the model kind for dispatch."""
    kind: str                      # "gcn", "sage", "sgc"
    weights: dict[str, np.ndarray]


class _FactoredOperator:
    """Symmetrically normalized low-rank operator plus a diagonal term.

    Represents D^{-1/2} (U S V^T + I) D^{-1/2} without densifying;
    apply_t is the exact adjoint (left/right factors swapped).
    """

    def __init__(self, left, sv, right, diag):
        self.left = left
        self.sv = sv
        self.right = right
        self.diag = diag

    def apply(self, x):
        return self.left @ (self.sv[:, None] * (self.right.T @ x)) \
            + self.diag[:, None] * x

    def apply_t(self, x):
        return self.right @ (self.sv[:, None] * (self.left.T @ x)) \
            + self.diag[:, None] * x


@dataclass(frozen=True)
class NormalizedOperator:
    """Propagation operator for GCN-style models."""
    matrix: object                 # csr_matrix or _FactoredOperator
    kind: str                      # "gcn_sym" or "none"
    source: str                    # "original", "enhanced", "denoised_factored"

    def apply(self, x: np.ndarray) -> np.ndarray:
        if isinstance(self.matrix, _FactoredOperator):
            return self.matrix.apply(x)
        return self.matrix @ x

    def apply_t(self, x: np.ndarray) -> np.ndarray:
        if isinstance(self.matrix, _FactoredOperator):
            return self.matrix.apply_t(x)
        return self.matrix.T @ x


def normalize_gcn(adjacency: sp.csr_matrix, source: str = "original") -> NormalizedOperator:
    """D^{-1/2} (A + I) D^{-1/2} with self-loops of weight one.

    A node with no edges keeps degree 1 from its self-loop, so the
    normalization never divides by zero.
    """
    if adjacency.nnz and np.any(adjacency.data < 0):
        raise PreconditionError("adjacency weights must be non-negative")
    n = adjacency.shape[0]
    a_tilde = (adjacency + sp.eye(n, format="csr")).tocsr()
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d_half = sp.diags(inv_sqrt)
    s = (d_half @ a_tilde @ d_half).tocsr()
    return NormalizedOperator(matrix=s, kind="gcn_sym", source=source)


def normalize_gcn_factored(factors: SvdFactors) -> NormalizedOperator:
    """GCN normalization of a low-rank reconstruction kept in factored form.

    Degrees are the absolute row sums of the reconstruction plus the unit
    self-loop; low-rank reconstructions carry small negative entries, so
    the absolute value keeps the degrees usable and tiny degrees are
    floored to one.
    """
    ones = np.ones(factors.shape[1])
    row_sums = factors.left @ (factors.singular_values * (factors.right.T @ ones))
    deg = np.abs(row_sums + 1.0)
    deg[deg < 1e-8] = 1.0
    inv_sqrt = 1.0 / np.sqrt(deg)
    op = _FactoredOperator(
        left=inv_sqrt[:, None] * factors.left,
        sv=factors.singular_values.copy(),
        right=inv_sqrt[:, None] * factors.right,
        diag=1.0 / deg,
    )
    return NormalizedOperator(matrix=op, kind="gcn_sym", source="denoised_factored")


def row_normalize(x: np.ndarray) -> np.ndarray:
    """Scale each row to unit L1 mass; zero rows pass through."""
    norms = np.abs(x).sum(axis=1, keepdims=True)
    norms[norms < 1e-12] = 1.0
    return x / norms


def mean_aggregator(adjacency: sp.csr_matrix) -> sp.csr_matrix:
    """Row-stochastic weighted-mean matrix; isolated nodes get zero rows."""
    deg = np.asarray(adjacency.sum(axis=1)).ravel()
    scale = np.zeros_like(deg)
    nz = deg > 0
    scale[nz] = 1.0 / deg[nz]
    return (sp.diags(scale) @ adjacency).tocsr()


def aggregator_from_factors(factors: SvdFactors) -> sp.csr_matrix:
    """Weighted-mean matrix over the soft neighborhood of a low-rank
    reconstruction: absolute entries, zero diagonal, rows normalized.

    Densifies the reconstruction, so intended for desk-scale graphs.
    """
    dense = np.abs(factors.to_dense())
    np.fill_diagonal(dense, 0.0)
    return mean_aggregator(sp.csr_matrix(dense))


def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _loss_and_dz(z, labels, mask, weights, weight_decay):
    """Masked cross-entropy plus L2 on weights; returns loss and dL/dz."""
    idx = np.flatnonzero(mask)
    logp = _log_softmax(z[idx])
    ce = -logp[np.arange(len(idx)), labels[idx]].mean()
    reg = 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in weights)
    dz = np.zeros_like(z)
    soft = np.exp(logp)
    soft[np.arange(len(idx)), labels[idx]] -= 1.0
    dz[idx] = soft / len(idx)
    return ce + reg, dz


def _dropout_mask(rng, shape, rate):
    if rate <= 0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


class Adam:
    """Adam with per-parameter moment buffers, keyed like the weights."""

    def __init__(self, weights: dict[str, np.ndarray], lr: float):
        self.lr = lr
        self.m = {k: np.zeros_like(w) for k, w in weights.items()}
        self.v = {k: np.zeros_like(w) for k, w in weights.items()}
        self.t = 0

    def step(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        bias1 = 1.0 - ADAM_BETA1 ** self.t
        bias2 = 1.0 - ADAM_BETA2 ** self.t
        for k, g in grads.items():
            self.m[k] = ADAM_BETA1 * self.m[k] + (1 - ADAM_BETA1) * g
            self.v[k] = ADAM_BETA2 * self.v[k] + (1 - ADAM_BETA2) * g * g
            m_hat = self.m[k] / bias1
            v_hat = self.v[k] / bias2
            weights[k] -= self.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def _check_trainable(g):
    if not np.any(g.train_mask):
        raise PreconditionError("train mask is empty")
    if not np.any(g.val_mask):
        raise PreconditionError("validation mask is empty")


def _prep_features(g, cfg):
    x = g.features
    if cfg.normalize_features:
        x = row_normalize(x)
    return x


def gcn_forward(op: NormalizedOperator, x: np.ndarray, weights: dict) -> np.ndarray:
    """Logits of the two-layer GCN with dropout off."""
    h = np.maximum(op.apply(x @ weights["w1"]), 0.0)
    return op.apply(h @ weights["w2"])


def gcn_loss_and_grads(op, x, labels, mask, weights, weight_decay,
                       drop_in=None, drop_hidden=None):
    """Forward plus manual backward pass; returns (loss, grads dict).

    drop_in / drop_hidden are pre-scaled dropout masks or None.
    """
    x0 = x * drop_in if drop_in is not None else x
    a1 = op.apply(x0 @ weights["w1"])
    h1 = np.maximum(a1, 0.0)
    h1d = h1 * drop_hidden if drop_hidden is not None else h1
    z = op.apply(h1d @ weights["w2"])
    loss, dz = _loss_and_dz(z, labels, mask, weights.values(), weight_decay)

    dp2 = op.apply_t(dz)
    g_w2 = h1d.T @ dp2 + weight_decay * weights["w2"]
    dh1d = dp2 @ weights["w2"].T
    dh1 = dh1d * drop_hidden if drop_hidden is not None else dh1d
    da1 = dh1 * (a1 > 0)
    dq = op.apply_t(da1)
    g_w1 = x0.T @ dq + weight_decay * weights["w1"]
    return loss, {"w1": g_w1, "w2": g_w2}


def sage_forward(prop: sp.csr_matrix, x: np.ndarray, weights: dict) -> np.ndarray:
    """Logits of the two-layer mean-aggregator model, dropout off."""
    h = np.maximum(x @ weights["w1_self"] + (prop @ x) @ weights["w1_neigh"], 0.0)
    return h @ weights["w2_self"] + (prop @ h) @ weights["w2_neigh"]


def sage_loss_and_grads(prop, prop_t, x, labels, mask, weights, weight_decay,
                        drop_in=None, drop_hidden=None):
    x0 = x * drop_in if drop_in is not None else x
    px0 = prop @ x0
    a1 = x0 @ weights["w1_self"] + px0 @ weights["w1_neigh"]
    h1 = np.maximum(a1, 0.0)
    h1d = h1 * drop_hidden if drop_hidden is not None else h1
    ph1 = prop @ h1d
    z = h1d @ weights["w2_self"] + ph1 @ weights["w2_neigh"]
    loss, dz = _loss_and_dz(z, labels, mask, weights.values(), weight_decay)

    g = {
        "w2_self": h1d.T @ dz + weight_decay * weights["w2_self"],
        "w2_neigh": ph1.T @ dz + weight_decay * weights["w2_neigh"],
    }
    dh1d = dz @ weights["w2_self"].T + prop_t @ (dz @ weights["w2_neigh"].T)
    dh1 = dh1d * drop_hidden if drop_hidden is not None else dh1d
    da1 = dh1 * (a1 > 0)
    g["w1_self"] = x0.T @ da1 + weight_decay * weights["w1_self"]
    g["w1_neigh"] = px0.T @ da1 + weight_decay * weights["w1_neigh"]
    return loss, g


def sgc_forward(x: np.ndarray, weights: dict) -> np.ndarray:
    return x @ weights["w"] + weights["b"]


def sgc_loss_and_grads(x, labels, mask, weights, weight_decay, drop_in=None):
    x0 = x * drop_in if drop_in is not None else x
    z = sgc_forward(x0, weights)
    # bias excluded from the L2 penalty
    loss, dz = _loss_and_dz(z, labels, mask, [weights["w"]], weight_decay)
    return loss, {
        "w": x0.T @ dz + weight_decay * weights["w"],
        "b": dz.sum(axis=0),
    }


def _train_loop(weights, cfg, step_fn, val_fn):
    """Shared epoch loop: Adam updates, NaN guard, best-val snapshot."""
    opt = Adam(weights, cfg.learning_rate)
    metrics = []
    best_acc = -1.0
    best_weights = {k: w.copy() for k, w in weights.items()}
    since_best = 0
    for epoch in range(cfg.epochs):
        loss, grads = step_fn(epoch)
        if not np.isfinite(loss):
            raise TrainingDivergenceError(epoch)
        opt.step(weights, grads)
        val_acc = val_fn()
        metrics.append((epoch, float(loss), float(val_acc)))
        if val_acc > best_acc:
            best_acc = val_acc
            best_weights = {k: w.copy() for k, w in weights.items()}
            since_best = 0
        else:
            since_best += 1
            if cfg.early_stop_patience and since_best >= cfg.early_stop_patience:
                break
    return best_weights, metrics


def _mask_accuracy(logits, labels, mask):
    idx = np.flatnonzero(mask)
    pred = np.argmax(logits[idx], axis=1)
    return float(np.mean(pred == labels[idx]))


def train_gcn(op: NormalizedOperator, g, cfg: TrainConfig):
    """Train the two-layer GCN; returns (params, per-epoch metrics).

    Metrics rows are (epoch, train_loss, val_acc); the returned weights
    are the best-validation snapshot.
    """
    _check_trainable(g)
    x = _prep_features(g, cfg)
    n_class = g.num_classes
    rng_init = np.random.default_rng([cfg.seed, 0])
    rng_drop = np.random.default_rng([cfg.seed, 1])
    weights = {
        "w1": _glorot(rng_init, x.shape[1], cfg.hidden),
        "w2": _glorot(rng_init, cfg.hidden, n_class),
    }

    def step(_epoch):
        drop_in = _dropout_mask(rng_drop, x.shape, cfg.dropout)
        drop_hidden = _dropout_mask(rng_drop, (x.shape[0], cfg.hidden), cfg.dropout)
        return gcn_loss_and_grads(op, x, g.labels, g.train_mask, weights,
                                  cfg.weight_decay, drop_in, drop_hidden)

    def val():
        return _mask_accuracy(gcn_forward(op, x, weights), g.labels, g.val_mask)

    best, metrics = _train_loop(weights, cfg, step, val)
    return ModelParams(kind="gcn", weights=best), metrics


def train_sage(g, cfg: TrainConfig, prop: sp.csr_matrix | None = None):
    """Train two-layer GraphSAGE with weighted-mean aggregation.

    g may be a Graph or anything with as_graph() (an enhanced graph);
    prop overrides the aggregation matrix, for callers whose refined
    structure exists only in factored form.
    """
    if hasattr(g, "as_graph"):
        g = g.as_graph()
    _check_trainable(g)
    x = _prep_features(g, cfg)
    n_class = g.num_classes
    if prop is None:
        prop = mean_aggregator(g.adjacency)
    prop_t = prop.T.tocsr()
    rng_init = np.random.default_rng([cfg.seed, 0])
    rng_drop = np.random.default_rng([cfg.seed, 1])
    weights = {
        "w1_self": _glorot(rng_init, x.shape[1], cfg.hidden),
        "w1_neigh": _glorot(rng_init, x.shape[1], cfg.hidden),
        "w2_self": _glorot(rng_init, cfg.hidden, n_class),
        "w2_neigh": _glorot(rng_init, cfg.hidden, n_class),
    }

    def step(_epoch):
        drop_in = _dropout_mask(rng_drop, x.shape, cfg.dropout)
        drop_hidden = _dropout_mask(rng_drop, (x.shape[0], cfg.hidden), cfg.dropout)
        return sage_loss_and_grads(prop, prop_t, x, g.labels, g.train_mask,
                                   weights, cfg.weight_decay, drop_in, drop_hidden)

    def val():
        return _mask_accuracy(sage_forward(prop, x, weights), g.labels, g.val_mask)

    best, metrics = _train_loop(weights, cfg, step, val)
    return ModelParams(kind="sage", weights=best), metrics


def train_sgc(propagated_features: np.ndarray, g, cfg: TrainConfig):
    """Logistic regression on pre-propagated features.

    The feature matrix is used exactly as given; cfg.normalize_features
    has no effect here because propagation defines the representation.
    """
    _check_trainable(g)
    x = np.asarray(propagated_features, dtype=np.float64)
    if x.shape[0] != g.num_nodes:
        raise PreconditionError("propagated feature row count mismatch")
    n_class = g.num_classes
    rng_init = np.random.default_rng([cfg.seed, 0])
    rng_drop = np.random.default_rng([cfg.seed, 1])
    weights = {
        "w": _glorot(rng_init, x.shape[1], n_class),
        "b": np.zeros(n_class),
    }

    def step(_epoch):
        drop_in = _dropout_mask(rng_drop, x.shape, cfg.dropout)
        return sgc_loss_and_grads(x, g.labels, g.train_mask, weights,
                                  cfg.weight_decay, drop_in)

    def val():
        return _mask_accuracy(sgc_forward(x, weights), g.labels, g.val_mask)

    best, metrics = _train_loop(weights, cfg, step, val)
    return ModelParams(kind="sgc", weights=best), metrics


def _logits_for(params: ModelParams, carrier, g, cfg: TrainConfig | None):
    cfg = cfg or TrainConfig()
    if params.kind == "gcn":
        x = _prep_features(g, cfg)
        return gcn_forward(carrier, x, params.weights)
    if params.kind == "sage":
        x = _prep_features(g, cfg)
        prop = carrier if sp.issparse(carrier) else mean_aggregator(g.adjacency)
        return sage_forward(prop, x, params.weights)
    if params.kind == "sgc":
        return sgc_forward(np.asarray(carrier, dtype=np.float64), params.weights)
    raise PreconditionError(f"unknown model kind {params.kind!r}")


def evaluate(params: ModelParams, carrier, g, split: str,
             cfg: TrainConfig | None = None) -> float:
    """Accuracy of argmax predictions on the requested split.

    carrier is the model input besides the graph: the NormalizedOperator
    for GCN, the aggregation matrix (or None) for GraphSAGE, the
    propagated feature matrix for SGC. Ties in the logits resolve to the
    lowest class index.
    """
    masks = {"train": g.train_mask, "val": g.val_mask, "test": g.test_mask}
    if split not in masks:
        raise PreconditionError(f"unknown split {split!r}")
    mask = masks[split]
    if not np.any(mask):
        raise PreconditionError(f"{split} mask is empty")
    return _mask_accuracy(_logits_for(params, carrier, g, cfg), g.labels, mask)


def hidden_embeddings(params: ModelParams, carrier, g,
                      cfg: TrainConfig | None = None) -> np.ndarray:
    """First-layer representations (pre-logits), dropout off."""
    cfg = cfg or TrainConfig()
    x = _prep_features(g, cfg)
    w = params.weights
    if params.kind == "gcn":
        return np.maximum(carrier.apply(x @ w["w1"]), 0.0)
    if params.kind == "sage":
        prop = carrier if sp.issparse(carrier) else mean_aggregator(g.adjacency)
        return np.maximum(x @ w["w1_self"] + (prop @ x) @ w["w1_neigh"], 0.0)
    if params.kind == "sgc":
        return np.asarray(carrier, dtype=np.float64)
    raise PreconditionError(f"unknown model kind {params.kind!r}")
