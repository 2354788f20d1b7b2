"""Bayesian optimization over a discrete rank grid.

A Gaussian process with a Matern-3/2 kernel models validation
performance as a function of truncation rank; Expected Improvement
picks the next rank to evaluate. Observations are centered before
fitting (the GP prior mean is zero), kernel inputs are mapped to [0, 1],
and the kernel variance and length scale are refit each step by
maximizing the log marginal likelihood over a small candidate set.

The objective is a fast evaluator: propagate features twice through the
degree-normalized rank-k operator kept in factored form, then train the
linear SGC classifier and read off its best validation accuracy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtr

from .errors import NumericalError, PreconditionError, annotate
from .gnn import TrainConfig, row_normalize, train_sgc
from .spectral import SvdFactors, truncate

LENGTH_SCALE_CANDIDATES = (0.05, 0.1, 0.2, 0.4)
VARIANCE_FLOOR = 1e-4
DEFAULT_JITTER = 1e-6


@dataclass(frozen=True)
class GpState:
    """Observations plus kernel hyperparameters for posterior queries.

    Coordinates are whatever the caller chose to store (optimize_rank
    stores normalized ranks and centered accuracies); the math does not
    care.
    """

    observations: tuple          # ((k, y), ...)
    kernel_variance: float
    length_scale: float
    noise_jitter: float
    incumbent: float = None

    def __post_init__(self):
        obs = tuple((float(k), float(y)) for k, y in self.observations)
        object.__setattr__(self, "observations", obs)
        if not obs:
            raise PreconditionError("GP state needs at least one observation")
        ks = [k for k, _ in obs]
        if len(set(ks)) != len(ks):
            raise PreconditionError("duplicate observation locations")
        if self.kernel_variance <= 0 or self.length_scale <= 0 \
                or self.noise_jitter <= 0:
            raise PreconditionError("kernel hyperparameters must be positive")
        best = max(y for _, y in obs)
        if self.incumbent is None:
            object.__setattr__(self, "incumbent", best)
        elif abs(self.incumbent - best) > 1e-12:
            raise PreconditionError("incumbent does not match best observation")


@dataclass(frozen=True)
class BoConfig:
    grid: tuple                  # strictly increasing candidate ranks
    init_points: int = 5
    iterations: int = 45
    seed: int = 0
    normalize: bool = True       # map ranks to [0, 1] for the kernel

    def __post_init__(self):
        grid = tuple(int(k) for k in self.grid)
        object.__setattr__(self, "grid", grid)
        if not grid:
            raise PreconditionError("rank grid is empty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise PreconditionError("rank grid must be strictly increasing")
        if grid[0] < 1:
            raise PreconditionError("ranks must be at least 1")
        if self.init_points < 1:
            raise PreconditionError("init_points must be at least 1")
        if self.iterations < 0:
            raise PreconditionError("iterations must be non-negative")


def default_grid(num_nodes: int, rank_cap: int = 3072, size: int = 64) -> tuple:
    """64 geometrically spaced integer ranks in [1, min(N, cap)]."""
    n = max(1, min(num_nodes, rank_cap))
    ranks = np.unique(np.rint(np.geomspace(1, n, num=size)).astype(int))
    return tuple(int(k) for k in ranks)


def matern32(k1: float, k2: float, variance: float, length_scale: float) -> float:
    """Matern kernel with smoothness 3/2 at scalar inputs."""
    if variance <= 0 or length_scale <= 0:
        raise PreconditionError("variance and length scale must be positive")
    r = abs(k1 - k2)
    a = math.sqrt(3.0) * r / length_scale
    return variance * (1.0 + a) * math.exp(-a)


def _kernel_matrix(xs: np.ndarray, ys: np.ndarray, variance, length_scale):
    r = np.abs(xs[:, None] - ys[None, :])
    a = (math.sqrt(3.0) / length_scale) * r
    return variance * (1.0 + a) * np.exp(-a)


def _posterior_batch(state: GpState, queries: np.ndarray):
    """Posterior mean and variance at each query point."""
    xs = np.array([k for k, _ in state.observations])
    ys = np.array([y for _, y in state.observations])
    gram = _kernel_matrix(xs, xs, state.kernel_variance, state.length_scale)
    gram[np.diag_indices_from(gram)] += state.noise_jitter
    try:
        chol = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError as e:
        raise NumericalError(
            f"kernel Cholesky failed ({e}); increase the jitter") from e
    alpha = cho_solve(chol, ys)
    k_star = _kernel_matrix(np.asarray(queries, dtype=np.float64), xs,
                            state.kernel_variance, state.length_scale)
    mean = k_star @ alpha
    solved = cho_solve(chol, k_star.T)
    var = state.kernel_variance - np.sum(k_star * solved.T, axis=1)
    if np.any(var < -1e-10):
        raise NumericalError(
            f"posterior variance {var.min():.3e} below tolerance; "
            "increase the jitter")
    return mean, np.maximum(var, 0.0)


def gp_posterior(state: GpState, k: float) -> tuple:
    """Zero-prior-mean GP regression posterior at a single point."""
    mean, var = _posterior_batch(state, np.array([float(k)]))
    return float(mean[0]), float(var[0])


def expected_improvement(mean: float, std: float, incumbent: float) -> float:
    """Closed-form EI of a Gaussian with the given posterior moments."""
    if std < 0:
        raise PreconditionError("standard deviation must be non-negative")
    improve = mean - incumbent
    if std == 0.0:
        return max(improve, 0.0)
    z = improve / std
    phi = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return max(improve * ndtr(z) + std * phi, 0.0)


def log_marginal_likelihood(xs, ys, variance, length_scale, jitter) -> float:
    gram = _kernel_matrix(xs, xs, variance, length_scale)
    gram[np.diag_indices_from(gram)] += jitter
    try:
        chol = cho_factor(gram, lower=True)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = cho_solve(chol, ys)
    logdet = 2.0 * np.sum(np.log(np.diag(chol[0])))
    return float(-0.5 * ys @ alpha - 0.5 * logdet
                 - 0.5 * len(ys) * math.log(2.0 * math.pi))


def _coord(k, cfg: BoConfig) -> float:
    return k / cfg.grid[-1] if cfg.normalize else float(k)


def fit_state(observed: dict, cfg: BoConfig) -> GpState:
    """Build a GpState from raw (rank, accuracy) observations.

    Accuracies are centered, ranks mapped per cfg.normalize; the kernel
    variance is the observation variance (floored) and the length scale
    the marginal-likelihood winner among a fixed candidate set.
    """
    ks = np.array([_coord(k, cfg) for k in observed])
    ys = np.array([observed[k] for k in observed], dtype=np.float64)
    yc = ys - ys.mean()
    variance = max(float(yc.var()), VARIANCE_FLOOR)
    scales = LENGTH_SCALE_CANDIDATES if cfg.normalize \
        else tuple(s * cfg.grid[-1] for s in LENGTH_SCALE_CANDIDATES)
    best_scale = max(
        scales,
        key=lambda s: log_marginal_likelihood(ks, yc, variance, s, DEFAULT_JITTER))
    return GpState(observations=tuple(zip(ks, yc)), kernel_variance=variance,
                   length_scale=best_scale, noise_jitter=DEFAULT_JITTER)


def propose_next(state: GpState, cfg: BoConfig, evaluated) -> int | None:
    """Unevaluated grid rank with the highest Expected Improvement.

    Ties break toward the smaller rank. Returns None when the grid is
    exhausted.
    """
    candidates = [k for k in cfg.grid if k not in evaluated]
    if not candidates:
        return None
    coords = np.array([_coord(k, cfg) for k in candidates])
    means, variances = _posterior_batch(state, coords)
    stds = np.sqrt(variances)
    eis = [expected_improvement(m, s, state.incumbent)
           for m, s in zip(means, stds)]
    best = max(range(len(candidates)), key=lambda i: (eis[i], -candidates[i]))
    return candidates[best]


@dataclass(frozen=True)
class BoStep:
    """One objective evaluation in an optimization run."""
    step: int
    k: int
    y: float
    incumbent: float
    ei: float = float("nan")     # nan for seeding evaluations

    def __iter__(self):
        # lets callers unpack a step as the (k, y) pair
        return iter((self.k, self.y))


def _init_ranks(cfg: BoConfig) -> list:
    """Quasi-evenly spaced seeding ranks, deduplicated and backfilled."""
    grid = cfg.grid
    count = min(cfg.init_points, len(grid))
    idx = np.rint(np.linspace(0, len(grid) - 1, num=count)).astype(int)
    chosen = list(dict.fromkeys(int(i) for i in idx))
    for i in range(len(grid)):
        if len(chosen) == count:
            break
        if i not in chosen:
            chosen.append(i)
    return [grid[i] for i in chosen]


def optimize_rank(objective, cfg: BoConfig):
    """Run seeded-then-guided optimization of the rank objective.

    Returns (k_star, trace). The budget is init_points seeding calls
    plus at most `iterations` guided calls, never exceeding the grid
    size. k_star is the observed argmax, smaller rank on ties.
    """
    observed = {}
    trace = []
    best_y = -np.inf

    def record(k, ei):
        nonlocal best_y
        try:
            y = float(objective(k))
        except Exception as e:
            annotate(e, f"while evaluating rank k={k}")
            raise
        observed[k] = y
        best_y = max(best_y, y)
        trace.append(BoStep(step=len(trace), k=k, y=y, incumbent=best_y, ei=ei))

    for k in _init_ranks(cfg):
        record(k, float("nan"))

    steps = min(cfg.iterations, len(cfg.grid) - len(observed))
    for _ in range(steps):
        state = fit_state(observed, cfg)
        k_next = propose_next(state, cfg, observed.keys())
        if k_next is None:
            break
        mean, var = gp_posterior(state, _coord(k_next, cfg))
        ei = expected_improvement(mean, math.sqrt(var), state.incumbent)
        record(k_next, ei)

    k_star = min(k for k, y in observed.items() if y == best_y)
    return k_star, trace


@dataclass(frozen=True)
class EvalConfig:
    """Settings for the fast rank evaluator."""
    epochs: int = 100
    learning_rate: float = 0.1
    weight_decay: float = 5e-4
    seed: int = 0


def evaluate_rank(g_residual, factors: SvdFactors, k: int,
                  eval_cfg: EvalConfig | None = None) -> float:
    """Validation accuracy of the SGC evaluator at truncation rank k.

    Features (row-normalized) are propagated twice through the
    degree-normalized rank-k operator applied in factored form; degrees
    are absolute row and column sums of the reconstruction, floored at
    1 to keep the scaling sane where the low-rank matrix is nearly
    empty. Deterministic for a fixed evaluator seed.
    """
    eval_cfg = eval_cfg or EvalConfig()
    fk = truncate(factors, k)
    ones = np.ones(fk.shape[1])
    row_sums = fk.left @ (fk.singular_values * (fk.right.T @ ones))
    col_sums = fk.right @ (fk.singular_values * (fk.left.T @ np.ones(fk.shape[0])))
    d_row = np.abs(row_sums)
    d_col = np.abs(col_sums)
    d_row[d_row < 1e-8] = 1.0
    d_col[d_col < 1e-8] = 1.0
    inv_r = 1.0 / np.sqrt(d_row)
    inv_c = 1.0 / np.sqrt(d_col)

    def propagate(m):
        return inv_r[:, None] * (fk.left @ (
            fk.singular_values[:, None] * (fk.right.T @ (inv_c[:, None] * m))))

    x = row_normalize(g_residual.features)
    x2 = propagate(propagate(x))
    cfg = TrainConfig(epochs=eval_cfg.epochs, learning_rate=eval_cfg.learning_rate,
                      weight_decay=eval_cfg.weight_decay, dropout=0.0,
                      hidden=1, seed=eval_cfg.seed, normalize_features=False)
    _params, metrics = train_sgc(x2, g_residual, cfg)
    return max(acc for _, _, acc in metrics)
