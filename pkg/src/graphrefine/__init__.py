"""Graph structure refinement: low-rank denoising with rank selection by
Bayesian optimization, spectral perturbation with edge recovery, and a
small numpy GNN stack to evaluate the refined graphs."""

from .graphstore import (
    EdgeSet,
    Graph,
    edge_homophily,
    load_graph,
    remove_edges,
    sample_edge_fraction,
    stratified_split,
    with_split,
    write_dataset,
)
from .perturb import (
    EnhancedGraph,
    PerturbationPlan,
    PerturbedSpectrum,
    PipelineResult,
    ScoredEdges,
    delta_sigma,
    perturbed_spectrum,
    recovery_count,
    run_pipeline,
    score_nonedges,
    synthesize,
)
from .rankopt import (
    BoConfig,
    BoStep,
    EvalConfig,
    GpState,
    default_grid,
    evaluate_rank,
    expected_improvement,
    gp_posterior,
    matern32,
    optimize_rank,
    propose_next,
)
from .spectral import (
    SvdFactors,
    exact_svd,
    factored_entry_block,
    factored_matmul,
    load_svd_cache,
    randomized_svd,
    save_svd_cache,
    truncate,
)
from .gnn import (
    ModelParams,
    NormalizedOperator,
    TrainConfig,
    evaluate,
    normalize_gcn,
    normalize_gcn_factored,
    train_gcn,
    train_sage,
    train_sgc,
)

__version__ = "0.1.0"

__all__ = [
    "BoConfig", "BoStep", "EdgeSet", "EnhancedGraph", "EvalConfig", "GpState",
    "Graph", "ModelParams", "NormalizedOperator", "PerturbationPlan",
    "PerturbedSpectrum", "PipelineResult", "ScoredEdges", "SvdFactors",
    "TrainConfig", "default_grid", "delta_sigma", "edge_homophily",
    "evaluate", "evaluate_rank", "exact_svd", "expected_improvement",
    "factored_entry_block", "factored_matmul", "gp_posterior", "load_graph",
    "load_svd_cache", "matern32", "normalize_gcn", "normalize_gcn_factored",
    "optimize_rank", "perturbed_spectrum", "propose_next", "randomized_svd",
    "recovery_count", "remove_edges", "run_pipeline", "sample_edge_fraction",
    "save_svd_cache", "score_nonedges", "stratified_split", "synthesize",
    "train_gcn", "train_sage", "train_sgc", "truncate", "with_split",
    "write_dataset",
]
