"""tensorkb: knowledge-base completion by canonical tensor factorization.

Triples (subject, predicate, object) over an entity vocabulary are modeled
as a third-order binary tensor and completed with a low-rank factorization
(CP, DistMult or ComplEx) trained on full-softmax fiber losses, optionally
over a reciprocal-augmented predicate set, with squared-norm or nuclear
3-norm style penalties. Rankings are evaluated with the filtered MRR /
Hits@k protocol. The :mod:`decompositions` and :mod:`hierarchy` modules hold
executable oracles for the mathematical facts the method rests on.
"""

__version__ = "0.1.0"

from .datasets import (
    DataError,
    DuplicateTripleError,
    FilterIndex,
    ModeMarginals,
    RelationTypeTable,
    TripleParseError,
    TripleStore,
    UnknownTokenError,
    Vocabulary,
    augment_reciprocal,
    build_filter_index,
    compute_marginals,
    load_store,
    load_triples,
    relation_type_table,
    save_store,
)
from .decompositions import (
    DecompositionFitError,
    NonconvexityReport,
    NormalizedDecomposition,
    SmallDecomposition,
    balance,
    nonconvexity_certificate,
    normalize_decomposition,
    nuclear_pnorm_estimate,
    omega,
    spectrum_qnorm,
)
from .estimator import KnowledgeBaseRanker
from .evaluation import EvalResult, Query, evaluate, filtered_rank, per_type_breakdown
from .hierarchy import (
    HierarchyParams,
    build_hierarchy_store,
    hierarchy_mrr_closed_form,
    hierarchy_mrr_simulated,
)
from .models import (
    ComplExModel,
    CPModel,
    DistMultModel,
    ModelConfig,
    batch_score_lhs,
    batch_score_rhs,
    init_model,
    load_checkpoint,
    save_checkpoint,
    score_lhs_fiber,
    score_rhs_fiber,
    score_triple,
    score_triples,
)
from .objectives import (
    Gradients,
    fro_penalty_sampled,
    lhs_fiber_loss_and_grad,
    log_softmax_loss_terms,
    n2_weighted_penalty,
    n3_penalty_sampled,
    reciprocal_loss,
    rhs_fiber_loss_and_grad,
    standard_loss,
)
from .oracles import run_verification
from .training import (
    ConfigError,
    OptimizerState,
    RegularizerConfig,
    TrainConfig,
    TrainHistory,
    TrainingDivergedError,
    adagrad_step,
    fit,
)

__all__ = [
    "__version__",
    # datasets
    "DataError", "DuplicateTripleError", "FilterIndex", "ModeMarginals",
    "RelationTypeTable", "TripleParseError", "TripleStore",
    "UnknownTokenError", "Vocabulary", "augment_reciprocal",
    "build_filter_index", "compute_marginals", "load_store", "load_triples",
    "relation_type_table", "save_store",
    # models
    "ComplExModel", "CPModel", "DistMultModel", "ModelConfig",
    "batch_score_lhs", "batch_score_rhs", "init_model", "load_checkpoint",
    "save_checkpoint", "score_lhs_fiber", "score_rhs_fiber", "score_triple",
    "score_triples",
    # objectives
    "Gradients", "fro_penalty_sampled", "lhs_fiber_loss_and_grad",
    "log_softmax_loss_terms", "n2_weighted_penalty", "n3_penalty_sampled",
    "reciprocal_loss", "rhs_fiber_loss_and_grad", "standard_loss",
    # training
    "ConfigError", "OptimizerState", "RegularizerConfig", "TrainConfig",
    "TrainHistory", "TrainingDivergedError", "adagrad_step", "fit",
    # evaluation
    "EvalResult", "Query", "evaluate", "filtered_rank", "per_type_breakdown",
    # estimator
    "KnowledgeBaseRanker",
    # decompositions
    "DecompositionFitError", "NonconvexityReport", "NormalizedDecomposition",
    "SmallDecomposition", "balance", "nonconvexity_certificate",
    "normalize_decomposition", "nuclear_pnorm_estimate", "omega",
    "spectrum_qnorm",
    # hierarchy
    "HierarchyParams", "build_hierarchy_store", "hierarchy_mrr_closed_form",
    "hierarchy_mrr_simulated",
    # oracles
    "run_verification",
]
