"""Conformal and likelihood prediction sets for discrete-state Markov chains."""

from ._kernels import BACKEND
from .composition import Composition, composition_of
from .conformal import (
    CandidateScores,
    ConformalConfig,
    ConformalPredictionSet,
    ScoredCandidate,
    conformal_prediction_set,
    nonconformity_score,
    p_value,
    score_all_candidates,
    set_composition,
)
from .errors import (
    InvalidInputError,
    MarkovCPError,
    ParseError,
    ResourceCapError,
    UnvisitedStateError,
)
from .iblocks import (
    BlockPermutation,
    IBlockDecomposition,
    apply_permutation,
    decompose,
    sample_permutations,
)
from .likelihood import (
    LikelihoodPredictionSet,
    RankedCandidates,
    hdr_set,
    randomized_hdr_set,
    rank_candidates,
)
from .markov import (
    InitialDistribution,
    StateSpace,
    TransitionMatrix,
    conflict_reference_chain,
    estimate_transition_matrix,
    matrix_power_distribution,
    sequence_log_probability,
    simulate_chain,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BlockPermutation",
    "CandidateScores",
    "Composition",
    "ConformalConfig",
    "ConformalPredictionSet",
    "IBlockDecomposition",
    "InitialDistribution",
    "InvalidInputError",
    "LikelihoodPredictionSet",
    "MarkovCPError",
    "ParseError",
    "RankedCandidates",
    "ResourceCapError",
    "ScoredCandidate",
    "StateSpace",
    "TransitionMatrix",
    "UnvisitedStateError",
    "apply_permutation",
    "composition_of",
    "conflict_reference_chain",
    "conformal_prediction_set",
    "decompose",
    "estimate_transition_matrix",
    "hdr_set",
    "matrix_power_distribution",
    "nonconformity_score",
    "p_value",
    "randomized_hdr_set",
    "rank_candidates",
    "sample_permutations",
    "score_all_candidates",
    "sequence_log_probability",
    "set_composition",
    "simulate_chain",
]
