"""Budget-optimal task allocation and label inference for binary crowdsourcing."""

from ._validation import ValidationError
from .workers import (
    BetaPrior,
    CrowdStats,
    FiniteMixture,
    FixedP,
    Haldane,
    SpammerHammer,
    WorkerSample,
    crowd_stats,
    estimate_q_from_data,
    sample_responses,
    sample_workers,
)
from .allocation import (
    AssignmentGraph,
    GroundTruth,
    adaptive_spammer_hammer,
    build_configuration_graph,
    empirical_tree_probability,
    incremental_q_design,
    sample_truth,
)
from .inference import (
    ALGORITHMS,
    InferenceResult,
    IterativeMessagePassing,
    MajorityVote,
    OneCoinEM,
    OracleML,
    ResponseMatrix,
    SpectralPowerIteration,
    em_infer,
    iterative_infer,
    majority_vote,
    oracle_ml,
    spectral_infer,
)

__version__ = "0.1.0"
