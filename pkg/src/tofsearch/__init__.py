"""Test-time trajectory search: best-of-N and tree-of-frames engines over
pluggable generators and verifier ensembles, with exact cost accounting
and a synthetic sandbox for desk-scale verification."""

from .core import (
    CandidateNode,
    ConfigError,
    GateConfig,
    LandscapeSpec,
    ProtocolError,
    RunConfig,
    Schedule,
    SearchPath,
    Stage,
    StagedPrompts,
    TextPrompt,
    stage_of_frame,
    validate_config,
)
from .engine import (
    FrontierQueue,
    PruneOutcome,
    SearchResult,
    branch_factor,
    k_sequence,
    prune_top_k,
    random_linear_search,
    tof_search,
)
from .generator import (
    Generator,
    GeneratorCapabilities,
    PartialFrameState,
    SyntheticGenerator,
    SyntheticLandscape,
)
from .ledger import NfeLedger
from .verifiers import (
    ConstantVerifier,
    RankTable,
    SyntheticVerifier,
    Verifier,
    VerifierFault,
    aggregate,
    clarity_gate,
    decompose_prompt,
    potential_gate,
    rank_scores,
)

__version__ = "0.1.0"

__all__ = [
    "CandidateNode", "ConfigError", "GateConfig", "LandscapeSpec",
    "ProtocolError", "RunConfig", "Schedule", "SearchPath", "Stage",
    "StagedPrompts", "TextPrompt", "stage_of_frame", "validate_config",
    "FrontierQueue", "PruneOutcome", "SearchResult", "branch_factor",
    "k_sequence", "prune_top_k", "random_linear_search", "tof_search",
    "Generator", "GeneratorCapabilities", "PartialFrameState",
    "SyntheticGenerator", "SyntheticLandscape", "NfeLedger",
    "ConstantVerifier", "RankTable", "SyntheticVerifier", "Verifier",
    "VerifierFault", "aggregate", "clarity_gate", "decompose_prompt",
    "potential_gate", "rank_scores",
]
