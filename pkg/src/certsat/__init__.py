"""Certificate-backed neural SAT toolkit.

Symbolic core (CNF, resolution, proof checking, a proof-logging DPLL teacher,
SR(n) generation) plus a small numpy network that learns to emit resolution
proofs and satisfying assignments. Every verdict carries a checked
certificate.
"""

from .cnf import (
    CheckReport,
    Clause,
    CnfFormula,
    ResolutionProof,
    ResolutionStep,
    check_assignment,
    check_proof,
    prune_proof_dag,
    resolvable_pivots,
    resolve,
)
from .formats import emit_dimacs, emit_trace, parse_dimacs, parse_trace
from .harness import EpisodeConfig, apply_limits, evaluate, run_episode
from .policy import build_model, count_parameters
from .srgen import SrConfig, generate_dataset, generate_sr_pair
from .teacher import solve
from .training import TrainConfig, bootstrap_pass, train

__version__ = "0.1.0"

__all__ = [
    "CheckReport", "Clause", "CnfFormula", "EpisodeConfig", "ResolutionProof", "ResolutionStep",
    "SrConfig", "TrainConfig", "apply_limits", "bootstrap_pass", "build_model", "check_assignment",
    "check_proof", "count_parameters", "emit_dimacs", "emit_trace", "evaluate", "generate_dataset",
    "generate_sr_pair", "parse_dimacs", "parse_trace", "prune_proof_dag", "resolvable_pivots",
    "resolve", "run_episode", "solve", "train",
]
