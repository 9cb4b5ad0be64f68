"""Multi-observer quantum protocols with per-agent state ledgers.

Agents measuring parts of a shared system each keep their own record of the
wave function. The package runs such protocols exactly or by sampling,
compares collapse-per-step and outside-unitary descriptions, and audits the
agents' reasoning against what each of them could actually know.
"""

from .audit import AuditError, InferenceStep, audit_chain, builtin_table1_chain, rebase_chain
from .hilbert import Bipartition, CompositeSpace, ImpossibleBranch, LinearOp, StateVector, SubsystemSpec
from .ledger import ObserverLedger, assert_consensus, divergence
from .measurement import OutcomeRecord, ProjectiveMeasurement, TimeStamp
from .protocol import Protocol, ProtocolError, ValidationError, parse, serialize, validate
from .runner import compare_modes, run_audit, run_exact, run_ledgers, run_sampled

__version__ = "0.1.0"

__all__ = [
    "AuditError",
    "Bipartition",
    "CompositeSpace",
    "ImpossibleBranch",
    "InferenceStep",
    "LinearOp",
    "ObserverLedger",
    "OutcomeRecord",
    "ProjectiveMeasurement",
    "Protocol",
    "ProtocolError",
    "StateVector",
    "SubsystemSpec",
    "TimeStamp",
    "ValidationError",
    "assert_consensus",
    "audit_chain",
    "builtin_table1_chain",
    "compare_modes",
    "divergence",
    "parse",
    "rebase_chain",
    "run_audit",
    "run_exact",
    "run_ledgers",
    "run_sampled",
    "serialize",
    "validate",
]
