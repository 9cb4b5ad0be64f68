"""Audit of agents' inference chains against their ledgers.

Two reasoning rules are checked for every statement:

* rule 1 -- an agent may only use information it actually has. Reasoning
  from another agent's ledger entry is flagged when that entry contains an
  outcome never delivered to the agent and not derivable with certainty from
  the agent's own state.
* rule 2 -- an agent must use its latest information. A statement is
  flagged when the holder's own ledger has a newer entry from which the
  claim evaluates to a different probability.

Claims are probabilities of one measurement outcome, computed from a ledger
state through the operations that happen between that state and the
measurement. "Certain" and "impossible" are 1 and 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any, Mapping, Optional, Sequence, Union

from .hilbert import EQ_TOL, STRUCT_TOL, LinearOp, StateVector, apply
from .ledger import LedgerEntry, ObserverLedger
from .measurement import TimeStamp, born_probability, collapse
from .protocol import MeasureStep, Protocol, UnitaryStep, compile_protocol


class AuditError(ValueError):
    pass


@dataclass(frozen=True)
class LedgerRef:
    agent: str
    time: TimeStamp


@dataclass(frozen=True, eq=False)
class FutureOp:
    """An operation at ``time``: a unitary, a conditioning projector, or both."""

    time: TimeStamp
    unitary: Optional[LinearOp]
    projector: Optional[LinearOp]
    ref: dict


@dataclass(frozen=True)
class Claim:
    measurement: str
    outcome: str
    probability: float

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("asserted probability must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class InferenceStep:
    id: str
    agent: str
    stated_at: TimeStamp
    basis: LedgerRef
    claim: Claim
    claim_op: FutureOp
    future_ops: tuple[FutureOp, ...] = ()
    # whose certainty is asserted; differs from ``agent`` for nested statements
    holder: Optional[str] = None
    provenance: tuple[str, ...] = ()
    note: str = ""

    def __post_init__(self):
        if self.stated_at < self.basis.time:
            raise ValueError(f"statement {self.id!r}: basis time after statement time")

    @property
    def holder_agent(self) -> str:
        return self.holder or self.agent


@dataclass(frozen=True)
class Violation:
    rule: int
    statement_id: str
    agent: str
    used_time: TimeStamp
    latest_time: TimeStamp
    p_used: float
    p_latest: float


@dataclass(frozen=True)
class AuditRow:
    statement_id: str
    agent: str
    verdict: str
    used_time: TimeStamp
    latest_time: TimeStamp
    p_used: float
    p_latest: float

    def to_dict(self) -> dict:
        return {
            "statement_id": self.statement_id,
            "agent": self.agent,
            "verdict": self.verdict,
            "used_time": str(self.used_time),
            "latest_time": str(self.latest_time),
            "p_used": self.p_used,
            "p_latest": self.p_latest,
        }


Ledgers = Mapping[str, ObserverLedger]


def _entry(ledgers: Ledgers, ref: LedgerRef) -> LedgerEntry:
    try:
        return ledgers[ref.agent].entry_at(ref.time)
    except (KeyError, LookupError):
        raise AuditError(f"dangling ledger reference {ref.agent}@{ref.time}") from None


def evaluate_from(step: InferenceStep, entry: LedgerEntry) -> float:
    """Probability of the claimed outcome given ``entry``'s state.

    Unitaries already reflected in the entry (time at or before it) are
    skipped; conditioning projectors always apply. The result is the claimed
    outcome's probability conditional on those projections.
    """
    cur: StateVector = entry.state
    for op in step.future_ops:
        if op.unitary is not None and op.time > entry.time:
            cur = apply(op.unitary, cur)
        if op.projector is not None:
            if born_probability(cur, op.projector) <= EQ_TOL:
                raise AuditError(f"statement {step.id!r}: condition {op.ref} is impossible from {entry.time}")
            cur = collapse(cur, op.projector)
    last = step.claim_op
    if last.unitary is not None and last.time > entry.time:
        cur = apply(last.unitary, cur)
    return born_probability(cur, last.projector)


def evaluate_claim(step: InferenceStep, ledgers: Ledgers) -> float:
    return evaluate_from(step, _entry(ledgers, step.basis))


def _latest_own(step: InferenceStep, ledgers: Ledgers) -> LedgerEntry:
    return _entry(ledgers, LedgerRef(step.holder_agent, step.stated_at))


def check_rule1(step: InferenceStep, ledgers: Ledgers) -> Optional[Violation]:
    if step.basis.agent == step.agent:
        return None
    used = _entry(ledgers, step.basis)
    mine = _entry(ledgers, LedgerRef(step.agent, step.stated_at))
    other = ledgers[step.basis.agent]
    for e in other.history:
        if e.time > used.time:
            break
        if not e.event.is_outcome:
            continue
        rec = e.event.record
        if ledgers[step.agent].knows(rec.measurement, rec.label, step.stated_at):
            continue
        if born_probability(mine.state, e.event.op) >= 1 - STRUCT_TOL:
            continue  # derivable from the agent's own state
        latest = _latest_own(step, ledgers)
        return Violation(1, step.id, step.agent, used.time, mine.time, evaluate_from(step, used), evaluate_from(step, latest))
    return None


def check_rule2(step: InferenceStep, ledgers: Ledgers) -> Optional[Violation]:
    used = _entry(ledgers, step.basis)
    latest = _latest_own(step, ledgers)
    if not latest.time > used.time:
        return None
    p_used, p_latest = evaluate_from(step, used), evaluate_from(step, latest)
    if abs(p_used - p_latest) <= STRUCT_TOL:
        return None
    return Violation(2, step.id, step.agent, used.time, latest.time, p_used, p_latest)


def audit_chain(chain: Sequence[InferenceStep], ledgers: Ledgers) -> list[AuditRow]:
    rows = []
    for step in chain:
        v = check_rule1(step, ledgers) or check_rule2(step, ledgers)
        if v is not None:
            rows.append(AuditRow(step.id, step.agent, f"rule{v.rule}", v.used_time, v.latest_time, v.p_used, v.p_latest))
            continue
        used = _entry(ledgers, step.basis)
        latest = _latest_own(step, ledgers)
        rows.append(
            AuditRow(step.id, step.agent, "ok", used.time, latest.time, evaluate_from(step, used), evaluate_from(step, latest))
        )
    return rows


def violations(rows: Sequence[AuditRow]) -> list[AuditRow]:
    return [r for r in rows if r.verdict != "ok"]


def rebase_chain(chain: Sequence[InferenceStep], ledgers: Ledgers) -> list[InferenceStep]:
    """Point every statement at its holder's latest own entry and restate its claim from there."""
    out = []
    for step in chain:
        latest = _latest_own(step, ledgers)
        p = evaluate_from(step, latest)
        claim = replace(step.claim, probability=min(1.0, max(0.0, p)))
        out.append(replace(step, basis=LedgerRef(step.holder_agent, latest.time), claim=claim))
    return out


# -- chain documents -------------------------------------------------------------

_CERTAINTY = {"certain": 1.0, "impossible": 0.0}


def _probability(v: Any) -> float:
    if isinstance(v, str) and v in _CERTAINTY:
        return _CERTAINTY[v]
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    raise AuditError(f"bad asserted probability {v!r}")


def _format_probability(p: float) -> Union[str, float]:
    return {1.0: "certain", 0.0: "impossible"}.get(p, p)


def _resolve_op(doc: dict, p: Protocol, where: str) -> FutureOp:
    cp = compile_protocol(p)
    if set(doc) == {"time", "unitary"}:
        step = p.step(doc["unitary"]) if doc["unitary"] in [s.name for s in p.steps] else None
        if not isinstance(step, UnitaryStep):
            raise AuditError(f"{where}: unknown unitary {doc['unitary']!r}")
        return FutureOp(TimeStamp.parse(doc["time"]), cp.unitaries[step.name], None, dict(doc))
    if set(doc) == {"time", "measurement", "outcome"}:
        m = cp.measurements.get(doc["measurement"])
        if m is None or doc["outcome"] not in m.labels:
            raise AuditError(f"{where}: unknown outcome {doc['measurement']}={doc['outcome']}")
        return FutureOp(TimeStamp.parse(doc["time"]), m.premeasurement, m.projector(doc["outcome"]), dict(doc))
    raise AuditError(f"{where}: future op needs keys time+unitary or time+measurement+outcome")


_STEP_KEYS = {"id", "agent", "stated_at", "basis", "claim"}
_STEP_OPTIONAL = {"holder", "future_ops", "provenance", "note"}


def resolve_chain(docs: Sequence[dict], p: Protocol) -> list[InferenceStep]:
    """Turn chain documents (names and labels) into steps bound to ``p``'s operators."""
    cp = compile_protocol(p)
    chain = []
    for k, d in enumerate(docs):
        where = f"statement {k}"
        if not isinstance(d, dict) or not _STEP_KEYS <= set(d) or set(d) - _STEP_KEYS - _STEP_OPTIONAL:
            raise AuditError(f"{where}: needs keys {sorted(_STEP_KEYS)} (optional {sorted(_STEP_OPTIONAL)})")
        c = d["claim"]
        if set(c) != {"measurement", "outcome", "probability"}:
            raise AuditError(f"{where}: claim needs measurement, outcome, probability")
        step = p.step(c["measurement"]) if c["measurement"] in cp.measurements else None
        if not isinstance(step, MeasureStep):
            raise AuditError(f"{where}: unknown measurement {c['measurement']!r}")
        claim_op = _resolve_op({"time": str(step.time), "measurement": c["measurement"], "outcome": c["outcome"]}, p, where)
        b = d["basis"]
        if set(b) != {"agent", "time"}:
            raise AuditError(f"{where}: basis needs agent and time")
        for a in (d["agent"], b["agent"], d.get("holder") or d["agent"]):
            if a not in p.agents:
                raise AuditError(f"{where}: unknown agent {a!r}")
        chain.append(
            InferenceStep(
                id=d["id"],
                agent=d["agent"],
                stated_at=TimeStamp.parse(d["stated_at"]),
                basis=LedgerRef(b["agent"], TimeStamp.parse(b["time"])),
                claim=Claim(c["measurement"], c["outcome"], _probability(c["probability"])),
                claim_op=claim_op,
                future_ops=tuple(_resolve_op(o, p, where) for o in d.get("future_ops", [])),
                holder=d.get("holder"),
                provenance=tuple(d.get("provenance", ())),
                note=d.get("note", ""),
            )
        )
    return chain


def chain_documents(chain: Sequence[InferenceStep]) -> list[dict]:
    docs = []
    for s in chain:
        d: dict[str, Any] = {
            "id": s.id,
            "agent": s.agent,
            "stated_at": str(s.stated_at),
            "basis": {"agent": s.basis.agent, "time": str(s.basis.time)},
            "claim": {
                "measurement": s.claim.measurement,
                "outcome": s.claim.outcome,
                "probability": _format_probability(s.claim.probability),
            },
            "future_ops": [dict(o.ref) for o in s.future_ops],
        }
        if s.holder:
            d["holder"] = s.holder
        if s.provenance:
            d["provenance"] = list(s.provenance)
        if s.note:
            d["note"] = s.note
        docs.append(d)
    return docs


def parse_chain(text: Union[str, bytes], p: Protocol) -> list[InferenceStep]:
    try:
        docs = json.loads(text)
    except json.JSONDecodeError as e:
        raise AuditError(f"chain syntax error: {e.msg} (line {e.lineno}, column {e.colno})") from None
    if not isinstance(docs, list):
        raise AuditError("chain document must be an array of statements")
    return resolve_chain(docs, p)


# "w = ok impossible" is how the certainty of w = fail is encoded. The table's
# F^{n:13}/F^{n:14} cells print "w = tail"; fail is what the argument needs.
TABLE1 = [
    {
        "id": "Fbar^n:02",
        "agent": "Fbar",
        "stated_at": "1:02",
        "basis": {"agent": "Fbar", "time": "1:01"},
        "claim": {"measurement": "w", "outcome": "ok", "probability": "impossible"},
        "future_ops": [{"time": "1:10", "unitary": "U_10_20"}],
        "note": "I am certain that W will observe w = fail at n:31",
    },
    {
        "id": "F^n:12",
        "agent": "F",
        "stated_at": "1:12",
        "basis": {"agent": "F", "time": "1:11"},
        "claim": {"measurement": "r", "outcome": "tail", "probability": "certain"},
        "note": "I am certain that Fbar knows r = tail at n:01",
    },
    {
        "id": "F^n:13",
        "agent": "F",
        "holder": "Fbar",
        "stated_at": "1:13",
        "basis": {"agent": "Fbar", "time": "1:10"},
        "claim": {"measurement": "w", "outcome": "ok", "probability": "impossible"},
        "provenance": ["Fbar^n:02", "F^n:12"],
        "note": "I am certain that Fbar is certain that W will observe w = fail at n:31",
    },
    {
        "id": "F^n:14",
        "agent": "F",
        "stated_at": "1:14",
        "basis": {"agent": "Fbar", "time": "1:10"},
        "claim": {"measurement": "w", "outcome": "ok", "probability": "impossible"},
        "provenance": ["F^n:13"],
        "note": "I am certain that W will observe w = fail at n:31",
    },
    {
        "id": "Wbar^n:22",
        "agent": "Wbar",
        "stated_at": "1:22",
        "basis": {"agent": "Wbar", "time": "1:00"},
        "claim": {"measurement": "z", "outcome": "up", "probability": "certain"},
        "future_ops": [
            {"time": "1:10", "unitary": "U_10_20"},
            {"time": "1:21", "measurement": "wbar", "outcome": "okbar"},
        ],
        "note": "given wbar = okbar, S is in the up state",
    },
    {
        "id": "W^n:22",
        "agent": "W",
        "stated_at": "1:22",
        "basis": {"agent": "W", "time": "1:00"},
        "claim": {"measurement": "z", "outcome": "up", "probability": "certain"},
        "future_ops": [
            {"time": "1:10", "unitary": "U_10_20"},
            {"time": "1:21", "measurement": "wbar", "outcome": "okbar"},
        ],
        "note": "given wbar = okbar, S is in the up state",
    },
]


def builtin_table1_chain(p: Optional[Protocol] = None) -> list[InferenceStep]:
    """Statements of F-bar and F from the reasoning table, plus the outside agents' inferences."""
    if p is None:
        from .scenarios import builtin_wfr

        p = builtin_wfr()
    return resolve_chain(TABLE1, p)
