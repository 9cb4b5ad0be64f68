"""Per-agent state assignments over time.

Each agent keeps the sequence of wave functions it assigns to the whole
system. Its own outcomes and received broadcasts collapse that state; a
measurement it does not learn about only advances the state by the
measurement's premeasurement unitary.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional

import numpy as np

from .hilbert import STRUCT_TOL, LinearOp, StateVector, apply, inner
from .measurement import OutcomeRecord, ProjectiveMeasurement, TimeStamp, collapse


class EventKind(str, Enum):
    PREPARED = "prepared"
    OWN_OUTCOME = "own_outcome"
    RECEIVED_OUTCOME = "received_outcome"
    MODELED_UNITARY = "modeled_unitary"


@dataclass(frozen=True)
class KnowledgeEvent:
    time: TimeStamp
    kind: EventKind
    record: Optional[OutcomeRecord] = None
    op_name: Optional[str] = None
    # projector for outcome events, unitary (or None for identity) for modeled ones
    op: Optional[LinearOp] = None

    @property
    def is_outcome(self) -> bool:
        return self.kind in (EventKind.OWN_OUTCOME, EventKind.RECEIVED_OUTCOME)

    def describe(self) -> dict:
        d = {"kind": self.kind.value}
        if self.record is not None:
            d.update(measurement=self.record.measurement, label=self.record.label)
        if self.op_name is not None and self.record is None:
            d["op"] = self.op_name
        return d


@dataclass(frozen=True)
class LedgerEntry:
    time: TimeStamp
    state: StateVector
    event: KnowledgeEvent


@dataclass(frozen=True)
class ObserverLedger:
    agent: str
    history: tuple[LedgerEntry, ...]

    @classmethod
    def start(cls, agent: str, state: StateVector, time: TimeStamp = TimeStamp(0, 0, 0)) -> "ObserverLedger":
        return cls(agent, (LedgerEntry(time, _unit(state), KnowledgeEvent(time, EventKind.PREPARED)),))

    @property
    def current(self) -> StateVector:
        return self.history[-1].state

    def entry_at(self, t: TimeStamp) -> LedgerEntry:
        """Latest entry at or before ``t``."""
        found = None
        for e in self.history:
            if e.time <= t:
                found = e
            else:
                break
        if found is None:
            raise LookupError(f"ledger of {self.agent!r} has no entry at or before {t}")
        return found

    def state_at(self, t: TimeStamp) -> StateVector:
        return self.entry_at(t).state

    def entries_between(self, after: TimeStamp, upto: TimeStamp) -> list[LedgerEntry]:
        return [e for e in self.history if after < e.time <= upto]

    def knows(self, measurement: str, label: str, by: TimeStamp) -> bool:
        return any(
            e.event.is_outcome
            and e.event.record.measurement == measurement
            and e.event.record.label == label
            and e.time <= by
            for e in self.history
        )

    def _append(self, time: TimeStamp, state: StateVector, event: KnowledgeEvent) -> "ObserverLedger":
        if self.history and time < self.history[-1].time:
            raise ValueError(f"ledger of {self.agent!r}: time {time} before {self.history[-1].time}")
        return ObserverLedger(self.agent, self.history + (LedgerEntry(time, _unit(state), event),))


def _unit(state: StateVector) -> StateVector:
    if state.normalized:
        return state
    n = state.norm()
    if abs(n - 1) > STRUCT_TOL:
        raise ValueError("ledger states must be unit norm")
    return StateVector(state.space, state.amps / n, True)


def on_own_measurement(
    ledger: ObserverLedger, record: OutcomeRecord, m: ProjectiveMeasurement, time: Optional[TimeStamp] = None
) -> ObserverLedger:
    """Premeasure then collapse onto the recorded outcome."""
    time = time or record.time
    p = m.projector(record.label)
    state = collapse(m.premeasure(ledger.current), p)
    return ledger._append(time, state, KnowledgeEvent(time, EventKind.OWN_OUTCOME, record, m.name, p))


def on_broadcast_received(
    ledger: ObserverLedger,
    record: OutcomeRecord,
    m: ProjectiveMeasurement,
    time: Optional[TimeStamp] = None,
    projector: Optional[LinearOp] = None,
) -> ObserverLedger:
    """Collapse onto a received outcome.

    The recipient already advanced its state through the measurement's
    premeasurement when the measurement happened, so only the projector is
    applied here. ``projector`` overrides ``m``'s when it has been carried
    through later unitaries.
    """
    time = time or record.time
    p = projector if projector is not None else m.projector(record.label)
    state = collapse(ledger.current, p)
    return ledger._append(time, state, KnowledgeEvent(time, EventKind.RECEIVED_OUTCOME, record, m.name, p))


def on_unobserved_measurement(ledger: ObserverLedger, m: ProjectiveMeasurement, time: TimeStamp) -> ObserverLedger:
    """Model someone else's measurement as its premeasurement unitary only."""
    state = m.premeasure(ledger.current)
    event = KnowledgeEvent(time, EventKind.MODELED_UNITARY, None, m.name, m.premeasurement)
    return ledger._append(time, state, event)


def on_unitary(ledger: ObserverLedger, op: LinearOp, time: TimeStamp, name: str) -> ObserverLedger:
    event = KnowledgeEvent(time, EventKind.MODELED_UNITARY, None, name, op)
    return ledger._append(time, apply(op, ledger.current), event)


def divergence(a: ObserverLedger, b: ObserverLedger, t: TimeStamp) -> float:
    """Ray infidelity ``1 - |<a|b>|^2`` of the two agents' latest states at ``t``."""
    if not a.history or not b.history:
        raise ValueError("empty ledger")
    fid = abs(inner(a.state_at(t), b.state_at(t))) ** 2
    return float(max(0.0, 1.0 - fid))


def assert_consensus(ledgers: Iterable[ObserverLedger], t: TimeStamp, tol: float = STRUCT_TOL) -> bool:
    ls = list(ledgers)
    return all(divergence(ls[i], ls[j], t) <= tol for i in range(len(ls)) for j in range(i + 1, len(ls)))


def export_history(ledgers: Mapping[str, ObserverLedger] | Iterable[ObserverLedger]) -> list[dict]:
    """JSON-ready rows ``{agent, time, event, state_norm_check, amplitudes}``."""
    if isinstance(ledgers, Mapping):
        ledgers = ledgers.values()
    rows = []
    for led in ledgers:
        for e in led.history:
            rows.append(
                {
                    "agent": led.agent,
                    "time": str(e.time),
                    "event": e.event.describe(),
                    "state_norm_check": bool(abs(e.state.norm() - 1) <= 1e-12),
                    "amplitudes": [
                        {"labels": list(labels), "re": a.real, "im": a.imag}
                        for labels, a in e.state.nonzero_terms()
                    ],
                }
            )
    return rows


def with_global_phases(ledger: ObserverLedger, phases: Iterable[float]) -> ObserverLedger:
    """Copy of ``ledger`` with each entry's state multiplied by ``exp(i*theta)``."""
    entries = tuple(
        LedgerEntry(e.time, StateVector(e.state.space, e.state.amps * np.exp(1j * th), True), e.event)
        for e, th in zip(ledger.history, phases)
    )
    return ObserverLedger(ledger.agent, entries)
