"""Projective measurements: Born weights, Lüders collapse, sampling, chain operators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .hilbert import (
    EQ_TOL,
    STRUCT_TOL,
    ImpossibleBranch,
    LinearOp,
    StateVector,
    apply,
    normalize,
)

INCOMPLETE_TOL = 1e-8


class MeasurementError(ValueError):
    pass


@dataclass(frozen=True)
class TimeStamp:
    """Protocol time ``n:ij``; ordered lexicographically by (round, step, substep)."""

    round: int
    step: int
    substep: int

    def __post_init__(self):
        if min(self.round, self.step, self.substep) < 0:
            raise ValueError("time components must be non-negative")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.round, self.step, self.substep)

    def __lt__(self, other):
        return self.key < other.key

    def __le__(self, other):
        return self.key <= other.key

    def __gt__(self, other):
        return self.key > other.key

    def __ge__(self, other):
        return self.key >= other.key

    def shifted(self, substeps: int) -> "TimeStamp":
        return TimeStamp(self.round, self.step, self.substep + substeps)

    @classmethod
    def parse(cls, text: str) -> "TimeStamp":
        n, sep, rest = text.partition(":")
        if not sep or not n.isdigit():
            raise ValueError(f"bad time {text!r}; expected 'n:ij'")
        if rest.isdigit() and len(rest) == 2:
            return cls(int(n), int(rest[0]), int(rest[1]))
        i, dot, j = rest.partition(".")
        if dot and i.isdigit() and j.isdigit():
            return cls(int(n), int(i), int(j))
        raise ValueError(f"bad time {text!r}; expected 'n:ij'")

    def __str__(self):
        if self.step < 10 and self.substep < 10:
            return f"{self.round}:{self.step}{self.substep}"
        return f"{self.round}:{self.step}.{self.substep}"


@dataclass(frozen=True)
class OutcomeRecord:
    measurement: str
    label: str
    probability: float
    time: Optional[TimeStamp] = None

    def __post_init__(self):
        if self.probability < 0:
            raise ValueError("negative probability")


@dataclass(frozen=True, eq=False)
class ProjectiveMeasurement:
    name: str
    outcomes: tuple[tuple[str, LinearOp], ...]
    premeasurement: Optional[LinearOp] = None

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple((str(l), p) for l, p in self.outcomes))
        if not self.outcomes:
            raise MeasurementError(f"measurement {self.name!r} has no outcomes")
        labels = [l for l, _ in self.outcomes]
        if len(set(labels)) != len(labels):
            raise MeasurementError(f"measurement {self.name!r}: duplicate outcome labels")
        space = self.outcomes[0][1].space
        for label, p in self.outcomes:
            if p.kind != "projector":
                raise MeasurementError(f"outcome {label!r} is not a projector")
            if p.space != space:
                raise MeasurementError("outcome projectors live on different spaces")
        if self.premeasurement is not None and (
            self.premeasurement.kind != "unitary" or self.premeasurement.space != space
        ):
            raise MeasurementError("premeasurement must be a unitary on the measurement space")
        mats = [p.matrix for _, p in self.outcomes]
        for i in range(len(mats)):
            for j in range(i + 1, len(mats)):
                if np.max(np.abs(mats[i] @ mats[j])) > STRUCT_TOL:
                    raise MeasurementError(
                        f"measurement {self.name!r}: outcomes {labels[i]!r} and {labels[j]!r} overlap"
                    )
        if np.max(np.abs(sum(mats) - np.eye(space.total_dim))) > STRUCT_TOL:
            raise MeasurementError(f"incomplete measurement {self.name!r}")

    @property
    def space(self):
        return self.outcomes[0][1].space

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(l for l, _ in self.outcomes)

    def projector(self, label: str) -> LinearOp:
        for l, p in self.outcomes:
            if l == label:
                return p
        raise KeyError(f"measurement {self.name!r} has no outcome {label!r}")

    def premeasure(self, state: StateVector) -> StateVector:
        return state if self.premeasurement is None else apply(self.premeasurement, state)


def _require_normalized(state: StateVector) -> None:
    if abs(state.norm() - 1.0) > STRUCT_TOL:
        raise ValueError("unnormalized state")


def born_probability(state: StateVector, projector: LinearOp) -> float:
    """||P psi||^2 for a normalized state."""
    _require_normalized(state)
    if projector.kind != "projector":
        raise ValueError("born_probability needs a projector")
    v = apply(projector, state).amps
    return float(np.vdot(v, v).real)


def collapse(state: StateVector, projector: LinearOp) -> StateVector:
    """Lüders update P psi / ||P psi||; a vanishing branch raises ImpossibleBranch."""
    if born_probability(state, projector) <= EQ_TOL:
        raise ImpossibleBranch()
    return normalize(apply(projector, state))


def outcome_probabilities(state: StateVector, m: ProjectiveMeasurement) -> list[tuple[str, float]]:
    """Born weights of every outcome, after the premeasurement if there is one."""
    s = m.premeasure(state)
    return [(label, born_probability(s, p)) for label, p in m.outcomes]


def inverse_cdf(probs: Sequence[float], u: float) -> int:
    """Index picked by uniform ``u`` over ``probs`` in declared order."""
    total = 0.0
    last = None
    for i, p in enumerate(probs):
        if p > EQ_TOL:
            last = i
        total += p
        if u < total and p > EQ_TOL:
            return i
    if last is None:
        raise MeasurementError("no outcome has positive probability")
    # u landed in the rounding slack above the cumulative sum
    return last


def sample(
    state: StateVector, m: ProjectiveMeasurement, rng: np.random.Generator, time: Optional[TimeStamp] = None
) -> tuple[OutcomeRecord, StateVector]:
    s = m.premeasure(state)
    probs = [born_probability(s, p) for _, p in m.outcomes]
    if sum(probs) < 1 - INCOMPLETE_TOL:
        raise MeasurementError(f"incomplete measurement {m.name!r}: probabilities sum to {sum(probs)}")
    i = inverse_cdf(probs, float(rng.random()))
    label, p = m.outcomes[i]
    return OutcomeRecord(m.name, label, probs[i], time), collapse(s, p)


def chain_operator(steps: Sequence[LinearOp]) -> LinearOp:
    """Time-ordered product ``E = O_k ... O_1`` of ``steps`` (earliest first).

    The probability of the whole event sequence on ``psi`` is ``||E psi||^2``.
    """
    if not steps:
        raise ValueError("empty chain")
    e = steps[0].matrix
    for op in steps[1:]:
        if op.space != steps[0].space:
            raise ValueError("space mismatch in chain")
        e = op.matrix @ e
    return LinearOp(steps[0].space, e, "chain")


def event_probability(chain: LinearOp, state: StateVector) -> float:
    _require_normalized(state)
    v = apply(chain, state).amps
    return float(np.vdot(v, v).real)


Step = tuple[Optional[LinearOp], Optional[LinearOp]]


def sequential_joint(state: StateVector, steps: Sequence[Step]) -> tuple[float, Optional[StateVector]]:
    """Product of conditional Born factors, collapsing after each projector.

    Each step is ``(unitary or None, projector or None)``. A vanishing branch
    yields ``(0.0, None)``.
    """
    _require_normalized(state)
    p = 1.0
    cur = state
    for u, proj in steps:
        if u is not None:
            cur = apply(u, cur)
        if proj is not None:
            pk = born_probability(cur, proj)
            if pk <= EQ_TOL:
                return 0.0, None
            p *= pk
            cur = collapse(cur, proj)
    return p, cur


def flatten_steps(steps: Sequence[Step]) -> list[LinearOp]:
    return [op for pair in steps for op in pair if op is not None]


def verify_equivalence(state: StateVector, steps: Sequence[Step]) -> float:
    """|chain-operator probability - sequential product| for one decomposition."""
    chain_p = event_probability(chain_operator(flatten_steps(steps)), state)
    seq_p, _ = sequential_joint(state, steps)
    return abs(chain_p - seq_p)
