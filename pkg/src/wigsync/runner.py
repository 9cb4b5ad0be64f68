"""Execution engine: per-agent ledger runs, outcome trees, sampling, comparison."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .audit import AuditRow, InferenceStep, audit_chain, rebase_chain
from .hilbert import STRUCT_TOL, LinearOp, StateVector, apply
from .ledger import (
    EventKind,
    ObserverLedger,
    on_broadcast_received,
    on_own_measurement,
    on_unitary,
    on_unobserved_measurement,
)
from .measurement import OutcomeRecord, TimeStamp, born_probability, collapse, inverse_cdf
from .protocol import MeasureStep, Protocol, UnitaryStep, compile_protocol

MODES = ("exact_collapse", "exact_external", "sample")


# -- ledger runs -----------------------------------------------------------------


@dataclass(frozen=True)
class LedgerRun:
    ledgers: dict[str, ObserverLedger]
    records: tuple[OutcomeRecord, ...]

    @property
    def probability(self) -> float:
        """Product of the per-step Born factors along the record."""
        return float(np.prod([r.probability for r in self.records])) if self.records else 1.0


def default_record(p: Protocol) -> dict[str, str]:
    """Most probable outcome of each measurement in turn (first listed wins ties)."""
    cp = compile_protocol(p)
    state = cp.initial
    rec = {}
    for s in p.steps:
        if isinstance(s, UnitaryStep):
            state = apply(cp.unitaries[s.name], state)
        elif isinstance(s, MeasureStep):
            m = cp.measurements[s.name]
            state = m.premeasure(state)
            probs = [born_probability(state, proj) for _, proj in m.outcomes]
            k = int(np.argmax(probs))
            rec[s.name] = m.outcomes[k][0]
            state = collapse(state, m.outcomes[k][1])
    return rec


def run_ledgers(
    p: Protocol,
    record: Optional[Mapping[str, str]] = None,
    lost: Iterable[tuple[str, str]] = (),
) -> LedgerRun:
    """Advance every agent's ledger along one outcome record.

    ``lost`` lists ``(measurement, recipient)`` broadcasts that never arrive.
    Deliveries due at the same time as a step are applied first. Raises
    :class:`~wigsync.hilbert.ImpossibleBranch` when the record is impossible.
    """
    cp = compile_protocol(p)
    record = dict(default_record(p) if record is None else record)
    missing = [s.name for s in p.measurements if s.name not in record]
    if missing:
        raise KeyError(f"record lacks outcomes for {missing}")
    lost = set(lost)
    ledgers = {a: ObserverLedger.start(a, cp.initial) for a in p.agents}

    events: list[tuple[TimeStamp, int, object]] = [(s.time, 1, s) for s in p.steps]
    for s in p.measurements:
        for r in s.broadcast_to:
            if (s.name, r) not in lost:
                events.append((s.time.shifted(s.broadcast_delay), 0, (s, r)))
    events.sort(key=lambda e: (e[0].key, e[1]))

    # the global (everyone-collapses) state gives each record's probability
    glob = cp.initial
    records: dict[str, OutcomeRecord] = {}
    for time, kind, ev in events:
        if kind == 0:
            s, r = ev
            led = ledgers[r]
            proj = _carried(cp.measurements[s.name].projector(record[s.name]), led, s.time)
            ledgers[r] = on_broadcast_received(led, records[s.name], cp.measurements[s.name], time, proj)
        elif isinstance(ev, UnitaryStep):
            u = cp.unitaries[ev.name]
            glob = apply(u, glob)
            for a in ledgers:
                ledgers[a] = on_unitary(ledgers[a], u, time, ev.name)
        elif isinstance(ev, MeasureStep):
            m = cp.measurements[ev.name]
            glob = m.premeasure(glob)
            proj = m.projector(record[ev.name])
            rec = OutcomeRecord(ev.name, record[ev.name], born_probability(glob, proj), time)
            glob = collapse(glob, proj)
            records[ev.name] = rec
            for a in ledgers:
                if a == ev.agent:
                    ledgers[a] = on_own_measurement(ledgers[a], rec, m, time)
                else:
                    ledgers[a] = on_unobserved_measurement(ledgers[a], m, time)
    return LedgerRun(ledgers, tuple(records[s.name] for s in p.measurements))


def _carried(proj: LinearOp, led: ObserverLedger, since: TimeStamp) -> LinearOp:
    """Move a projector through the unitaries ``led`` applied after ``since``."""
    m = proj.matrix
    for e in led.history:
        if e.time > since and e.event.kind is EventKind.MODELED_UNITARY and e.event.op is not None:
            u = e.event.op.matrix
            m = u @ m @ u.conj().T
    return LinearOp(proj.space, 0.5 * (m + m.conj().T), "projector")


# -- outcome trees ---------------------------------------------------------------


@dataclass
class TreeNode:
    path: tuple[str, ...]
    p_cond: float
    p_cum: float
    state: Optional[StateVector]
    children: list["TreeNode"] = field(default_factory=list)


@dataclass
class OutcomeTree:
    mode: str
    measurements: tuple[str, ...]  # the branching measurements, in order
    root: TreeNode

    def nodes(self) -> list[TreeNode]:
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(n.children))
        return out

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes() if not n.children]

    def node(self, path: Sequence[str]) -> TreeNode:
        for n in self.nodes():
            if n.path == tuple(path):
                return n
        raise KeyError(f"no node {list(path)}")

    def probability(self, path: Sequence[str]) -> float:
        """Cumulative probability of ``path``; pruned descendants of a zero node give 0."""
        path = tuple(path)
        for n in self.nodes():
            if n.path == path:
                return n.p_cum
            if not n.children and n.p_cum == 0.0 and path[: len(n.path)] == n.path:
                return 0.0
        raise KeyError(f"no node {list(path)}")

    def marginal(self, fixed: Mapping[str, str]) -> float:
        """Total probability of full-depth leaves whose labels match ``fixed``."""
        idx = {m: i for i, m in enumerate(self.measurements)}
        total = 0.0
        for leaf in self.leaves():
            if len(leaf.path) == len(self.measurements) and all(leaf.path[idx[m]] == l for m, l in fixed.items()):
                total += leaf.p_cum
        return total

    def to_rows(self) -> list[dict]:
        return [{"path": list(n.path), "p_cond": n.p_cond, "p_cum": n.p_cum} for n in self.nodes()]


def default_external_agents(p: Protocol) -> tuple[str, ...]:
    """Agents none of whose measured subsystems are touched by a later step of someone else."""
    internal = set()
    for k, s in enumerate(p.steps):
        if not isinstance(s, MeasureStep):
            continue
        for later in p.steps[k + 1 :]:
            if isinstance(later, MeasureStep) and later.agent == s.agent:
                continue
            if isinstance(later, (MeasureStep, UnitaryStep)):
                touched = later.targets if isinstance(later, MeasureStep) else later.map.targets
                if set(touched) & set(s.targets):
                    internal.add(s.agent)
    return tuple(a for a in p.agents if a not in internal and any(m.agent == a for m in p.measurements))


def _branching(p: Protocol, mode: str, external: Optional[Sequence[str]]) -> set[str]:
    if mode == "exact_collapse":
        return {s.name for s in p.measurements}
    if mode != "exact_external":
        raise ValueError(f"unknown exact mode {mode!r}")
    ext = set(default_external_agents(p) if external is None else external)
    unknown = ext - set(p.agents)
    if unknown:
        raise ValueError(f"unknown external agents {sorted(unknown)}")
    return {s.name for s in p.measurements if s.agent in ext or ext & set(s.broadcast_to)}


def run_exact(p: Protocol, mode: str = "exact_collapse", external_agents: Optional[Sequence[str]] = None) -> OutcomeTree:
    """Enumerate every outcome branch.

    In ``exact_external`` mode measurements that never reach an external agent
    are applied as their premeasurement only and do not branch.
    """
    cp = compile_protocol(p)
    branch = _branching(p, mode, external_agents)
    root = TreeNode((), 1.0, 1.0, cp.initial)
    frontier = [root]
    for s in p.steps:
        if isinstance(s, UnitaryStep):
            u = cp.unitaries[s.name]
            for n in frontier:
                n.state = apply(u, n.state)
        elif isinstance(s, MeasureStep):
            m = cp.measurements[s.name]
            if s.name not in branch:
                for n in frontier:
                    n.state = m.premeasure(n.state)
                continue
            nxt = []
            for n in frontier:
                st = m.premeasure(n.state)
                for label, proj in m.outcomes:
                    pc = born_probability(st, proj)
                    if pc <= STRUCT_TOL:
                        n.children.append(TreeNode(n.path + (label,), 0.0, 0.0, None))
                        continue
                    child = TreeNode(n.path + (label,), pc, n.p_cum * pc, collapse(st, proj))
                    n.children.append(child)
                    nxt.append(child)
                n.state = st
            frontier = nxt
    names = tuple(s.name for s in p.measurements if s.name in branch)
    return OutcomeTree(mode, names, root)


# -- sampling --------------------------------------------------------------------


@dataclass(frozen=True)
class SampleTable:
    trials: int
    seed: int
    measurements: tuple[str, ...]
    counts: dict[tuple[str, ...], int]

    def frequency(self, path: Sequence[str]) -> float:
        return self.counts.get(tuple(path), 0) / self.trials

    def to_rows(self) -> list[dict]:
        return [
            {"path": list(k), "count": c, "frequency": c / self.trials}
            for k, c in sorted(self.counts.items())
        ]


def sample_tree(tree: OutcomeTree, trials: int, seed: int) -> SampleTable:
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    counts: dict[tuple[str, ...], int] = {}
    for i in range(trials):
        rng = np.random.default_rng([seed, i])
        n = tree.root
        while n.children:
            n = n.children[inverse_cdf([c.p_cond for c in n.children], float(rng.random()))]
        counts[n.path] = counts.get(n.path, 0) + 1
    return SampleTable(trials, seed, tree.measurements, counts)


def run_sampled(
    p: Protocol, trials: int, seed: int, mode: str = "exact_collapse", external_agents: Optional[Sequence[str]] = None
) -> SampleTable:
    """Monte-Carlo outcome frequencies; trial ``i`` draws from the substream ``(seed, i)``.

    Each trial walks the branch structure, drawing one uniform per branching
    measurement and picking the outcome by inverse CDF over its Born weights.
    """
    return sample_tree(run_exact(p, mode, external_agents), trials, seed)


# -- comparison ------------------------------------------------------------------


@dataclass(frozen=True)
class CompareRow:
    outcomes: dict[str, str]
    external: float
    collapse_nosync: float
    collapse_synced_path: float

    def to_dict(self) -> dict:
        return {
            "outcomes": dict(self.outcomes),
            "exact_external": self.external,
            "collapse_nosync_total": self.collapse_nosync,
            "collapse_synced_path": self.collapse_synced_path,
            "diff_nosync_minus_external": self.collapse_nosync - self.external,
            "diff_synced_minus_external": self.collapse_synced_path - self.external,
        }


def compare_modes(
    p: Protocol,
    external_agents: Optional[Sequence[str]] = None,
    record: Optional[Mapping[str, str]] = None,
) -> list[CompareRow]:
    """Probabilities of each combination of externally read outcomes under three semantics.

    * external: the no-sync outside view, internal measurements as unitaries
    * collapse no-sync: every measurement collapses, summed over internal outcomes
    * collapse synced path: internal outcomes fixed to ``record`` (shared by all
      agents once broadcast), so the row is that single leaf's probability
    """
    nosync = p.without_broadcasts()
    ext_agents = tuple(default_external_agents(nosync) if external_agents is None else external_agents)
    ext_tree = run_exact(nosync, "exact_external", ext_agents)
    terminal = ext_tree.measurements
    if not terminal:
        return []
    full = run_exact(nosync, "exact_collapse")
    record = dict(default_record(p) if record is None else record)
    internal = {m: record[m] for m in full.measurements if m not in terminal}
    labels = [compile_protocol(p).measurements[m].labels for m in terminal]
    rows = []
    for combo in itertools.product(*labels):
        fixed = dict(zip(terminal, combo))
        path = tuple(fixed.get(m, internal.get(m)) for m in full.measurements)
        rows.append(
            CompareRow(fixed, ext_tree.marginal(fixed), full.marginal(fixed), full.probability(path))
        )
    return rows


# -- audit -----------------------------------------------------------------------


def run_audit(
    p: Protocol,
    chain: Sequence[InferenceStep],
    record: Optional[Mapping[str, str]] = None,
    rebase: bool = False,
) -> list[AuditRow]:
    ledgers = run_ledgers(p, record).ledgers
    if rebase:
        chain = rebase_chain(chain, ledgers)
    return audit_chain(chain, ledgers)


# -- reports ---------------------------------------------------------------------


NOISE = 1e-15


def _clean(x: float) -> float:
    return 0.0 if abs(x) < NOISE else float(format(x, ".15g")) + 0.0


def _round(obj):
    if isinstance(obj, float):
        return _clean(obj)
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    return obj


def to_json(obj) -> str:
    """Stable JSON: fixed key order as built, floats to 15 significant digits."""
    return json.dumps(_round(obj), indent=2, ensure_ascii=False) + "\n"


def format_table(headers: Sequence[str], rows: Iterable[Sequence]) -> str:
    def cell(v):
        if isinstance(v, float):
            return format(_clean(v), ".15g")
        if isinstance(v, (list, tuple)):
            return ",".join(map(str, v)) or "-"
        if isinstance(v, dict):
            return ",".join(f"{k}={x}" for k, x in v.items())
        return str(v)

    body = [[cell(v) for v in r] for r in rows]
    widths = [max([len(h)] + [len(r[i]) for r in body]) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in body]
    return "\n".join(lines) + "\n"


__all__ = [
    "CompareRow",
    "LedgerRun",
    "MODES",
    "OutcomeTree",
    "SampleTable",
    "TreeNode",
    "compare_modes",
    "default_external_agents",
    "default_record",
    "format_table",
    "run_audit",
    "run_exact",
    "run_ledgers",
    "run_sampled",
    "sample_tree",
    "to_json",
]
