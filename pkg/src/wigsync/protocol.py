"""Declarative protocols: steps on a timeline, a strict JSON file format, validation.

A protocol holds *specs* (labelled vectors and maps), not matrices, so it can
be serialized losslessly and validated before anything is compiled.
:func:`compile_protocol` turns a valid protocol into operators on the full
composite space.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import lru_cache
from typing import Any, Optional, Union

import numpy as np

from .hilbert import (
    CompositeSpace,
    IsometryError,
    LinearOp,
    StateVector,
    SubsystemSpec,
    complete_isometry,
    embed_op,
    projector_onto,
)
from .measurement import MeasurementError, ProjectiveMeasurement, TimeStamp


class ProtocolError(ValueError):
    """Syntax or semantic error in a protocol document."""

    def __init__(self, message: str, *, line: int | None = None, column: int | None = None, step: int | None = None):
        self.line, self.column, self.step = line, column, step
        where = ""
        if line is not None:
            where = f" (line {line}, column {column})"
        super().__init__(message + where)


# -- specs -------------------------------------------------------------------


@dataclass(frozen=True)
class VectorSpec:
    """Superposition of labelled basis states: ``((amp, (label, ...)), ...)``."""

    terms: tuple[tuple[complex, tuple[str, ...]], ...]

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple((complex(a), tuple(l)) for a, l in self.terms))

    @classmethod
    def basis(cls, *labels: str) -> "VectorSpec":
        return cls(((1.0, labels),))

    def to_state(self, space: CompositeSpace) -> StateVector:
        return space.state(self.terms)


@dataclass(frozen=True)
class MapSpec:
    """Partial map on ``targets``; completed to a unitary at compile time."""

    targets: tuple[str, ...]
    pairs: tuple[tuple[VectorSpec, VectorSpec], ...]

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))


@dataclass(frozen=True)
class OutcomeSpec:
    label: str
    vectors: tuple[VectorSpec, ...] = ()
    complement: bool = False

    def __post_init__(self):
        object.__setattr__(self, "vectors", tuple(self.vectors))


@dataclass(frozen=True)
class UnitaryStep:
    time: TimeStamp
    name: str
    map: MapSpec


@dataclass(frozen=True)
class MeasureStep:
    time: TimeStamp
    name: str
    agent: str
    targets: tuple[str, ...]
    outcomes: tuple[OutcomeSpec, ...]
    premeasurement: Optional[MapSpec] = None
    broadcast_to: tuple[str, ...] = ()
    broadcast_delay: int = 0

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "broadcast_to", tuple(self.broadcast_to))


@dataclass(frozen=True)
class InferStep:
    time: TimeStamp
    name: str
    agent: str


Step = Union[UnitaryStep, MeasureStep, InferStep]


@dataclass(frozen=True)
class Protocol:
    subsystems: tuple[SubsystemSpec, ...]
    agents: tuple[str, ...]
    initial: VectorSpec
    steps: tuple[Step, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "steps", tuple(self.steps))

    @property
    def space(self) -> CompositeSpace:
        return CompositeSpace(self.subsystems)

    @property
    def measurements(self) -> tuple[MeasureStep, ...]:
        return tuple(s for s in self.steps if isinstance(s, MeasureStep))

    def step(self, name: str) -> Step:
        for s in self.steps:
            if s.name == name:
                return s
        raise KeyError(f"no step named {name!r}")

    def with_broadcasts(self, targets: Optional[dict[str, tuple[str, ...]]] = None, delay: int = 1) -> "Protocol":
        """Copy with broadcast lists replaced.

        ``targets`` maps measurement name to recipients; by default every
        measurement is broadcast to every other agent.
        """
        steps = []
        for s in self.steps:
            if isinstance(s, MeasureStep):
                if targets is None:
                    to = tuple(a for a in self.agents if a != s.agent)
                else:
                    to = tuple(targets.get(s.name, ()))
                s = replace(s, broadcast_to=to, broadcast_delay=delay if to else 0)
            steps.append(s)
        return replace(self, steps=tuple(steps))

    def without_broadcasts(self) -> "Protocol":
        return self.with_broadcasts({}, 0)


# -- amplitudes ----------------------------------------------------------------

_SQRT = re.compile(r"^\s*(-?)\s*sqrt\(\s*(\d+)\s*(?:/\s*(\d+)\s*)?\)\s*$")
_DECIMAL = re.compile(r"^\s*[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?\s*$")


def parse_real(token: Any) -> float:
    if isinstance(token, bool):
        raise ValueError(f"bad amplitude {token!r}")
    if isinstance(token, (int, float)):
        return float(token)
    if isinstance(token, str):
        m = _SQRT.match(token)
        if m:
            num, den = int(m.group(2)), int(m.group(3) or 1)
            if den == 0:
                raise ValueError(f"zero denominator in {token!r}")
            v = math.sqrt(num / den)
            return -v if m.group(1) else v
        if _DECIMAL.match(token):
            return float(token)
    raise ValueError(f"bad amplitude {token!r}")


def parse_amplitude(token: Any) -> complex:
    if isinstance(token, dict):
        if set(token) != {"re", "im"}:
            raise ValueError(f"complex amplitude needs exactly 're' and 'im', got {sorted(token)}")
        return complex(parse_real(token["re"]), parse_real(token["im"]))
    return complex(parse_real(token), 0.0)


def _sqrt_token(x: float, max_den: int = 64) -> Optional[str]:
    if x == 0 or not math.isfinite(x):
        return None
    if float(Fraction(x).limit_denominator(max_den)) == x:
        return None  # plain rational; a decimal reads better
    sq = Fraction(x * x).limit_denominator(max_den)
    if math.sqrt(sq.numerator / sq.denominator) != abs(x):
        return None
    body = f"sqrt({sq.numerator}/{sq.denominator})" if sq.denominator != 1 else f"sqrt({sq.numerator})"
    return ("-" if x < 0 else "") + body


def format_real(x: float) -> Union[str, float, int]:
    if x == int(x) and abs(x) < 2**53:
        return int(x)
    return _sqrt_token(x) or float(x)


def format_amplitude(a: complex) -> Any:
    a = complex(a)
    if a.imag == 0:
        return format_real(a.real)
    return {"re": format_real(a.real), "im": format_real(a.imag)}


# -- serialization ---------------------------------------------------------------


def _vector_doc(v: VectorSpec) -> dict:
    return {"terms": [{"amp": format_amplitude(a), "labels": list(l)} for a, l in v.terms]}


def _map_doc(m: MapSpec) -> list:
    return [{"in": _vector_doc(a), "out": _vector_doc(b)} for a, b in m.pairs]


def _step_doc(s: Step) -> dict:
    d: dict[str, Any] = {"time": str(s.time)}
    if isinstance(s, UnitaryStep):
        d.update(op="unitary", name=s.name, targets=list(s.map.targets), map=_map_doc(s.map))
    elif isinstance(s, MeasureStep):
        d.update(op="measure", name=s.name, agent=s.agent, targets=list(s.targets))
        outs = []
        for o in s.outcomes:
            od: dict[str, Any] = {"label": o.label}
            if o.complement:
                od["complement"] = True
            else:
                od["vectors"] = [_vector_doc(v) for v in o.vectors]
            outs.append(od)
        d["outcomes"] = outs
        if s.premeasurement is not None:
            d["premeasurement"] = {"targets": list(s.premeasurement.targets), "map": _map_doc(s.premeasurement)}
        d["broadcast_to"] = list(s.broadcast_to)
        d["broadcast_delay"] = s.broadcast_delay
    else:
        d.update(op="infer", name=s.name, agent=s.agent)
    return d


def to_document(p: Protocol) -> dict:
    return {
        "subsystems": [{"name": s.name, "dim": s.dim, "basis": list(s.basis_labels)} for s in p.subsystems],
        "agents": list(p.agents),
        "initial": _vector_doc(p.initial),
        "steps": [_step_doc(s) for s in p.steps],
    }


def serialize(p: Protocol) -> str:
    return json.dumps(to_document(p), indent=2, ensure_ascii=False) + "\n"


# -- parsing ---------------------------------------------------------------------

_STEP_KEYS = {
    "unitary": ({"time", "op", "name", "targets", "map"}, set()),
    "measure": (
        {"time", "op", "name", "agent", "targets", "outcomes"},
        {"premeasurement", "broadcast_to", "broadcast_delay"},
    ),
    "infer": ({"time", "op", "name", "agent"}, set()),
}


def _reject_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValueError(f"duplicate key {k!r}")
        out[k] = v
    return out


def _keys(obj: Any, required: set, optional: set, where: str, step: int | None = None) -> dict:
    if not isinstance(obj, dict):
        raise ProtocolError(f"{where}: expected an object", step=step)
    unknown = set(obj) - required - optional
    if unknown:
        raise ProtocolError(f"{where}: unknown key(s) {sorted(unknown)}", step=step)
    missing = required - set(obj)
    if missing:
        raise ProtocolError(f"{where}: missing key(s) {sorted(missing)}", step=step)
    return obj


def _strings(obj: Any, where: str, step: int | None = None) -> tuple[str, ...]:
    if not isinstance(obj, list) or not all(isinstance(x, str) for x in obj):
        raise ProtocolError(f"{where}: expected an array of strings", step=step)
    return tuple(obj)


def _vector(obj: Any, where: str, step: int | None = None) -> VectorSpec:
    _keys(obj, {"terms"}, set(), where, step)
    if not isinstance(obj["terms"], list):
        raise ProtocolError(f"{where}: 'terms' must be an array", step=step)
    terms = []
    for k, t in enumerate(obj["terms"]):
        _keys(t, {"amp", "labels"}, set(), f"{where}.terms[{k}]", step)
        try:
            amp = parse_amplitude(t["amp"])
        except ValueError as e:
            raise ProtocolError(f"{where}.terms[{k}]: {e}", step=step) from None
        terms.append((amp, _strings(t["labels"], f"{where}.terms[{k}].labels", step)))
    return VectorSpec(tuple(terms))


def _map(obj: Any, targets: tuple[str, ...], where: str, step: int) -> MapSpec:
    if not isinstance(obj, list):
        raise ProtocolError(f"{where}: 'map' must be an array", step=step)
    pairs = []
    for k, pair in enumerate(obj):
        _keys(pair, {"in", "out"}, set(), f"{where}[{k}]", step)
        pairs.append((_vector(pair["in"], f"{where}[{k}].in", step), _vector(pair["out"], f"{where}[{k}].out", step)))
    return MapSpec(targets, tuple(pairs))


def _step(obj: Any, k: int) -> Step:
    where = f"step {k}"
    if not isinstance(obj, dict):
        raise ProtocolError(f"{where}: expected an object", step=k)
    op = obj.get("op")
    if op not in _STEP_KEYS:
        raise ProtocolError(f"{where}: 'op' must be one of {sorted(_STEP_KEYS)}", step=k)
    _keys(obj, *_STEP_KEYS[op], where, k)
    if not isinstance(obj["name"], str):
        raise ProtocolError(f"{where}: 'name' must be a string", step=k)
    try:
        time = TimeStamp.parse(obj["time"]) if isinstance(obj["time"], str) else None
    except ValueError as e:
        raise ProtocolError(f"{where}: {e}", step=k) from None
    if time is None:
        raise ProtocolError(f"{where}: 'time' must be a string 'n:ij'", step=k)
    if op == "unitary":
        targets = _strings(obj["targets"], f"{where}.targets", k)
        return UnitaryStep(time, obj["name"], _map(obj["map"], targets, f"{where}.map", k))
    if not isinstance(obj["agent"], str):
        raise ProtocolError(f"{where}: 'agent' must be a string", step=k)
    if op == "infer":
        return InferStep(time, obj["name"], obj["agent"])
    targets = _strings(obj["targets"], f"{where}.targets", k)
    if not isinstance(obj["outcomes"], list):
        raise ProtocolError(f"{where}: 'outcomes' must be an array", step=k)
    outcomes = []
    for j, o in enumerate(obj["outcomes"]):
        ow = f"{where}.outcomes[{j}]"
        _keys(o, {"label"}, {"vectors", "complement"}, ow, k)
        if not isinstance(o["label"], str):
            raise ProtocolError(f"{ow}: 'label' must be a string", step=k)
        comp = o.get("complement", False)
        if not isinstance(comp, bool):
            raise ProtocolError(f"{ow}: 'complement' must be a boolean", step=k)
        if comp == ("vectors" in o):
            raise ProtocolError(f"{ow}: give exactly one of 'vectors' or 'complement': true", step=k)
        vecs = o.get("vectors", [])
        if not isinstance(vecs, list):
            raise ProtocolError(f"{ow}: 'vectors' must be an array", step=k)
        outcomes.append(OutcomeSpec(o["label"], tuple(_vector(v, f"{ow}.vectors[{i}]", k) for i, v in enumerate(vecs)), comp))
    pre = None
    if "premeasurement" in obj:
        pm = _keys(obj["premeasurement"], {"targets", "map"}, set(), f"{where}.premeasurement", k)
        pt = _strings(pm["targets"], f"{where}.premeasurement.targets", k)
        pre = _map(pm["map"], pt, f"{where}.premeasurement.map", k)
    delay = obj.get("broadcast_delay", 0)
    if isinstance(delay, bool) or not isinstance(delay, int) or delay < 0:
        raise ProtocolError(f"{where}: 'broadcast_delay' must be a non-negative integer", step=k)
    return MeasureStep(
        time,
        obj["name"],
        obj["agent"],
        targets,
        tuple(outcomes),
        pre,
        _strings(obj.get("broadcast_to", []), f"{where}.broadcast_to", k),
        delay,
    )


def from_document(doc: Any) -> Protocol:
    _keys(doc, {"subsystems", "agents", "initial", "steps"}, set(), "document")
    if not isinstance(doc["subsystems"], list):
        raise ProtocolError("'subsystems' must be an array")
    subsystems = []
    for k, s in enumerate(doc["subsystems"]):
        _keys(s, {"name", "dim", "basis"}, set(), f"subsystems[{k}]")
        dim = s["dim"]
        if isinstance(dim, bool) or not isinstance(dim, int) or not isinstance(s["name"], str):
            raise ProtocolError(f"subsystems[{k}]: 'name' must be a string and 'dim' an integer")
        try:
            subsystems.append(SubsystemSpec(s["name"], dim, _strings(s["basis"], f"subsystems[{k}].basis")))
        except ValueError as e:
            raise ProtocolError(f"subsystems[{k}]: {e}") from None
    agents = _strings(doc["agents"], "agents")
    initial = _vector(doc["initial"], "initial")
    if not isinstance(doc["steps"], list):
        raise ProtocolError("'steps' must be an array")
    steps = tuple(_step(s, k) for k, s in enumerate(doc["steps"]))
    return Protocol(tuple(subsystems), agents, initial, steps)


# Diagnostics in this set make parse() fail; the rest are left to validate().
_PARSE_FATAL = {"structure", "reference", "time", "isometry"}


def parse(text: Union[str, bytes]) -> Protocol:
    """Parse and resolve a protocol document; raises :class:`ProtocolError`."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(f"not UTF-8: {e}") from None
    try:
        doc = json.loads(text, object_pairs_hook=_reject_duplicates)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"syntax error: {e.msg}", line=e.lineno, column=e.colno) from None
    except ValueError as e:
        raise ProtocolError(f"syntax error: {e}") from None
    p = from_document(doc)
    for d in validate(p):
        if d.code in _PARSE_FATAL:
            raise ProtocolError(d.message, step=d.step)
    return p


# -- validation ------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    code: str
    message: str
    step: Optional[int] = None

    def __str__(self):
        return self.message


def _vector_refs(v: VectorSpec, space: CompositeSpace) -> Optional[str]:
    for _, labels in v.terms:
        if len(labels) != len(space.subsystems):
            return f"vector has {len(labels)} labels, expected {len(space.subsystems)} for {list(space.names)}"
        for s, lab in zip(space.subsystems, labels):
            if lab not in s.basis_labels:
                return f"unknown basis label {lab!r} for subsystem {s.name!r}"
    return None


def _check_map(m: MapSpec, space: CompositeSpace, k: int, what: str) -> list[Diagnostic]:
    try:
        sub = space.sub(m.targets)
    except (KeyError, ValueError) as e:
        return [Diagnostic("reference", f"step {k}: {what}: {e.args[0]}", k)]
    for a, b in m.pairs:
        for v in (a, b):
            err = _vector_refs(v, sub)
            if err:
                return [Diagnostic("reference", f"step {k}: {what}: {err}", k)]
    try:
        complete_isometry([(a.to_state(sub), b.to_state(sub)) for a, b in m.pairs], sub)
    except (IsometryError, ValueError) as e:
        return [Diagnostic("isometry", f"step {k}: {what}: not an isometry ({e})", k)]
    return []


def _measurement_diags(s: MeasureStep, space: CompositeSpace, k: int) -> list[Diagnostic]:
    try:
        sub = space.sub(s.targets)
    except (KeyError, ValueError) as e:
        return [Diagnostic("reference", f"step {k}: {e.args[0]}", k)]
    for o in s.outcomes:
        for v in o.vectors:
            err = _vector_refs(v, sub)
            if err:
                return [Diagnostic("reference", f"step {k}: outcome {o.label!r}: {err}", k)]
    labels = [o.label for o in s.outcomes]
    if len(set(labels)) != len(labels):
        return [Diagnostic("structure", f"step {k}: duplicate outcome labels in {s.name!r}", k)]
    if sum(o.complement for o in s.outcomes) > 1:
        return [Diagnostic("structure", f"step {k}: more than one complement outcome in {s.name!r}", k)]
    diags = []
    if s.premeasurement is not None:
        diags += _check_map(s.premeasurement, space, k, "premeasurement")
    try:
        compile_measurement(s, space)
    except IsometryError as e:
        diags.append(Diagnostic("outcomes", f"step {k}: outcome vectors of {s.name!r} not orthonormal ({e})", k))
    except MeasurementError as e:
        code = "incomplete" if "incomplete" in str(e) else "outcomes"
        diags.append(Diagnostic(code, f"step {k}: {e}", k))
    except ValueError as e:
        if not diags:
            diags.append(Diagnostic("outcomes", f"step {k}: {e}", k))
    return diags


def validate(p: Protocol) -> list[Diagnostic]:
    """Every violated invariant of ``p``, as diagnostics; empty means valid."""
    diags: list[Diagnostic] = []
    if len(set(p.agents)) != len(p.agents):
        diags.append(Diagnostic("structure", "duplicate agent names"))
    try:
        space = p.space
    except ValueError as e:
        return diags + [Diagnostic("structure", str(e))]
    err = _vector_refs(p.initial, space)
    if err:
        diags.append(Diagnostic("reference", f"initial state: {err}"))
    elif p.initial.to_state(space).norm() <= 1e-12:
        diags.append(Diagnostic("structure", "initial state is the zero vector"))
    names = [s.name for s in p.steps]
    for k, s in enumerate(p.steps):
        if k and not s.time > p.steps[k - 1].time:
            diags.append(Diagnostic("time", f"non-increasing time at step {k}", k))
        if names.count(s.name) > 1 and names.index(s.name) != k:
            diags.append(Diagnostic("structure", f"step {k}: duplicate step name {s.name!r}", k))
        if isinstance(s, (MeasureStep, InferStep)) and s.agent not in p.agents:
            diags.append(Diagnostic("reference", f"step {k}: unknown agent {s.agent!r}", k))
        if isinstance(s, UnitaryStep):
            diags += _check_map(s.map, space, k, f"unitary {s.name!r}")
        elif isinstance(s, MeasureStep):
            for a in s.broadcast_to:
                if a not in p.agents:
                    diags.append(Diagnostic("reference", f"step {k}: unknown broadcast target {a!r}", k))
                elif a == s.agent:
                    diags.append(Diagnostic("reference", f"step {k}: agent broadcasts to itself", k))
            diags += _measurement_diags(s, space, k)
    return diags


# -- compilation -------------------------------------------------------------------


def compile_map(m: MapSpec, space: CompositeSpace) -> LinearOp:
    sub = space.sub(m.targets)
    u = complete_isometry([(a.to_state(sub), b.to_state(sub)) for a, b in m.pairs], sub)
    return embed_op(u, space)


def compile_measurement(s: MeasureStep, space: CompositeSpace) -> ProjectiveMeasurement:
    sub = space.sub(s.targets)
    explicit = []
    for o in s.outcomes:
        if not o.complement:
            explicit.append((o.label, projector_onto([v.to_state(sub) for v in o.vectors], sub)))
    covered = sum((p.matrix for _, p in explicit), np.zeros((sub.total_dim,) * 2, dtype=complex))
    outcomes = []
    for o in s.outcomes:
        if o.complement:
            comp = np.eye(sub.total_dim) - covered
            proj = LinearOp(sub, 0.5 * (comp + comp.conj().T), "projector")
        else:
            proj = dict(explicit)[o.label]
        outcomes.append((o.label, embed_op(proj, space)))
    pre = compile_map(s.premeasurement, space) if s.premeasurement is not None else None
    return ProjectiveMeasurement(s.name, tuple(outcomes), pre)


@dataclass(frozen=True, eq=False)
class CompiledProtocol:
    protocol: Protocol
    space: CompositeSpace
    initial: StateVector
    unitaries: dict[str, LinearOp]
    measurements: dict[str, ProjectiveMeasurement]

    def measurement_time(self, name: str) -> TimeStamp:
        return self.protocol.step(name).time


class ValidationError(ProtocolError):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("invalid protocol: " + "; ".join(d.message for d in diagnostics))


@lru_cache(maxsize=64)
def compile_protocol(p: Protocol) -> CompiledProtocol:
    """Operators for every step of a valid protocol; raises :class:`ValidationError`."""
    diags = validate(p)
    if diags:
        raise ValidationError(diags)
    space = p.space
    init = p.initial.to_state(space)
    init = StateVector(space, init.amps / init.norm(), True)
    unitaries, measurements = {}, {}
    for s in p.steps:
        if isinstance(s, UnitaryStep):
            unitaries[s.name] = compile_map(s.map, space)
        elif isinstance(s, MeasureStep):
            measurements[s.name] = compile_measurement(s, space)
    return CompiledProtocol(p, space, init, unitaries, measurements)


__all__ = [
    "Diagnostic",
    "InferStep",
    "MapSpec",
    "MeasureStep",
    "OutcomeSpec",
    "Protocol",
    "ProtocolError",
    "UnitaryStep",
    "ValidationError",
    "VectorSpec",
    "compile_protocol",
    "parse",
    "serialize",
    "validate",
]
