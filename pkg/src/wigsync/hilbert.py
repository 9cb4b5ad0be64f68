"""Dense state vectors and operators on ordered tensor products of small subsystems.

Index convention: the last-listed subsystem varies fastest (row-major), so a
joint basis label tuple maps to ``np.ravel_multi_index(indices, dims)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

STRUCT_TOL = 1e-10
EQ_TOL = 1e-12

KINDS = ("unitary", "projector", "chain")


class ImpossibleBranch(ValueError):
    """A projection annihilated the state (zero Born weight)."""

    def __init__(self, message: str = "impossible branch"):
        super().__init__(message)


class IsometryError(ValueError):
    pass


@dataclass(frozen=True)
class SubsystemSpec:
    name: str
    dim: int
    basis_labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "basis_labels", tuple(self.basis_labels))
        if self.dim < 1:
            raise ValueError(f"subsystem {self.name!r}: dim must be >= 1")
        if len(self.basis_labels) != self.dim:
            raise ValueError(f"subsystem {self.name!r}: {len(self.basis_labels)} labels for dim {self.dim}")
        if len(set(self.basis_labels)) != self.dim:
            raise ValueError(f"subsystem {self.name!r}: duplicate basis labels")

    def index(self, label: str) -> int:
        try:
            return self.basis_labels.index(label)
        except ValueError:
            raise KeyError(f"unknown basis label {label!r} for subsystem {self.name!r}") from None


@dataclass(frozen=True)
class CompositeSpace:
    subsystems: tuple[SubsystemSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "subsystems", tuple(self.subsystems))
        names = [s.name for s in self.subsystems]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate subsystem names in {names}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.subsystems)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.subsystems else 1

    def subsystem(self, name: str) -> SubsystemSpec:
        for s in self.subsystems:
            if s.name == name:
                return s
        raise KeyError(f"unknown subsystem {name!r}")

    def axis(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown subsystem {name!r}") from None

    def sub(self, names: Iterable[str]) -> "CompositeSpace":
        """The space of the named subsystems, in the order given."""
        return CompositeSpace(tuple(self.subsystem(n) for n in names))

    def index_of(self, labels: Sequence[str]) -> int:
        if len(labels) != len(self.subsystems):
            raise ValueError(f"expected {len(self.subsystems)} labels, got {len(labels)}")
        idx = [s.index(lab) for s, lab in zip(self.subsystems, labels)]
        return int(np.ravel_multi_index(idx, self.dims))

    def labels_of(self, index: int) -> tuple[str, ...]:
        idx = np.unravel_index(index, self.dims)
        return tuple(s.basis_labels[int(i)] for s, i in zip(self.subsystems, idx))

    def basis_state(self, labels: Sequence[str]) -> "StateVector":
        amps = np.zeros(self.total_dim, dtype=complex)
        amps[self.index_of(labels)] = 1.0
        return StateVector(self, amps, normalized=True)

    def state(self, terms: Iterable[tuple[complex, Sequence[str]]], normalized: bool = False) -> "StateVector":
        """Build a vector from ``(amplitude, labels)`` terms; repeated labels add."""
        amps = np.zeros(self.total_dim, dtype=complex)
        for amp, labels in terms:
            amps[self.index_of(labels)] += amp
        return StateVector(self, amps, normalized=normalized)

    def identity(self) -> "LinearOp":
        return LinearOp(self, np.eye(self.total_dim, dtype=complex), "unitary")


@dataclass(frozen=True, eq=False)
class StateVector:
    space: CompositeSpace
    amps: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        amps = np.array(self.amps, dtype=complex).reshape(-1)
        if amps.shape[0] != self.space.total_dim:
            raise ValueError(f"amplitude length {amps.shape[0]} != dim {self.space.total_dim}")
        if not np.all(np.isfinite(amps)):
            raise ValueError("non-finite amplitude")
        if self.normalized and abs(np.vdot(amps, amps).real - 1.0) > EQ_TOL:
            raise ValueError("state flagged normalized but norm^2 deviates from 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amps", amps)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def amplitude(self, labels: Sequence[str]) -> complex:
        return complex(self.amps[self.space.index_of(labels)])

    def tensor(self) -> np.ndarray:
        return self.amps.reshape(self.space.dims)

    def with_phase(self, theta: float) -> "StateVector":
        amps = self.amps * np.exp(1j * theta)
        return StateVector(self.space, amps, self.normalized and abs(np.vdot(amps, amps).real - 1) <= EQ_TOL)

    def nonzero_terms(self, tol: float = EQ_TOL) -> list[tuple[tuple[str, ...], complex]]:
        return [(self.space.labels_of(i), complex(a)) for i, a in enumerate(self.amps) if abs(a) > tol]

    def __repr__(self):
        terms = " + ".join(f"({a:.4g})|{','.join(l)}>" for l, a in self.nonzero_terms())
        return f"StateVector[{','.join(self.space.names)}]({terms or '0'})"


@dataclass(frozen=True, eq=False)
class LinearOp:
    space: CompositeSpace
    matrix: np.ndarray
    kind: str = "chain"

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        n = self.space.total_dim
        if m.shape != (n, n):
            raise ValueError(f"matrix shape {m.shape} != ({n}, {n})")
        if not np.all(np.isfinite(m)):
            raise ValueError("non-finite matrix entry")
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}")
        if self.kind == "unitary" and np.max(np.abs(m.conj().T @ m - np.eye(n)), initial=0.0) > STRUCT_TOL:
            raise ValueError("operator tagged unitary is not unitary")
        if self.kind == "projector":
            if np.max(np.abs(m @ m - m), initial=0.0) > STRUCT_TOL:
                raise ValueError("operator tagged projector is not idempotent")
            if np.max(np.abs(m - m.conj().T), initial=0.0) > STRUCT_TOL:
                raise ValueError("operator tagged projector is not hermitian")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def dagger(self) -> "LinearOp":
        return LinearOp(self.space, self.matrix.conj().T, self.kind)

    def __matmul__(self, other: "LinearOp") -> "LinearOp":
        _same_space(self.space, other.space)
        return LinearOp(self.space, self.matrix @ other.matrix, "chain")

    def conjugate_by(self, u: "LinearOp") -> "LinearOp":
        """``U P U^dagger``; keeps the kind of ``self``."""
        _same_space(self.space, u.space)
        m = u.matrix @ self.matrix @ u.matrix.conj().T
        if self.kind == "projector":
            m = 0.5 * (m + m.conj().T)
        return LinearOp(self.space, m, self.kind)

    def rank(self, tol: float = STRUCT_TOL) -> int:
        return int(np.sum(np.linalg.svd(self.matrix, compute_uv=False) > tol))


@dataclass(frozen=True)
class Bipartition:
    left: frozenset[str]
    right: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "left", frozenset(self.left))
        object.__setattr__(self, "right", frozenset(self.right))
        if not self.left or not self.right:
            raise ValueError("bipartition sides must be nonempty")
        if self.left & self.right:
            raise ValueError("bipartition sides overlap")

    @classmethod
    def of(cls, left: Iterable[str], space: CompositeSpace) -> "Bipartition":
        left = frozenset(left)
        for n in left:
            space.axis(n)
        return cls(left, frozenset(space.names) - left)

    def check(self, space: CompositeSpace) -> None:
        if self.left | self.right != frozenset(space.names):
            raise ValueError("bipartition does not cover the space")


def _same_space(a: CompositeSpace, b: CompositeSpace) -> None:
    if a != b:
        raise ValueError(f"space mismatch: {a.names} vs {b.names}")


def projector_onto(vectors: Sequence[StateVector], space: CompositeSpace | None = None) -> LinearOp:
    """Orthogonal projector onto the span of orthonormal ``vectors``."""
    if not vectors:
        if space is None:
            raise ValueError("empty vector list needs an explicit space")
        return LinearOp(space, np.zeros((space.total_dim,) * 2), "projector")
    space = vectors[0].space
    cols = np.column_stack([v.amps for v in vectors])
    for v in vectors:
        _same_space(space, v.space)
    gram = cols.conj().T @ cols
    if np.max(np.abs(gram - np.eye(len(vectors)))) > STRUCT_TOL:
        raise IsometryError("projector vectors are not orthonormal")
    return LinearOp(space, cols @ cols.conj().T, "projector")


def tensor_state(factors: Sequence[StateVector], space: CompositeSpace | None = None) -> StateVector:
    """Product state of ``factors``; ordered by ``space`` when given, else by concatenation."""
    subsystems = [s for f in factors for s in f.space.subsystems]
    concat = CompositeSpace(tuple(subsystems))  # rejects overlapping names
    amps = np.ones(1, dtype=complex)
    for f in factors:
        amps = np.kron(amps, f.amps)
    if space is None or space.names == concat.names:
        target = space or concat
    else:
        target = space
        if set(target.names) != set(concat.names):
            raise ValueError(f"factors cover {concat.names}, target space is {target.names}")
        for n in target.names:
            if target.subsystem(n) != concat.subsystem(n):
                raise ValueError(f"subsystem {n!r} declared differently in target space")
        perm = [concat.axis(n) for n in target.names]
        amps = amps.reshape(concat.dims).transpose(perm).reshape(-1)
    normalized = all(f.normalized for f in factors) and abs(np.vdot(amps, amps).real - 1) <= EQ_TOL
    return StateVector(target, amps, normalized)


def _check_embeddable(sub: CompositeSpace, space: CompositeSpace) -> None:
    for s in sub.subsystems:
        if space.subsystem(s.name) != s:
            raise ValueError(f"subsystem {s.name!r} declared differently in target space")


def embed_op(op: LinearOp, space: CompositeSpace) -> LinearOp:
    """Identity on subsystems of ``space`` untouched by ``op``, tensored with ``op``."""
    if op.space == space:
        return op
    _check_embeddable(op.space, space)
    sub_names = op.space.names
    rest = [n for n in space.names if n not in sub_names]
    d_rest = int(np.prod([space.subsystem(n).dim for n in rest], dtype=np.int64))
    full = np.kron(op.matrix, np.eye(d_rest))
    order = list(sub_names) + rest
    dims = [space.subsystem(n).dim for n in order]
    k = len(order)
    perm = [order.index(n) for n in space.names]
    full = full.reshape(dims + dims).transpose(perm + [p + k for p in perm])
    return LinearOp(space, full.reshape(space.total_dim, space.total_dim), op.kind)


def apply(op: LinearOp, state: StateVector) -> StateVector:
    _same_space(op.space, state.space)
    amps = op.matrix @ state.amps
    keep = op.kind == "unitary" and state.normalized and abs(np.vdot(amps, amps).real - 1) <= EQ_TOL
    return StateVector(state.space, amps, keep)


def apply_local(op: LinearOp, state: StateVector) -> StateVector:
    """Apply an operator on a subset of subsystems without building the full matrix."""
    if op.space == state.space:
        return apply(op, state)
    space = state.space
    _check_embeddable(op.space, space)
    axes = [space.axis(n) for n in op.space.names]
    t = np.moveaxis(state.tensor(), axes, list(range(len(axes))))
    shape = t.shape
    t = (op.matrix @ t.reshape(op.space.total_dim, -1)).reshape(shape)
    amps = np.moveaxis(t, list(range(len(axes))), axes).reshape(-1)
    keep = op.kind == "unitary" and state.normalized and abs(np.vdot(amps, amps).real - 1) <= EQ_TOL
    return StateVector(space, amps, keep)


def inner(a: StateVector, b: StateVector) -> complex:
    """<a|b>, conjugate-linear in ``a``."""
    _same_space(a.space, b.space)
    return complex(np.vdot(a.amps, b.amps))


def normalize(state: StateVector) -> StateVector:
    n = state.norm()
    if n <= EQ_TOL:
        raise ImpossibleBranch()
    return StateVector(state.space, state.amps / n, True)


def _require_unit(state: StateVector) -> None:
    if abs(state.norm() - 1.0) > STRUCT_TOL:
        raise ValueError("state must be normalized")


def _split(state: StateVector, left: Sequence[str]) -> np.ndarray:
    space = state.space
    laxes = [space.axis(n) for n in left]
    raxes = [i for i in range(len(space.subsystems)) if i not in laxes]
    dl = int(np.prod([space.dims[i] for i in laxes], dtype=np.int64))
    return state.tensor().transpose(laxes + raxes).reshape(dl, -1)


def schmidt_rank(state: StateVector, cut: Bipartition, tol: float = STRUCT_TOL) -> tuple[int, list[float]]:
    """Schmidt rank and coefficients across ``cut``; rank 1 means a product state."""
    _require_unit(state)
    cut.check(state.space)
    left = [n for n in state.space.names if n in cut.left]
    sv = np.linalg.svd(_split(state, left), compute_uv=False)
    coeffs = [float(s) for s in sv if s > tol]
    return len(coeffs), coeffs


def reduced_density(state: StateVector, subset: Iterable[str]) -> np.ndarray:
    subset = set(subset)
    names = state.space.names
    if not subset or subset >= set(names):
        raise ValueError("subset must be a nonempty proper subset of the subsystems")
    for n in subset:
        state.space.axis(n)
    m = _split(state, [n for n in names if n in subset])
    return m @ m.conj().T


def reduced_purity(state: StateVector, subset: Iterable[str]) -> float:
    _require_unit(state)
    rho = reduced_density(state, subset)
    return float(np.real(np.trace(rho @ rho)))


def _orthonormal_columns(vectors: Sequence[StateVector], what: str) -> np.ndarray:
    cols = np.column_stack([v.amps for v in vectors])
    if np.max(np.abs(cols.conj().T @ cols - np.eye(cols.shape[1]))) > STRUCT_TOL:
        raise IsometryError(f"not an isometry: {what} vectors are not orthonormal")
    return cols


def _extend_basis(cols: np.ndarray, n: int) -> np.ndarray:
    """Append standard basis vectors, in index order, Gram-Schmidt'd against ``cols``."""
    basis = [cols[:, j] for j in range(cols.shape[1])]
    extra = []
    for i in range(n):
        if len(basis) == n:
            break
        w = np.zeros(n, dtype=complex)
        w[i] = 1.0
        for _ in range(2):
            for b in basis:
                w = w - np.vdot(b, w) * b
        nw = np.linalg.norm(w)
        if nw > 1e-8:
            w = w / nw
            basis.append(w)
            extra.append(w)
    return np.column_stack(extra) if extra else np.zeros((n, 0), dtype=complex)


def complete_isometry(
    partial_map: Sequence[tuple[StateVector, StateVector]], space: CompositeSpace | None = None
) -> LinearOp:
    """Unitary agreeing with ``partial_map`` on its domain.

    Off the domain, the orthogonal complements of domain and range are each
    spanned by Gram-Schmidt over the standard basis in index order and paired
    up in that order, so the result is deterministic.
    """
    if not partial_map:
        if space is None:
            raise ValueError("empty map needs an explicit space")
        return space.identity()
    space = space or partial_map[0][0].space
    for a, b in partial_map:
        _same_space(space, a.space)
        _same_space(space, b.space)
    ins = _orthonormal_columns([a for a, _ in partial_map], "input")
    outs = _orthonormal_columns([b for _, b in partial_map], "output")
    n = space.total_dim
    dom = np.hstack([ins, _extend_basis(ins, n)])
    rng = np.hstack([outs, _extend_basis(outs, n)])
    return LinearOp(space, rng @ dom.conj().T, "unitary")
