"""Randomized invariants; every property runs on at least 100 generated instances."""

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from wigsync.audit import audit_chain, builtin_table1_chain
from wigsync.hilbert import (
    CompositeSpace,
    LinearOp,
    StateVector,
    SubsystemSpec,
    apply,
    complete_isometry,
    embed_op,
    projector_onto,
)
from wigsync.ledger import with_global_phases
from wigsync.measurement import (
    ProjectiveMeasurement,
    TimeStamp,
    born_probability,
    collapse,
    outcome_probabilities,
)
from wigsync.protocol import (
    MapSpec,
    MeasureStep,
    OutcomeSpec,
    Protocol,
    UnitaryStep,
    VectorSpec,
    compile_protocol,
    parse,
    parse_amplitude,
    serialize,
)
from wigsync.runner import run_ledgers
from wigsync.scenarios import DEFAULT_RECORDS, builtin_wfr

N = 100
PROPS = settings(max_examples=N, deadline=None, suppress_health_check=[HealthCheck.too_slow])

seeds = st.integers(0, 2**32 - 1)
dims = st.lists(st.integers(1, 3), min_size=1, max_size=3).filter(lambda ds: np.prod(ds) >= 2)


def space_of(ds):
    return CompositeSpace(tuple(SubsystemSpec(f"q{i}", d, tuple(f"b{j}" for j in range(d))) for i, d in enumerate(ds)))


def random_state(space, rng):
    v = rng.normal(size=space.total_dim) + 1j * rng.normal(size=space.total_dim)
    return StateVector(space, v / np.linalg.norm(v), True)


def random_unitary(n, rng):
    q, r = np.linalg.qr(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_measurement(space, rng):
    """A random orthonormal basis split into contiguous groups of columns."""
    n = space.total_dim
    u = random_unitary(n, rng)
    cuts = sorted(set(rng.integers(1, n, size=rng.integers(0, n)).tolist()))
    groups = np.split(np.arange(n), cuts)
    outcomes = []
    for k, g in enumerate(groups):
        vecs = [StateVector(space, u[:, j], True) for j in g]
        outcomes.append((f"o{k}", projector_onto(vecs)))
    return ProjectiveMeasurement("m", tuple(outcomes))


@PROPS
@given(dims, seeds)
def test_projector_idempotence(ds, seed):
    rng = np.random.default_rng(seed)
    space = space_of(ds)
    m = random_measurement(space, rng)
    psi = random_state(space, rng)
    for _, p in m.outcomes:
        np.testing.assert_allclose(p.matrix @ p.matrix, p.matrix, atol=1e-10)
        if born_probability(psi, p) > 1e-9:
            after = collapse(psi, p)
            assert born_probability(after, p) == pytest.approx(1, abs=1e-10)


@PROPS
@given(dims, seeds)
def test_measurement_completeness(ds, seed):
    rng = np.random.default_rng(seed)
    space = space_of(ds)
    m = random_measurement(space, rng)
    probs = [p for _, p in outcome_probabilities(random_state(space, rng), m)]
    assert sum(probs) == pytest.approx(1, abs=1e-10)
    assert min(probs) >= -1e-12


@PROPS
@given(dims, seeds, st.floats(-10, 10, allow_nan=False))
def test_probabilities_phase_invariant(ds, seed, theta):
    rng = np.random.default_rng(seed)
    space = space_of(ds)
    m = random_measurement(space, rng)
    psi = random_state(space, rng)
    a = [p for _, p in outcome_probabilities(psi, m)]
    b = [p for _, p in outcome_probabilities(psi.with_phase(theta), m)]
    np.testing.assert_allclose(a, b, atol=1e-12)


_WFR = builtin_wfr()
_LEDGERS = run_ledgers(_WFR, DEFAULT_RECORDS["wfr"]).ledgers
_CHAIN = builtin_table1_chain(_WFR)
_BASE = [(r.verdict, r.p_used, r.p_latest) for r in audit_chain(_CHAIN, _LEDGERS)]


@PROPS
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=8, max_size=8))
def test_audit_verdicts_phase_invariant(phases):
    shifted = {a: with_global_phases(l, phases[: len(l.history)]) for a, l in _LEDGERS.items()}
    rows = [(r.verdict, r.p_used, r.p_latest) for r in audit_chain(_CHAIN, shifted)]
    assert [r[0] for r in rows] == [b[0] for b in _BASE]
    np.testing.assert_allclose([r[1:] for r in rows], [b[1:] for b in _BASE], atol=1e-12)


@PROPS
@given(dims, seeds)
def test_unitary_preserves_norm(ds, seed):
    rng = np.random.default_rng(seed)
    space = space_of(ds)
    u = LinearOp(space, random_unitary(space.total_dim, rng), "unitary")
    psi = random_state(space, rng)
    assert apply(u, psi).norm() == pytest.approx(1, abs=1e-12)


@PROPS
@given(dims, seeds, st.integers(0, 3))
def test_completed_isometry_is_unitary(ds, seed, k):
    rng = np.random.default_rng(seed)
    space = space_of(ds)
    k = min(k, space.total_dim)
    a = random_unitary(space.total_dim, rng)[:, :k]
    b = random_unitary(space.total_dim, rng)[:, :k]
    pairs = [(StateVector(space, a[:, j], True), StateVector(space, b[:, j], True)) for j in range(k)]
    u = complete_isometry(pairs, space).matrix
    np.testing.assert_allclose(u.conj().T @ u, np.eye(space.total_dim), atol=1e-10)
    np.testing.assert_allclose(u @ a, b, atol=1e-10)


@PROPS
@given(dims, seeds)
def test_embedded_local_unitary_preserves_norm(ds, seed):
    rng = np.random.default_rng(seed)
    space = space_of(ds)
    sub = CompositeSpace(space.subsystems[-1:])
    local = LinearOp(sub, random_unitary(sub.total_dim, rng), "unitary")
    assert apply(embed_op(local, space), random_state(space, rng)).norm() == pytest.approx(1, abs=1e-12)


# -- random protocols ----------------------------------------------------------------

AMPS = st.sampled_from([1, -1, 0.5, -0.25, "sqrt(1/2)", "-sqrt(1/3)", "sqrt(2/3)", {"re": 0.1, "im": -0.7}])


@st.composite
def protocols(draw):
    ds = draw(dims)
    space = space_of(ds)
    subsystems = space.subsystems
    agents = tuple(f"a{i}" for i in range(draw(st.integers(1, 3))))
    labels = [tuple(s.basis_labels) for s in subsystems]

    def basis_labels():
        return tuple(draw(st.sampled_from(l)) for l in labels)

    initial = VectorSpec(tuple((parse_amplitude(draw(AMPS)), basis_labels()) for _ in range(2)))
    if np.linalg.norm(initial.to_state(space).amps) < 1e-6:
        initial = VectorSpec(((1.0, basis_labels()),))
    steps = []
    t = TimeStamp(1, 0, 0)
    for k in range(draw(st.integers(0, 4))):
        t = t.shifted(draw(st.integers(1, 3)))
        s = draw(st.sampled_from(subsystems))
        if draw(st.booleans()):
            # a basis permutation on one subsystem
            perm = draw(st.permutations(list(s.basis_labels)))
            pairs = tuple((VectorSpec.basis(a), VectorSpec.basis(b)) for a, b in zip(s.basis_labels, perm))
            steps.append(UnitaryStep(t, f"u{k}", MapSpec((s.name,), pairs)))
        else:
            agent = draw(st.sampled_from(agents))
            n_explicit = draw(st.integers(1, s.dim))
            outs = [OutcomeSpec(f"x{j}", (VectorSpec.basis(s.basis_labels[j]),)) for j in range(n_explicit)]
            if n_explicit < s.dim:
                outs.append(OutcomeSpec("rest", complement=True))
            others = tuple(a for a in agents if a != agent and draw(st.booleans()))
            steps.append(
                MeasureStep(t, f"m{k}", agent, (s.name,), tuple(outs), None, others, 1 if others else 0)
            )
    return Protocol(subsystems, agents, initial, tuple(steps))


@PROPS
@given(protocols())
def test_parse_serialize_round_trip(p):
    text = serialize(p)
    q = parse(text)
    assert serialize(q) == text
    np.testing.assert_allclose(compile_protocol(q).initial.amps, compile_protocol(p).initial.amps, atol=1e-12)
