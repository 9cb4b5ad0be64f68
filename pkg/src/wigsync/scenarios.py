"""Built-in protocols.

WFR subsystem layout, in tensor order ``R (x) Abar (x) S (x) A``:

    R     coin        head, tail
    Abar  lab-1 app.  init, hbar, tbar
    S     spin        down, up          |->> = (|up> + |down>)/sqrt2
    A     lab-2 app.  init, up, down

Agents ``Fbar`` and ``F`` sit inside the labs, ``Wbar`` and ``W`` outside.
Time stamps read ``round:step substep`` with round 1.
"""

from __future__ import annotations

import math

from .hilbert import SubsystemSpec
from .measurement import TimeStamp
from .protocol import (
    InferStep,
    MapSpec,
    MeasureStep,
    OutcomeSpec,
    Protocol,
    UnitaryStep,
    VectorSpec,
)

H = math.sqrt(1 / 2)

R = SubsystemSpec("R", 2, ("head", "tail"))
ABAR = SubsystemSpec("Abar", 3, ("init", "hbar", "tbar"))
S = SubsystemSpec("S", 2, ("down", "up"))
A = SubsystemSpec("A", 3, ("init", "up", "down"))

WFR_AGENTS = ("Fbar", "F", "Wbar", "W")


def t(text: str) -> TimeStamp:
    return TimeStamp.parse(text)


def _v(*terms) -> VectorSpec:
    return VectorSpec(tuple((a, tuple(l.split(","))) for a, l in terms))


# |okbar>_Lbar and |ok>_L, |fail>_L
OKBAR = _v((H, "head,hbar"), (-H, "tail,tbar"))
OK = _v((H, "down,down"), (-H, "up,up"))
FAIL = _v((H, "up,up"), (H, "down,down"))

# R -> Lbar S: coin result copied to Abar, spin prepared |down> or |->>; |init>_S := |down>
U_INIT_00 = MapSpec(
    ("R", "Abar", "S"),
    (
        (_v((1, "head,init,down")), _v((1, "head,hbar,down"))),
        (_v((1, "tail,init,down")), _v((H, "tail,tbar,up"), (H, "tail,tbar,down"))),
    ),
)

# premeasurement of S by lab L
U_10_20 = MapSpec(
    ("S", "A"),
    (
        (_v((1, "down,init")), _v((1, "down,down"))),
        (_v((1, "up,init")), _v((1, "up,up"))),
    ),
)


def _wfr_steps() -> tuple:
    return (
        UnitaryStep(t("1:00"), "U_init_00", U_INIT_00),
        MeasureStep(
            t("1:01"), "r", "Fbar", ("R",),
            (OutcomeSpec("head", (VectorSpec.basis("head"),)), OutcomeSpec("tail", (VectorSpec.basis("tail"),))),
        ),
        InferStep(t("1:02"), "Fbar^n:02", "Fbar"),
        UnitaryStep(t("1:10"), "U_10_20", U_10_20),
        MeasureStep(
            t("1:11"), "z", "F", ("S",),
            (OutcomeSpec("down", (VectorSpec.basis("down"),)), OutcomeSpec("up", (VectorSpec.basis("up"),))),
        ),
        InferStep(t("1:12"), "F^n:12", "F"),
        InferStep(t("1:13"), "F^n:13", "F"),
        InferStep(t("1:14"), "F^n:14", "F"),
        MeasureStep(
            t("1:21"), "wbar", "Wbar", ("R", "Abar"),
            (OutcomeSpec("okbar", (OKBAR,)), OutcomeSpec("failbar", complement=True)),
        ),
        MeasureStep(
            t("1:31"), "w", "W", ("S", "A"),
            (OutcomeSpec("ok", (OK,)), OutcomeSpec("fail", complement=True)),
        ),
    )


def builtin_wfr() -> Protocol:
    """Extended Wigner's-friend protocol with no outcome broadcasts."""
    initial = _v((math.sqrt(1 / 3), "head,init,down,init"), (math.sqrt(2 / 3), "tail,init,down,init"))
    return Protocol((R, ABAR, S, A), WFR_AGENTS, initial, _wfr_steps())


def builtin_wfr_synced() -> Protocol:
    """WFR where every outcome reaches every other agent one substep later (n:k1 -> n:k2)."""
    return builtin_wfr().with_broadcasts(delay=1)


# Original Wigner's friend: spin S measured by the friend through apparatus A,
# then Wigner measures the whole lab L = S (x) A in the {ok, fail} basis.
WIGNER_AGENTS = ("friend", "wigner")


def builtin_wigner(synced: bool = False) -> Protocol:
    steps = (
        MeasureStep(
            t("1:01"), "z", "friend", ("S",),
            (OutcomeSpec("down", (VectorSpec.basis("down"),)), OutcomeSpec("up", (VectorSpec.basis("up"),))),
            premeasurement=U_10_20,
        ),
        MeasureStep(
            t("1:11"), "w", "wigner", ("S", "A"),
            (OutcomeSpec("ok", (OK,)), OutcomeSpec("fail", complement=True)),
        ),
    )
    p = Protocol((S, A), WIGNER_AGENTS, _v((H, "up,init"), (H, "down,init")), steps)
    return p.with_broadcasts(delay=1) if synced else p


Q1 = SubsystemSpec("Q1", 2, ("up", "down"))
Q2 = SubsystemSpec("Q2", 2, ("up", "down"))


def builtin_epr(synced: bool = True) -> Protocol:
    """Singlet pair, each half measured locally by a spacelike-separated agent."""

    def z(name, agent, q):
        return MeasureStep(
            t(name[1]), name[0], agent, (q,),
            (OutcomeSpec("up", (VectorSpec.basis("up"),)), OutcomeSpec("down", (VectorSpec.basis("down"),))),
        )

    steps = (z(("a", "1:01"), "alice", "Q1"), z(("b", "1:11"), "bob", "Q2"))
    p = Protocol((Q1, Q2), ("alice", "bob"), _v((H, "up,down"), (-H, "down,up")), steps)
    return p.with_broadcasts({"a": ("bob",)}, delay=1) if synced else p


BUILTINS = {
    "wfr": builtin_wfr,
    "wfr-synced": builtin_wfr_synced,
    "wigner": builtin_wigner,
    "wigner-synced": lambda: builtin_wigner(synced=True),
    "epr": builtin_epr,
    "epr-nosync": lambda: builtin_epr(synced=False),
}

# The outcome record each scenario is run along by default.
DEFAULT_RECORDS = {
    "wfr": {"r": "tail", "z": "up", "wbar": "okbar", "w": "ok"},
    "wfr-synced": {"r": "tail", "z": "up", "wbar": "okbar", "w": "ok"},
    "wigner": {"z": "up", "w": "fail"},
    "wigner-synced": {"z": "up", "w": "fail"},
    "epr": {"a": "up", "b": "down"},
    "epr-nosync": {"a": "up", "b": "down"},
}


def builtin(name: str) -> Protocol:
    key = name.removeprefix("builtin:")
    try:
        return BUILTINS[key]()
    except KeyError:
        raise KeyError(f"unknown builtin {name!r}; choose from {sorted(BUILTINS)}") from None
