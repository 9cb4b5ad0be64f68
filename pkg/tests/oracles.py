"""Independent reference computations with raw numpy.

Nothing here imports the package under test. States of the four-party
system live in C^2 (x) C^3 (x) C^2 (x) C^3 = R, Abar, S, A, row-major.
"""

from __future__ import annotations

import itertools
from functools import reduce

import numpy as np

DIMS = (2, 3, 2, 3)
R_ = {"head": 0, "tail": 1}
AB_ = {"init": 0, "hbar": 1, "tbar": 2}
S_ = {"down": 0, "up": 1}
A_ = {"init": 0, "up": 1, "down": 2}
IDX = (R_, AB_, S_, A_)
h = 1 / np.sqrt(2)


def e(dim: int, i: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[i] = 1
    return v


def ket(*labels: str) -> np.ndarray:
    """Basis ket of the four-party system, e.g. ``ket('tail', 'tbar', 'up', 'up')``."""
    return reduce(np.kron, [e(d, m[l]) for d, m, l in zip(DIMS, IDX, labels)])


def kron(*ms):
    return reduce(np.kron, ms)


I2, I3 = np.eye(2), np.eye(3)


def psi_initial() -> np.ndarray:
    return np.sqrt(1 / 3) * ket("head", "init", "down", "init") + np.sqrt(2 / 3) * ket("tail", "init", "down", "init")


def psi00() -> np.ndarray:
    """After the lab-1 preparation: coin copied, spin down or |->>."""
    return np.sqrt(1 / 3) * (
        ket("head", "hbar", "down", "init") + ket("tail", "tbar", "up", "init") + ket("tail", "tbar", "down", "init")
    )


def psi10() -> np.ndarray:
    """Coin outcome tail known inside lab 1, spin copied into A."""
    return h * (ket("tail", "tbar", "up", "up") + ket("tail", "tbar", "down", "down"))


def psi10_all() -> np.ndarray:
    """The outside view after the spin has been copied into A (nothing collapsed)."""
    return np.sqrt(1 / 3) * (
        ket("head", "hbar", "down", "down") + ket("tail", "tbar", "up", "up") + ket("tail", "tbar", "down", "down")
    )


def psi11() -> np.ndarray:
    return ket("tail", "tbar", "up", "up")


def copy_unitary() -> np.ndarray:
    """S(x)A premeasurement completed to a permutation: |s, init> <-> |s, s>."""
    u = np.eye(6, dtype=complex)
    for s, a_copy in ((0, 2), (1, 1)):
        i0, i1 = s * 3 + 0, s * 3 + a_copy
        u[[i0, i1]] = u[[i1, i0]]
    return kron(I2, I3, u)


def proj(v: np.ndarray) -> np.ndarray:
    v = v / np.linalg.norm(v)
    return np.outer(v, v.conj())


def P_R(label):
    return kron(proj(e(2, R_[label])), I3, I2, I3)


def P_S(label):
    return kron(I2, I3, proj(e(2, S_[label])), I3)


def okbar_vec():
    return h * (np.kron(e(2, 0), e(3, 1)) - np.kron(e(2, 1), e(3, 2)))


def ok_vec():
    return h * (np.kron(e(2, 0), e(3, 2)) - np.kron(e(2, 1), e(3, 1)))


def P_wbar(label):
    p = proj(okbar_vec())
    return kron(p if label == "okbar" else np.eye(6) - p, I2, I3)


def P_w(label):
    p = proj(ok_vec())
    return kron(I2, I3, p if label == "ok" else np.eye(6) - p)


def born(psi, P):
    return float(np.real(np.vdot(psi, P @ psi)))


def enumerate_collapse_tree() -> dict[tuple[str, str, str, str], float]:
    """All 16 (r, z, wbar, w) leaves with a global collapse after every measurement."""
    u = copy_unitary()
    leaves = {}
    for r, z, wb, w in itertools.product(("head", "tail"), ("down", "up"), ("okbar", "failbar"), ("ok", "fail")):
        psi, p = psi00(), 1.0
        for step in (("P", P_R(r)), ("U", u), ("P", P_S(z)), ("P", P_wbar(wb)), ("P", P_w(w))):
            if step[0] == "U":
                psi = step[1] @ psi
                continue
            v = step[1] @ psi
            pk = float(np.real(np.vdot(v, v)))
            p *= pk
            if pk < 1e-14:
                break
            psi = v / np.sqrt(pk)
        leaves[(r, z, wb, w)] = p if p > 1e-14 else 0.0
    return leaves


def external_joint(wb: str, w: str) -> float:
    """|| P_w P_wbar U psi00 ||^2: lab measurements as unitaries only."""
    v = P_w(w) @ P_wbar(wb) @ copy_unitary() @ psi00()
    return float(np.real(np.vdot(v, v)))


def schmidt_coefficients(psi: np.ndarray, left_axes: list[int]) -> np.ndarray:
    t = psi.reshape(DIMS)
    right = [i for i in range(4) if i not in left_axes]
    dl = int(np.prod([DIMS[i] for i in left_axes]))
    m = t.transpose(left_axes + right).reshape(dl, -1)
    return np.linalg.svd(m, compute_uv=False)


# -- the two-party friend scenario on S (x) A -------------------------------------


def wigner_states() -> tuple[np.ndarray, np.ndarray]:
    """Friend's collapsed |up,up> and Wigner's unitary-only (|up,up>+|down,down>)/sqrt2."""
    up_up = np.kron(e(2, 1), e(3, 1))
    down_down = np.kron(e(2, 0), e(3, 2))
    return up_up, h * (up_up + down_down)


def ray_infidelity(a: np.ndarray, b: np.ndarray) -> float:
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    return 1 - abs(np.vdot(a, b)) ** 2


# Values derived above and frozen after checking them against the enumeration.
GOLDEN_NOSYNC_COLLAPSE_OKBAR_OK = 0.25
GOLDEN_EXTERNAL_OKBAR_OK = 1 / 12
GOLDEN_WIGNER_DIVERGENCE = 0.5
