"""Single-qubit Clifford group with a uniform Z-SX-Z-SX-Z decomposition and a
compiler from random Clifford sequences to SX pulses with virtual Z gates."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .. import rng

I2 = np.eye(2, dtype=np.complex128)
X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
H = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)
S = np.array([[1, 0], [0, 1j]], dtype=np.complex128)
SX = np.array([[1, -1j], [-1j, 1]], dtype=np.complex128) / np.sqrt(2)  # exp(-i pi/4 X)
QUARTER = np.pi / 2


def rz(phi: float) -> np.ndarray:
    return np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])


def same_up_to_phase(a: np.ndarray, b: np.ndarray, tol: float = 1e-10) -> bool:
    """True when ``a = exp(i g) b`` for some global phase ``g``."""
    overlap = np.trace(b.conj().T @ a)
    if abs(overlap) < 1e-12:
        return False
    phase = overlap / abs(overlap)
    return bool(np.max(np.abs(a - phase * b)) < tol)


def _canonical(u: np.ndarray) -> tuple:
    """Hashable representative of ``u`` modulo global phase."""
    flat = u.reshape(-1)
    k = int(np.argmax(np.abs(flat) > 1e-9))
    v = flat * (abs(flat[k]) / flat[k])
    return tuple(np.round(v.real, 9) + 0.0) + tuple(np.round(v.imag, 9) + 0.0)


def decomposition_unitary(angles) -> np.ndarray:
    """``Z(a) SX Z(b) SX Z(c)`` for ``angles = (a, b, c)`` in quarter turns."""
    a, b, c = (QUARTER * k for k in angles)
    return rz(a) @ SX @ rz(b) @ SX @ rz(c)


@dataclass(frozen=True)
class CliffordElement:
    index: int
    unitary: np.ndarray
    decomposition: tuple  # (a, b, c) in quarter turns

    @property
    def angles(self) -> tuple:
        return tuple(QUARTER * k for k in self.decomposition)


@lru_cache(maxsize=1)
def clifford_group() -> tuple:
    """The 24 single-qubit Cliffords (closure of H and S), identity first."""
    elems = [I2]
    seen = {_canonical(I2)}
    frontier = [I2]
    while frontier:
        nxt = []
        for u in frontier:
            for g in (H, S):
                v = g @ u
                key = _canonical(v)
                if key not in seen:
                    seen.add(key)
                    elems.append(v)
                    nxt.append(v)
        frontier = nxt
    if len(elems) != 24:
        raise RuntimeError(f"Clifford closure produced {len(elems)} elements")
    out = []
    combos = list(itertools.product(range(4), repeat=3))
    for i, u in enumerate(elems):
        for abc in combos:
            if same_up_to_phase(decomposition_unitary(abc), u):
                out.append(CliffordElement(i, u, abc))
                break
        else:
            raise RuntimeError(f"no Z-SX-Z-SX-Z form for Clifford {i}")
    return tuple(out)


@lru_cache(maxsize=1)
def multiplication_table() -> np.ndarray:
    """``table[i, j] = k`` with ``C_k = C_i C_j`` (apply ``C_j`` first)."""
    group = clifford_group()
    lookup = {_canonical(c.unitary): c.index for c in group}
    n = len(group)
    t = np.zeros((n, n), dtype=np.int64)
    for i, j in itertools.product(range(n), repeat=2):
        t[i, j] = lookup[_canonical(group[i].unitary @ group[j].unitary)]
    return t


def inverse_index(i: int) -> int:
    t = multiplication_table()
    return int(np.flatnonzero(t[i] == 0)[0])


@dataclass
class CompiledSequence:
    cliffords: list  # indices in time order, recovery last
    pulse_phases: list  # carrier phase of each SX pulse, in quarter turns (0..3)
    final_frame: int  # accumulated virtual Z, quarter turns

    @property
    def n_pulses(self) -> int:
        return len(self.pulse_phases)


def compile_indices(indices) -> CompiledSequence:
    """SX pulses with virtual Z for the given Clifford indices (time order).

    With ``Phi`` the Z rotation accumulated before a pulse, ``SX`` is played
    about the axis at angle ``-Phi`` in the xy plane, i.e. with carrier
    phase ``-Phi``.
    """
    group = clifford_group()
    frame = 0
    phases = []
    for i in indices:
        a, b, c = group[i].decomposition
        frame = (frame + c) % 4
        phases.append((-frame) % 4)
        frame = (frame + b) % 4
        phases.append((-frame) % 4)
        frame = (frame + a) % 4
    return CompiledSequence(list(indices), phases, frame)


def compile_clifford_sequence(m: int, seed: int) -> CompiledSequence:
    """``m`` random Cliffords plus the recovery element."""
    if m < 1:
        raise ValueError("sequence length must be at least 1")
    g = rng.generator(seed, "clifford", m)
    idx = [int(k) for k in g.integers(0, 24, size=m)]
    t = multiplication_table()
    total = 0
    for i in idx:
        total = int(t[i, total])
    return compile_indices(idx + [inverse_index(total)])


def sequence_unitary(seq: CompiledSequence) -> np.ndarray:
    """Ideal unitary of the pulse program (virtual Z included)."""
    u = I2
    for ph in seq.pulse_phases:
        theta = QUARTER * ph
        axis = np.cos(theta) * X + np.sin(theta) * Y
        u = (np.cos(np.pi / 4) * I2 - 1j * np.sin(np.pi / 4) * axis) @ u
    return rz(QUARTER * seq.final_frame) @ u
