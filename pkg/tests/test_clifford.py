import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from presto_emu.experiments.clifford import (
    I2,
    clifford_group,
    compile_clifford_sequence,
    compile_indices,
    decomposition_unitary,
    inverse_index,
    multiplication_table,
    same_up_to_phase,
    sequence_unitary,
)


def test_group_has_24_distinct_unitary_elements():
    group = clifford_group()
    assert len(group) == 24
    assert same_up_to_phase(group[0].unitary, I2)
    for c in group:
        assert np.allclose(c.unitary.conj().T @ c.unitary, I2, atol=1e-12)
    for a, b in itertools.combinations(group, 2):
        assert not same_up_to_phase(a.unitary, b.unitary)


def test_decompositions_match_elements():
    for c in clifford_group():
        assert same_up_to_phase(decomposition_unitary(c.decomposition), c.unitary, tol=1e-10)


def test_closure_and_inverses():
    t = multiplication_table()
    assert t.shape == (24, 24)
    for row in t:
        assert sorted(row) == list(range(24))  # Latin square
    for i in range(24):
        assert t[i, inverse_index(i)] == 0
        assert t[inverse_index(i), i] == 0


def test_table_matches_products():
    group = clifford_group()
    t = multiplication_table()
    for i, j in [(1, 2), (5, 17), (23, 23), (9, 0)]:
        assert same_up_to_phase(group[i].unitary @ group[j].unitary, group[t[i, j]].unitary)


def test_random_sequences_compose_to_identity():
    rng = np.random.default_rng(7)
    for seed in range(100):
        m = int(rng.integers(1, 51))
        seq = compile_clifford_sequence(m, seed)
        assert len(seq.cliffords) == m + 1
        assert seq.n_pulses == 2 * (m + 1)
        assert same_up_to_phase(sequence_unitary(seq), I2, tol=1e-10)


def test_length_one_is_identity():
    seq = compile_clifford_sequence(1, 0)
    assert same_up_to_phase(sequence_unitary(seq), I2, tol=1e-10)
    with pytest.raises(ValueError):
        compile_clifford_sequence(0, 0)


@given(st.lists(st.integers(0, 23), min_size=1, max_size=30))
def test_compiled_pulses_reproduce_product(indices):
    group = clifford_group()
    target = I2
    for i in indices:
        target = group[i].unitary @ target
    assert same_up_to_phase(sequence_unitary(compile_indices(indices)), target, tol=1e-9)


def test_sequences_are_seed_deterministic():
    a = compile_clifford_sequence(40, 11)
    b = compile_clifford_sequence(40, 11)
    c = compile_clifford_sequence(40, 12)
    assert a.pulse_phases == b.pulse_phases
    assert a.cliffords != c.cliffords
