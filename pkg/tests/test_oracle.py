import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qsim.annealer import DirectBackend, FeedbackPolicy, run
from qsim.errors import EnumerationLimitError
from qsim.lattice import IsingProblem, hamiltonian
from qsim.oracle import (_gray_energies, all_states, brute_force, brute_force_naive, naive_energies,
                         state_histogram, state_key)
from qsim.problems import Graph, maxcut_to_ising


def random_problem(seed, n):
    rng = np.random.default_rng(seed)
    J = np.triu(rng.normal(size=(n, n)), 1)
    return IsingProblem(J + J.T, rng.normal(size=n), float(rng.normal()))


def test_pair_ferromagnet():
    truth = brute_force(IsingProblem(np.array([[0.0, 1.0], [1.0, 0.0]])))
    assert truth.min_energy == -1.0
    assert [state_key(s) for s in truth.ground_states] == ["--", "++"]
    assert truth.degeneracy == 2


def test_k4_maxcut_minimisers_are_balanced_partitions():
    problem = maxcut_to_ising(Graph.complete(4))
    truth, naive = brute_force(problem), brute_force_naive(problem)
    keys = sorted(state_key(s) for s in truth.ground_states)
    balanced = sorted("".join(p) for p in itertools.product("+-", repeat=4) if p.count("+") == 2)
    assert keys == balanced
    assert keys == sorted(state_key(s) for s in naive.ground_states)
    assert truth.min_energy == naive.min_energy == -4.0


def test_twenty_spins_dual_path():
    problem = random_problem(2024, 20)
    fast, slow = brute_force(problem), brute_force_naive(problem)
    assert fast.min_energy == pytest.approx(slow.min_energy, rel=1e-12)
    assert [state_key(s) for s in fast.ground_states] == [state_key(s) for s in slow.ground_states]
    assert fast.spectrum_checksum == slow.spectrum_checksum


@given(st.integers(1, 16), st.integers(0, 2 ** 32 - 1))
def test_gray_energies_match_naive(n, seed):
    problem = random_problem(seed, n)
    gray = _gray_energies(problem.coupling.copy(), problem.field.copy(), problem.offset)
    steps = np.arange(1 << n)
    codes = steps ^ (steps >> 1)
    naive = naive_energies(problem)
    scale = max(1.0, float(np.abs(naive).max()))
    np.testing.assert_allclose(gray, naive[codes], rtol=0, atol=1e-11 * scale)


def test_every_listed_state_attains_the_minimum():
    problem = random_problem(4, 14)
    truth = brute_force(problem)
    for s in truth.ground_states:
        assert hamiltonian(problem, s) == pytest.approx(truth.min_energy, abs=1e-12)
    assert truth.min_energy == pytest.approx(min(hamiltonian(problem, x) for x in all_states(14)))


@given(st.integers(2, 12), st.integers(0, 2 ** 32 - 1))
def test_permutation_invariance(n, seed):
    problem = random_problem(seed, n)
    perm = np.random.default_rng(seed + 1).permutation(n)
    a, b = brute_force(problem), brute_force(problem.relabel(perm))
    assert a.min_energy == pytest.approx(b.min_energy, rel=1e-12, abs=1e-12)
    relabelled = sorted(state_key(s[perm]) for s in a.ground_states)
    assert relabelled == sorted(state_key(s) for s in b.ground_states)


def test_degenerate_ground_states_survive_at_24_spins():
    # global-flip pairs must both be reported despite rounding drift over 2^24 steps
    problem = random_problem(1, 24)
    problem = IsingProblem(problem.coupling)
    truth = brute_force(problem)
    assert truth.degeneracy == 2
    a, b = truth.ground_states
    np.testing.assert_array_equal(a, -b)


def test_refuses_large_problems():
    with pytest.raises(EnumerationLimitError):
        brute_force(IsingProblem(np.zeros((25, 25))))
    with pytest.raises(EnumerationLimitError):
        brute_force(IsingProblem(np.zeros((6, 6))), n_limit=5)


def test_histogram_examples():
    assert state_histogram([]) == []
    assert state_histogram([np.array([1, -1])] * 5) == [("+-", 1.0)]
    hist = state_histogram([[1, 1], [-1, -1], [1, 1]])
    assert hist[0] == ("++", pytest.approx(2 / 3))
    with pytest.raises(ValueError):
        state_histogram([[1, 1], [1, 1, 1]])


def test_ferromagnet_histogram_splits_between_twins():
    n = 8
    problem = IsingProblem(np.ones((n, n)) - np.eye(n))
    backend = DirectBackend(problem)
    finals = [run(backend, FeedbackPolicy(max_iterations=300), s).final for s in range(240)]
    hist = dict(state_histogram(finals))
    assert set(hist) == {"+" * n, "-" * n}
    assert 0.35 < hist["+" * n] < 0.65


def test_all_states_order():
    np.testing.assert_array_equal(all_states(2), [[-1, -1], [1, -1], [-1, 1], [1, 1]])
