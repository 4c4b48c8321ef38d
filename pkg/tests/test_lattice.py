import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qsim.coupling import Knobs, negative_ratio_construction
from qsim.lattice import (IsingProblem, RelationMatrix, as_spins, hamiltonian, magnetization,
                          random_spins, theta_spins)


def random_problem(rng, n, field=True):
    J = np.triu(rng.normal(size=(n, n)), 1)
    J = J + J.T
    h = rng.normal(size=n) if field else None
    return IsingProblem(J, h, float(rng.normal()))


@st.composite
def problems_and_spins(draw, max_n=10, field=True):
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    return random_problem(rng, n, field), random_spins(n, rng)


def test_pair_ferromagnet_energies():
    p = IsingProblem(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert hamiltonian(p, [1, 1]) == -1.0
    assert hamiltonian(p, [1, -1]) == 1.0


def test_three_spins_match_naive_loop(rng):
    p = random_problem(rng, 3)
    for x in itertools.product([-1, 1], repeat=3):
        naive = p.offset
        for l in range(3):
            naive -= p.field[l] * x[l]
            for k in range(l + 1, 3):
                naive -= p.coupling[l, k] * x[l] * x[k]
        assert hamiltonian(p, x) == pytest.approx(naive, rel=1e-12, abs=1e-12)


@given(problems_and_spins(field=False))
def test_global_flip_invariance_without_field(case):
    p, x = case
    assert hamiltonian(p, x) == pytest.approx(hamiltonian(p, -x), rel=1e-12, abs=1e-12)


@given(problems_and_spins(), st.data())
def test_flip_delta_matches_recomputation(case, data):
    p, x = case
    i = data.draw(st.integers(0, p.n - 1))
    y = x.copy()
    y[i] = -y[i]
    assert p.flip_delta(x, i) == pytest.approx(hamiltonian(p, y) - hamiltonian(p, x), rel=1e-9, abs=1e-9)


@given(st.integers(1, 40), st.integers(0, 2 ** 32 - 1))
def test_magnetization_lattice(n, seed):
    m = magnetization(random_spins(n, np.random.default_rng(seed)))
    ups = (m * n + n) / 2
    assert -1 <= m <= 1
    assert ups == pytest.approx(round(ups), abs=1e-9)


def test_magnetization_examples():
    assert magnetization(np.ones(7)) == 1.0
    assert magnetization([1, -1] * 5) == 0.0


def test_negative_ratio_ground_state_magnetization():
    n, r = 400, 80
    prof, A = negative_ratio_construction(n, r)
    problem = Knobs(prof, A).effective_problem()
    s = A.quadrature_signs.astype(np.int8)
    assert abs(magnetization(s)) == pytest.approx(0.6)
    # a local minimum that beats the ferromagnetic states
    e = hamiltonian(problem, s)
    assert all(problem.flip_delta(s, i) > 0 for i in range(n))
    assert e < hamiltonian(problem, np.ones(n))


def test_dimension_mismatch_is_an_argument_error():
    p = IsingProblem(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        hamiltonian(p, [1, 1])


@pytest.mark.parametrize("J", [np.zeros((2, 3)), np.array([[0, 1], [2, 0.0]]), np.eye(2), np.zeros((0, 0))])
def test_invalid_coupling_rejected(J):
    with pytest.raises(ValueError):
        IsingProblem(J)


def test_field_shape_checked():
    with pytest.raises(ValueError):
        IsingProblem(np.zeros((2, 2)), np.zeros(3))


def test_problem_is_immutable():
    p = IsingProblem(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        p.coupling[0, 1] = 1.0


def test_as_spins_rejects_non_binary():
    with pytest.raises(ValueError):
        as_spins([1, 0, -1])
    assert as_spins([1.0, -1.0]).dtype == np.int8


@given(problems_and_spins(max_n=8), st.integers(0, 2 ** 32 - 1))
def test_relabel_preserves_energy(case, seed):
    p, x = case
    perm = np.random.default_rng(seed).permutation(p.n)
    q = p.relabel(perm)
    # q's spin i is p's spin perm[i]
    assert hamiltonian(q, x[perm]) == pytest.approx(hamiltonian(p, x), rel=1e-12, abs=1e-12)


def test_theta_spins_identity():
    x = np.array([1, -1, -1, 1])
    np.testing.assert_array_equal(theta_spins(x, RelationMatrix.identity(4)), x)


def test_theta_spins_quarter_turn():
    A = RelationMatrix(np.full(2, np.pi / 2))
    np.testing.assert_array_equal(theta_spins([1, -1], A), [1j, -1j])


@given(st.integers(1, 30), st.integers(0, 2 ** 32 - 1))
def test_theta_spins_mixed_quadrature(n, seed):
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1, 1], n)
    x = random_spins(n, rng)
    A = RelationMatrix.quadrature(signs)
    expected = np.array([(1j if s > 0 else -1j) * xi for s, xi in zip(signs, x)])
    np.testing.assert_array_equal(theta_spins(x, A), expected)
    np.testing.assert_array_equal(A.quadrature_signs, signs)


def test_quadrature_signs_absent_for_general_phases():
    assert RelationMatrix(np.array([0.0, np.pi / 2])).quadrature_signs is None
    assert np.allclose(RelationMatrix(np.array([0.3])).entries, np.exp(0.3j))
