import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qsim.annealer import (TRACE_COLUMNS, AnalyticBackend, AnnealState, DirectBackend, FeedbackPolicy,
                           OpticalBackend, TargetImage, image_distance, make_backend, make_target_image, run,
                           step)
from qsim.coupling import IntensityProfile, Knobs
from qsim.errors import ConfigurationError
from qsim.lattice import IsingProblem, RelationMatrix, hamiltonian, random_spins
from qsim.optics import DetectorConfig, OpticsConfig
from qsim.oracle import all_states, brute_force
from qsim.problems import gnp_graph, maxcut_to_ising, quadrature_graph


def ferromagnet(n, J=1.0):
    M = J * (np.ones((n, n)) - np.eye(n))
    return IsingProblem(M)


def random_knobs(rng, n, sense="maximize"):
    prof = IntensityProfile(rng.uniform(0.2, 1, n), rng.uniform(0.2, 1, n))
    return Knobs(prof, RelationMatrix.quadrature(rng.choice([-1, 1], n)), sense)


def test_single_step_target():
    t = make_target_image(steps=1)
    assert t.values.shape == (1, 1) and t.values[0, 0] == 1.0
    wide = make_target_image(steps=1, radius=2)
    assert wide.values[2, 2] == 1.0 and wide.values.sum() == 1.0


def test_stepwise_levels():
    t = make_target_image(steps=3, peak=1.0, radius=3)
    assert sorted(set(np.round(t.values.ravel(), 12))) == pytest.approx([0, 1 / 3, 2 / 3, 1])


@given(st.integers(1, 5), st.integers(1, 3))
def test_target_is_radially_non_increasing(steps, width):
    t = make_target_image(steps=steps, ring_width=width)
    r = t.radius
    idx = np.arange(-r, r + 1)
    d = np.maximum(np.abs(idx)[:, None], np.abs(idx)[None, :])
    for a in range(r):
        assert t.values[d == a].min() >= t.values[d == a + 1].max()


def test_target_window_limits():
    with pytest.raises(ConfigurationError):
        make_target_image(steps=3, radius=5, detector_radius=4)
    with pytest.raises(ConfigurationError):
        make_target_image(steps=3, radius=1)


def test_image_distance_examples(rng):
    T = rng.uniform(size=(5, 5))
    assert image_distance(T, T) == 0.0
    assert image_distance(T + 0.5, T) == pytest.approx(0.5 * np.sqrt(25))
    I = rng.uniform(size=(5, 5))
    naive = 0.0
    for i in range(5):
        for j in range(5):
            naive += (I[i, j] - T[i, j]) ** 2
    assert image_distance(I, T) == pytest.approx(np.sqrt(naive))
    with pytest.raises(ValueError):
        image_distance(np.zeros((3, 3)), T)


def _state(problem, x):
    backend = DirectBackend(problem)
    return AnnealState(backend, np.array(x, dtype=np.int8), backend.reset(x, None))


def test_improving_proposal_is_accepted():
    problem = ferromagnet(2)
    st_ = _state(problem, [1, -1])
    res = step(st_, FeedbackPolicy(), np.random.default_rng(0))
    assert res.accepted and res.objective_new < res.objective_before
    assert st_.objective == hamiltonian(problem, st_.x)


def test_worsening_proposal_is_rejected_exactly():
    problem = ferromagnet(4)
    st_ = _state(problem, [1, 1, 1, 1])
    before_x, before_obj = st_.x.copy(), st_.objective
    for seed in range(10):
        res = step(st_, FeedbackPolicy(), np.random.default_rng(seed))
        assert not res.accepted
    np.testing.assert_array_equal(st_.x, before_x)
    assert st_.objective == before_obj
    assert st_.backend.tracker.energy == before_obj


def test_ties_are_rejected():
    # an isolated spin: flipping it leaves the energy unchanged
    problem = IsingProblem(np.zeros((1, 1)))
    st_ = _state(problem, [1])
    assert not step(st_, FeedbackPolicy(), np.random.default_rng(0)).accepted


@given(st.integers(0, 10_000))
def test_ferromagnet_reaches_ground_state(seed):
    problem = ferromagnet(12)
    truth = brute_force(problem)
    trace = run(DirectBackend(problem), FeedbackPolicy(max_iterations=500), seed)
    assert hamiltonian(problem, trace.final) == pytest.approx(truth.min_energy)
    assert abs(trace.final.sum()) == 12


def test_zero_budget_returns_initial_state():
    trace = run(DirectBackend(ferromagnet(5)), FeedbackPolicy(max_iterations=0), 3)
    np.testing.assert_array_equal(trace.final, trace.initial)
    assert trace.records == []
    assert trace.to_csv().strip() == ",".join(TRACE_COLUMNS)


def _all_backends(rng, n=10):
    knobs = random_knobs(rng, n)
    problem = knobs.effective_problem()
    cfg = OpticsConfig.for_spins(n, block_size=2)
    return [DirectBackend(problem), AnalyticBackend(knobs),
            OpticalBackend(knobs, cfg, make_target_image(steps=2)),
            OpticalBackend(knobs, cfg, None, DetectorConfig(noise_sigma=0.0))], problem


@pytest.mark.parametrize("which", range(4))
def test_identical_seeds_give_identical_traces(which):
    backends, problem = _all_backends(np.random.default_rng(5))
    policy = FeedbackPolicy(max_iterations=150)
    a = run(backends[which], policy, 11, problem=problem)
    b = run(backends[which], policy, 11, problem=problem)
    assert a.to_csv(include_timing=False) == b.to_csv(include_timing=False)
    np.testing.assert_array_equal(a.final, b.final)
    c = run(backends[which], policy, 12, problem=problem)
    assert not np.array_equal(a.initial, c.initial)


@pytest.mark.parametrize("flips", [1, 3])
def test_greedy_monotonicity(flips):
    rng = np.random.default_rng(8)
    g = gnp_graph(30, 0.7, seed=2)
    problem = maxcut_to_ising(g)
    trace = run(DirectBackend(problem), FeedbackPolicy(flips_per_proposal=flips, max_iterations=400), 1,
                graph=g)
    acc = trace.accepted_objectives()
    assert np.all(np.diff(np.concatenate([[trace.initial_objective], acc])) < 0)
    energies = np.array([r.energy for r in trace.records])
    np.testing.assert_allclose(energies, trace.objectives())
    np.testing.assert_allclose(-trace.cut_values(), energies)
    assert hamiltonian(problem, trace.final) == pytest.approx(energies[-1])


def test_noisy_optical_acceptance_beats_remeasured_baseline():
    g, knobs = quadrature_graph(30, 0.6, seed=1)
    backend = OpticalBackend(knobs, OpticsConfig.for_spins(30, block_size=3), None,
                             DetectorConfig(noise_sigma=0.01))
    rng, noise = np.random.default_rng(0), np.random.default_rng(1)
    x = random_spins(30, rng)
    state = AnnealState(backend, x.copy(), backend.reset(x, noise))
    results = [step(state, FeedbackPolicy(), rng, noise) for _ in range(200)]
    assert any(r.accepted for r in results)
    for r in results:
        assert r.accepted == (r.objective_new < r.objective_before)


@pytest.mark.parametrize("n", [4, 7, 10])
def test_analytic_decisions_equal_direct_decisions(n):
    rng = np.random.default_rng(n)
    knobs = random_knobs(rng, n)
    problem = knobs.effective_problem()
    analytic, direct = AnalyticBackend(knobs), DirectBackend(problem)
    optical = OpticalBackend(knobs, OpticsConfig.for_spins(n, block_size=2), make_target_image(steps=1),
                             DetectorConfig(noise_sigma=0.0, quantize=False))
    for x in all_states(n):
        a0, d0, o0 = analytic.reset(x, None), direct.reset(x, None), optical.reset(x, None)
        for i in range(n):
            idx = np.array([i])
            da, dd, do = analytic.propose(idx, None), direct.propose(idx, None), optical.propose(idx, None)
            gap = abs(dd - d0)
            if gap > 1e-9 * max(1.0, abs(d0)):
                assert (da < a0) == (dd < d0) == (do < o0)


def test_optical_cut_curve_rises_and_flattens():
    g, knobs = quadrature_graph(100, 0.6, seed=0)
    backend = OpticalBackend(knobs, OpticsConfig.for_spins(100, block_size=5), make_target_image(steps=3))
    trace = run(backend, FeedbackPolicy(max_iterations=300, stop_window=None), 4, graph=g)
    cuts = trace.cut_values()
    early = cuts[74] - cuts[0]
    late = cuts[-1] - cuts[-76]
    assert cuts[-1] > cuts[0]
    assert early > 5 * max(late, 0.0) or late == 0


def test_plateau_stop():
    problem = ferromagnet(20)
    trace = run(DirectBackend(problem), FeedbackPolicy(max_iterations=10_000, stop_window=50), 0)
    assert trace.stopped_on_plateau and trace.iterations < 10_000
    off = run(DirectBackend(problem), FeedbackPolicy(max_iterations=300, stop_window=None), 0)
    assert not off.stopped_on_plateau and off.iterations == 300


def test_metropolis_accepts_uphill_moves():
    g = gnp_graph(20, 0.5, seed=0)
    problem = maxcut_to_ising(g)
    trace = run(DirectBackend(problem), FeedbackPolicy(max_iterations=400, temperature=5.0, stop_window=None), 0)
    objs = np.concatenate([[trace.initial_objective], trace.objectives()])
    accepted_up = [r for i, r in enumerate(trace.records) if r.accepted and objs[i + 1] > objs[i]]
    assert accepted_up


def test_fixed_baseline_option():
    rng = np.random.default_rng(2)
    knobs = random_knobs(rng, 12)
    backend = OpticalBackend(knobs, OpticsConfig.for_spins(12, block_size=2), None,
                             DetectorConfig(noise_sigma=0.02))
    policy = FeedbackPolicy(max_iterations=100, remeasure_baseline=False)
    a, b = run(backend, policy, 3), run(backend, policy, 3)
    assert a.to_csv(False) == b.to_csv(False)


def test_policy_validation():
    for kw in (dict(backend="quantum"), dict(flips_per_proposal=0), dict(max_iterations=-1),
               dict(stop_window=0)):
        with pytest.raises(ConfigurationError):
            FeedbackPolicy(**kw)


def test_make_backend_dispatch():
    rng = np.random.default_rng(0)
    knobs = random_knobs(rng, 4)
    problem = knobs.effective_problem()
    assert isinstance(make_backend(FeedbackPolicy(), problem), DirectBackend)
    assert isinstance(make_backend(FeedbackPolicy(), None, knobs), DirectBackend)
    assert isinstance(make_backend(FeedbackPolicy(backend="analytic"), None, knobs), AnalyticBackend)
    assert isinstance(make_backend(FeedbackPolicy(backend="optical"), None, knobs), OpticalBackend)
    with pytest.raises(ConfigurationError):
        make_backend(FeedbackPolicy(backend="optical"), problem)
    with pytest.raises(ConfigurationError):
        make_backend(FeedbackPolicy())


def test_initial_state_override():
    problem = ferromagnet(6)
    x0 = np.array([1, 1, 1, -1, -1, -1])
    trace = run(DirectBackend(problem), FeedbackPolicy(max_iterations=5), 0, initial=x0)
    np.testing.assert_array_equal(trace.initial, x0)
    with pytest.raises(ValueError):
        run(DirectBackend(problem), FeedbackPolicy(), 0, initial=[1, 1])


def test_trace_csv_columns():
    trace = run(DirectBackend(ferromagnet(4)), FeedbackPolicy(max_iterations=3), 0)
    lines = trace.to_csv().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS)
    assert len(lines) == 4
    assert trace.to_csv(False).splitlines()[0] == ",".join(TRACE_COLUMNS[:-1])
