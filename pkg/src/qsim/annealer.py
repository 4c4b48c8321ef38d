"""Greedy image-feedback optimiser.

Each iteration flips a random set of spins, measures the objective through a
backend and keeps the flip only if the objective strictly improves:

* ``direct``  -- Ising energy of an :class:`~qsim.lattice.IsingProblem`;
* ``analytic`` -- distance between the analytic centre intensity and the
  target peak (bright target) or zero (dark target);
* ``optical`` -- full detector image of the Fourier-plane window, compared
  with a stepwise target image.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .coupling import Knobs, fixed_field, spin_coefficients
from .errors import ConfigurationError
from .lattice import IsingProblem, as_spins, random_spins
from .optics import DetectorConfig, Misalignment, OpticalModel, OpticsConfig, detect

BACKENDS = ("direct", "analytic", "optical")

TRACE_COLUMNS = ("iteration", "objective", "energy", "cut_value", "accepted", "elapsed_ms")


@dataclass(frozen=True, eq=False)
class TargetImage:
    values: np.ndarray
    steps: int
    peak: float
    ring_width: int

    @property
    def radius(self) -> int:
        return self.values.shape[0] // 2


def make_target_image(steps: int = 3, peak: float = 1.0, ring_width: int = 1,
                      radius: int | None = None, detector_radius: int | None = None) -> TargetImage:
    """Concentric square rings, ring ``i`` at level ``peak * (steps - i) / steps``.

    Ring ``i`` holds pixels whose Chebyshev distance ``d`` from the centre
    satisfies ``i * ring_width <= d < (i + 1) * ring_width``; the window
    extends to ``radius`` (default: just the rings) and is zero beyond them.
    """
    if steps < 1 or ring_width < 1:
        raise ConfigurationError("steps and ring_width must be >= 1")
    min_radius = steps * ring_width - 1
    radius = min_radius if radius is None else radius
    if radius < min_radius:
        raise ConfigurationError(f"radius {radius} cannot hold {steps} rings of width {ring_width}")
    if detector_radius is not None and radius > detector_radius:
        raise ConfigurationError("target window is larger than the detector window")
    idx = np.arange(-radius, radius + 1)
    d = np.maximum(np.abs(idx)[:, None], np.abs(idx)[None, :])
    ring = d // ring_width
    values = np.where(ring < steps, peak * (steps - ring) / steps, 0.0)
    return TargetImage(values, steps, float(peak), ring_width)


def image_distance(image, target) -> float:
    """Euclidean norm of the pixel-wise difference over the target window."""
    I = np.asarray(getattr(image, "values", image), dtype=float)
    T = np.asarray(getattr(target, "values", target), dtype=float)
    if I.shape != T.shape:
        raise ValueError(f"image shape {I.shape} does not match target {T.shape}")
    return float(np.linalg.norm(I - T))


@dataclass(frozen=True)
class FeedbackPolicy:
    flips_per_proposal: int = 1
    max_iterations: int = 1000
    stop_window: int | None = 100  # None disables plateau stopping
    stop_epsilon: float = 1e-3
    backend: str = "direct"
    remeasure_baseline: bool = True
    temperature: float = 0.0  # > 0 switches to Metropolis acceptance

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigurationError(f"backend must be one of {BACKENDS}")
        if self.flips_per_proposal < 1:
            raise ConfigurationError("flips_per_proposal must be >= 1")
        if self.max_iterations < 0:
            raise ConfigurationError("max_iterations must be >= 0")
        if self.stop_window is not None and self.stop_window < 1:
            raise ConfigurationError("stop_window must be >= 1 or None")


# -- backends ---------------------------------------------------------------

class EnergyTracker:
    """Energy of an Ising problem under single or batched flips, via local fields."""

    def __init__(self, problem: IsingProblem):
        self.problem = problem
        self.J = np.asarray(problem.coupling)
        self.x = None

    def reset(self, x):
        self.x = np.asarray(x, dtype=float).copy()
        self.fields = self.J @ self.x + self.problem.field
        self.energy = float(-0.5 * self.x @ (self.J @ self.x) - self.problem.field @ self.x
                            + self.problem.offset)

    def delta(self, idx) -> float:
        xs = self.x[idx]
        d = 2.0 * float(xs @ self.fields[idx])
        if len(idx) > 1:
            d -= 2.0 * float(xs @ self.J[np.ix_(idx, idx)] @ xs)
        return d

    def commit(self, idx, delta: float):
        xs = self.x[idx]
        self.fields -= 2.0 * (self.J[:, idx] @ xs)
        self.x[idx] = -xs
        self.energy += delta


class DirectBackend:
    name = "direct"

    def __init__(self, problem: IsingProblem):
        self.n = problem.n
        self.tracker = EnergyTracker(problem)

    def reset(self, x, rng):
        self.tracker.reset(x)
        return self.tracker.energy

    def measure_current(self, rng):
        return self.tracker.energy

    def propose(self, idx, rng):
        d = self.tracker.delta(idx)
        self._pending = d
        return self.tracker.energy + d

    def commit(self, idx):
        self.tracker.commit(idx, self._pending)


class AnalyticBackend:
    """Distance of the analytic centre intensity from the target level."""

    name = "analytic"

    def __init__(self, knobs: Knobs, peak: float | None = None):
        self.knobs = knobs
        self.n = knobs.n
        self.c = spin_coefficients(knobs.intensities, knobs.relation)
        self.F = fixed_field(knobs.intensities)
        if knobs.sense == "maximize":
            self.peak = (np.abs(self.c).sum() + abs(self.F)) ** 2 if peak is None else float(peak)
        else:
            self.peak = 0.0 if peak is None else float(peak)

    def _distance(self, S):
        return abs(abs(S) ** 2 - self.peak)

    def reset(self, x, rng):
        self.S = complex(self.c @ np.asarray(x, dtype=float) + self.F)
        self.x = np.asarray(x, dtype=float).copy()
        return self._distance(self.S)

    def measure_current(self, rng):
        return self._distance(self.S)

    def propose(self, idx, rng):
        self._pending = self.S - 2.0 * complex(self.c[idx] @ self.x[idx])
        return self._distance(self._pending)

    def commit(self, idx):
        self.S = self._pending
        self.x[idx] = -self.x[idx]


class OpticalBackend:
    """Simulated detector image of the Fourier-plane window versus a target image."""

    name = "optical"

    def __init__(self, knobs: Knobs, cfg: OpticsConfig, target: TargetImage | None = None,
                 detector: DetectorConfig = DetectorConfig(),
                 misalignment: Misalignment | None = None):
        self.knobs = knobs
        self.n = knobs.n
        # a dark target constrains only the centre pixel: the rest of the window
        # is not part of the Ising energy and would bias the search
        if target is None or knobs.sense == "minimize":
            target = make_target_image(steps=1)
        self.model = OpticalModel(knobs, cfg, misalignment, target.radius)
        if knobs.sense == "maximize":
            # scale the stepwise profile so its peak sits at the brightest reachable centre
            target = TargetImage(target.values / max(target.peak, 1e-300) * self.model.center_bound(),
                                 target.steps, self.model.center_bound(), target.ring_width)
        else:
            target = TargetImage(np.zeros_like(target.values), target.steps, 0.0, target.ring_width)
        self.target = target
        self.detector = detector
        self.noisy = detector.noise_sigma > 0

    def _measure(self, F, rng):
        I = np.abs(F.reshape(self.model.shape)) ** 2
        return image_distance(detect(I, rng, self.detector), self.target)

    def reset(self, x, rng):
        self.x = np.asarray(x, dtype=float).copy()
        self.F = self.model.window_field(self.x)
        self.d = self._measure(self.F, rng)
        return self.d

    def measure_current(self, rng):
        if self.noisy:
            self.d = self._measure(self.F, rng)
        return self.d

    def propose(self, idx, rng):
        self._pending = self.F - 2.0 * (self.x[idx] @ self.model.responses[idx])
        self._pending_d = self._measure(self._pending, rng)
        return self._pending_d

    def commit(self, idx):
        self.F = self._pending
        self.d = self._pending_d
        self.x[idx] = -self.x[idx]


def make_backend(policy: FeedbackPolicy, problem: IsingProblem | None = None,
                 knobs: Knobs | None = None, optics: OpticsConfig | None = None,
                 target: TargetImage | None = None, detector: DetectorConfig = DetectorConfig(),
                 misalignment: Misalignment | None = None):
    if policy.backend == "direct":
        if problem is None:
            if knobs is None:
                raise ConfigurationError("direct backend needs a problem or knobs")
            problem = knobs.effective_problem()
        return DirectBackend(problem)
    if knobs is None:
        raise ConfigurationError(f"{policy.backend} backend needs optical knobs")
    if policy.backend == "analytic":
        return AnalyticBackend(knobs)
    if optics is None:
        optics = OpticsConfig.for_spins(knobs.n, knobs.intensities.n_fixed, block_size=1)
    return OpticalBackend(knobs, optics, target, detector, misalignment)


# -- the loop ---------------------------------------------------------------

@dataclass
class IterationRecord:
    iteration: int
    objective: float
    energy: float | None
    cut_value: float | None
    flips: tuple
    accepted: bool
    elapsed_ms: float


@dataclass
class RunTrace:
    seed: int
    initial: np.ndarray
    final: np.ndarray
    records: list = field(default_factory=list)
    initial_objective: float = float("nan")
    stopped_on_plateau: bool = False

    @property
    def iterations(self) -> int:
        return len(self.records)

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def cut_values(self) -> np.ndarray:
        return np.array([r.cut_value for r in self.records], dtype=float)

    def accepted_objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records if r.accepted])

    def write_csv(self, fh, include_timing: bool = True) -> None:
        cols = TRACE_COLUMNS if include_timing else TRACE_COLUMNS[:-1]
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in self.records:
            row = [r.iteration, _fmt(r.objective), _fmt(r.energy), _fmt(r.cut_value), int(r.accepted)]
            if include_timing:
                row.append(f"{r.elapsed_ms:.3f}")
            w.writerow(row)

    def to_csv(self, include_timing: bool = True) -> str:
        buf = io.StringIO()
        self.write_csv(buf, include_timing)
        return buf.getvalue()


def _fmt(v):
    return "" if v is None else repr(float(v))


@dataclass
class AnnealState:
    backend: object
    x: np.ndarray
    objective: float
    problem_tracker: EnergyTracker | None = None
    cut_tracker: EnergyTracker | None = None


@dataclass(frozen=True)
class StepResult:
    flips: tuple
    objective_before: float
    objective_new: float
    accepted: bool


def step(state: AnnealState, policy: FeedbackPolicy, rng: np.random.Generator,
         noise_rng: np.random.Generator | None = None) -> StepResult:
    """One propose/measure/accept-or-restore cycle; mutates ``state`` only on acceptance."""
    noise_rng = rng if noise_rng is None else noise_rng
    n = state.x.size
    k = min(policy.flips_per_proposal, n)
    idx = np.sort(rng.choice(n, size=k, replace=False)) if k > 1 else np.array([rng.integers(n)])
    if policy.remeasure_baseline:
        state.objective = state.backend.measure_current(noise_rng)
    before = state.objective
    new = state.backend.propose(idx, noise_rng)
    if policy.temperature > 0:
        accept = new < before or rng.random() < math.exp(-(new - before) / policy.temperature)
    else:
        accept = new < before
    if accept:
        state.backend.commit(idx)
        for tr in (state.problem_tracker, state.cut_tracker):
            if tr is not None:
                tr.commit(idx, tr.delta(idx))
        state.x[idx] = -state.x[idx]
        state.objective = new
    return StepResult(tuple(int(i) for i in idx), before, new, accept)


def _plateau(objs, window: int, eps: float) -> bool:
    if len(objs) <= window:
        return False
    old, cur = objs[-window - 1], objs[-1]
    return old - cur <= eps * abs(old)


def run(backend, policy: FeedbackPolicy, seed: int = 0, *, problem: IsingProblem | None = None,
        graph=None, initial=None) -> RunTrace:
    """Random initial spins from ``seed``, then :func:`step` until the budget or a plateau.

    ``problem`` adds an energy column to the trace; ``graph`` adds the cut value.
    Three independent streams are spawned from ``seed`` (initial state,
    proposals, detector noise) so changing the noise model leaves the
    proposal sequence intact.
    """
    init_ss, prop_ss, noise_ss = np.random.SeedSequence(seed).spawn(3)
    prop_rng = np.random.default_rng(prop_ss)
    noise_rng = np.random.default_rng(noise_ss)
    n = backend.n
    x0 = random_spins(n, np.random.default_rng(init_ss)) if initial is None else as_spins(initial)
    if x0.size != n:
        raise ValueError("initial state size does not match the backend")

    if problem is None and isinstance(backend, DirectBackend):
        problem = backend.tracker.problem
    ptrack = None
    if problem is not None and not isinstance(backend, DirectBackend):
        ptrack = EnergyTracker(problem)
        ptrack.reset(x0)
    ctrack = None
    if graph is not None:
        from .problems import maxcut_to_ising

        ctrack = EnergyTracker(maxcut_to_ising(graph))
        ctrack.reset(x0)

    obj0 = backend.reset(x0, noise_rng)
    state = AnnealState(backend, x0.astype(np.int8).copy(), obj0, ptrack, ctrack)
    trace = RunTrace(seed, x0.copy(), x0.copy(), initial_objective=obj0)
    objs = [obj0]
    t0 = time.perf_counter()
    for it in range(1, policy.max_iterations + 1):
        res = step(state, policy, prop_rng, noise_rng)
        if isinstance(backend, DirectBackend):
            energy = backend.tracker.energy
        else:
            energy = ptrack.energy if ptrack is not None else None
        cut = -ctrack.energy if ctrack is not None else None
        trace.records.append(IterationRecord(it, state.objective, energy, cut, res.flips, res.accepted,
                                             (time.perf_counter() - t0) * 1e3))
        objs.append(state.objective)
        if policy.stop_window is not None and _plateau(objs, policy.stop_window, policy.stop_epsilon):
            trace.stopped_on_plateau = True
            break
    trace.final = state.x.copy()
    return trace
