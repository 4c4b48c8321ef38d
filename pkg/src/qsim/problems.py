"""Problem mappers: Max-cut, vertex cover and the negative-interaction magnetization study."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annealer import AnalyticBackend, DirectBackend, FeedbackPolicy, OpticalBackend, run
from .coupling import (CouplingReport, IntensityProfile, Knobs, effective_coupling, effective_field,
                       fit_intensities, negative_interaction_count, negative_ratio_construction)
from .lattice import IsingProblem, RelationMatrix, as_spins, magnetization
from .optics import OpticsConfig


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected weighted graph on nodes ``0..n-1``."""

    n: int
    edges: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if w.shape[0] != e.shape[0]:
            raise ValueError("one weight per edge is required")
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ValueError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed")
        key = np.sort(e, axis=1)
        if np.unique(key, axis=0).shape[0] != key.shape[0]:
            raise ValueError("duplicate undirected edge")
        e.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_edges(cls, n: int, edges) -> "Graph":
        """Edges as ``(u, v)`` (weight 1) or ``(u, v, w)`` tuples."""
        uv, w = [], []
        for edge in edges:
            uv.append((int(edge[0]), int(edge[1])))
            w.append(float(edge[2]) if len(edge) > 2 else 1.0)
        return cls(n, np.array(uv, dtype=np.int64).reshape(-1, 2), np.array(w))

    @classmethod
    def complete(cls, n: int, weight: float = 1.0) -> "Graph":
        iu = np.triu_indices(n, 1)
        return cls(n, np.column_stack(iu), np.full(iu[0].size, float(weight)))

    @property
    def m(self) -> int:
        return self.edges.shape[0]

    @property
    def density(self) -> float:
        pairs = self.n * (self.n - 1) / 2
        return self.m / pairs if pairs else 0.0

    @property
    def is_complete(self) -> bool:
        return self.m == self.n * (self.n - 1) // 2

    def weight_matrix(self) -> np.ndarray:
        W = np.zeros((self.n, self.n))
        u, v = self.edges[:, 0], self.edges[:, 1]
        W[u, v] = self.weights
        W[v, u] = self.weights
        return W

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n)


def read_graph(path) -> Graph:
    """Header ``n m`` followed by ``m`` lines ``u v [w]`` (0-indexed, ``#`` comments allowed)."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty graph file")
    try:
        n, m = (int(t) for t in lines[0].split())
    except ValueError:
        raise ValueError(f"{path}: header must be 'n m'") from None
    edges = []
    for lineno, ln in enumerate(lines[1:], 2):
        parts = ln.split()
        if len(parts) not in (2, 3):
            raise ValueError(f"{path}: line {lineno}: expected 'u v' or 'u v w'")
        edges.append((int(parts[0]), int(parts[1]), float(parts[2]) if len(parts) == 3 else 1.0))
    if len(edges) != m:
        raise ValueError(f"{path}: header announces {m} edges, found {len(edges)}")
    return Graph.from_edges(n, edges)


def write_graph(path, g: Graph) -> None:
    with open(path, "w") as fh:
        fh.write(f"{g.n} {g.m}\n")
        for (u, v), w in zip(g.edges, g.weights):
            fh.write(f"{u} {v} {w:.17g}\n")


# -- Max-cut ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CutSolution:
    partition: np.ndarray
    cut_value: float


def cut_value(g: Graph, x) -> float:
    x = np.asarray(x, dtype=float)
    u, v = g.edges[:, 0], g.edges[:, 1]
    return float(0.5 * np.sum(g.weights * (1.0 - x[u] * x[v])))


def decode_cut(g: Graph, x) -> CutSolution:
    x = as_spins(x)
    return CutSolution(x, cut_value(g, x))


def maxcut_to_ising(g: Graph) -> IsingProblem:
    """``J = -W/2``, ``h = 0``, ``offset = -sum(w)/2`` so that ``H(x) = -cut(x)`` exactly."""
    return IsingProblem(-g.weight_matrix() / 2, np.zeros(g.n), -0.5 * float(g.weights.sum()))


def gnp_graph(n: int, density: float, weights="unit", seed: int = 0) -> Graph:
    """Each pair kept with probability ``density``.

    ``weights`` is ``"unit"`` or an inclusive integer range ``(lo, hi)``.
    """
    if not 0.0 <= density <= 1.0:
        raise ValueError("density must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < density
    edges = np.column_stack(iu)[keep]
    if isinstance(weights, str):
        if weights != "unit":
            raise ValueError(f"unknown weight distribution {weights!r}")
        w = np.ones(edges.shape[0])
    else:
        lo, hi = weights
        w = rng.integers(int(lo), int(hi) + 1, size=edges.shape[0]).astype(float)
    return Graph(n, edges, w)


def same_sign_density(n: int, r: int) -> float:
    pairs = n * (n - 1) / 2
    return (r * (r - 1) / 2 + (n - r) * (n - r - 1) / 2) / pairs if pairs else 0.0


def quadrature_split(n: int, density: float) -> int:
    """Number of ``-j`` entries whose same-sign pair fraction is closest to ``density``."""
    return min(range(n // 2 + 1), key=lambda r: (abs(same_sign_density(n, r) - density), r))


def quadrature_graph(n: int, density: float, seed: int = 0):
    """Unit-weight graph that the two-section machine represents exactly.

    With ``xi = eta`` and a relation matrix holding ``r`` entries ``-j``,
    pairs of opposite relation sign couple with ``2 xi^2 - 2 eta^2 = 0`` and
    same-sign pairs with ``4 xi^2``.  The edges are the same-sign pairs, so the
    reachable densities are roughly 0.5 to 1 (``r = 27`` of 100 gives 0.6).
    A dark-centre target (``sense="minimize"``) then minimises ``-cut``.

    Returns
    -------
    graph, knobs
    """
    r = quadrature_split(n, density)
    rng = np.random.default_rng(seed)
    signs = np.ones(n, dtype=int)
    signs[rng.permutation(n)[:r]] = -1
    amp = math.sqrt(0.125)  # 2 (xi^2 + eta^2) = 1/2 = w / 2
    knobs = Knobs(IntensityProfile(np.full(n, amp), np.full(n, amp)),
                  RelationMatrix.quadrature(signs), sense="minimize")
    same = signs[:, None] == signs[None, :]
    iu = np.triu_indices(n, 1)
    keep = same[iu]
    g = Graph(n, np.column_stack(iu)[keep], np.ones(int(keep.sum())))
    return g, knobs


def maxcut_to_knobs(g: Graph, sense: str = "auto"):
    """Fit quadrature knobs to the Max-cut Ising problem.

    A bright-centre machine realises ``J_eff = J``, a dark-centre one
    ``J_eff = -J``; with ``sense="auto"`` both are fitted and the closer one
    kept.  The report's residual says how faithfully the graph is represented.
    """
    J = maxcut_to_ising(g).coupling
    senses = ("maximize", "minimize") if sense == "auto" else (sense,)
    best = None
    for s in senses:
        target = J if s == "maximize" else -J
        prof, A, report = fit_intensities(target)
        if best is None or report.residual < best[1].residual:
            best = (Knobs(prof, A, s), report)
    return best


# -- vertex cover ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoverSolution:
    in_cover: np.ndarray
    cover_size: int
    uncovered_edges: int

    @property
    def is_valid(self) -> bool:
        return self.uncovered_edges == 0


def decode_cover(g: Graph, x) -> CoverSolution:
    """Spin up means the vertex is in the cover."""
    inc = as_spins(x) > 0
    u, v = g.edges[:, 0], g.edges[:, 1]
    uncovered = int(np.sum(~inc[u] & ~inc[v]))
    return CoverSolution(inc, int(inc.sum()), uncovered)


def vertexcover_to_ising(g: Graph, A_pen: float = 4.0, B_pen: float = 4.0) -> IsingProblem:
    """``H = A sum_E (1 - x_u)(1 - x_v) + B sum_v (1 + x_v)``.

    Each uncovered edge costs ``4 A`` and each cover vertex ``2 B``, so
    ``J_uv = -A`` on edges and ``h_v = A deg(v) - B``.  For a complete graph
    these are the coefficients ``A`` (uniform coupling) and ``B - (N-1) A``
    (field) that the three-section machine loads.
    """
    if A_pen <= 0 or B_pen <= 0:
        raise ValueError("penalty constants must be positive")
    J = -A_pen * (g.weight_matrix() != 0)
    h = A_pen * g.degrees() - B_pen
    return IsingProblem(J.astype(float), h.astype(float), A_pen * g.m + B_pen * g.n)


def vertexcover_to_knobs(g: Graph, A_pen: float = 4.0, B_pen: float = 4.0):
    """Three-section knobs for the vertex-cover Hamiltonian (dark-centre machine).

    Complete graphs use ``A = diag(j, ..., j)``, ``xi = eta = sqrt(A/4)`` so that
    ``2 (xi^2 + eta^2) = A``, and one fixed block whose ``sigma z`` makes the field
    coefficient ``B - (N-1) A``.  Other graphs go through the fitter and the
    field is matched in the least-squares sense.

    Returns
    -------
    knobs, report
    """
    problem = vertexcover_to_ising(g, A_pen, B_pen)
    n = g.n
    J_target = -problem.coupling  # minimize sense: machine energy is +I
    h_target = -problem.field
    if g.is_complete:
        amp = math.sqrt(A_pen / 4)
        xi = np.full(n, amp)
        eta = np.full(n, amp)
        relation = RelationMatrix(np.full(n, np.pi / 2))
    else:
        prof, relation, _ = fit_intensities(J_target)
        xi, eta = prof.xi, prof.eta
    c_re = xi + relation.entries.real * eta
    # h_eff = 2 c_re F with F = -sigma z
    denom = 2 * float(c_re @ c_re)
    F = float(c_re @ h_target) / denom if denom > 0 else 0.0
    sz = -F
    prof = IntensityProfile(xi, eta, np.array([abs(sz)]), np.array([1.0 if sz >= 0 else -1.0]))
    knobs = Knobs(prof, relation, sense="minimize")
    J_eff, h_eff = effective_field(prof, relation)
    D = J_eff - J_target
    residual = float(np.sqrt(np.linalg.norm(D) ** 2 + np.linalg.norm(h_eff - h_target) ** 2))
    return knobs, CouplingReport(J_eff, h_eff, residual)


# -- magnetization study ----------------------------------------------------------

def predicted_magnetization(n: int, negative_interactions: float) -> float:
    return math.sqrt(max(0.0, 1.0 - 4.0 * negative_interactions / n ** 2))


def magnetization_experiment(n: int, r_values, policy: FeedbackPolicy, seeds, xi: float = 1.0,
                             eta: float = 2.0, optics: OpticsConfig | None = None) -> list:
    """Final ``|m|`` of the negative-ratio construction for every ``(r, seed)``.

    Returns a list of row dicts with keys ``r, negative_interactions,
    negative_ratio, seed, abs_m, predicted``.
    """
    rows = []
    pairs = n * (n - 1) / 2
    for r in r_values:
        prof, A = negative_ratio_construction(n, r, xi, eta)
        knobs = Knobs(prof, A, "maximize")
        ni = negative_interaction_count(effective_coupling(prof, A))
        if policy.backend == "direct":
            backend = DirectBackend(knobs.effective_problem())
        elif policy.backend == "analytic":
            backend = AnalyticBackend(knobs)
        else:
            backend = OpticalBackend(knobs, optics or OpticsConfig.for_spins(n, block_size=1))
        for seed in seeds:
            trace = run(backend, policy, seed)
            rows.append(dict(r=r, negative_interactions=ni, negative_ratio=ni / pairs, seed=seed,
                             abs_m=abs(magnetization(trace.final)),
                             predicted=predicted_magnetization(n, ni)))
    return rows
