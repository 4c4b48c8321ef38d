"""Experiment drivers behind the ``qsim`` command line.

Every driver takes an :class:`ExperimentConfig`, writes CSV tables (plus a
``schema.json`` describing their columns) into the configured output
directory and returns a process exit status.  Runs are seeded explicitly, so
re-running a command reproduces its CSV files byte for byte apart from the
``elapsed_ms`` trace column.
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .annealer import (BACKENDS, FeedbackPolicy, TRACE_COLUMNS, make_backend, make_target_image, run)
from .coupling import IntensityProfile, Knobs
from .errors import ConfigurationError
from .lattice import RelationMatrix, hamiltonian, random_spins
from .optics import (DetectorConfig, Misalignment, OpticsConfig, center_index, center_intensity_analytic,
                     detect, phase_map, propagate, synthesize_field, write_pgm)
from .oracle import all_states, brute_force, naive_energies, state_histogram, state_key
from .problems import (Graph, cut_value, decode_cover, gnp_graph, magnetization_experiment,
                       maxcut_to_ising, maxcut_to_knobs, quadrature_graph, read_graph,
                       vertexcover_to_ising, vertexcover_to_knobs)

log = logging.getLogger(__name__)

EXPERIMENTS = ("maxcut", "vertexcover", "magnetization", "misalign", "validate-optics")
GRAPH_SOURCES = ("gnp", "quadrature", "complete", "file")
ORACLE_LIMIT = 24


# -- configuration ------------------------------------------------------------

@dataclass
class GraphSection:
    source: str = "gnp"
    file: str = ""
    n: int = 16
    density: float = 0.8
    weights: str = "unit"  # "unit" or an integer range "lo:hi"
    count: int = 1
    seed: int = 0


@dataclass
class PolicySection:
    backend: str = "direct"
    iterations: int = 1000
    flips: int = 1
    stop_window: int | None = 100
    stop_epsilon: float = 1e-3
    remeasure_baseline: bool = True
    temperature: float = 0.0


@dataclass
class OpticsSection:
    block_size: int = 1
    margin: int = 0
    pad_factor: int = 2
    misalignment: int = 0


@dataclass
class DetectorSection:
    noise_sigma: float = 0.005
    frames: int = 5
    bit_depth: int = 8
    quantize: bool = True


@dataclass
class TargetSection:
    steps: int = 3
    ring_width: int = 1
    radius: int | None = None


@dataclass
class RunsSection:
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    workers: int = 1
    plot: bool = False
    dump_pgm: bool = False
    timing: bool = True


@dataclass
class VertexCoverSection:
    a_pen: float = 4.0
    b_pen: float = 4.0


@dataclass
class MagnetizationSection:
    n: int = 400
    r_values: list[int] = field(default_factory=lambda: list(range(0, 201, 40)))
    xi: float = 1.0
    eta: float = 2.0


@dataclass
class MisalignSection:
    pixels: list[int] = field(default_factory=lambda: list(range(-30, 31, 5)))


@dataclass
class ValidateSection:
    cases: int = 1000
    max_n: int = 64
    tolerance: float = 1e-6
    rank_n: int = 10
    corrupt_normalization: bool = False  # negative control: scales every DFT value by 1 + 1e-3


SECTIONS = {
    "graph": GraphSection, "policy": PolicySection, "optics": OpticsSection,
    "detector": DetectorSection, "target": TargetSection, "runs": RunsSection,
    "vertexcover": VertexCoverSection, "magnetization": MagnetizationSection,
    "misalign": MisalignSection, "validation": ValidateSection,
}


@dataclass
class ExperimentConfig:
    """All knobs of one experiment, serialised as an INI file.

    The ``[experiment]`` section holds ``name`` and ``out``; every other
    section mirrors one of the ``*Section`` dataclasses.  Unknown sections or
    keys are rejected, and ``from_ini(cfg.to_ini()) == cfg``.
    """

    name: str
    out: str = "results"
    graph: GraphSection = field(default_factory=GraphSection)
    policy: PolicySection = field(default_factory=PolicySection)
    optics: OpticsSection = field(default_factory=OpticsSection)
    detector: DetectorSection = field(default_factory=DetectorSection)
    target: TargetSection = field(default_factory=TargetSection)
    runs: RunsSection = field(default_factory=RunsSection)
    vertexcover: VertexCoverSection = field(default_factory=VertexCoverSection)
    magnetization: MagnetizationSection = field(default_factory=MagnetizationSection)
    misalign: MisalignSection = field(default_factory=MisalignSection)
    validation: ValidateSection = field(default_factory=ValidateSection)

    @classmethod
    def defaults(cls, name: str) -> "ExperimentConfig":
        """Per-experiment defaults matching the reproduced studies."""
        if name not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {name!r}; expected one of {EXPERIMENTS}")
        cfg = cls(name)
        if name == "misalign":
            cfg.graph = GraphSection(source="quadrature", n=100, density=0.5)
            cfg.policy = PolicySection(backend="optical", iterations=76, stop_window=None)
            cfg.optics = OpticsSection(block_size=30, margin=30)
        elif name == "vertexcover":
            cfg.graph = GraphSection(source="complete", n=4)
            cfg.policy = PolicySection(backend="optical", iterations=200)
            cfg.optics = OpticsSection(block_size=10)
            cfg.runs = RunsSection(seeds=list(range(200)))
        elif name == "magnetization":
            # a window of a few sweeps: 100 proposals is a quarter sweep at N=400
            cfg.policy = PolicySection(iterations=20000, stop_window=2000)
        elif name == "validate-optics":
            cfg.runs = RunsSection(seeds=[0])
        return cfg

    def validate(self) -> "ExperimentConfig":
        if self.name not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.name!r}")
        if self.graph.source not in GRAPH_SOURCES:
            raise ConfigurationError(f"graph.source must be one of {GRAPH_SOURCES}")
        if self.graph.source == "file" and not self.graph.file:
            raise ConfigurationError("graph.source = file needs graph.file")
        if self.graph.count < 1:
            raise ConfigurationError("graph.count must be >= 1")
        parse_weights(self.graph.weights)
        if self.policy.backend not in BACKENDS:
            raise ConfigurationError(f"policy.backend must be one of {BACKENDS}")
        if not self.runs.seeds:
            raise ConfigurationError("runs.seeds must not be empty")
        if self.runs.workers < 1:
            raise ConfigurationError("runs.workers must be >= 1")
        self.feedback_policy()
        self.detector_config()
        return self

    # -- conversions to module objects
    def feedback_policy(self) -> FeedbackPolicy:
        p = self.policy
        return FeedbackPolicy(flips_per_proposal=p.flips, max_iterations=p.iterations,
                              stop_window=p.stop_window, stop_epsilon=p.stop_epsilon, backend=p.backend,
                              remeasure_baseline=p.remeasure_baseline, temperature=p.temperature)

    def detector_config(self) -> DetectorConfig:
        d = self.detector
        return DetectorConfig(d.bit_depth, d.frames, d.noise_sigma, d.quantize)

    def target_image(self):
        t = self.target
        return make_target_image(steps=t.steps, ring_width=t.ring_width, radius=t.radius)

    def optics_config(self, knobs: Knobs) -> OpticsConfig:
        o = self.optics
        return OpticsConfig.for_spins(knobs.n, knobs.intensities.n_fixed, block_size=o.block_size,
                                      margin=o.margin, pad_factor=o.pad_factor)

    # -- serialisation
    def to_ini(self) -> str:
        lines = ["[experiment]", f"name = {self.name}", f"out = {self.out}", ""]
        for sec in SECTIONS:
            lines.append(f"[{sec}]")
            obj = getattr(self, sec)
            for f in fields(obj):
                lines.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text: str, name: str | None = None) -> "ExperimentConfig":
        """Parse INI text on top of the defaults for its experiment.

        ``name`` (the command being run) wins if the file has no name; a file
        naming a different experiment is an error.
        """
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        parser.read_string(text)
        file_name = parser.get("experiment", "name", fallback=None)
        if name and file_name and file_name != name:
            raise ConfigurationError(f"config is for experiment {file_name!r}, not {name!r}")
        cfg = cls.defaults(file_name or name or "")
        for sec in parser.sections():
            for key, raw in parser.items(sec):
                cfg.set(f"{sec}.{key}", raw)
        return cfg.validate()

    @classmethod
    def load(cls, path, name: str | None = None) -> "ExperimentConfig":
        return cls.from_ini(Path(path).read_text(), name)

    def save(self, path) -> None:
        Path(path).write_text(self.to_ini())

    def set(self, dotted: str, raw: str) -> None:
        """Apply one ``section.key = value`` override given as text."""
        sec, _, key = dotted.partition(".")
        if sec == "experiment":
            if key == "name":
                if raw.strip() != self.name:
                    raise ConfigurationError("experiment.name cannot be changed by an override")
                return
            if key != "out":
                raise ConfigurationError(f"unknown key experiment.{key}")
            self.out = raw.strip()
            return
        if sec not in SECTIONS:
            raise ConfigurationError(f"unknown config section [{sec}]")
        obj = getattr(self, sec)
        types = {f.name: f.type for f in fields(obj)}
        if key not in types:
            raise ConfigurationError(f"unknown key {sec}.{key}")
        try:
            value = _parse_value(raw, types[key])
        except ValueError as exc:
            raise ConfigurationError(f"{sec}.{key}: {exc}") from None
        setattr(self, sec, replace(obj, **{key: value}))


def _format_value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return ", ".join(str(i) for i in v)
    return str(v)


def parse_int_list(raw: str) -> list:
    """Comma-separated integers; ``a:b`` or ``a:b:s`` expands like ``range``."""
    out = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        if ":" in item:
            parts = [int(p) for p in item.split(":")]
            if len(parts) not in (2, 3):
                raise ValueError(f"bad range {item!r}")
            out.extend(range(*parts))
        else:
            out.append(int(item))
    return out


def _parse_value(raw: str, kind: str):
    raw = raw.strip()
    if kind == "int | None":
        return None if raw.lower() == "none" else int(raw)
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "list[int]":
        return parse_int_list(raw)
    return raw


def parse_weights(spec: str):
    """``"unit"`` or ``"lo:hi"`` to the argument :func:`gnp_graph` expects."""
    if spec == "unit":
        return "unit"
    try:
        lo, hi = (int(p) for p in spec.split(":"))
    except ValueError:
        raise ConfigurationError(f"graph.weights must be 'unit' or 'lo:hi', got {spec!r}") from None
    if lo > hi:
        raise ConfigurationError("graph.weights range is empty")
    return (lo, hi)


# -- output helpers -------------------------------------------------------------

SCHEMA = {
    "trace": {
        "iteration": "proposal number, starting at 1",
        "objective": "accepted objective after the proposal (image distance or Ising energy)",
        "energy": "Ising energy of the current spins, empty if unknown",
        "cut_value": "cut of the current partition, empty if not a Max-cut run",
        "accepted": "1 if the proposal was accepted",
        "elapsed_ms": "wall-clock time since the run started; excluded from determinism checks",
    },
    "summary.csv": {
        "graph": "graph index", "seed": "run seed", "n": "node count", "edges": "edge count",
        "density": "edge density", "backend": "evaluation backend",
        "iterations": "proposals made", "plateau_iteration": "iteration the plateau rule fired, empty if it did not",
        "initial_cut": "cut of the random initial partition", "final_cut": "cut of the final partition",
        "best_cut": "best cut seen during the run", "optimum": "brute-force maximum cut (n <= 24), else empty",
        "deviation": "(optimum - best_cut) / optimum, empty without an oracle",
        "fit_residual": "Frobenius residual of the optical coupling fit, empty on the direct backend",
    },
    "band.csv": {
        "iteration": "iteration (0 = initial state)", "runs": "runs contributing",
        "mean": "mean cut value", "lower": "lower 95% confidence bound of the mean",
        "upper": "upper 95% confidence bound of the mean", "minimum": "smallest cut", "maximum": "largest cut",
    },
    "misalign.csv": {
        "pixels": "signed misalignment m", "seed": "run seed", "cut": "final cut value",
        "baseline_cut": "final cut of the same seed at m = 0", "error": "|cut - baseline_cut| / baseline_cut",
    },
    "misalign_summary.csv": {
        "pixels": "signed misalignment m", "runs": "seeds", "mean_error": "mean relative cut error",
        "std_error": "population standard deviation of the error", "mean_cut": "mean final cut",
    },
    "histogram.csv": {
        "state": "final spins, '+' = up (in cover)", "count": "runs ending here", "frequency": "count / runs",
        "energy": "vertex-cover Hamiltonian", "is_ground": "1 if an oracle ground state, empty without oracle",
        "cover_size": "vertices in the cover", "valid": "1 if every edge is covered",
        "uncovered_edges": "edges with neither endpoint in the cover",
    },
    "finals.csv": {
        "seed": "run seed", "state": "final spins", "energy": "vertex-cover Hamiltonian",
        "cover_size": "vertices in the cover", "valid": "1 if every edge is covered", "iterations": "proposals made",
    },
    "vertexcover_summary.csv": {"key": "quantity", "value": "value"},
    "magnetization.csv": {
        "r": "number of -j relation entries", "negative_interactions": "pairs with negative coupling",
        "negative_ratio": "negative_interactions / pairs", "seed": "run seed",
        "abs_m": "|magnetization| of the final state", "predicted": "sqrt(1 - 4 NI / N^2)",
    },
    "magnetization_summary.csv": {
        "r": "number of -j relation entries", "negative_ratio": "negative_interactions / pairs",
        "predicted": "sqrt(1 - 4 NI / N^2)", "runs": "seeds", "median_abs_m": "median final |m|",
        "mean_abs_m": "mean final |m|", "min_abs_m": "smallest final |m|", "max_abs_m": "largest final |m|",
    },
    "validate_cases.csv": {
        "case": "case index", "n": "spins", "n_fixed": "fixed third-section blocks", "block_size": "pixels per block side",
        "pad_factor": "zero-padding factor", "dft": "centre pixel of the simulated camera plane",
        "analytic": "block_area^2 * |sum c x + F|^2", "rel_error": "|dft - analytic| / analytic", "ok": "1 if within tolerance",
    },
}


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_schema(out: Path, names) -> None:
    doc = {name: SCHEMA[name] for name in names}
    if "trace" in doc:
        doc["trace"] = {c: SCHEMA["trace"][c] for c in TRACE_COLUMNS}
    (out / "schema.json").write_text(json.dumps(doc, indent=2) + "\n")


def _plot_svg(path: Path, draw) -> None:
    """Render with matplotlib if available; the CSV files are the contract."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        warnings.warn("matplotlib is not installed; skipping plot", RuntimeWarning, stacklevel=2)
        return
    try:
        fig, ax = plt.subplots(figsize=(6, 4))
        draw(ax)
        fig.tight_layout()
        # fixed metadata keeps reruns byte-identical
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    except Exception as exc:  # plotting must never lose the CSV results
        warnings.warn(f"plot {path.name} failed: {exc}", RuntimeWarning, stacklevel=2)


def _map(fn, tasks, workers: int):
    """Ordered map, optionally over a process pool."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks))


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    return out


# -- graphs and backends ------------------------------------------------------

def build_graphs(cfg: ExperimentConfig) -> list:
    """``[(graph, knobs or None), ...]`` from the ``[graph]`` section."""
    gs = cfg.graph
    if gs.source == "file":
        try:
            return [(read_graph(gs.file), None)]
        except OSError as exc:
            raise OSError(f"cannot read graph file {gs.file!r}: {exc.strerror or exc}") from exc
    out = []
    for i in range(gs.count):
        if gs.source == "quadrature":
            out.append(quadrature_graph(gs.n, gs.density, seed=gs.seed + i))
        elif gs.source == "complete":
            out.append((Graph.complete(gs.n), None))
        else:
            out.append((gnp_graph(gs.n, gs.density, parse_weights(gs.weights), seed=gs.seed + i), None))
    return out


def _backend(cfg: ExperimentConfig, problem, knobs, misalignment: int | None = None):
    policy = cfg.feedback_policy()
    m = cfg.optics.misalignment if misalignment is None else misalignment
    optics = cfg.optics_config(knobs) if knobs is not None else None
    mis = Misalignment(m) if m else None
    if mis is not None and optics is not None:
        mis.check(optics)
    return make_backend(policy, problem, knobs, optics, cfg.target_image(), cfg.detector_config(), mis), optics


def _dump_images(out: Path, prefix: str, knobs: Knobs, optics: OpticsConfig, trace, m: int) -> None:
    pgm = out / "pgm"
    pgm.mkdir(exist_ok=True)
    mis = Misalignment(m) if m else None
    prof, A = knobs.intensities, knobs.relation
    for label, x in (("initial", trace.initial), ("final", trace.final)):
        F = synthesize_field(x, A, prof, optics, mis)
        write_pgm(pgm / f"{prefix}_{label}_phase.pgm", phase_map(F))
        write_pgm(pgm / f"{prefix}_{label}_ccd.pgm", propagate(F, optics.pad_factor))


# -- maxcut ---------------------------------------------------------------------

def _maxcut_task(task):
    cfg, graph, knobs, seed, m = task
    problem = maxcut_to_ising(graph)
    backend, _ = _backend(cfg, problem, knobs, m)
    return run(backend, cfg.feedback_policy(), seed, problem=problem, graph=graph)


def _maxcut_knobs(cfg: ExperimentConfig, graph: Graph, knobs):
    """Knobs for optical backends; the fitter's residual is reported alongside."""
    if cfg.policy.backend == "direct":
        return None, None
    if knobs is not None:
        return knobs, 0.0
    knobs, report = maxcut_to_knobs(graph)
    return knobs, report.residual


def cmd_maxcut(cfg: ExperimentConfig) -> int:
    """Per-seed traces, a per-run summary and, for many runs, a confidence band."""
    out = _outdir(cfg)
    traces_dir = out / "traces"
    traces_dir.mkdir(exist_ok=True)
    seeds = cfg.runs.seeds
    rows, curves = [], []
    for gi, (graph, knobs) in enumerate(build_graphs(cfg)):
        knobs, residual = _maxcut_knobs(cfg, graph, knobs)
        optimum = None
        if graph.n <= ORACLE_LIMIT:
            optimum = -brute_force(maxcut_to_ising(graph)).min_energy
        tasks = [(cfg, graph, knobs, s, None) for s in seeds]
        for seed, trace in zip(seeds, _map(_maxcut_task, tasks, cfg.runs.workers)):
            with open(traces_dir / f"graph{gi:03d}_seed{seed}.csv", "w", newline="") as fh:
                trace.write_csv(fh, include_timing=cfg.runs.timing)
            start = cut_value(graph, trace.initial)
            curve = np.concatenate([[start], trace.cut_values()])
            curves.append(curve)
            best = float(curve.max())
            dev = None if optimum is None else ((optimum - best) / optimum if optimum else 0.0)
            rows.append([gi, seed, graph.n, graph.m, graph.density, cfg.policy.backend, trace.iterations,
                         trace.iterations if trace.stopped_on_plateau else None, start, float(curve[-1]),
                         best, optimum, dev, residual])
            if cfg.runs.dump_pgm and knobs is not None and cfg.policy.backend == "optical":
                _dump_images(out, f"graph{gi:03d}_seed{seed}", knobs, cfg.optics_config(knobs), trace,
                             cfg.optics.misalignment)
    header = list(SCHEMA["summary.csv"])
    _write_csv(out / "summary.csv", header, rows)
    written = ["trace", "summary.csv"]
    if len(curves) > 1:
        _write_csv(out / "band.csv", list(SCHEMA["band.csv"]), confidence_band(curves))
        written.append("band.csv")
    _write_schema(out, written)
    if cfg.runs.plot:
        band = confidence_band(curves)

        def draw(ax):
            it = [b[0] for b in band]
            ax.plot(it, [b[2] for b in band], label="mean cut")
            if len(curves) > 1:
                ax.fill_between(it, [b[3] for b in band], [b[4] for b in band], alpha=0.3, label="95% CI")
            ax.set_xlabel("iteration")
            ax.set_ylabel("cut value")
            ax.legend()

        _plot_svg(out / "cut_vs_iteration.svg", draw)
    best = max(r[10] for r in rows)
    devs = [r[12] for r in rows if r[12] is not None]
    msg = f"maxcut: {len(rows)} runs, best cut {best:g}"
    if devs:
        msg += f", worst deviation vs oracle {max(devs):.4f}"
    print(msg)
    return 0


def confidence_band(curves) -> list:
    """Rows ``(iteration, runs, mean, lower, upper, min, max)``; short runs hold their last value."""
    length = max(len(c) for c in curves)
    M = np.array([np.concatenate([c, np.full(length - len(c), c[-1])]) for c in curves])
    k = M.shape[0]
    mean = M.mean(axis=0)
    if k > 1:
        half = stats.t.ppf(0.975, k - 1) * M.std(axis=0, ddof=1) / math.sqrt(k)
    else:
        half = np.zeros(length)
    return [(i, k, mean[i], mean[i] - half[i], mean[i] + half[i], M[:, i].min(), M[:, i].max())
            for i in range(length)]


# -- misalignment -------------------------------------------------------------

def cmd_misalign(cfg: ExperimentConfig) -> int:
    """Fixed-budget runs per misalignment ``m``; error against the same seed at ``m = 0``."""
    if cfg.policy.backend != "optical":
        raise ConfigurationError("the misalignment sweep needs the optical backend")
    out = _outdir(cfg)
    graph, knobs = build_graphs(cfg)[0]
    if knobs is None:
        knobs, _ = maxcut_to_knobs(graph)
    pixels = sorted(set(cfg.misalign.pixels) | {0})
    seeds = cfg.runs.seeds
    finals = {}
    for m in pixels:
        tasks = [(cfg, graph, knobs, s, m) for s in seeds]
        finals[m] = [cut_value(graph, tr.final) for tr in _map(_maxcut_task, tasks, cfg.runs.workers)]
    rows, summary = [], []
    base = np.array(finals[0])
    for m in pixels:
        cuts = np.array(finals[m])
        err = np.abs(cuts - base) / np.where(base != 0, np.abs(base), 1.0)
        rows.extend([m, s, c, b, e] for s, c, b, e in zip(seeds, cuts, base, err))
        summary.append([m, len(seeds), float(err.mean()), float(err.std()), float(cuts.mean())])
    _write_csv(out / "misalign.csv", list(SCHEMA["misalign.csv"]), rows)
    _write_csv(out / "misalign_summary.csv", list(SCHEMA["misalign_summary.csv"]), summary)
    _write_schema(out, ["misalign.csv", "misalign_summary.csv"])
    if cfg.runs.plot:
        def draw(ax):
            ax.errorbar([s[0] for s in summary], [100 * s[2] for s in summary],
                        yerr=[100 * s[3] for s in summary], marker="o", capsize=3)
            ax.set_xlabel("misalignment (pixels)")
            ax.set_ylabel("cut error (%)")

        _plot_svg(out / "misalign.svg", draw)
    for s in summary:
        print(f"misalign m={s[0]:+d}: mean error {100 * s[2]:.3f}% (std {100 * s[3]:.3f}%)")
    return 0


# -- vertex cover ---------------------------------------------------------------

def _cover_task(task):
    cfg, graph, knobs, seed = task
    problem = vertexcover_to_ising(graph, cfg.vertexcover.a_pen, cfg.vertexcover.b_pen)
    backend, _ = _backend(cfg, problem, knobs)
    return run(backend, cfg.feedback_policy(), seed, problem=problem)


def cmd_vertexcover(cfg: ExperimentConfig) -> int:
    """Histogram of final states over seeds, checked against the oracle when small."""
    out = _outdir(cfg)
    graph, _ = build_graphs(cfg)[0]
    a, b = cfg.vertexcover.a_pen, cfg.vertexcover.b_pen
    problem = vertexcover_to_ising(graph, a, b)
    knobs, residual = None, None
    if cfg.policy.backend != "direct":
        knobs, report = vertexcover_to_knobs(graph, a, b)
        residual = report.residual
    ground = None
    if graph.n <= ORACLE_LIMIT:
        truth = brute_force(problem)
        ground = {state_key(s) for s in truth.ground_states}
    seeds = cfg.runs.seeds
    traces = _map(_cover_task, [(cfg, graph, knobs, s) for s in seeds], cfg.runs.workers)
    finals = [tr.final for tr in traces]
    by_key = {state_key(x): x for x in finals}

    final_rows = []
    for seed, tr in zip(seeds, traces):
        sol = decode_cover(graph, tr.final)
        final_rows.append([seed, state_key(tr.final), hamiltonian(problem, tr.final), sol.cover_size,
                           sol.is_valid, tr.iterations])
    hist_rows = []
    for key, freq in state_histogram(finals):
        x = by_key[key]
        sol = decode_cover(graph, x)
        hist_rows.append([key, round(freq * len(finals)), freq, hamiltonian(problem, x),
                          None if ground is None else key in ground, sol.cover_size, sol.is_valid,
                          sol.uncovered_edges])
    _write_csv(out / "histogram.csv", list(SCHEMA["histogram.csv"]), hist_rows)
    _write_csv(out / "finals.csv", list(SCHEMA["finals.csv"]), final_rows)

    valid = [r for r in final_rows if r[4]]
    best = min(valid, key=lambda r: (r[3], r[2])) if valid else min(final_rows, key=lambda r: r[2])
    summary = [("runs", len(finals)), ("distinct_states", len(hist_rows)),
               ("modal_state", hist_rows[0][0]), ("modal_frequency", hist_rows[0][2]),
               ("best_cover_size", best[3]), ("best_cover_valid", best[4]), ("fit_residual", residual)]
    if ground is not None:
        ground_freq = sum(r[2] for r in hist_rows if r[4])
        summary += [("oracle_min_energy", truth.min_energy), ("oracle_degeneracy", truth.degeneracy),
                    ("oracle_ground_states", " ".join(sorted(ground))), ("ground_frequency", ground_freq),
                    ("oracle_cover_size", decode_cover(graph, truth.ground_states[0]).cover_size)]
    _write_csv(out / "vertexcover_summary.csv", ["key", "value"], summary)
    _write_schema(out, ["histogram.csv", "finals.csv", "vertexcover_summary.csv"])
    if cfg.runs.plot:
        top = hist_rows[:16]

        def draw(ax):
            ax.bar(range(len(top)), [r[2] for r in top])
            ax.set_xticks(range(len(top)), [r[0] if len(r[0]) <= 8 else f"#{i}" for i, r in enumerate(top)],
                          rotation=90)
            ax.set_ylabel("probability")

        _plot_svg(out / "histogram.svg", draw)
    if cfg.runs.dump_pgm and knobs is not None and cfg.policy.backend == "optical":
        for seed, tr in zip(seeds, traces):
            _dump_images(out, f"seed{seed}", knobs, cfg.optics_config(knobs), tr, cfg.optics.misalignment)
    print(f"vertexcover: modal state {hist_rows[0][0] if graph.n <= 64 else '(long)'} "
          f"with frequency {hist_rows[0][2]:.3f}; best cover size {best[3]} (valid={bool(best[4])})")
    return 0


# -- magnetization ------------------------------------------------------------

def _magnetization_task(task):
    cfg, r = task
    ms = cfg.magnetization
    optics = None
    if cfg.policy.backend == "optical":
        optics = OpticsConfig.for_spins(ms.n, block_size=cfg.optics.block_size, pad_factor=cfg.optics.pad_factor)
    return magnetization_experiment(ms.n, [r], cfg.feedback_policy(), cfg.runs.seeds, ms.xi, ms.eta, optics)


def cmd_magnetization(cfg: ExperimentConfig) -> int:
    """Final ``|m|`` of the negative-ratio construction against the closed-form prediction."""
    out = _outdir(cfg)
    tables = _map(_magnetization_task, [(cfg, r) for r in cfg.magnetization.r_values], cfg.runs.workers)
    keys = list(SCHEMA["magnetization.csv"])
    rows = [[row[k] for k in keys] for table in tables for row in table]
    summary = []
    for table in tables:
        m = np.array([row["abs_m"] for row in table])
        t0 = table[0]
        summary.append([t0["r"], t0["negative_ratio"], t0["predicted"], len(m), float(np.median(m)),
                        float(m.mean()), float(m.min()), float(m.max())])
    _write_csv(out / "magnetization.csv", keys, rows)
    _write_csv(out / "magnetization_summary.csv", list(SCHEMA["magnetization_summary.csv"]), summary)
    _write_schema(out, ["magnetization.csv", "magnetization_summary.csv"])
    if cfg.runs.plot:
        def draw(ax):
            ratio = np.linspace(0, 0.5, 101)
            ax.plot(ratio, np.sqrt(np.clip(1 - 2 * ratio, 0, None)), label="prediction")
            ax.plot([s[1] for s in summary], [s[4] for s in summary], "o", label="median |m|")
            ax.set_xlabel("negative interaction ratio")
            ax.set_ylabel("|m|")
            ax.legend()

        _plot_svg(out / "magnetization.svg", draw)
    for s in summary:
        print(f"magnetization r={s[0]}: median |m| {s[4]:.4f}, predicted {s[2]:.4f}")
    return 0


# -- optics validation ----------------------------------------------------------

def _random_case(rng: np.random.Generator, max_n: int):
    n = int(rng.integers(1, max_n + 1))
    n_fixed = int(rng.integers(0, 4))
    prof = IntensityProfile(rng.uniform(0, 1, n), rng.uniform(0, 1, n), rng.uniform(0, 1, n_fixed),
                            rng.choice([-1.0, 1.0], n_fixed))
    signs = rng.choice([-1, 1], n)
    x = random_spins(n, rng)
    block = int(rng.integers(1, 4))
    pad = int(rng.integers(1, 4))
    return prof, signs, x, block, pad


def _centre_dft(x, A, prof, cfg: OpticsConfig, scale: float = 1.0) -> float:
    I = propagate(synthesize_field(x, A, prof, cfg), cfg.pad_factor)
    return float(I[center_index(I.shape)]) * scale


def cmd_validate_optics(cfg: ExperimentConfig) -> int:
    """Camera-plane centre pixel versus the closed form, plus an exhaustive ordering check.

    Exit status 1 if any case breaches ``validation.tolerance`` or the ordering check fails.
    """
    out = _outdir(cfg)
    v = cfg.validation
    rng = np.random.default_rng(cfg.runs.seeds[0])
    scale = 1.0 + 1e-3 if v.corrupt_normalization else 1.0
    rows, failures = [], []
    for case in range(v.cases):
        prof, signs, x, block, pad = _random_case(rng, v.max_n)
        A = RelationMatrix.quadrature(signs)
        oc = OpticsConfig.for_spins(prof.n, prof.n_fixed, block_size=block, pad_factor=pad)
        dft = _centre_dft(x, A, prof, oc, scale)
        analytic = oc.block_area ** 2 * center_intensity_analytic(x, A, prof)
        bound = oc.block_area ** 2 * (prof.xi.sum() + prof.eta.sum() + prof.sigma.sum()) ** 2
        # guard the ratio for a centre that happens to be (nearly) dark
        rel = abs(dft - analytic) / max(analytic, 1e-12 * bound)
        ok = rel <= v.tolerance
        rows.append([case, prof.n, prof.n_fixed, block, pad, dft, analytic, rel, ok])
        if not ok:
            failures.append(dict(case=case, rel_error=rel, dft=dft, analytic=analytic, block_size=block,
                                 pad_factor=pad, xi=prof.xi.tolist(), eta=prof.eta.tolist(),
                                 sigma=prof.sigma.tolist(), z=prof.z.tolist(), signs=signs.tolist(),
                                 spins=x.tolist()))
    _write_csv(out / "validate_cases.csv", list(SCHEMA["validate_cases.csv"]), rows)

    rank_ok, rank_msg = _rank_check(rng, v.rank_n, cfg.optics.pad_factor, scale)
    (out / "validate_failures.json").write_text(json.dumps(failures, indent=1) + "\n")
    max_rel = max((r[7] for r in rows), default=0.0)
    passed = not failures and rank_ok
    report = [f"equivalence: {len(rows)} cases, max relative error {max_rel:.3e}, "
              f"tolerance {v.tolerance:g}, failures {len(failures)}",
              f"ordering: {rank_msg}",
              "PASS" if passed else "FAIL"]
    for f in failures[:20]:
        report.append(f"  case {f['case']}: n={len(f['spins'])} block={f['block_size']} pad={f['pad_factor']} "
                      f"dft={f['dft']!r} analytic={f['analytic']!r} rel={f['rel_error']:.3e}")
    (out / "validate_report.txt").write_text("\n".join(report) + "\n")
    _write_schema(out, ["validate_cases.csv"])
    print("\n".join(report))
    return 0 if passed else 1


def _rank_check(rng: np.random.Generator, n: int, pad: int, scale: float):
    """Sorting all 2^n states by simulated centre intensity must sort the Ising energy."""
    prof = IntensityProfile(rng.uniform(0.2, 1, n), rng.uniform(0.2, 1, n), np.array([rng.uniform(0.2, 1)]),
                            np.array([1.0]))
    A = RelationMatrix.quadrature(rng.choice([-1, 1], n))
    knobs = Knobs(prof, A, "maximize")
    oc = OpticsConfig.for_spins(n, 1, block_size=2, pad_factor=pad)
    det = DetectorConfig(noise_sigma=0.0, quantize=False)
    states = all_states(n)
    measured = np.empty(len(states))
    for i, x in enumerate(states):
        I = detect(propagate(synthesize_field(x, A, prof, oc), pad), config=det).values
        measured[i] = I[center_index(I.shape)] * scale
    energies = naive_energies(knobs.effective_problem())
    order = np.argsort(-measured, kind="stable")
    e = energies[order]
    tol = 1e-9 * max(1.0, float(np.abs(energies).max()))
    bad = int(np.sum(np.diff(e) < -tol))
    msg = f"{len(states)} states of n={n}, {bad} out-of-order neighbours"
    return bad == 0, msg


COMMANDS = {
    "maxcut": cmd_maxcut,
    "vertexcover": cmd_vertexcover,
    "magnetization": cmd_magnetization,
    "misalign": cmd_misalign,
    "validate-optics": cmd_validate_optics,
}


def run_experiment(cfg: ExperimentConfig) -> int:
    cfg.validate()
    log.info("running %s into %s", cfg.name, cfg.out)
    return COMMANDS[cfg.name](cfg)
