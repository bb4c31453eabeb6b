"""Alternating joint optimization and the Monte-Carlo experiment harness.

One transmission cycle: sense both RISs once (arcs are frozen afterwards),
then alternate transmit beamforming, RIS-1 phases and RIS-2 phases until the
min-SINR gains less than ``tolerance`` or ``max_outer_iters`` is reached.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import phaseopt
from .config import SystemConfig, watts_to_dbm
from .phaseopt import CodebookTooLarge, PhaseConfig
from .scenario import RUN_STREAM, Scenario, make_scenario, synth_channels
from .sensing import FeasibleSetTable, sense
from .txbf import INFEASIBLE, BeamSolution, combine_channels, optimize_txbf, sinr_per_user

ALGORITHMS = ("gs", "1d", "auto", "continuous", "quantized")


class TransmitInfeasible(RuntimeError):
    """The beamforming subproblem was infeasible even at ``tau_min``."""


@dataclass
class IterationRecord:
    iteration: int
    tau_lifted: float  # Alg. 1 bisection value (exact relaxation)
    tau_beams: float  # extracted-beam min-SINR before the phase updates
    tau: float  # extracted-beam min-SINR after the phase updates
    sinr: np.ndarray
    phase_methods: tuple
    wall_ms: float
    sdr_iters: int
    gs_candidates: int
    od_evals: int
    rank1_failures: int


@dataclass
class RunTrace:
    records: list = field(default_factory=list)
    termination: str = ""  # "converged" | "iteration cap"

    def __len__(self):
        return len(self.records)

    @property
    def taus(self) -> list:
        return [r.tau for r in self.records]

    @property
    def lifted_taus(self) -> list:
        return [r.tau_lifted for r in self.records]

    def total(self, name: str) -> int:
        return int(sum(getattr(r, name) for r in self.records))


@dataclass
class JointResult:
    beams: BeamSolution
    phases: list  # PhaseConfig per active RIS
    trace: RunTrace
    sinr: np.ndarray
    tables: list
    algorithm: str

    @property
    def tau(self) -> float:
        return float(self.sinr.min())


def run_rng(master_seed, cell_index=0, seed_index=0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(
        [int(master_seed), RUN_STREAM, int(cell_index), int(seed_index)]))


def choose_phase_method(table: FeasibleSetTable, config: SystemConfig) -> str:
    """``gs`` when the codebook fits the budget (and ``N < N_th`` if set), else ``1d``."""
    if config.size_threshold and table.n_elements >= config.size_threshold:
        return "1d"
    return "gs" if table.cardinality() <= config.enumeration_budget else "1d"


def _phases_of(configs):
    return [c.phases for c in configs]


def _solve_beams(channels, phases, config, rng, record_timing):
    sol = optimize_txbf(combine_channels(channels, *_phases_of(phases)), config, rng,
                        record_timing=record_timing)
    if sol.verdict == INFEASIBLE:
        raise TransmitInfeasible(
            f"transmit beamforming infeasible at tau_min={config.tau_min} "
            f"({sol.solver_failures} solver failures in {len(sol.steps)} steps)")
    return sol


def _alternate(channels, config, phases, step_ris, rng, record_timing, start_iter=0):
    """Shared alternation loop; ``step_ris(i, beams, phases)`` returns a PhaseOptResult."""
    trace = RunTrace()
    prev = -np.inf
    sol = None
    for l in range(1, config.max_outer_iters + 1):
        t0 = time.perf_counter()
        sol = _solve_beams(channels, phases, config, rng, record_timing)
        methods, gs_count, od_count = [], 0, 0
        for i in range(channels.n_ris):
            res = step_ris(i, sol.beams, phases)
            phases[i] = res.config
            methods.append(res.method)
            gs_count += res.evaluations if res.method == "gs" else 0
            od_count += res.evaluations if res.method != "gs" else 0
        combined = combine_channels(channels, *_phases_of(phases))
        sinr = sinr_per_user(combined, sol.beams, config.noise_power_user)
        tau = float(sinr.min())
        wall = (time.perf_counter() - t0) * 1e3 if record_timing else 0.0
        trace.records.append(IterationRecord(start_iter + l, sol.tau_lifted, sol.tau, tau, sinr,
                                             tuple(methods), wall, sol.solver_iters, gs_count,
                                             od_count, sol.rank1_failures))
        if tau - prev < config.tolerance:
            trace.termination = "converged"
            break
        prev = tau
    else:
        trace.termination = "iteration cap"
    return sol, phases, trace


def joint_optimize(scenario: Scenario, config: SystemConfig, algorithm: str = "auto", *,
                   rng=None, record_timing: bool = False) -> JointResult:
    """Sensing-based joint beamforming for one deployment.

    ``gs``/``1d``/``auto`` search the sensing-narrowed arcs (``gs`` falls back
    to ``1d`` when the codebook exceeds the budget; ``auto`` also honours
    ``size_threshold``). ``continuous`` runs the same alternation with
    continuous phases; ``quantized`` rounds the continuous result to the grid
    and re-solves the beams once.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")
    rng = np.random.default_rng(rng)
    channels = synth_channels(scenario, config)
    tables = [r.table for r in sense(scenario, config)]
    phases = [PhaseConfig.from_indices(t.representative(), config.bits) for t in tables]

    if algorithm in ("continuous", "quantized"):
        cont = [PhaseConfig(p.phases.copy()) for p in phases]

        def step(i, beams, current):
            return phaseopt.continuous_baseline(channels, beams, _phases_of(current), config, i,
                                                init=current[i].phases)

        sol, cont, trace = _alternate(channels, config, cont, step, rng, record_timing)
        if algorithm == "continuous":
            return JointResult(sol, cont, trace, trace.records[-1].sinr, tables, algorithm)
        quant = [phaseopt.quantize_baseline(p, config.bits) for p in cont]
        t0 = time.perf_counter()
        sol = _solve_beams(channels, quant, config, rng, record_timing)
        sinr = sinr_per_user(combine_channels(channels, *_phases_of(quant)), sol.beams,
                             config.noise_power_user)
        trace.records.append(IterationRecord(
            len(trace) + 1, sol.tau_lifted, sol.tau, float(sinr.min()), sinr, ("quantize",),
            (time.perf_counter() - t0) * 1e3 if record_timing else 0.0, sol.solver_iters, 0, 0,
            sol.rank1_failures))
        return JointResult(sol, quant, trace, sinr, tables, algorithm)

    def step(i, beams, current):
        method = "1d" if algorithm == "1d" else choose_phase_method(tables[i], config)
        if method == "gs":
            try:
                return phaseopt.gs_optimize(channels, beams, _phases_of(current), tables[i], config, i)
            except CodebookTooLarge:
                pass
        return phaseopt.od_optimize(channels, beams, _phases_of(current), tables[i], config, i,
                                    init=current[i].indices)

    sol, phases, trace = _alternate(channels, config, phases, step, rng, record_timing)
    return JointResult(sol, phases, trace, trace.records[-1].sinr, tables, algorithm)


# -- complexity counters -----------------------------------------------------

def count_operations(result: JointResult) -> dict:
    """Search effort against its analytic bounds."""
    sizes = [int(t.length.sum()) for t in result.tables]
    return {
        "gs_candidates": result.trace.total("gs_candidates"),
        "od_evals": result.trace.total("od_evals"),
        "sdr_total_iters": result.trace.total("sdr_iters"),
        "codebook_sizes": [t.cardinality() for t in result.tables],
        "arc_size_sums": sizes,
        "outer_iters": len(result.trace),
    }


# -- experiments -------------------------------------------------------------

RESULT_COLUMNS = (
    "scenario_seed", "topology", "algorithm", "b", "N", "N_t", "K", "p_max_dbm", "outer_iters",
    "tau_lifted", "tau_extracted", "min_sinr", "mean_sinr", "gs_candidates", "od_evals",
    "sdr_total_iters", "wall_ms", "rank1_failures", "status",
)
TRACE_KEYS = ("scenario_seed", "topology", "algorithm", "b", "N", "N_t", "p_max_dbm")
RUN_TRACE_COLUMNS = TRACE_KEYS + ("iteration", "tau_lifted", "tau")
AGGREGATE_STATS = ("mean", "median", "p10", "p90")
CELL_KEYS = ("topology", "algorithm", "b", "N", "N_t", "K", "p_max_dbm")
SWEEP_AXES = ("n_tx_antennas", "p_max_dbm", "bits", "n_ris_elements", "algorithm", "topology")


@dataclass
class ExperimentSpec:
    """Sweep description: the product of ``axes``, optionally crossed with explicit ``cells``.

    Each explicit cell is a dict of axis settings that overrides the grid
    values, which is how non-rectangular comparisons (e.g. several
    algorithms at different ``b`` plus a single-RIS reference) are written.
    """

    base: SystemConfig
    axes: dict = field(default_factory=dict)  # axis name -> list of values
    seeds: int = 20
    master_seed: int = 0
    out_dir: str | None = None
    record_timing: bool = False
    explicit_cells: list = field(default_factory=list)
    plot: str = ""

    def __post_init__(self):
        if self.seeds < 1:
            raise ValueError("seeds must be >= 1")
        names = list(self.axes) + [k for c in self.explicit_cells for k in c]
        bad = sorted({a for a in names if a not in SWEEP_AXES})
        if bad:
            raise ValueError(f"unknown sweep axes {bad}; expected a subset of {SWEEP_AXES}")
        if not (self.axes or self.explicit_cells) or any(len(v) == 0 for v in self.axes.values()):
            raise ValueError("sweep grid is empty")

    def settings(self) -> list:
        names = list(self.axes)
        grid = [dict(zip(names, combo)) for combo in itertools.product(*(self.axes[n] for n in names))]
        if not self.explicit_cells:
            return grid
        return [{**g, **cell} for cell in self.explicit_cells for g in grid]

    def cells(self) -> list:
        """Each cell: ``(config, algorithm)`` in declaration order."""
        return [cell_config(self.base, s) for s in self.settings()]

    def scenario_seed(self, seed_index: int) -> int:
        return int(np.random.SeedSequence([int(self.master_seed), int(seed_index)]).generate_state(1)[0])


_AXIS_TYPES = {"n_tx_antennas": int, "p_max_dbm": float, "bits": int, "n_ris_elements": int,
               "algorithm": str, "topology": str}


def _axis_values(name, text):
    return [_AXIS_TYPES[name](v) for v in text.replace(",", " ").split()]


def loads_spec(text: str, out_dir=None) -> ExperimentSpec:
    """Parse the sweep spec format.

    Same ``key = value`` lines as config files, plus ``seeds``,
    ``master_seed``, ``plot``, ``sweep.<axis> = v1, v2, ...`` and repeatable
    ``cell = axis=value axis=value``. Remaining keys override the config.
    """
    from .config import ConfigError, config_overrides, parse_pairs

    axes, cells, rest, meta = {}, [], [], {"seeds": 20, "master_seed": 0, "plot": ""}
    for key, value in parse_pairs(text):
        try:
            if key.startswith("sweep."):
                name = key[len("sweep."):]
                if name not in _AXIS_TYPES:
                    raise ConfigError(f"unknown sweep axis {name!r}")
                axes[name] = _axis_values(name, value)
            elif key == "cell":
                cell = {}
                for item in value.split():
                    name, _, v = item.partition("=")
                    if name not in _AXIS_TYPES:
                        raise ConfigError(f"unknown cell axis {name!r}")
                    cell[name] = _AXIS_TYPES[name](v)
                cells.append(cell)
            elif key in ("seeds", "master_seed"):
                meta[key] = int(value)
            elif key == "plot":
                meta["plot"] = value
            else:
                rest.append((key, value))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    base = SystemConfig(**config_overrides(rest))
    try:
        return ExperimentSpec(base, axes, meta["seeds"], meta["master_seed"], out_dir,
                              explicit_cells=cells, plot=meta["plot"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _square_side(n: int) -> int:
    side = math.isqrt(int(n))
    if side * side != n:
        raise ValueError(f"n_ris_elements={n} is not a square")
    return side


def cell_config(base: SystemConfig, settings: dict):
    changes, algorithm, topology = {}, settings.get("algorithm", "auto"), settings.get("topology", "dual")
    for name, value in settings.items():
        if name == "n_tx_antennas":
            changes["n_tx_antennas"] = int(value)
        elif name == "bits":
            changes["bits"] = int(value)
        elif name == "p_max_dbm":
            changes["p_max"] = 10.0 ** ((float(value) - 30.0) / 10.0)
        elif name == "n_ris_elements":
            side = _square_side(int(value))
            changes["n_ris_elements_y"] = changes["n_ris_elements_z"] = side
    config = base.replace(**changes)
    if topology == "single":
        config = config.single_ris()
    elif topology != "dual":
        raise ValueError(f"unknown topology {topology!r}")
    return config, algorithm


def _row(config, algorithm, scenario_seed, result=None, status="ok", wall=0.0):
    row = {
        "scenario_seed": scenario_seed, "topology": config.topology, "algorithm": algorithm,
        "b": config.bits, "N": config.n_ris_elements, "N_t": config.n_tx_antennas,
        "K": config.n_users, "p_max_dbm": round(watts_to_dbm(config.p_max), 6),
    }
    if result is None:
        row.update({c: float("nan") for c in RESULT_COLUMNS if c not in row})
        row.update(outer_iters=0, gs_candidates=0, od_evals=0, sdr_total_iters=0, rank1_failures=0,
                   wall_ms=round(wall, 3), status=status)
        return row
    ops = count_operations(result)
    row.update({
        "outer_iters": ops["outer_iters"], "tau_lifted": result.trace.records[-1].tau_lifted,
        "tau_extracted": result.tau, "min_sinr": float(result.sinr.min()),
        "mean_sinr": float(result.sinr.mean()), "gs_candidates": ops["gs_candidates"],
        "od_evals": ops["od_evals"], "sdr_total_iters": ops["sdr_total_iters"],
        "wall_ms": round(wall, 3), "rank1_failures": result.trace.total("rank1_failures"),
        "status": status,
    })
    return row


def run_cell_seed(spec: ExperimentSpec, cell_index: int, seed_index: int, config, algorithm):
    seed = spec.scenario_seed(seed_index)
    t0 = time.perf_counter()
    try:
        scenario = make_scenario(config, seed)
        result = joint_optimize(scenario, config, algorithm,
                                rng=run_rng(spec.master_seed, cell_index, seed_index),
                                record_timing=spec.record_timing)
    except (TransmitInfeasible, np.linalg.LinAlgError, ValueError) as exc:
        wall = (time.perf_counter() - t0) * 1e3 if spec.record_timing else 0.0
        return _row(config, algorithm, seed, None, f"failed: {type(exc).__name__}", wall)
    wall = (time.perf_counter() - t0) * 1e3 if spec.record_timing else 0.0
    row = _row(config, algorithm, seed, result, "ok", wall)
    row["_trace"] = [{**{k: row[k] for k in TRACE_KEYS}, "iteration": r.iteration,
                      "tau_lifted": r.tau_lifted, "tau": r.tau} for r in result.trace.records]
    return row


def run_experiment(spec: ExperimentSpec, *, n_jobs: int = 1, progress=None) -> list:
    """One row per (cell, seed); rows come back in (cell, seed) order regardless of scheduling."""
    jobs = [(ci, si, cfg, alg) for ci, (cfg, alg) in enumerate(spec.cells())
            for si in range(spec.seeds)]
    if n_jobs == 1:
        rows = []
        for job in jobs:
            rows.append(run_cell_seed(spec, *job))
            if progress:
                progress(len(rows), len(jobs))
    else:
        from joblib import Parallel, delayed
        rows = Parallel(n_jobs=n_jobs)(delayed(run_cell_seed)(spec, *job) for job in jobs)
    order = sorted(range(len(jobs)), key=lambda j: (jobs[j][0], jobs[j][1]))
    return [rows[j] for j in order]


def aggregate(rows) -> list:
    """Per-cell mean/median/p10/p90 of ``tau_extracted`` over successful runs."""
    cells = {}
    for row in rows:
        cells.setdefault(tuple(row[k] for k in CELL_KEYS), []).append(row)
    out = []
    for key, group in cells.items():
        vals = np.array([r["tau_extracted"] for r in group if r["status"] == "ok"], dtype=float)
        rec = dict(zip(CELL_KEYS, key))
        rec["runs"] = len(group)
        rec["ok"] = int(vals.size)
        if vals.size:
            rec.update(mean=float(vals.mean()), median=float(np.median(vals)),
                       p10=float(np.percentile(vals, 10)), p90=float(np.percentile(vals, 90)))
        else:
            rec.update({s: float("nan") for s in AGGREGATE_STATS})
        out.append(rec)
    return out


AGGREGATE_COLUMNS = CELL_KEYS + ("runs", "ok") + AGGREGATE_STATS


class JointBeamformer(BaseEstimator):
    """Scikit-learn style front end: ``fit(scenario)`` runs the joint optimization.

    Fitted attributes: ``result_`` (JointResult), ``beams_`` (N_t x K),
    ``phases_`` (list of phase vectors), ``tau_``.
    """

    def __init__(self, config=None, algorithm="auto", random_state=0):
        self.config = config
        self.algorithm = algorithm
        self.random_state = random_state

    def fit(self, scenario, y=None):
        config = self.config if self.config is not None else SystemConfig()
        self.result_ = joint_optimize(scenario, config, self.algorithm, rng=self.random_state)
        self.beams_ = self.result_.beams.beams
        self.phases_ = [p.phases for p in self.result_.phases]
        self.tau_ = self.result_.tau
        return self

    def predict(self, scenario=None):
        """Per-user SINRs of the fitted solution (optionally on another deployment)."""
        if not hasattr(self, "result_"):
            raise AttributeError("JointBeamformer is not fitted")
        if scenario is None:
            return self.result_.sinr
        config = self.config if self.config is not None else SystemConfig()
        combined = combine_channels(synth_channels(scenario, config), *self.phases_)
        return sinr_per_user(combined, self.beams_, config.noise_power_user)
