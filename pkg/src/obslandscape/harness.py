"""
Control-problem cases, seeded batches of searches, and sweep drivers.

Randomness comes from numpy's counter-based Philox generator. Run ``i`` of a
batch with seed ``s`` draws from ``SeedSequence(s, spawn_key=(i,))``, split
once more into an operator stream and a field stream, so a run's inputs do
not depend on how many other runs exist or in which order they execute.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .distance import TableSet
from .dynamics import (ControlField, SystemModel, build_oscillator, build_rotor, fluence)
from .flow import FlowSettings, SearchTrace, run_search, write_trace_csv
from .topology import (DEFAULT_CAP, classify_tables, count_tables, enumerate_tables,
                       spectrum_from_diagonal)

__all__ = [
    "CaseSpec",
    "RunRecord",
    "BatchSummary",
    "ConfigError",
    "case_one_observable",
    "make_rng",
    "make_initial_field",
    "make_case_operators",
    "build_model",
    "run_one",
    "run_batch",
    "run_sweep",
    "summarize",
    "load_config",
    "config_hash",
]

log = logging.getLogger(__name__)

N_FREQUENCIES = 20
# Cases II/III redraw eigenvalues closer than this
MIN_EIGEN_GAP = 1e-6
# full-rank Case III tracking stops here (N! tables)
MAX_TRACKED_FULL_RANK = 8

CONFIG_KEYS = {
    "case", "n_levels", "h0", "d", "T", "L", "F0", "n_runs", "seed", "abs_tol", "rel_tol",
    "convergence_fraction", "max_steps", "observable", "track_distances",
}
CUSTOM_KEYS = {"rho0", "theta"}
SWEEP_AXES = ("dipole_d", "fluence", "n_levels", "abs_tol")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CaseSpec:
    case_id: Literal["I", "II", "III", "custom"] = "I"
    n_levels: int = 8
    h0_kind: Literal["rotor", "oscillator"] = "rotor"
    dipole_param_d: float = 0.2
    total_time: float = 20.0
    n_intervals: int | None = None
    initial_fluence: float = 10.0
    observable: int = 5
    rho0: tuple[float, ...] | None = None
    theta: tuple[float, ...] | None = None
    n_runs: int = 20
    seed: int = 0
    flow: FlowSettings = FlowSettings()
    track_distances: Literal["auto", "full", "summary", "none"] = "auto"

    def __post_init__(self):
        if self.case_id not in ("I", "II", "III", "custom"):
            raise ConfigError(f"unknown case {self.case_id!r}")
        if self.h0_kind not in ("rotor", "oscillator"):
            raise ConfigError(f"unknown h0 kind {self.h0_kind!r}")
        if self.n_levels < 2 or (self.case_id == "I" and self.n_levels < 8):
            raise ConfigError(f"n_levels={self.n_levels} too small for case {self.case_id}")
        if self.case_id == "I" and self.observable not in range(1, 6):
            raise ConfigError("case I observable must be 1..5")
        if self.case_id == "custom":
            if self.rho0 is None or self.theta is None:
                raise ConfigError("custom case needs rho0 and theta")
            if len(self.rho0) != self.n_levels or len(self.theta) != self.n_levels:
                raise ConfigError("custom rho0/theta length must equal n_levels")
        if not self.initial_fluence > 0 or not self.total_time > 0:
            raise ConfigError("F0 and T must be positive")
        if self.n_runs < 1:
            raise ConfigError("n_runs must be >= 1")
        if self.track_distances not in ("auto", "full", "summary", "none"):
            raise ConfigError(f"bad track_distances {self.track_distances!r}")

    @property
    def intervals(self) -> int:
        if self.n_intervals is not None:
            return self.n_intervals
        # finer grid for the many-level full-rank problems only
        return 2048 if self.case_id in ("II", "III") and self.n_levels >= 10 else 512

    def to_config(self) -> dict:
        cfg = {
            "case": self.case_id,
            "n_levels": self.n_levels,
            "h0": self.h0_kind,
            "d": self.dipole_param_d,
            "T": self.total_time,
            "L": self.intervals,
            "F0": self.initial_fluence,
            "n_runs": self.n_runs,
            "seed": self.seed,
            "abs_tol": self.flow.abs_tol,
            "rel_tol": self.flow.rel_tol,
            "convergence_fraction": self.flow.convergence_fraction,
            "max_steps": self.flow.max_steps,
            "observable": self.observable,
            "track_distances": self.track_distances,
        }
        if self.case_id == "custom":
            cfg["rho0"] = list(self.rho0)
            cfg["theta"] = list(self.theta)
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "CaseSpec":
        unknown = set(cfg) - CONFIG_KEYS - CUSTOM_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if set(cfg) & CUSTOM_KEYS and cfg.get("case") != "custom":
            raise ConfigError("rho0/theta are only accepted for case 'custom'")
        flow_kw = {}
        for key in ("abs_tol", "rel_tol", "convergence_fraction", "max_steps"):
            if key in cfg:
                flow_kw[key] = cfg[key]
        track = cfg.get("track_distances", "auto")
        if track is True:
            track = "auto"
        elif track is False:
            track = "none"
        try:
            return cls(
                case_id=str(cfg.get("case", "I")),
                n_levels=int(cfg.get("n_levels", 8)),
                h0_kind=cfg.get("h0", "rotor"),
                dipole_param_d=float(cfg.get("d", 0.2)),
                total_time=float(cfg.get("T", 20.0)),
                n_intervals=None if cfg.get("L") is None else int(cfg["L"]),
                initial_fluence=float(cfg.get("F0", 10.0)),
                observable=int(cfg.get("observable", 5)),
                rho0=None if cfg.get("rho0") is None else tuple(float(x) for x in cfg["rho0"]),
                theta=None if cfg.get("theta") is None else tuple(float(x) for x in cfg["theta"]),
                n_runs=int(cfg.get("n_runs", 20)),
                seed=int(cfg.get("seed", 0)),
                flow=FlowSettings(**flow_kw),
                track_distances=track,
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "CaseSpec":
        return dataclasses.replace(self, **changes)


def load_config(path) -> CaseSpec:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return CaseSpec.from_config(cfg)


def config_hash(spec: CaseSpec) -> str:
    blob = json.dumps(spec.to_config(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def make_rng(seed, *key: int) -> np.random.Generator:
    """Philox generator on the substream ``key`` of ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def build_model(spec: CaseSpec, n_levels: int | None = None) -> SystemModel:
    n = spec.n_levels if n_levels is None else n_levels
    build = build_rotor if spec.h0_kind == "rotor" else build_oscillator
    return build(n, spec.dipole_param_d)


def initial_field_shape(t, total_time: float, omegas, amplitudes) -> np.ndarray:
    """Unnormalized Gaussian-enveloped cosine sum (envelope peak 1)."""
    t = np.asarray(t, dtype=float)
    eta = total_time / 10.0
    env = np.exp(-((t - total_time / 2) ** 2) / (2 * eta**2))
    return env * (np.cos(np.multiply.outer(t, omegas)) @ amplitudes)


def make_initial_field(model: SystemModel, total_time: float, n_intervals: int, f0: float,
                       rng_seed=0) -> ControlField:
    """Random initial field scaled to fluence ``f0`` on the discrete grid.

    Twenty frequencies are drawn uniformly between the smallest and largest
    transition frequency of ``H0`` and twenty amplitudes uniformly on [0, 1].
    """
    if not f0 > 0:
        raise ValueError("initial fluence must be positive")
    freqs = model.transition_frequencies()
    w_min, w_max = float(freqs.min()), float(freqs.max())
    if w_max == 0:
        raise ValueError("H0 is fully degenerate; no transition frequencies")
    rng = make_rng(rng_seed)
    omegas = rng.uniform(w_min, w_max, N_FREQUENCIES)
    amps = rng.uniform(0.0, 1.0, N_FREQUENCIES)
    dt = total_time / n_intervals
    t = dt * np.arange(1, n_intervals + 1)
    shape = initial_field_shape(t, total_time, omegas, amps)
    norm = float(shape @ shape) * dt
    if norm == 0:
        raise ValueError("initial field shape vanishes on the grid")
    return ControlField(shape * np.sqrt(f0 / norm), total_time)


def case_one_observable(m: int, n_levels: int = 8) -> np.ndarray:
    """Observable with 5/(4m+5) on level 7 and 4/(4m+5) on levels 7-m..6."""
    if m not in range(1, 6) or n_levels < 8:
        raise ValueError("need 1 <= m <= 5 and n_levels >= 8")
    theta = np.zeros(n_levels)
    theta[7 - m:7] = 4.0 / (4 * m + 5)
    theta[7] = 5.0 / (4 * m + 5)
    return theta


def _random_full_rank(rng: np.random.Generator, n: int) -> np.ndarray:
    while True:
        x = rng.uniform(0.0, 1.0, n)
        x = x / x.sum()
        if n < 2 or np.min(np.diff(np.sort(x))) >= MIN_EIGEN_GAP:
            return x


def make_case_operators(spec: CaseSpec, rng_seed=0,
                        sort: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of ``rho0`` and ``theta`` in the H0 eigenbasis.

    Random eigenvalues are placed on the levels in draw order by default:
    the level each eigenvalue sits on is part of the control problem, and
    sorting would park the largest eigenvalue of theta on the initially
    populated ground state. ``sort=True`` returns them in descending order.
    """
    n = spec.n_levels
    pure = np.zeros(n)
    pure[0] = 1.0
    if spec.case_id == "I":
        return pure, case_one_observable(spec.observable, n)
    if spec.case_id == "custom":
        return np.asarray(spec.rho0, dtype=float), np.asarray(spec.theta, dtype=float)
    rng = make_rng(rng_seed)
    theta = _random_full_rank(rng, n)
    rho0 = pure if spec.case_id == "II" else _random_full_rank(rng, n)
    if sort:
        return -np.sort(-rho0), -np.sort(-theta)
    return rho0, theta


@dataclass
class RunRecord:
    run: int
    outcome: str
    iterations: int
    rejected: int
    final_objective: float
    j_max: float
    j_min: float
    initial_fluence: float
    final_fluence: float
    d_sadd_min: float | None
    d_mean_sadd_min: float | None
    d_sadd_fail: float | None
    n_tables: int | None


@dataclass
class BatchSummary:
    """Batch statistics.

    Search effort and saddle-approach means are taken over converged runs
    (``None`` when no run converged); ``mean_d_sadd_fail`` over runs that
    ended in an objective decrease.
    """

    n_runs: int
    n_converged: int
    n_failed: int
    n_exhausted: int
    mean_search_effort: float | None
    mean_d_sadd_min: float | None
    mean_d_mean_sadd_min: float | None
    mean_d_sadd_fail: float | None
    runs: list[RunRecord] = field(default_factory=list)
    config: dict | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "BatchSummary":
        data = dict(data)
        data["runs"] = [RunRecord(**r) for r in data.get("runs", [])]
        return cls(**data)


def _mean(xs) -> float | None:
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def summarize(traces: Sequence[SearchTrace | RunRecord]) -> BatchSummary:
    if not traces:
        raise ValueError("nothing to summarize")
    records = [t if isinstance(t, RunRecord) else _record(i, t) for i, t in enumerate(traces)]
    ok = [r for r in records if r.outcome == "converged"]
    failed = [r for r in records if r.outcome == "failed_decrease"]
    return BatchSummary(
        n_runs=len(records),
        n_converged=len(ok),
        n_failed=len(failed),
        n_exhausted=sum(r.outcome == "exhausted" for r in records),
        mean_search_effort=_mean([r.iterations for r in ok]),
        mean_d_sadd_min=_mean([r.d_sadd_min for r in ok]),
        mean_d_mean_sadd_min=_mean([r.d_mean_sadd_min for r in ok]),
        mean_d_sadd_fail=_mean([r.d_sadd_fail for r in failed]),
        runs=records,
    )


def _record(run: int, trace: SearchTrace, n_tables: int | None = None) -> RunRecord:
    return RunRecord(
        run=run, outcome=trace.outcome, iterations=trace.iterations, rejected=trace.rejected,
        final_objective=trace.final_objective, j_max=trace.j_max, j_min=trace.j_min,
        initial_fluence=float(trace.fluence[0]), final_fluence=float(trace.fluence[-1]),
        d_sadd_min=trace.d_sadd_min, d_mean_sadd_min=trace.d_mean_sadd_min,
        d_sadd_fail=trace.d_sadd_fail,
        n_tables=n_tables if n_tables is not None else (
            None if trace.min_distances is None else int(trace.min_distances.size)),
    )


def _tracking_for(spec: CaseSpec, n_tables: int) -> str:
    if spec.track_distances != "auto":
        return spec.track_distances
    return "full" if n_tables <= 64 else "summary"


def run_one(spec: CaseSpec, run: int, cap: int = DEFAULT_CAP) -> SearchTrace:
    """Search number ``run`` of the batch described by ``spec``."""
    model = build_model(spec)
    rho0, theta = make_case_operators(spec, make_rng(spec.seed, run, 0))
    init = make_initial_field(model, spec.total_time, spec.intervals, spec.initial_fluence,
                              make_rng(spec.seed, run, 1))
    rho_spec = spectrum_from_diagonal(rho0)
    theta_spec = spectrum_from_diagonal(theta)
    full_rank = rho_spec.n_distinct == theta_spec.n_distinct == spec.n_levels
    tables, track = None, "none"
    if spec.track_distances != "none" and not (full_rank and spec.n_levels > MAX_TRACKED_FULL_RANK
                                                and spec.track_distances == "auto"):
        n_tables = count_tables(theta_spec.multiplicities, rho_spec.multiplicities)
        tables = classify_tables(enumerate_tables(rho_spec, theta_spec, cap), rho_spec, theta_spec)
        track = _tracking_for(spec, n_tables)
    trace = run_search(model, rho0, theta, init, tables, spec.flow, track=track,
                       rho_spec=rho_spec, theta_spec=theta_spec)
    trace.seed = spec.seed
    trace.extra.update(run=run, tables=tables)
    return trace


def _run_and_store(spec: CaseSpec, run: int, trace_dir: str | None, cap: int) -> RunRecord:
    trace = run_one(spec, run, cap)
    if trace_dir is not None:
        tables = trace.extra.get("tables")
        labels = None
        if tables is not None and trace.tracking == "full":
            labels = [f"D_{t.index}_{t.classification}" for t in tables]
        write_trace_csv(trace, Path(trace_dir) / f"run_{run:04d}.csv", labels)
    log.info("run %d: %s in %d steps", run, trace.outcome, trace.iterations)
    return _record(run, trace)


def run_batch(spec: CaseSpec, out_dir=None, workers: int = 1,
              cap: int = DEFAULT_CAP) -> BatchSummary:
    """Run ``spec.n_runs`` independent searches and aggregate them.

    With ``out_dir`` the per-run CSV traces and ``summary.json`` go to
    ``out_dir/run-<config hash>/``.
    """
    # surface enumeration-cap problems before spending any search time
    run_dir = trace_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / f"run-{config_hash(spec)}"
        trace_dir = run_dir / "traces"
        trace_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.json").write_text(json.dumps(spec.to_config(), indent=2))
    _precheck(spec, cap)
    runs = range(spec.n_runs)
    tdir = None if trace_dir is None else str(trace_dir)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_and_store, [spec] * len(runs), runs,
                                    [tdir] * len(runs), [cap] * len(runs)))
    else:
        records = [_run_and_store(spec, i, tdir, cap) for i in runs]
    records.sort(key=lambda r: r.run)
    summary = summarize(records)
    summary.config = spec.to_config()
    if run_dir is not None:
        (run_dir / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2))
    return summary


def _precheck(spec: CaseSpec, cap: int):
    from .topology import EnumerationCapError
    rho0, theta = make_case_operators(spec, make_rng(spec.seed, 0, 0))
    rs, ts = spectrum_from_diagonal(rho0), spectrum_from_diagonal(theta)
    full_rank = rs.n_distinct == ts.n_distinct == spec.n_levels
    if spec.track_distances == "none" or (spec.track_distances == "auto" and full_rank
                                          and spec.n_levels > MAX_TRACKED_FULL_RANK):
        return
    n = count_tables(ts.multiplicities, rs.multiplicities)
    if n > cap:
        raise EnumerationCapError(f"{n} contingency tables exceed the cap of {cap}")


def _apply_axis(spec: CaseSpec, axis: str, value: float) -> CaseSpec:
    if axis == "dipole_d":
        return spec.replace(dipole_param_d=float(value))
    if axis == "fluence":
        return spec.replace(initial_fluence=float(value))
    if axis == "n_levels":
        if float(value) != int(value):
            raise ConfigError(f"n_levels must be integral, got {value}")
        return spec.replace(n_levels=int(value))
    if axis == "abs_tol":
        return spec.replace(flow=dataclasses.replace(spec.flow, abs_tol=float(value)))
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {', '.join(SWEEP_AXES)}")


def run_sweep(base: CaseSpec, axis: str, values: Sequence[float], out_dir=None,
              workers: int = 1, cap: int = DEFAULT_CAP) -> list[BatchSummary]:
    """One batch per axis value; writes ``sweep-<axis>.json`` when ``out_dir`` is set."""
    specs = [_apply_axis(base, axis, v) for v in values]
    summaries = [run_batch(s, out_dir, workers, cap) for s in specs]
    if out_dir is not None:
        doc = {
            "axis": axis,
            "values": [float(v) for v in values],
            "base": base.to_config(),
            "summaries": [s.to_dict() for s in summaries],
        }
        path = Path(out_dir) / f"sweep-{axis}-{config_hash(base)}.json"
        os.makedirs(out_dir, exist_ok=True)
        path.write_text(json.dumps(doc, indent=2))
    return summaries
