"""
Gradient flow on the discretized control field.

The field values follow ``d eps_l / ds = gamma * grad_l J`` (``grad_l`` the
derivative with respect to ``eps_l``, which already carries the ``dt``
factor), integrated with the Dormand-Prince 5(4) pair under adaptive step
control. A run stops when ``J`` enters the convergence band below ``J_max``,
when ``J`` drops between two accepted steps, or after ``max_steps`` accepted
steps.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .distance import TableSet
from .dynamics import ControlField, SystemModel, evaluate
from .topology import (ContingencyTable, DiagonalSpectrum, critical_value, max_alignment,
                       min_alignment, spectrum_from_diagonal)

__all__ = [
    "FlowSettings",
    "SearchTrace",
    "DormandPrince",
    "check_convergence",
    "run_search",
    "write_trace_csv",
]

log = logging.getLogger(__name__)

Outcome = Literal["converged", "failed_decrease", "exhausted"]
Tracking = Literal["full", "summary", "none"]


@dataclass(frozen=True)
class FlowSettings:
    """Integrator and stopping controls.

    ``rel_tol=None`` ties the relative tolerance to ``abs_tol`` so a single
    number sets the accuracy of the flow; with a loose relative tolerance
    (e.g. 1e-3) the per-component bound ``rel_tol * |eps_l|`` dominates for
    fields of order one and ``abs_tol`` stops having any effect.
    """

    abs_tol: float = 1e-8
    rel_tol: float | None = None
    convergence_fraction: float = 0.001
    max_steps: int = 1_000_000
    gamma: float = 1.0
    gradient_method: Literal["exact", "sampled"] = "exact"
    distance_stride: int = 1

    def __post_init__(self):
        for name in ("abs_tol", "convergence_fraction", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.rel_tol is not None and not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_steps < 1 or self.distance_stride < 1:
            raise ValueError("max_steps and distance_stride must be >= 1")

    @property
    def effective_rel_tol(self) -> float:
        return self.abs_tol if self.rel_tol is None else self.rel_tol


@dataclass
class SearchTrace:
    """Telemetry of one gradient-flow search.

    ``distances`` holds one row per recorded step (every ``distance_stride``
    accepted steps plus the initial and final points) when tracking is
    ``"full"``; in ``"summary"`` mode only the per-step minimum and mean over
    saddles are kept. ``min_distances`` is the running minimum over the whole
    trajectory for every table in either mode.
    """

    s: np.ndarray
    objective: np.ndarray
    fluence: np.ndarray
    outcome: Outcome
    iterations: int
    rejected: int
    final_field: ControlField
    j_max: float
    j_min: float
    saddle_mask: np.ndarray
    tracking: Tracking = "full"
    distance_steps: np.ndarray | None = None
    distances: np.ndarray | None = None
    min_saddle_distance: np.ndarray | None = None
    mean_saddle_distance: np.ndarray | None = None
    min_distances: np.ndarray | None = None
    final_distances: np.ndarray | None = None
    seed: int | None = None
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.outcome == "converged"

    @property
    def final_objective(self) -> float:
        return float(self.objective[-1])

    @property
    def has_saddles(self) -> bool:
        return self.min_distances is not None and bool(self.saddle_mask.any())

    @property
    def d_sadd_min(self) -> float | None:
        if not self.has_saddles:
            return None
        return float(self.min_distances[self.saddle_mask].min())

    @property
    def d_mean_sadd_min(self) -> float | None:
        if not self.has_saddles:
            return None
        return float(self.min_distances[self.saddle_mask].mean())

    @property
    def d_sadd_fail(self) -> float | None:
        """Closest saddle distance at the last step of a failed search."""
        if self.outcome != "failed_decrease" or not self.has_saddles:
            return None
        return float(self.final_distances[self.saddle_mask].min())


def check_convergence(j: float, j_max: float, j_min: float, fraction: float) -> bool:
    if not j_max > j_min:
        raise ValueError("convergence needs j_max > j_min")
    return j >= j_max - fraction * (j_max - j_min)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# fifth minus fourth order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


class DormandPrince:
    """Adaptive explicit Runge-Kutta 5(4) stepper with FSAL.

    Step control follows the classic ode45 scheme: max-norm error scaled per
    component by ``abs_tol + rel_tol * max(|y|, |y_new|)``, growth capped at
    5x, shrink floored at 0.1x on the first rejection and halving after that.
    ``rhs`` returns ``(f, aux)``; the auxiliary payload of the accepted end
    point is handed back so callers can reuse expensive by-products.
    """

    order = 5

    def __init__(self, rhs: Callable, y0: np.ndarray, abs_tol: float, rel_tol: float,
                 s0: float = 0.0, h0: float | None = None):
        self.rhs = rhs
        self.abs_tol = abs_tol
        self.rel_tol = rel_tol
        self.s = s0
        self.y = np.array(y0, dtype=float)
        self.f, self.aux = rhs(self.y)
        self.n_rejected = 0
        self.n_accepted = 0
        self.h = self._initial_step() if h0 is None else h0

    def _initial_step(self) -> float:
        scale = self.abs_tol + self.rel_tol * np.abs(self.y)
        rh = np.max(np.abs(self.f) / scale) * self.rel_tol ** (1 - 1 / self.order) / 0.8
        return 1.0 / rh if rh > 0 else 1.0

    def _error(self, h, k, y_new):
        err = h * (k.T @ _E)
        scale = self.abs_tol + self.rel_tol * np.maximum(np.abs(self.y), np.abs(y_new))
        return float(np.max(np.abs(err) / scale))

    def step(self):
        """Advance by one accepted step; returns the aux payload at the new point."""
        h = self.h
        failed_once = False
        k = np.empty((7, self.y.size))
        k[0] = self.f
        while True:
            for i in range(1, 6):
                yi = self.y + h * (np.asarray(_A[i]) @ k[:i])
                k[i] = self.rhs(yi)[0]
            y_new = self.y + h * (np.asarray(_A[6][:6]) @ k[:6])
            f_new, aux_new = self.rhs(y_new)
            k[6] = f_new
            err = self._error(h, k, y_new)
            if err <= 1.0:
                break
            self.n_rejected += 1
            if not failed_once:
                h *= max(0.1, 0.8 * err ** (-1 / self.order))
                failed_once = True
            else:
                h *= 0.5
            if h <= 16 * np.finfo(float).eps * max(abs(self.s), 1.0):
                raise FloatingPointError(f"step size underflow at s={self.s}")
        self.s += h
        self.y = y_new
        self.f, self.aux = f_new, aux_new
        self.n_accepted += 1
        if not failed_once:
            grow = 1.25 * err ** (1 / self.order)
            self.h = h / grow if grow > 0.2 else 5.0 * h
        else:
            self.h = h
        return aux_new


def run_search(model: SystemModel, rho0, theta, initial_field: ControlField,
               tables: Sequence[ContingencyTable] | None = None,
               settings: FlowSettings = FlowSettings(),
               track: Tracking | None = None,
               rho_spec: DiagonalSpectrum | None = None,
               theta_spec: DiagonalSpectrum | None = None,
               table_set: TableSet | None = None) -> SearchTrace:
    """Integrate the gradient flow from ``initial_field`` until an outcome is reached.

    ``J_max`` and ``J_min`` come from the rearrangement alignments of the
    spectra, so ``tables`` (classified, as from :func:`classify_tables`) are
    only needed for distance tracking; pass ``None`` to skip it. With
    ``track=None`` full per-step distance rows are kept for at most 64 tables
    and per-step saddle summaries otherwise.
    """
    rho0 = np.asarray(rho0, dtype=float)
    theta = np.asarray(theta, dtype=float)
    rho_spec = rho_spec or spectrum_from_diagonal(rho0)
    theta_spec = theta_spec or spectrum_from_diagonal(theta)
    j_max = critical_value(max_alignment(rho_spec, theta_spec), rho_spec, theta_spec)
    j_min = critical_value(min_alignment(rho_spec, theta_spec), rho_spec, theta_spec)
    if not j_max > j_min:
        raise ValueError("flat landscape: J_max == J_min, nothing to optimize")
    if tables is None or track == "none":
        track, tset, saddle = "none", None, np.zeros(0, dtype=bool)
    else:
        classes = [t.classification for t in tables]
        if None in classes:
            raise ValueError("tables must be classified before searching")
        saddle = np.array([c == "saddle" for c in classes])
        if track is None:
            track = "full" if len(tables) <= 64 else "summary"
        tset = table_set if table_set is not None else TableSet(tables, rho_spec, theta_spec)

    t_grid = initial_field.total_time

    def rhs(y):
        ev = evaluate(model, ControlField(y, t_grid), rho0, theta, settings.gradient_method)
        return settings.gamma * ev.gradient, ev

    stepper = DormandPrince(rhs, initial_field.values, settings.abs_tol, settings.effective_rel_tol)
    dt = initial_field.dt

    s_hist = [0.0]
    j_hist = [stepper.aux.value]
    f_hist = [float(stepper.y @ stepper.y * dt)]
    rec = _DistanceRecorder(tset, saddle, track)
    rec.record(0, stepper.aux.final_unitary)

    outcome: Outcome = "exhausted"
    if check_convergence(j_hist[0], j_max, j_min, settings.convergence_fraction):
        outcome = "converged"
    else:
        while stepper.n_accepted < settings.max_steps:
            ev = stepper.step()
            n = stepper.n_accepted
            s_hist.append(stepper.s)
            j_hist.append(ev.value)
            f_hist.append(float(stepper.y @ stepper.y * dt))
            if n % 1000 == 0:
                log.debug("step %d: s=%.6g J=%.12g", n, stepper.s, ev.value)
            decreased = ev.value < j_hist[-2]
            done = check_convergence(ev.value, j_max, j_min, settings.convergence_fraction)
            if done or decreased or n % settings.distance_stride == 0 or n == settings.max_steps:
                rec.record(n, ev.final_unitary)
            if decreased:
                outcome = "failed_decrease"
                break
            if done:
                outcome = "converged"
                break

    final = ControlField(stepper.y, t_grid)
    log.debug("search %s after %d steps (%d rejected), J=%.6g",
              outcome, stepper.n_accepted, stepper.n_rejected, j_hist[-1])
    return SearchTrace(
        s=np.asarray(s_hist), objective=np.asarray(j_hist), fluence=np.asarray(f_hist),
        outcome=outcome, iterations=stepper.n_accepted, rejected=stepper.n_rejected,
        final_field=final, j_max=float(j_max), j_min=float(j_min), saddle_mask=saddle,
        tracking=track, **rec.result(),
    )


class _DistanceRecorder:
    def __init__(self, tset: TableSet | None, saddle: np.ndarray, track: Tracking):
        self.tset, self.saddle, self.track = tset, saddle, track
        self.steps, self.rows, self.mins, self.means = [], [], [], []
        self.running = None
        self.last = None

    def record(self, step: int, u):
        if self.tset is None:
            return
        d = self.tset.distances(u, check=False)
        self.running = d.copy() if self.running is None else np.minimum(self.running, d)
        self.last = d
        self.steps.append(step)
        if self.track == "full":
            self.rows.append(d)
        if self.saddle.any():
            ds = d[self.saddle]
            self.mins.append(ds.min())
            self.means.append(ds.mean())
        else:
            self.mins.append(np.nan)
            self.means.append(np.nan)

    def result(self) -> dict:
        if self.tset is None:
            return {}
        return dict(
            distance_steps=np.asarray(self.steps),
            distances=np.asarray(self.rows) if self.track == "full" else None,
            min_saddle_distance=np.asarray(self.mins),
            mean_saddle_distance=np.asarray(self.means),
            min_distances=self.running,
            final_distances=self.last,
        )


def write_trace_csv(trace: SearchTrace, path, table_labels: Sequence[str] | None = None):
    """One row per accepted step.

    Columns ``step_index, s, J, fluence`` followed by one distance column per
    table (full tracking) or ``min_saddle_distance, mean_saddle_distance``.
    Steps without a distance sample leave those cells empty.
    """
    n_steps = trace.s.size
    header = ["step_index", "s", "J", "fluence"]
    dist_cols: np.ndarray | None = None
    if trace.distance_steps is not None:
        if trace.tracking == "full":
            k = trace.distances.shape[1]
            labels = list(table_labels) if table_labels is not None else [f"D_{i}" for i in range(k)]
            header += labels
            dist_cols = trace.distances
        else:
            header += ["min_saddle_distance", "mean_saddle_distance"]
            dist_cols = np.column_stack([trace.min_saddle_distance, trace.mean_saddle_distance])
        where = {int(s): i for i, s in enumerate(trace.distance_steps)}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(n_steps):
            row = [i, repr(float(trace.s[i])), repr(float(trace.objective[i])), repr(float(trace.fluence[i]))]
            if dist_cols is not None:
                j = where.get(i)
                row += [repr(float(x)) for x in dist_cols[j]] if j is not None else [""] * dist_cols.shape[1]
            w.writerow(row)
