"""
Closed N-level dynamics under a piecewise-constant control field.

The Hamiltonian is ``H(t) = H0 - mu * eps(t)`` with a diagonal field-free part
``H0`` and a real symmetric dipole ``mu`` (hbar = 1). The field is held
constant on each of ``L`` equal intervals ``(t_{l-1}, t_l]`` so the evolution
is a product of exact step propagators

    U(t_l, t_{l-1}) = exp[-i (H0 - mu eps_l) dt]

computed from the eigendecomposition of the (real symmetric) step
Hamiltonian.

The observable objective is ``J = Tr(U_T rho0 U_T^dag theta)`` with ``rho0``
and ``theta`` diagonal in the ``H0`` eigenbasis; both are carried as real
vectors.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from ._kernels import evaluate_kernel

__all__ = [
    "SystemModel",
    "ControlField",
    "PropagationResult",
    "Evaluation",
    "build_rotor",
    "build_oscillator",
    "build_custom",
    "dipole_matrix",
    "propagate",
    "objective",
    "gradient",
    "evaluate",
    "fluence",
]

KAPPA = 2.0
LAMBDA = 320.0


@dataclass(frozen=True)
class SystemModel:
    """Field-free energies and dipole coupling of an N-level system."""

    n_levels: int
    h0_diagonal: np.ndarray
    dipole: np.ndarray
    kind: Literal["rotor", "oscillator", "custom"] = "custom"
    dipole_param_d: float = float("nan")

    def __post_init__(self):
        h0 = np.asarray(self.h0_diagonal, dtype=float)
        mu = np.asarray(self.dipole, dtype=float)
        n = self.n_levels
        if h0.shape != (n,) or mu.shape != (n, n):
            raise ValueError(
                f"dimension mismatch: n_levels={n}, h0 {h0.shape}, dipole {mu.shape}"
            )
        if not np.all(np.isfinite(h0)) or not np.all(np.isfinite(mu)):
            raise ValueError("H0 and dipole entries must be finite")
        if not np.allclose(mu, mu.T, rtol=0, atol=1e-12):
            raise ValueError("dipole must be symmetric")
        h0.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "h0_diagonal", h0)
        object.__setattr__(self, "dipole", mu)

    def transition_frequencies(self) -> np.ndarray:
        """Magnitudes of all pairwise level spacings of H0 (i < j)."""
        e = self.h0_diagonal
        iu = np.triu_indices(self.n_levels, k=1)
        return np.abs(e[:, None] - e[None, :])[iu]


@dataclass(frozen=True)
class ControlField:
    """``L`` piecewise-constant amplitudes on ``[0, T]``."""

    values: np.ndarray
    total_time: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if v.size == 0:
            raise ValueError("field needs at least one interval")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if not self.total_time > 0:
            raise ValueError("total_time must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "total_time", float(self.total_time))

    @property
    def n_intervals(self) -> int:
        return self.values.size

    @property
    def dt(self) -> float:
        return self.total_time / self.n_intervals

    @property
    def times(self) -> np.ndarray:
        """Right endpoints ``t_l = l dt`` for ``l = 1..L``."""
        return self.dt * np.arange(1, self.n_intervals + 1)

    def with_values(self, values) -> "ControlField":
        return ControlField(values, self.total_time)


@dataclass(frozen=True)
class PropagationResult:
    step_unitaries_cumulative: np.ndarray  # (L, N, N), U(t_l) for l = 1..L
    # eigensystem of each step Hamiltonian, kept for the exact gradient
    step_energies: np.ndarray = field(default=None, repr=False)
    step_eigenvectors: np.ndarray = field(default=None, repr=False)
    dt: float = float("nan")

    @property
    def final_unitary(self) -> np.ndarray:
        return self.step_unitaries_cumulative[-1]


@dataclass(frozen=True)
class Evaluation:
    """Objective, its exact gradient and the final propagator for one field."""

    value: float
    gradient: np.ndarray
    final_unitary: np.ndarray = field(repr=False)


def dipole_matrix(n_levels: int, d: float) -> np.ndarray:
    """``mu_jk = d**|j-k| / d`` off the diagonal, zero on it."""
    _check_params(n_levels, d)
    j = np.arange(n_levels)
    gap = np.abs(j[:, None] - j[None, :])
    mu = np.power(float(d), gap - 1.0)
    np.fill_diagonal(mu, 0.0)
    return mu


def build_rotor(n_levels: int, d: float) -> SystemModel:
    """Rigid rotor-like system, ``E_j = j (j + 1)``."""
    _check_params(n_levels, d)
    j = np.arange(n_levels, dtype=float)
    return SystemModel(n_levels, j * (j + 1.0), dipole_matrix(n_levels, d), "rotor", float(d))


def build_oscillator(n_levels: int, d: float) -> SystemModel:
    """Anharmonic oscillator, ``E_j = k (j + 1/2) - (k^2 / lam) (j + 1/2)^2`` with k=2, lam=320."""
    _check_params(n_levels, d)
    x = np.arange(n_levels, dtype=float) + 0.5
    h0 = KAPPA * x - (KAPPA**2 / LAMBDA) * x**2
    return SystemModel(n_levels, h0, dipole_matrix(n_levels, d), "oscillator", float(d))


def build_custom(h0_diagonal, dipole) -> SystemModel:
    h0 = np.asarray(h0_diagonal, dtype=float)
    return SystemModel(h0.size, h0, np.asarray(dipole, dtype=float), "custom")


def _check_params(n_levels, d):
    if int(n_levels) != n_levels or n_levels < 2:
        raise ValueError(f"n_levels must be an integer >= 2, got {n_levels}")
    if not (np.isfinite(d) and d > 0):
        # d appears as a denominator; the d -> 0+ limit is not modelled
        raise ValueError(f"dipole parameter d must be > 0, got {d}")


def _step_eigensystem(model: SystemModel, field: ControlField):
    if field.values.ndim != 1:
        raise ValueError("field must be one-dimensional")
    h = np.diag(model.h0_diagonal)[None, :, :] - field.values[:, None, None] * model.dipole
    return np.linalg.eigh(h)


def _cumulative(steps: np.ndarray) -> np.ndarray:
    out = np.empty_like(steps)
    u = steps[0]
    out[0] = u
    for l in range(1, steps.shape[0]):
        u = steps[l] @ u
        out[l] = u
    return out


def propagate(model: SystemModel, field: ControlField) -> PropagationResult:
    """Cumulative propagators ``U(t_l)`` for every interval end."""
    w, v = _step_eigensystem(model, field)
    phases = np.exp(-1j * field.dt * w)
    steps = (v * phases[:, None, :]) @ v.transpose(0, 2, 1)
    return PropagationResult(_cumulative(steps), w, v, field.dt)


def _check_operators(rho0, theta, n):
    rho0 = np.asarray(rho0, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if rho0.shape != (n,) or theta.shape != (n,):
        raise ValueError(
            "rho0 and theta must be length-N diagonals "
            f"(N={n}, got {rho0.shape} and {theta.shape}); non-diagonal operators are not accepted"
        )
    if np.any(rho0 < 0):
        raise ValueError("rho0 eigenvalues must be nonnegative")
    if abs(rho0.sum() - 1.0) > 1e-12:
        raise ValueError(f"rho0 must have unit trace, got {rho0.sum()!r}")
    return rho0, theta


def objective(final_unitary, rho0, theta) -> float:
    """``Tr(U rho0 U^dag theta)`` for diagonal ``rho0`` and ``theta``."""
    u = np.asarray(final_unitary)
    rho0, theta = _check_operators(rho0, theta, u.shape[0])
    # diagonal operators: J = sum_mn theta_m |U_mn|^2 rho_n
    return float(theta @ (np.abs(u) ** 2) @ rho0)


def _phi1_imag(theta):
    """``(exp(-i theta) - 1) / (-i theta)`` for real ``theta``."""
    return np.exp(-0.5j * theta) * np.sinc(theta / (2.0 * np.pi))


def _exact_gradient(prop: PropagationResult, dipole, rho0, theta) -> np.ndarray:
    cum, w, v, dt = prop.step_unitaries_cumulative, prop.step_energies, prop.step_eigenvectors, prop.dt
    n = cum.shape[1]
    u_final = cum[-1]
    a = u_final.conj().T @ (theta[:, None] * u_final)
    # U(t_{l-1}) for every interval, starting from the identity
    before = np.empty_like(cum)
    before[0] = np.eye(n)
    before[1:] = cum[:-1]
    r = before @ (rho0[:, None] * a) @ before.conj().transpose(0, 2, 1)
    vt = v.transpose(0, 2, 1)
    q = vt @ r @ v
    mu_eig = vt @ dipole @ v
    # divided differences of exp over the step eigenvalues, (a, b) -> w_b - w_a
    kernel = 1j * dt * mu_eig * _phi1_imag(dt * (w[:, None, :] - w[:, :, None]))
    return 2.0 * np.einsum("lba,lab->l", q, kernel).real


def _sampled_gradient(prop: PropagationResult, dipole, rho0, theta) -> np.ndarray:
    cum = prop.step_unitaries_cumulative
    u_final = cum[-1]
    a = u_final.conj().T @ (theta[:, None] * u_final)
    # Tr[A rho U^dag mu U] = Tr[U A rho U^dag mu]
    b = cum @ (a * rho0[None, :]) @ cum.conj().transpose(0, 2, 1)
    return 2.0 * prop.dt * np.einsum("lij,ji->l", b, dipole).imag


def gradient(propagation: PropagationResult, model: SystemModel, rho0, theta, dt: float | None = None,
             method: Literal["exact", "sampled"] = "exact") -> np.ndarray:
    """Derivative of ``J`` with respect to each field value ``eps_l``.

    ``method="exact"`` differentiates the discretized map ``eps -> U_T``
    through the Frechet derivative of every step exponential, taken in the
    eigenbasis of the step Hamiltonian. It agrees with finite differences of
    :func:`propagate` to roundoff.

    ``method="sampled"`` returns the continuum functional derivative at the
    right endpoint of each interval, times ``dt``::

        dt * 2 Im Tr[U_T^dag theta U_T rho0 U^dag(t_l) mu U(t_l)]

    which differs from the exact one by ``O(dt ||[H, mu]||)`` and converges to
    it as ``L`` grows.
    """
    cum = propagation.step_unitaries_cumulative
    if cum.shape[1:] != (model.n_levels, model.n_levels):
        raise ValueError("propagation does not match the model dimension")
    if dt is not None and not np.isclose(dt, propagation.dt, rtol=1e-12, atol=0):
        raise ValueError(f"dt={dt} does not match the propagation grid ({propagation.dt})")
    rho0, theta = _check_operators(rho0, theta, model.n_levels)
    if method == "exact":
        return _exact_gradient(propagation, model.dipole, rho0, theta)
    if method == "sampled":
        return _sampled_gradient(propagation, model.dipole, rho0, theta)
    raise ValueError(f"unknown gradient method {method!r}")


def evaluate(model: SystemModel, field: ControlField, rho0, theta,
             method: Literal["exact", "sampled"] = "exact",
             backend: Literal["compiled", "numpy"] = "compiled") -> Evaluation:
    """Objective, gradient and final propagator from a single propagation.

    The exact gradient runs through a compiled kernel by default;
    ``backend="numpy"`` selects the vectorized reference implementation.
    """
    rho0, theta = _check_operators(rho0, theta, model.n_levels)
    if method == "exact" and backend == "compiled":
        value, grad, u_final = evaluate_kernel(model.h0_diagonal, model.dipole, field.values,
                                               field.dt, rho0, theta, np.flatnonzero(rho0), True)
        return Evaluation(float(value), grad, u_final)
    if backend not in ("compiled", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    prop = propagate(model, field)
    grad = gradient(prop, model, rho0, theta, method=method)
    u_final = prop.final_unitary
    value = float(theta @ (np.abs(u_final) ** 2) @ rho0)
    return Evaluation(value, grad, u_final)


def fluence(field: ControlField) -> float:
    """Discrete ``sum_l eps_l^2 dt``."""
    return float(np.dot(field.values, field.values) * field.dt)
