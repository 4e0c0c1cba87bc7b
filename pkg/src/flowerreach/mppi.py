"""Model predictive path integral (MPPI) control of the vehicle.

Each call perturbs a nominal thrust/torque plan with Gaussian noise, rolls
every perturbed plan through the full nonlinear dynamics, and blends the
plans with exponential weights exp(-(S_k - min S) / lambda). The first
control of the blended plan is applied; the plan is shifted one step for the
next call (receding horizon, last entry repeated).

Rollout k of control step n draws its noise from the counter stream
(seed, n, k); see :mod:`flowerreach.rng`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .core import ControlInput, FullState, ModelParams, ValidationError, as_vec3, wrap_angle
from .dynamics import ZERO_WRENCH, Wrench, hover_thrust, physics_vector
from .rng import StreamKey


class ControllerFailure(RuntimeError):
    """Every sampled rollout diverged."""


@dataclass(frozen=True)
class MppiConfig:
    n_samples: int = 512
    horizon: int = 30
    dt: float = 0.02
    lam: float = 1.0
    sigma_thrust: float = 2.0
    sigma_torque: float = 0.05
    w_p: float = 30.0
    w_v: float = 1.0
    w_u: float = 0.01
    w_T: float = 50.0
    # Inside the position term: yaw error (rad^2) is weighted like m^2.
    yaw_weight: float = 1.0
    # Inside the effort term: body-rate penalty, (rad/s)^2 relative to N^2.
    rate_weight: float = 100.0
    parallel: bool = False

    def __post_init__(self):
        if self.n_samples < 1 or self.horizon < 1:
            raise ValidationError("mppi.n_samples/horizon: must be at least 1")
        if not 0 < self.dt <= 0.05:
            raise ValidationError("mppi.dt: must lie in (0, 0.05]")
        if not self.lam > 0:
            raise ValidationError("mppi.lam: temperature must be positive")
        if not (self.sigma_thrust > 0 and self.sigma_torque > 0):
            raise ValidationError("mppi.sigma: noise std must be positive")
        for name in ("w_p", "w_v", "w_u", "w_T", "yaw_weight", "rate_weight"):
            if getattr(self, name) < 0:
                raise ValidationError(f"mppi.{name}: weights must be non-negative")

    @property
    def sigma(self) -> np.ndarray:
        return np.array([self.sigma_thrust, self.sigma_torque, self.sigma_torque, self.sigma_torque])

    def cost_vector(self, hover: float) -> np.ndarray:
        return np.array([self.w_p, self.w_v, self.w_u, self.w_T,
                         self.yaw_weight, self.rate_weight, hover])


@dataclass(frozen=True)
class Setpoint:
    p_des: np.ndarray
    v_des: np.ndarray = field(default_factory=lambda: np.zeros(3))
    yaw_des: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "p_des", as_vec3(self.p_des, "p_des"))
        object.__setattr__(self, "v_des", as_vec3(self.v_des, "v_des"))
        if not math.isfinite(self.yaw_des):
            raise ValidationError("yaw_des: must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([*self.p_des, *self.v_des, self.yaw_des])


@dataclass(frozen=True, eq=False)
class ControlSequence:
    """T controls as rows [thrust, tau_x, tau_y, tau_z]."""

    u: np.ndarray

    def __post_init__(self):
        arr = np.array(self.u, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 4:
            raise ValidationError("control sequence: expected shape (T, 4)")
        arr.flags.writeable = False
        object.__setattr__(self, "u", arr)

    @classmethod
    def constant(cls, horizon: int, u: ControlInput) -> "ControlSequence":
        return cls(np.tile(u.as_array(), (horizon, 1)))

    @classmethod
    def trim(cls, horizon: int, params: ModelParams, coupling: Wrench = ZERO_WRENCH) -> "ControlSequence":
        """Level hover that cancels the coupling wrench."""
        return cls.constant(horizon, trim_input(params, coupling))

    def __len__(self):
        return self.u.shape[0]

    def __getitem__(self, i) -> ControlInput:
        return ControlInput.from_array(self.u[i])

    def shifted(self) -> "ControlSequence":
        return ControlSequence(np.vstack((self.u[1:], self.u[-1:])))

    def clamped(self, params: ModelParams) -> "ControlSequence":
        u = self.u.copy()
        u[:, 0] = np.clip(u[:, 0], 0.0, params.thrust_max)
        u[:, 1:] = np.clip(u[:, 1:], -params.tau_max, params.tau_max)
        return ControlSequence(u)

    def __eq__(self, other):
        return isinstance(other, ControlSequence) and np.array_equal(self.u, other.u)


@dataclass(frozen=True)
class MppiDiagnostics:
    step: int
    min_cost: float
    mean_cost: float
    ess: float


def trim_input(params: ModelParams, coupling: Wrench = ZERO_WRENCH) -> ControlInput:
    u = ControlInput(hover_thrust(params, coupling), -coupling.torque)
    return ControlInput(min(max(u.thrust, 0.0), params.thrust_max),
                        np.clip(u.tau, -params.tau_max, params.tau_max))


def stage_cost(state: FullState, u: ControlInput, sp: Setpoint, cfg: MppiConfig,
               params: ModelParams = ModelParams(), coupling: Wrench = ZERO_WRENCH) -> float:
    """Running cost: tracking, velocity and effort terms.

    w_p (|p - p_des|^2 + k_yaw dyaw^2) + w_v |v - v_des|^2
    + w_u (dthrust^2 + |tau|^2 + k_rate |omega|^2), dthrust from hover.
    """
    e = state.p - sp.p_des
    dyaw = wrap_angle(state.R.yaw - sp.yaw_des)
    dv = state.v - sp.v_des
    dthrust = u.thrust - hover_thrust(params, coupling)
    position = float(e @ e) + cfg.yaw_weight * dyaw * dyaw
    effort = dthrust * dthrust + float(u.tau @ u.tau) + cfg.rate_weight * float(state.omega @ state.omega)
    return cfg.w_p * position + cfg.w_v * float(dv @ dv) + cfg.w_u * effort


def terminal_cost(state: FullState, sp: Setpoint, cfg: MppiConfig) -> float:
    e = state.p - sp.p_des
    return cfg.w_T * float(e @ e)


def rollout_cost(x0: FullState, seq: ControlSequence, sp: Setpoint, cfg: MppiConfig,
                 params: ModelParams, coupling: Wrench = ZERO_WRENCH) -> float:
    """Cost of holding the arm fixed and flying ``seq`` from ``x0``.

    Returns +inf when the rollout diverges.
    """
    hover = hover_thrust(params, coupling)
    return float(_kernels.rollout_cost(x0.as_vector(), np.ascontiguousarray(seq.u),
                                       sp.as_array(), cfg.cost_vector(hover),
                                       coupling.as_array(), physics_vector(params), cfg.dt))


def softmax_weights(costs: np.ndarray, lam: float) -> np.ndarray:
    """Normalized path-integral weights; infinite costs get zero weight."""
    costs = np.asarray(costs, dtype=float)
    finite = np.isfinite(costs)
    if not finite.any():
        raise ControllerFailure("all rollouts diverged")
    weights = np.zeros_like(costs)
    shifted = costs[finite] - costs[finite].min()
    weights[finite] = np.exp(-shifted / lam)
    return weights / weights.sum()


def effective_sample_size(weights: np.ndarray) -> float:
    return 1.0 / float(np.sum(weights * weights))


def mppi_optimize(x0: FullState, sp: Setpoint, nominal: ControlSequence, cfg: MppiConfig,
                  params: ModelParams, key: StreamKey,
                  coupling: Wrench = ZERO_WRENCH) -> tuple[ControlSequence, MppiDiagnostics]:
    """One MPPI improvement of ``nominal`` without the receding-horizon shift."""
    if len(nominal) != cfg.horizon:
        raise ValueError(f"nominal has {len(nominal)} steps, horizon is {cfg.horizon}")
    samples = np.empty((cfg.n_samples, cfg.horizon, 4))
    costs = np.empty(cfg.n_samples)
    kernel = _kernels.sample_rollouts_parallel if cfg.parallel else _kernels.sample_rollouts_serial
    hover = hover_thrust(params, coupling)
    kernel(x0.as_vector(), np.ascontiguousarray(nominal.u), cfg.sigma, key.seed, key.step,
           sp.as_array(), cfg.cost_vector(hover), coupling.as_array(),
           physics_vector(params), cfg.dt, samples, costs)
    weights = softmax_weights(costs, cfg.lam)
    updated = ControlSequence(_kernels.weighted_sum(weights, samples)).clamped(params)
    finite = costs[np.isfinite(costs)]
    diag = MppiDiagnostics(key.step, float(finite.min()), float(finite.mean()),
                           effective_sample_size(weights))
    return updated, diag


def mppi_step(x0: FullState, sp: Setpoint, nominal: ControlSequence, cfg: MppiConfig,
              params: ModelParams, key: StreamKey,
              coupling: Wrench = ZERO_WRENCH) -> tuple[ControlInput, ControlSequence]:
    """Return the control to apply now and the warm start for the next call."""
    updated, _ = mppi_optimize(x0, sp, nominal, cfg, params, key, coupling)
    return updated[0], updated.shifted()


class MppiController:
    """Receding-horizon wrapper that owns the nominal plan and step counter."""

    def __init__(self, cfg: MppiConfig, params: ModelParams, seed: int = 0):
        self.cfg = cfg
        self.params = params
        self.seed = seed
        self.step = 0
        self.diagnostics: list[MppiDiagnostics] = []
        self._trim = trim_input(params)
        self.nominal = ControlSequence.trim(cfg.horizon, params)

    def reset(self, coupling: Wrench = ZERO_WRENCH):
        self.step = 0
        self.diagnostics.clear()
        self._trim = trim_input(self.params, coupling)
        self.nominal = ControlSequence.constant(self.cfg.horizon, self._trim)

    def _feedforward(self, coupling: Wrench):
        # shift the plan by the change in trim so a moving arm is not a surprise
        trim = trim_input(self.params, coupling)
        delta = trim.as_array() - self._trim.as_array()
        if np.any(delta != 0.0):
            self.nominal = ControlSequence(self.nominal.u + delta).clamped(self.params)
        self._trim = trim

    def __call__(self, state: FullState, sp: Setpoint,
                 coupling: Wrench = ZERO_WRENCH) -> ControlInput:
        self._feedforward(coupling)
        key = StreamKey(self.seed, self.step)
        updated, diag = mppi_optimize(state, sp, self.nominal, self.cfg, self.params, key, coupling)
        self.diagnostics.append(diag)
        self.nominal = updated.shifted()
        self.step += 1
        return updated[0]


def write_diagnostics(path, records: list[MppiDiagnostics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "min_cost", "mean_cost", "ess"])
        for r in records:
            writer.writerow([r.step, f"{r.min_cost:.9g}", f"{r.mean_cost:.9g}", f"{r.ess:.9g}"])
