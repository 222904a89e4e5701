"""Tracking errors, sliding-mode voltage law, region gating and the desired trajectory."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import _kernels as K
from .dynamics import CrankState
from .errors import ConfigError
from .kinematics import RegionMap

CLAMP_MODES = ("none", "physical")


@dataclass(frozen=True)
class ControllerGains:
    alpha: float = 7.0
    k1: float = 10.0
    k2: float = 0.1
    k3: float = 0.1
    k4: float = 0.1
    epsilon: float = 0.3
    # "physical" zeroes the braking polarity (v > 0) that muscles cannot produce
    clamp: str = "none"
    # boundary-layer width; 0 keeps the exact signum law
    boundary_layer: float = 0.0

    def __post_init__(self):
        for name in ("alpha", "k1", "k2", "k3", "k4", "epsilon", "boundary_layer"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val) and val >= 0):
                raise ConfigError(f"gain {name} must be a finite number >= 0, got {val!r}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.clamp not in CLAMP_MODES:
            raise ConfigError(f"clamp must be one of {CLAMP_MODES}, got {self.clamp!r}")

    def with_(self, **changes) -> "ControllerGains":
        return replace(self, **changes)


@dataclass(frozen=True)
class TrajectorySpec:
    cadence_target: float = 3.665
    ramp_rate: float = 1.0
    t_start: float = 0.0
    q_start: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.cadence_target) and self.cadence_target > 0):
            raise ConfigError("cadence_target must be > 0")
        if not (math.isfinite(self.ramp_rate) and self.ramp_rate > 0):
            raise ConfigError("ramp_rate must be > 0")

    @property
    def max_velocity(self) -> float:
        return self.cadence_target

    @property
    def max_acceleration(self) -> float:
        return self.cadence_target * self.ramp_rate

    def with_(self, **changes) -> "TrajectorySpec":
        return replace(self, **changes)


class ErrorState(NamedTuple):
    e1: float
    e2: float
    z_norm: float


def controller_vector(gains: ControllerGains, traj: TrajectorySpec) -> np.ndarray:
    cp = np.zeros(K.N_CTRL)
    cp[K.ALPHA] = gains.alpha
    cp[K.K1] = gains.k1
    cp[K.K2] = gains.k2
    cp[K.K3] = gains.k3
    cp[K.K4] = gains.k4
    cp[K.W_CAD] = traj.cadence_target
    cp[K.R_RAMP] = traj.ramp_rate
    cp[K.T0] = traj.t_start
    cp[K.Q0] = traj.q_start
    cp[K.CLAMP] = CLAMP_MODES.index(gains.clamp)
    cp[K.PHI] = gains.boundary_layer
    return cp


def desired_trajectory(spec: TrajectorySpec, t):
    """Desired crank angle, velocity and acceleration.

    q_d' = w (1 - exp(-r (t - t0))) ramps from rest to the cadence target w;
    q_d = w (t - t0) - q_d'/r + q0.  Accepts scalars or arrays.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < spec.t_start):
        raise ValueError("desired trajectory is defined for t >= t_start")
    w, r = spec.cadence_target, spec.ramp_rate
    ex = np.exp(-r * (t - spec.t_start))
    qd_dot = w * (1.0 - ex)
    qd = w * (t - spec.t_start) - qd_dot / r + spec.q_start
    qd_ddot = w * r * ex
    if t.ndim == 0:
        return float(qd), float(qd_dot), float(qd_ddot)
    return qd, qd_dot, qd_ddot


def tracking_errors(state: CrankState, traj: TrajectorySpec, alpha: float) -> ErrorState:
    """e1 = q_d - q, e2 = e1' + alpha e1 at the state's time."""
    qd, qd_dot, _ = desired_trajectory(traj, state.t)
    e1 = qd - state.q
    e2 = (qd_dot - state.q_dot) + alpha * e1
    return ErrorState(e1, e2, math.hypot(e1, e2))


def _sgn(x: float) -> float:
    return 0.0 if x == 0 else math.copysign(1.0, x)


def control_voltage(gains: ControllerGains, errors: ErrorState) -> float:
    """Sliding-mode law v = -k1 e2 - (k2 + k3|z| + k4|z|^2) sgn(e2), with sgn(0) = 0.

    With ``boundary_layer > 0`` the signum is replaced by tanh(e2 / width);
    that variant is not covered by the stability certificate.
    """
    e2, zn = errors.e2, errors.z_norm
    robust = gains.k2 + gains.k3 * zn + gains.k4 * zn * zn
    s = math.tanh(e2 / gains.boundary_layer) if gains.boundary_layer > 0 else _sgn(e2)
    return -gains.k1 * e2 - robust * s


def voltage_bound(gains: ControllerGains, errors: ErrorState) -> float:
    zn = errors.z_norm
    return gains.k1 * abs(errors.e2) + gains.k2 + gains.k3 * zn + gains.k4 * zn * zn


def switched_input(regions: RegionMap, q: float, v: float, clamp: str = "none") -> tuple[float, float]:
    """Route v to the side whose stimulation region contains q; zero in Q_u.

    ``clamp="physical"`` drops the braking polarity (v > 0), which quadriceps
    stimulation cannot produce because B_k < 0 wherever it is applied.
    """
    if clamp == "physical" and v > 0:
        v = 0.0
    elif clamp not in CLAMP_MODES:
        raise ConfigError(f"unknown clamp mode {clamp!r}")
    code = int(regions.tag_code(q))
    if code == K.SIDE_R:
        return float(v), 0.0
    if code == K.SIDE_L:
        return 0.0, float(v)
    return 0.0, 0.0


def pulse_width_us(v, volts_full_scale: float = 100.0, max_us: float = 400.0):
    """Affine export-only map from stimulation magnitude to pulse width in microseconds."""
    return np.clip(np.abs(v) / volts_full_scale * max_us, 0.0, max_us)
