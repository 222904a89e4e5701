"""Single-DOF cycle-rider equation of motion and its bounding constants.

The legs are two planar thigh/shank chains pinned at a fixed hip and rigidly
attached to the pedals; together with the flywheel they reduce to

    M(q) q'' + V(q, q') q' + G(q) + tau_d(t) - tau_b(q') - P(q') = sum_s B_s Omega_s u_s

with V = M'(q) q' / 2, so that M'/2 * q' - V vanishes identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import _kernels as K
from .errors import ConfigError, VerificationFailure
from .kinematics import RiderGeometry, Side, _as_side, _check_closure, max_abs_torque_ratio, refined_max

TWO_PI = 2.0 * math.pi

OMEGA_MODELS = ("constant", "clamped")


@dataclass(frozen=True)
class DynamicsParams:
    thigh_mass: float = 8.0
    shank_mass: float = 4.5
    thigh_com_ratio: float = 0.433
    shank_com_ratio: float = 0.433
    thigh_inertia: float = 0.1336
    shank_inertia: float = 0.0760
    flywheel_inertia: float = 0.8
    crank_damping: float = 0.3
    visco_static: float = 1.0
    visco_viscous: float = 0.15
    omega_const: float = 1.0
    omega_bounds: tuple[float, float] = (0.5, 2.0)
    omega_model: str = "constant"
    disturbance_amplitude: float = 0.5
    disturbance_frequency: float = 1.0
    # declared disturbance bound; defaults to the amplitude
    disturbance_bound: float | None = None
    gravity: float = 9.81

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name in ("omega_bounds", "omega_model", "disturbance_bound"):
                continue
            if not (isinstance(val, (int, float)) and math.isfinite(val)):
                raise ConfigError(f"{f.name} must be a finite number, got {val!r}")
        for name in ("thigh_mass", "shank_mass", "thigh_inertia", "shank_inertia",
                     "visco_static", "visco_viscous", "disturbance_amplitude", "gravity"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.flywheel_inertia <= 0:
            raise ConfigError("flywheel_inertia must be > 0")
        if self.crank_damping < 0:
            raise ConfigError("crank_damping must be >= 0")
        for name in ("thigh_com_ratio", "shank_com_ratio"):
            if not 0 < getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in (0, 1)")
        lo, hi = self.omega_bounds
        if not (0 < lo <= self.omega_const <= hi):
            raise ConfigError(
                f"muscle gain bounds must satisfy 0 < c_Omega1 <= omega_const <= c_Omega2, "
                f"got {lo!r} <= {self.omega_const!r} <= {hi!r}"
            )
        if self.omega_model not in OMEGA_MODELS:
            raise ConfigError(f"omega_model must be one of {OMEGA_MODELS}")
        if self.disturbance_bound is not None and self.disturbance_bound < self.disturbance_amplitude:
            raise ConfigError("disturbance_bound must be >= disturbance_amplitude")

    @property
    def c_d(self) -> float:
        return self.disturbance_amplitude if self.disturbance_bound is None else self.disturbance_bound

    def vector(self, geom: RiderGeometry) -> np.ndarray:
        p = geom.vector.copy()
        p[K.M_T] = self.thigh_mass
        p[K.M_S] = self.shank_mass
        p[K.R_T] = self.thigh_com_ratio
        p[K.R_S] = self.shank_com_ratio
        p[K.I_T] = self.thigh_inertia
        p[K.I_S] = self.shank_inertia
        p[K.I_F] = self.flywheel_inertia
        p[K.DAMP] = self.crank_damping
        p[K.P1] = self.visco_static
        p[K.P2] = self.visco_viscous
        p[K.OMEGA0] = self.omega_const
        p[K.C_OM1], p[K.C_OM2] = self.omega_bounds
        p[K.OM_MODEL] = OMEGA_MODELS.index(self.omega_model)
        p[K.D_AMP] = self.disturbance_amplitude
        p[K.D_FREQ] = self.disturbance_frequency
        p[K.GRAV] = self.gravity
        return p

    def with_(self, **changes) -> "DynamicsParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class CrankState:
    q: float
    q_dot: float
    t: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.q, self.q_dot, self.t)):
            raise ValueError("crank state must be finite")


@dataclass(frozen=True)
class PropertyConstants:
    c_m: float
    c_M: float
    c_V: float
    c_G: float
    c_d: float
    c_B: float
    c_P1: float
    c_P2: float
    c_Omega1: float
    c_Omega2: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class CrankModel:
    """Geometry and parameters bundled with the packed kernel vector."""

    geometry: RiderGeometry
    params: DynamicsParams
    vector: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "vector", self.params.vector(self.geometry))

    def terms(self, qs) -> np.ndarray:
        """Columns M, dM/dq, G, B_R, B_L, qk_R, qk_L for each angle."""
        qs = np.ascontiguousarray(np.atleast_1d(qs), dtype=float)
        return K.model_terms_array(qs, self.vector)

    def energy(self, q, q_dot):
        """Kinetic plus potential energy (potential relative to q = 0)."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        m = self.terms(q)[:, 0]
        return 0.5 * m * np.asarray(q_dot) ** 2 + potential_energy(self.params, self.geometry, q)


def _model(params, geom):
    return params.vector(geom)


def inertia(params: DynamicsParams, geom: RiderGeometry, q: float) -> float:
    """Generalized inertia M(q) of the flywheel plus both leg chains."""
    _check_closure(geom, q, Side.R)
    return K.model_terms(float(q), _model(params, geom))[0]


def inertia_derivative(params: DynamicsParams, geom: RiderGeometry, q: float) -> float:
    return K.model_terms(float(q), _model(params, geom))[1]


def coriolis(params: DynamicsParams, geom: RiderGeometry, q: float, q_dot: float) -> float:
    """V(q, q') = M'(q) q' / 2."""
    return 0.5 * inertia_derivative(params, geom, q) * q_dot


def gravity_torque(params: DynamicsParams, geom: RiderGeometry, q: float) -> float:
    """G(q) = d/dq of the legs' potential energy; the flywheel is balanced."""
    return K.model_terms(float(q), _model(params, geom))[2]


def segment_kinematics(params: DynamicsParams, geom: RiderGeometry, q: float, side=Side.R):
    """Segment COM positions/orientations and their closed-form derivatives in q.

    Returns a dict with ``thigh_com``, ``shank_com`` (x, y), ``thigh_angle``,
    ``shank_angle`` and the matching ``d_*`` entries (derivative per radian of crank).
    """
    side = _as_side(side)
    p = _model(params, geom)
    wt, ws, dwt, dws, ax, ay, bx, by, qk, bk = K.side_terms(float(q), side.offset, p)
    hx, hy = geom.hip_position
    rt, rs = params.thigh_com_ratio, params.shank_com_ratio
    return {
        "thigh_com": (hx + rt * ax, hy + rt * ay),
        "shank_com": (hx + ax + rs * bx, hy + ay + rs * by),
        "thigh_angle": math.atan2(ay, ax),
        "shank_angle": math.atan2(by, bx),
        "d_thigh_com": (-rt * wt * ay, rt * wt * ax),
        "d_shank_com": (-wt * ay - rs * ws * by, wt * ax + rs * ws * bx),
        "d_thigh_angle": wt,
        "d_shank_angle": ws,
    }


def potential_energy(params: DynamicsParams, geom: RiderGeometry, q):
    """Gravitational potential of both legs (zero-height reference at the crank axis)."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    out = np.empty_like(q)
    p = _model(params, geom)
    hy = geom.hip_vertical
    for i, qi in enumerate(q):
        total = 0.0
        for side in Side:
            _, _, _, _, ax, ay, bx, by, _, _ = K.side_terms(qi, side.offset, p)
            total += params.thigh_mass * (hy + params.thigh_com_ratio * ay)
            total += params.shank_mass * (hy + ay + params.shank_com_ratio * by)
        out[i] = params.gravity * total
    return out


def passive_torque(params: DynamicsParams, q_dot: float) -> tuple[float, float]:
    """Rider viscoelastic torque P and bearing damping tau_b = -c q'."""
    p = -params.visco_static * math.tanh(4.0 * q_dot) - params.visco_viscous * q_dot
    return p, -params.crank_damping * q_dot


def muscle_gain(params: DynamicsParams, geom: RiderGeometry, q: float, q_dot: float = 0.0,
                side=Side.R) -> float:
    """Omega^s; constant by default, or a knee-angle dependent clamped model."""
    lo, hi = params.omega_bounds
    if not (0 < lo <= params.omega_const <= hi):
        raise ConfigError("muscle gain bounds violate c_Omega1 <= Omega <= c_Omega2")
    if params.omega_model == "constant":
        return params.omega_const
    side = _as_side(side)
    qk = K.side_terms(float(q), side.offset, _model(params, geom))[8]
    return K.muscle_gain(qk, _model(params, geom))


def disturbance(params: DynamicsParams, t: float) -> float:
    return params.disturbance_amplitude * math.sin(params.disturbance_frequency * t)


def forward_dynamics(params: DynamicsParams, geom: RiderGeometry, state: CrankState,
                     u_R: float, u_L: float) -> float:
    """Crank acceleration for already-gated stimulation voltages."""
    _check_closure(geom, state.q, Side.R)
    p = _model(params, geom)
    m, dm, g, br, bl, kr, kl = K.model_terms(float(state.q), p)
    active = br * K.muscle_gain(kr, p) * u_R + bl * K.muscle_gain(kl, p) * u_L
    pv, tb = K.passive(float(state.q_dot), p)
    v = 0.5 * dm * state.q_dot
    return (active - v * state.q_dot - g - K.disturbance(float(state.t), p) + tb + pv) / m


def _omega_range(params, geom, qs):
    if params.omega_model == "constant":
        return params.omega_const, params.omega_const
    terms = K.model_terms_array(qs, _model(params, geom))
    p = _model(params, geom)
    om = np.array([K.muscle_gain(k, p) for k in np.concatenate([terms[:, 5], terms[:, 6]])])
    return float(om.min()), float(om.max())


def property_constants(params: DynamicsParams, geom: RiderGeometry, q_dot_max: float,
                       n_samples: int = 100_000, seed: int = 0) -> PropertyConstants:
    """Bounding constants of the model, extremized over the crank cycle and re-verified.

    Extremes come from a 4096-point grid refined by golden-section search; every
    constant is then checked against ``n_samples`` random (q, q') points.
    """
    if not q_dot_max > 0:
        raise ValueError("q_dot_max must be positive")
    p = _model(params, geom)

    def col(j, sign=1.0, absval=False):
        def vec(qs):
            v = K.model_terms_array(np.ascontiguousarray(qs), p)[:, j]
            return sign * (np.abs(v) if absval else v)

        def scal(q):
            v = K.model_terms(q, p)[j]
            return sign * (abs(v) if absval else v)

        return refined_max(vec, scal)[1]

    # one ulp-scale guard so sampled points never exceed the refined extremum by rounding
    up, down = 1 + 1e-12, 1 - 1e-12
    c_M = col(0) * up
    c_m = -col(0, -1.0) * down
    c_V = 0.5 * col(1, absval=True) * up
    c_G = col(2, absval=True) * up
    c_B = max_abs_torque_ratio(geom) * up
    lo, hi = params.omega_bounds
    pc = PropertyConstants(
        c_m=c_m, c_M=c_M, c_V=c_V, c_G=c_G, c_d=params.c_d, c_B=c_B,
        c_P1=params.visco_static, c_P2=params.visco_viscous, c_Omega1=lo, c_Omega2=hi,
    )
    verify_property_constants(params, geom, pc, q_dot_max, n_samples, seed)
    return pc


def verify_property_constants(params, geom, pc: PropertyConstants, q_dot_max, n_samples=100_000,
                              seed=0) -> dict[str, int]:
    """Count sampled violations of each model bound; raise if any."""
    rng = np.random.default_rng(seed)
    qs = rng.uniform(0.0, TWO_PI, n_samples)
    qd = rng.uniform(-q_dot_max, q_dot_max, n_samples)
    ts = rng.uniform(0.0, 1e3, n_samples)
    p = _model(params, geom)
    T = K.model_terms_array(qs, p)
    m, dm, g = T[:, 0], T[:, 1], T[:, 2]
    v = 0.5 * dm * qd
    pv = -params.visco_static * np.tanh(4 * qd) - params.visco_viscous * qd
    td = params.disturbance_amplitude * np.sin(params.disturbance_frequency * ts)
    om_lo, om_hi = _omega_range(params, geom, qs)
    counts = {
        "inertia": int(np.sum((m < pc.c_m) | (m > pc.c_M))),
        "coriolis": int(np.sum(np.abs(v) > pc.c_V * np.abs(qd))),
        "gravity": int(np.sum(np.abs(g) > pc.c_G)),
        "disturbance": int(np.sum(np.abs(td) > pc.c_d)),
        "torque_ratio": int(np.sum(np.maximum(np.abs(T[:, 3]), np.abs(T[:, 4])) > pc.c_B)),
        "passive": int(np.sum(np.abs(pv) > pc.c_P1 + pc.c_P2 * np.abs(qd) + 1e-12)),
        "muscle_gain": int(om_lo < pc.c_Omega1 or om_hi > pc.c_Omega2),
    }
    bad = {k: n for k, n in counts.items() if n}
    if bad:
        raise VerificationFailure(f"sampled points violate property bounds: {bad}")
    return counts
