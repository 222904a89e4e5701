"""Stability certificate: bounding constants, decay and growth envelopes,
reverse dwell-time limit, trajectory conditions and the ultimate bound.

The Lyapunov-like function is V_L = (e1^2 + M(q) e2^2) / 2 with
lambda1 |z|^2 <= V_L <= lambda2 |z|^2.  Inside a stimulation region V_L decays
at rate gamma1 / lambda2; in the uncontrolled arcs sqrt(V_L) is dominated by a
tangent-shaped envelope with finite escape time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from . import _kernels as K
from .controller import ControllerGains, TrajectorySpec, desired_trajectory
from .dynamics import DynamicsParams, PropertyConstants, property_constants, verify_property_constants
from .errors import (ComplexRoot, DegenerateCoefficient, EscapeTimeExceeded, FESCycleError,
                     GainConditionViolated, InfeasibleTrajectory, MonotonicityWarning, NegativeA3,
                     NoCrossing, ValidationFailure)
from .kinematics import Interval, RegionMap, RiderGeometry, stimulation_regions

TWO_PI = 2.0 * math.pi
TAN_LIMIT = 0.5 * math.pi - 1e-9


@dataclass(frozen=True)
class AnalysisConstants:
    c1: float
    c2: float
    c3: float
    lambda1: float
    lambda2: float
    gamma1: float = math.nan
    a1: float = math.nan
    a2: float = math.nan
    a3: float = math.nan
    dt_min_on: float = math.nan
    dt_max_off: float = math.nan
    q_dot_crit: float = math.nan
    d_bar: float = math.nan
    d_lower: float = math.nan
    d_radius: float = math.nan

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------- chi bound

def _chi_samples(params: DynamicsParams, geom: RiderGeometry, traj: TrajectorySpec, alpha: float,
                 z_max: float, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact |chi| and ||z|| at random (q, z, t) points."""
    rng = np.random.default_rng(seed)
    r = z_max * np.sqrt(rng.uniform(0.0, 1.0, n))
    phi = rng.uniform(0.0, TWO_PI, n)
    e1, e2 = r * np.cos(phi), r * np.sin(phi)
    # half the points inside the ramp transient where q_d'' is largest
    span = np.where(rng.uniform(size=n) < 0.5, 5.0 / traj.ramp_rate, 1e3)
    t = traj.t_start + rng.uniform(0.0, 1.0, n) * span
    qd, qd_dot, qd_ddot = desired_trajectory(traj, t)
    q = qd - e1
    e1dot = e2 - alpha * e1
    qdot = qd_dot - e1dot
    p = params.vector(geom)
    T = K.model_terms_array(np.ascontiguousarray(q % TWO_PI), p)
    m, dm, g = T[:, 0], T[:, 1], T[:, 2]
    tau_d = params.disturbance_amplitude * np.sin(params.disturbance_frequency * t)
    passive = -params.visco_static * np.tanh(4.0 * qdot) - params.visco_viscous * qdot
    chi = (m * (qd_ddot + alpha * e1dot) + 0.5 * dm * qdot * (qd_dot + alpha * e1)
           + g + tau_d + params.crank_damping * qdot - passive)
    return np.abs(chi), r


def chi_bound_constants(props: PropertyConstants, traj: TrajectorySpec, alpha: float, z_max: float,
                        damping: float, *, params: DynamicsParams | None = None,
                        geom: RiderGeometry | None = None, n_samples: int = 100_000,
                        seed: int = 1) -> tuple[float, float, float]:
    """Coefficients with |chi| <= c1 + c2 |z| + c3 |z|^2.

    With Qd = max q_d', Qdd = max q_d'' and S = sqrt(1 + alpha^2), use
    q' = q_d' + alpha e1 - e2 and |e2 - alpha e1|, |q' - q_d'| <= S|z|:

      |M (q_d'' + alpha e1')|   <= c_M Qdd + c_M alpha S |z|
      |V| |q_d' + alpha e1|     <= c_V (Qd + S|z|)(Qd + alpha|z|)
      |G| + |tau_d|             <= c_G + c_d
      |c q' + passive|          <= c_P1 + (c + c_P2)(Qd + S|z|)

    When ``params`` and ``geom`` are given the result is checked against the
    exact chi on ``n_samples`` random points with |z| <= z_max.
    """
    if z_max < 0:
        raise ValueError("z_max must be >= 0")
    qd_max = traj.max_velocity
    qdd_max = traj.max_acceleration
    s = math.sqrt(1.0 + alpha * alpha)
    damp = damping + props.c_P2
    c1 = (props.c_M * qdd_max + props.c_V * qd_max ** 2 + props.c_G + props.c_d + props.c_P1
          + damp * qd_max)
    c2 = props.c_M * alpha * s + props.c_V * (alpha + s) * qd_max + damp * s
    c3 = props.c_V * alpha * s
    if params is not None and geom is not None and n_samples > 0:
        chi, zn = _chi_samples(params, geom, traj, alpha, z_max, n_samples, seed)
        bound = c1 + c2 * zn + c3 * zn * zn
        bad = int(np.sum(chi > bound * (1 + 1e-12)))
        if bad:
            raise ValidationFailure(f"{bad} of {n_samples} samples exceed the chi bound")
    return c1, c2, c3


# ---------------------------------------------------------------- decay

def lyapunov_constants(c_m: float, c_M: float) -> tuple[float, float]:
    if not 0 < c_m <= c_M:
        raise ValueError("need 0 < c_m <= c_M")
    return min(0.5, 0.5 * c_m), max(0.5, 0.5 * c_M)


def decay_rate(gains: ControllerGains, epsilon: float, c_Omega1: float) -> float:
    """gamma1 = min(alpha - 1/2, eps c_Omega1 k1 - 1/2); requires both positive."""
    if not gains.alpha > 0.5:
        raise GainConditionViolated("alpha", f"alpha > 1/2 violated (alpha = {gains.alpha:.6g})")
    k1_min = 1.0 / (2.0 * epsilon * c_Omega1)
    if not gains.k1 > k1_min:
        raise GainConditionViolated(
            "k1", f"k1 > 1/(2 eps c_Omega1) = {k1_min:.6g} violated (k1 = {gains.k1:.6g})")
    return min(gains.alpha - 0.5, epsilon * c_Omega1 * gains.k1 - 0.5)


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    bound: float
    margin: float
    passed: bool
    detail: str = ""


@dataclass
class GainReport:
    checks: list[Check]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def first_failure(self) -> Check | None:
        return next((c for c in self.checks if not c.passed), None)


def verify_gain_conditions(gains: ControllerGains, epsilon: float, c_Omega1: float,
                           c1: float, c2: float, c3: float) -> GainReport:
    ec = epsilon * c_Omega1
    rows = [
        ("alpha > 1/2", gains.alpha, 0.5, True),
        ("k1 > 1/(2 eps c_Omega1)", gains.k1, 1.0 / (2.0 * ec), True),
        ("k2 >= c1/(eps c_Omega1)", gains.k2, c1 / ec, False),
        ("k3 >= c2/(eps c_Omega1)", gains.k3, c2 / ec, False),
        ("k4 >= c3/(eps c_Omega1)", gains.k4, c3 / ec, False),
    ]
    checks = []
    for name, val, bound, strict in rows:
        margin = val - bound
        checks.append(Check(name, val, bound, margin, margin > 0 if strict else margin >= 0))
    return GainReport(checks)


def decay_envelope(z_on, gamma1: float, lambda1: float, lambda2: float, dt):
    """Upper bound on |z| a time dt after stimulation switched on."""
    dt = np.asarray(dt, dtype=float)
    if np.any(dt < 0):
        raise ValueError("dt must be >= 0")
    out = math.sqrt(lambda2 / lambda1) * np.asarray(z_on) * np.exp(-gamma1 * dt / (2.0 * lambda2))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- growth

def growth_constants(c1: float, c2: float, c3: float, lambda1: float) -> tuple[float, float, float]:
    if not lambda1 > 0:
        raise ValueError("lambda1 must be > 0")
    a1 = c3 / lambda1 ** 1.5
    a2 = (c2 + 0.5) / lambda1
    a3 = 4.0 * a1 * c1 / math.sqrt(lambda1) - a2 * a2
    if not a3 > 0:
        raise NegativeA3(f"a3 = {a3:.6g} <= 0: tangent-form growth envelope does not exist")
    return a1, a2, a3


def c3_for_a3(a3: float, c1: float, c2: float, lambda1: float) -> float:
    """c3 giving the requested a3 with c1, c2 and lambda1 held fixed."""
    a2 = (c2 + 0.5) / lambda1
    a1 = (a3 + a2 * a2) * math.sqrt(lambda1) / (4.0 * c1)
    return a1 * lambda1 ** 1.5


def _tan_arg(sqrt_v0, a1, a2, a3, dt):
    return 0.25 * a3 * dt + np.arctan(2.0 * a1 / a3 * sqrt_v0 + a2 / a3)


def growth_envelope_v(v_off, a1: float, a2: float, a3: float, dt):
    """Upper bound on V_L a time dt after stimulation switched off."""
    dt = np.asarray(dt, dtype=float)
    arg = _tan_arg(np.sqrt(v_off), a1, a2, a3, dt)
    if np.any(arg >= TAN_LIMIT):
        raise EscapeTimeExceeded("time in the uncontrolled region exceeds the envelope escape time")
    out = ((a3 * np.tan(arg) - a2) / (2.0 * a1)) ** 2
    return float(out) if out.ndim == 0 else out


def growth_envelope(z_off, a1: float, a2: float, a3: float, lambda1: float, lambda2: float, dt):
    """Upper bound on |z| a time dt after stimulation switched off."""
    dt = np.asarray(dt, dtype=float)
    arg = _tan_arg(math.sqrt(lambda2) * np.asarray(z_off), a1, a2, a3, dt)
    if np.any(arg >= TAN_LIMIT):
        raise EscapeTimeExceeded("time in the uncontrolled region exceeds the envelope escape time")
    out = (a3 * np.tan(arg) - a2) / (2.0 * a1 * math.sqrt(lambda1))
    return float(out) if out.ndim == 0 else out


def comparison_rhs(v, c1: float, c2: float, c3: float, lambda1: float):
    """Right side of the V_L growth inequality in the uncontrolled region."""
    v = np.maximum(v, 0.0)
    return (c1 / math.sqrt(lambda1) * np.sqrt(v) + (c2 + 0.5) / lambda1 * v
            + c3 / lambda1 ** 1.5 * v ** 1.5)


def rdt_max_offtime(z_off, a1: float, a2: float, a3: float, lambda2: float) -> float:
    """Strict upper limit on the time spent in one uncontrolled arc."""
    if not a3 > 0:
        raise NegativeA3(f"a3 = {a3:.6g} <= 0")
    x = 2.0 * a1 / a3 * math.sqrt(lambda2) * z_off + a2 / a3
    return (TWO_PI - 4.0 * math.atan(x)) / a3


# ---------------------------------------------------------------- timing

def _controlled_lengths(regions: RegionMap, q_start: float | None) -> list[float]:
    lengths = [iv.length for iv in regions.controlled_intervals()]
    if q_start is not None:
        for iv in regions.controlled_intervals():
            if iv.contains(q_start):
                lengths.append(iv.length - (q_start - iv.start) % TWO_PI)
    return lengths


def _first_arc_length(regions: RegionMap, q_start: float) -> float:
    """Distance from q_start to the end of the controlled arc containing it (0 outside)."""
    for iv in regions.controlled_intervals():
        if iv.contains(q_start):
            return iv.length - (q_start - iv.start) % TWO_PI
    return 0.0


def min_ontime_bound(geom: RiderGeometry, regions: RegionMap, traj: TrajectorySpec, alpha: float,
                     lambda1: float, lambda2: float, z_on: float, *,
                     q_start: float | None = None) -> float:
    """Least time any controlled arc can take at the worst admissible crank speed.

    |q'| <= max q_d' + (1 + alpha) sqrt(lambda2/lambda1) |z(t_on)| inside the arc.
    ``q_start`` adds the partial arc the run starts in.
    """
    speed = traj.max_velocity + (1.0 + alpha) * math.sqrt(lambda2 / lambda1) * z_on
    return min(_controlled_lengths(regions, q_start)) / speed


def max_desired_velocity(regions: RegionMap, alpha: float, lambda1: float, lambda2: float,
                         z_on: float, dt_min_on: float, *, q_start: float | None = None) -> float:
    """Largest max q_d' that still guarantees the requested minimum on-time."""
    need = (min(_controlled_lengths(regions, q_start)) / dt_min_on
            - (1.0 + alpha) * math.sqrt(lambda2 / lambda1) * z_on)
    if need <= 0:
        raise InfeasibleTrajectory(f"required max desired velocity {need:.6g} <= 0")
    return need


def _ballistic_time(p, entry, length, w, t0, h, t_max):
    return K.ballistic_crossing(p, entry, entry + length, w, t0, h, t_max)


def critical_velocity(params: DynamicsParams, geom: RiderGeometry, region: Interval | Sequence[Interval],
                      dt_max_off: float, *, h: float = 1e-4, n_phases: int = 16,
                      w_lo: float = 1e-3, w_hi: float = 50.0, tol: float = 1e-6) -> float:
    """Least entry speed whose zero-input crossing of the arc(s) takes <= dt_max_off.

    Worst case over every given arc and over ``n_phases`` disturbance phases.
    """
    if not dt_max_off > 0:
        raise ValueError("dt_max_off must be > 0")
    arcs = [region] if isinstance(region, Interval) else list(region)
    p = params.vector(geom)
    om = params.disturbance_frequency
    starts = [0.0] if om == 0 or params.disturbance_amplitude == 0 else \
        [TWO_PI * k / n_phases / om for k in range(n_phases)]
    t_max = dt_max_off + 2 * h

    def worst(w):
        return max(_ballistic_time(p, iv.start, iv.length, w, t0, h, t_max)
                   for iv in arcs for t0 in starts)

    if worst(w_hi) > dt_max_off:
        raise NoCrossing(f"no crossing within {dt_max_off:.6g} s even at {w_hi:.6g} rad/s")
    if worst(w_lo) <= dt_max_off:
        return w_lo
    probe = np.geomspace(w_lo, w_hi, 33)
    times = np.array([worst(w) for w in probe])
    fin = np.isfinite(times)
    if np.any(np.diff(times[fin]) > 0):
        warnings.warn("crossing time not monotone in entry speed; using grid scan",
                      MonotonicityWarning, stacklevel=2)
        ok = probe[times <= dt_max_off]
        hi = float(ok.min())
        fine = np.linspace(probe[max(np.searchsorted(probe, hi) - 1, 0)], hi, 2001)
        return float(next(w for w in fine if worst(w) <= dt_max_off))
    i = int(np.argmax(times <= dt_max_off))
    lo, hi = float(probe[i - 1]), float(probe[i])
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if worst(mid) <= dt_max_off:
            hi = mid
        else:
            lo = mid
    return hi


def offtime_trajectory_conditions(q_dot_crit: float, alpha: float, lambda1: float, lambda2: float,
                                  gamma1: float, z_on: float, dt_min_on: float) -> float:
    """Least desired speed at switch-off that keeps the crank above the critical velocity."""
    decay = math.exp(-gamma1 / (2.0 * lambda2) * dt_min_on) if math.isfinite(gamma1) else 0.0
    return q_dot_crit + (1.0 + alpha) * math.sqrt(lambda2 / lambda1) * z_on * decay


def offtime_condition_from_zoff(q_dot_crit: float, alpha: float, z_off: float) -> float:
    return q_dot_crit + (1.0 + alpha) * z_off


# ---------------------------------------------------------------- ultimate bound

def ultimate_bound(gamma1: float, lambda2: float, a1: float, a2: float, a3: float,
                   dt_min_on: float, dt_max_off: float, *, lambda1: float | None = None,
                   check_residual: bool = True) -> tuple[float, float, float]:
    """Fixed point of one decay-then-growth cycle of V_L at switch-on.

    Returns (d_bar, d_lower, d) with d_lower the switch-off bound and
    d = sqrt(d_bar / lambda1) the error-norm radius (nan without lambda1).
    """
    if not 0.25 * a3 * dt_max_off < 0.5 * math.pi:
        raise EscapeTimeExceeded("dt_max_off is past the growth envelope escape time")
    tn = math.tan(0.25 * a3 * dt_max_off)
    ed = math.exp(-gamma1 / (2.0 * lambda2) * dt_min_on)
    b1 = -4.0 * a1 * a1 * tn * ed
    b2 = 2.0 * a1 * a3 * (1.0 - ed) - 2.0 * a1 * a2 * tn * (1.0 + ed)
    b3 = -(a2 * a2 + a3 * a3) * tn
    for name, b in (("b1", b1), ("b2", b2), ("b3", b3)):
        if abs(b) < 1e-14:
            raise DegenerateCoefficient(f"{name} = {b:.3g} vanishes")
    disc = b2 * b2 - 4.0 * b1 * b3
    if disc < 0:
        raise ComplexRoot(f"discriminant {disc:.6g} < 0")
    # Citardauq form of the same root keeps precision when b1 b3 << b2^2
    root = (-b2 + math.sqrt(disc)) / (2.0 * b1)
    if b2 > 0:
        root = 2.0 * b3 / (-b2 - math.sqrt(disc))
    d_bar = root * root
    if check_residual:
        res = bound_residual(d_bar, gamma1, lambda2, a1, a2, a3, dt_min_on, dt_max_off)
        if not abs(res) <= 1e-10 * max(1.0, d_bar):
            raise ComplexRoot(f"quadratic root is not a fixed point (residual {res:.3g}); "
                              "decay cannot balance growth")
    d_lower = d_bar * math.exp(-gamma1 / lambda2 * dt_min_on)
    d = math.sqrt(d_bar / lambda1) if lambda1 else math.nan
    return d_bar, d_lower, d


def max_admissible_offtime(gamma1: float, lambda2: float, a1: float, a2: float, a3: float,
                           dt_min_on: float, z_off: float) -> float:
    """Supremum of off-times that stay below the RDT limit and admit an ultimate bound."""
    rdt = rdt_max_offtime(z_off, a1, a2, a3, lambda2)

    def ok(dt):
        try:
            ultimate_bound(gamma1, lambda2, a1, a2, a3, dt_min_on, dt)
        except FESCycleError:
            return False
        return True

    lo, hi = 0.0, rdt
    if ok(hi * (1 - 1e-12)):
        return rdt
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * rdt:
            break
    return lo


def cycle_map(v_on: float, gamma1: float, lambda2: float, a1: float, a2: float, a3: float,
              dt_min_on: float, dt_max_off: float) -> float:
    """Worst V_L at the next switch-on: minimum decay then maximum growth."""
    v_off = v_on * math.exp(-gamma1 / lambda2 * dt_min_on)
    return growth_envelope_v(v_off, a1, a2, a3, dt_max_off)


def bound_residual(d_bar, gamma1, lambda2, a1, a2, a3, dt_min_on, dt_max_off) -> float:
    try:
        return cycle_map(d_bar, gamma1, lambda2, a1, a2, a3, dt_min_on, dt_max_off) - d_bar
    except EscapeTimeExceeded:
        return math.inf


# ---------------------------------------------------------------- pipeline

@dataclass(frozen=True)
class CertifyOptions:
    z_max: float | None = None
    dt_max_off: float | None = None
    rdt_fraction: float = 0.9
    n_samples: int = 100_000
    seed: int = 0
    ballistic_step: float = 1e-4
    n_phases: int = 16
    # loosen c3 until a3 reaches this value (a larger c3 still bounds chi)
    a3_target: float | None = None


@dataclass
class Certificate:
    constants: AnalysisConstants | None
    props: PropertyConstants | None
    regions: RegionMap | None
    checks: list[Check] = field(default_factory=list)
    values: dict[str, float] = field(default_factory=dict)
    error: str | None = None

    @property
    def certified(self) -> bool:
        return self.error is None and bool(self.checks) and all(c.passed for c in self.checks)

    @property
    def first_failure(self) -> str | None:
        bad = next((c for c in self.checks if not c.passed), None)
        if bad is not None:
            return bad.name
        return self.error

    def report(self) -> str:
        lines = ["certificate", ""]
        if self.props is not None:
            lines.append("[model bounds]")
            lines += [f"  {k:<22s} {v:.10g}" for k, v in self.props.as_dict().items()]
        if self.constants is not None:
            lines.append("[analysis constants]")
            lines += [f"  {k:<22s} {v:.10g}" for k, v in self.constants.as_dict().items()]
        if self.values:
            lines.append("[derived values]")
            lines += [f"  {k:<22s} {v:.10g}" for k, v in self.values.items()]
        lines.append("[checks]")
        for c in self.checks:
            tag = "PASS" if c.passed else "FAIL"
            lines.append(f"  {tag}  {c.name:<42s} value={c.value:.10g} bound={c.bound:.10g} "
                         f"margin={c.margin:.6g}{'  ' + c.detail if c.detail else ''}")
        if self.error:
            lines.append(f"  STOP  {self.error}")
        lines.append("")
        lines.append("CERTIFIED" if self.certified else f"NOT CERTIFIED: {self.first_failure}")
        return "\n".join(lines) + "\n"


def _check(cert, name, value, bound, passed, detail="", upper=False):
    # margin is positive on the passing side for both lower and upper bounds
    margin = bound - value if upper else value - bound
    cert.checks.append(Check(name, float(value), float(bound), float(margin), bool(passed), detail))
    return passed


def certify(scenario, options: CertifyOptions = CertifyOptions()) -> Certificate:
    """Run the full chain of bounds for a scenario and record every condition.

    Stops at the first stage whose output later stages need.
    """
    geom, params, gains, traj = scenario.geometry, scenario.dynamics, scenario.gains, scenario.trajectory
    init = scenario.initial
    alpha, eps = gains.alpha, gains.epsilon
    cert = Certificate(None, None, None)
    try:
        regions = stimulation_regions(geom, eps)
    except FESCycleError as exc:
        cert.error = f"stimulation regions: {exc}"
        return cert
    cert.regions = regions

    qd0, qd_dot0, _ = desired_trajectory(traj, init.t)
    e1 = qd0 - init.q
    e2 = (qd_dot0 - init.q_dot) + alpha * e1
    z0 = math.hypot(e1, e2)
    s = math.sqrt(1 + alpha * alpha)
    try:
        props = property_constants(params, geom, traj.max_velocity + s * (z0 + 1.0),
                                   n_samples=options.n_samples, seed=options.seed)
        lam1, lam2 = lyapunov_constants(props.c_m, props.c_M)
        z_max = options.z_max if options.z_max is not None else 2.0 * math.sqrt(lam2 / lam1) * z0 + 1.0
        verify_property_constants(params, geom, props, traj.max_velocity + s * z_max,
                                  options.n_samples, options.seed)
        c1, c2, c3 = chi_bound_constants(props, traj, alpha, z_max, params.crank_damping,
                                         params=params, geom=geom, n_samples=options.n_samples,
                                         seed=options.seed + 1)
    except FESCycleError as exc:
        cert.error = f"model bounds: {exc}"
        return cert
    cert.props = props
    cert.values.update(z0=z0, z_max=z_max)
    if options.a3_target is not None:
        c3 = max(c3, c3_for_a3(options.a3_target, c1, c2, lam1))
    consts = dict(c1=c1, c2=c2, c3=c3, lambda1=lam1, lambda2=lam2)

    def finish():
        cert.constants = AnalysisConstants(**consts)
        return cert

    gains_ok = verify_gain_conditions(gains, eps, props.c_Omega1, c1, c2, c3)
    cert.checks.extend(gains_ok.checks)
    if gains_ok.checks[0].passed and gains_ok.checks[1].passed:
        gamma1 = decay_rate(gains, eps, props.c_Omega1)
        consts["gamma1"] = gamma1
    else:
        return finish()
    try:
        a1, a2, a3 = growth_constants(c1, c2, c3, lam1)
    except NegativeA3 as exc:
        _check(cert, "a3 > 0", 4 * (c3 / lam1 ** 1.5) * c1 / math.sqrt(lam1)
               - ((c2 + 0.5) / lam1) ** 2, 0.0, False, str(exc))
        return finish()
    consts.update(a1=a1, a2=a2, a3=a3)
    # the tangent envelope dominates the comparison solution only when a3 >= 1
    _check(cert, "a3 >= 1 (growth envelope validity)", a3, 1.0, a3 >= 1.0)

    v0 = lam2 * z0 * z0
    first_arc = _first_arc_length(regions, init.q)

    def chain(dt_off, tol):
        """Switch-on bound iteration and trajectory margin for a fixed off-time budget."""
        v_on, d_bar, d_lower, d = v0, math.nan, math.nan, math.nan
        converged = False
        for _ in range(200):
            z_on = math.sqrt(v_on / lam1)
            dt_on = min_ontime_bound(geom, regions, traj, alpha, lam1, lam2, z_on, q_start=init.q)
            d_bar, d_lower, d = ultimate_bound(gamma1, lam2, a1, a2, a3, dt_on, dt_off, lambda1=lam1)
            new = max(v0, d_bar)
            if abs(new - v_on) <= 1e-13 * max(new, 1e-300):
                converged = True
                v_on = new
                break
            v_on = new
        z_on = math.sqrt(v_on / lam1)
        dt_on = min_ontime_bound(geom, regions, traj, alpha, lam1, lam2, z_on, q_start=init.q)
        z_off = math.sqrt(v_on * math.exp(-gamma1 / lam2 * dt_on) / lam1)
        rdt = rdt_max_offtime(z_off, a1, a2, a3, lam2)
        qcrit = critical_velocity(params, geom, regions.uncontrolled_intervals, dt_off,
                                  h=options.ballistic_step, n_phases=options.n_phases, tol=tol)
        need = offtime_trajectory_conditions(qcrit, alpha, lam1, lam2, gamma1, z_on, dt_on)
        # q_d' is increasing, so the earliest possible first switch-off is the worst case
        speed = traj.max_velocity + (1.0 + alpha) * math.sqrt(lam2 / lam1) * z_on
        have = desired_trajectory(traj, init.t + first_arc / speed)[1]
        return dict(v_on=v_on, z_on=z_on, z_off=z_off, dt_on=dt_on, dt_off=dt_off, rdt=rdt,
                    d_bar=d_bar, d_lower=d_lower, d=d, converged=converged, qcrit=qcrit,
                    need=need, have=have)

    if options.dt_max_off is not None:
        candidates = [options.dt_max_off]
    else:
        # the off-time budget trades a larger ultimate bound against a lower critical velocity
        z_off0 = math.sqrt(v0 / lam1)
        dt_on0 = min_ontime_bound(geom, regions, traj, alpha, lam1, lam2, z_off0, q_start=init.q)
        sup = max_admissible_offtime(gamma1, lam2, a1, a2, a3, dt_on0, z_off0)
        candidates = list(sup * options.rdt_fraction * np.geomspace(1e-3, 1.0, 31))
    best, last_exc = None, None
    for dt in candidates:
        try:
            res = chain(dt, 1e-4 if len(candidates) > 1 else 1e-6)
        except FESCycleError as exc:
            last_exc = exc
            continue
        if res["dt_off"] >= res["rdt"]:
            continue
        if best is None or res["have"] - res["need"] > best["have"] - best["need"]:
            best = res
    if best is None:
        cert.error = f"ultimate bound: {last_exc or 'no admissible off-time budget'}"
        return finish()
    if len(candidates) > 1:
        best = chain(best["dt_off"], 1e-6)
    b = best
    consts.update(dt_min_on=b["dt_on"], dt_max_off=b["dt_off"], d_bar=b["d_bar"],
                  d_lower=b["d_lower"], d_radius=b["d"], q_dot_crit=b["qcrit"])
    cert.values.update(z_on_bound=b["z_on"], z_off_bound=b["z_off"], rdt_limit=b["rdt"],
                       required_qd_dot_off=b["need"], available_qd_dot_off=b["have"])
    _check(cert, "dt_max_off < rdt limit", b["dt_off"], b["rdt"], b["dt_off"] < b["rdt"],
           upper=True)
    _check(cert, "switch-on bound iteration converged", float(b["converged"]), 1.0, b["converged"])
    _check(cert, "ultimate bound d > 0", b["d"], 0.0, b["d"] > 0)
    grow = cycle_map(b["v_on"], gamma1, lam2, a1, a2, a3, b["dt_on"], b["dt_off"])
    _check(cert, "cycle map nonexpanding at switch-on bound", b["v_on"], grow,
           grow <= b["v_on"] * (1 + 1e-9) + 1e-15)
    _check(cert, "q_d'(t_off) >= critical + error margin", b["have"], b["need"], b["have"] >= b["need"])
    _check(cert, "initial q in a stimulation region", 1.0 if regions.tag_code(init.q) else 0.0,
           1.0, regions.tag_code(init.q) != 0)
    return finish()
