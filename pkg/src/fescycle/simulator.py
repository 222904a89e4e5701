"""Hybrid integration of the switched closed loop, traces and bound audits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import _kernels as K
from .analysis import AnalysisConstants, growth_envelope_v, rdt_max_offtime
from .controller import ControllerGains, TrajectorySpec, controller_vector
from .dynamics import CrankState, DynamicsParams
from .errors import ConfigError, EscapeDetected, EscapeTimeExceeded, NonForwardProgress
from .kinematics import RegionMap, RiderGeometry, stimulation_regions

TWO_PI = 2.0 * math.pi
Z_ESCAPE = 1e6
STALL_LIMIT = 10.0

CHANNELS = ("t", "q", "q_dot", "q_d", "q_dot_d", "e1", "e1_dot", "e2", "V_L", "u_R", "u_L",
            "active_region")
SCHEDULE_COLUMNS = ("n", "t_on", "q_on", "t_off", "q_off")


@dataclass(frozen=True)
class Scenario:
    geometry: RiderGeometry = field(default_factory=lambda: RiderGeometry(0.40, 0.43, 0.17, 0.60, 0.12))
    dynamics: DynamicsParams = field(default_factory=DynamicsParams)
    gains: ControllerGains = field(default_factory=ControllerGains)
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    initial: CrankState = field(default_factory=lambda: CrankState(1.5, 0.0, 0.0))
    step_size: float = 1e-4
    revolutions: float | None = 90.0
    duration: float | None = None
    record_stride: int = 1
    seed: int = 0
    meta: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 1e-6 <= self.step_size <= 1e-2:
            raise ConfigError(f"step_size must lie in [1e-6, 1e-2], got {self.step_size!r}")
        if self.revolutions is None and self.duration is None:
            raise ConfigError("scenario needs revolutions or duration")
        if self.revolutions is not None and not self.revolutions > 0:
            raise ConfigError("revolutions must be > 0")
        if self.duration is not None and not self.duration > 0:
            raise ConfigError("duration must be > 0")
        if int(self.record_stride) < 1:
            raise ConfigError("record_stride must be >= 1")
        regions = self.regions
        if regions.tag_code(self.initial.q) == K.SIDE_NONE:
            raise ConfigError(
                f"initial q = {self.initial.q:.6g} lies in the uncontrolled region; "
                "the scenario must start inside a stimulation region")

    @property
    def regions(self) -> RegionMap:
        return stimulation_regions(self.geometry, self.gains.epsilon)

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)


@dataclass(frozen=True)
class SwitchRecord:
    n: int
    t_on: float
    q_on: float
    t_off: float
    q_off: float


@dataclass
class SimulationTrace:
    """Recorded samples plus the switching schedule.

    Rows are written at every ``record_stride``-th grid step and at every
    event; event rows carry the state right after the switch.
    """

    t: np.ndarray
    q: np.ndarray
    q_dot: np.ndarray
    q_d: np.ndarray
    q_dot_d: np.ndarray
    e1: np.ndarray
    e1_dot: np.ndarray
    e2: np.ndarray
    V_L: np.ndarray
    u_R: np.ndarray
    u_L: np.ndarray
    active_region: np.ndarray
    sign_mode: np.ndarray
    is_event: np.ndarray
    switching_schedule: list[SwitchRecord]
    saturation_events: list[tuple[float, float, float]]
    events: np.ndarray
    status: str
    steps: int
    step_size: float
    region_tags = {K.SIDE_NONE: "U", K.SIDE_R: "R", K.SIDE_L: "L"}

    @property
    def z_norm(self) -> np.ndarray:
        return np.hypot(self.e1, self.e2)

    @property
    def revolutions(self) -> float:
        return float((self.q[-1] - self.q[0]) / TWO_PI)

    @property
    def sliding(self) -> np.ndarray:
        return (self.sign_mode == K.SLIDING) & (self.active_region != K.SIDE_NONE)

    def tags(self) -> list[str]:
        return [self.region_tags[int(c)] for c in self.active_region]

    def cadence_rpm(self, last_revs: float = 10.0) -> float:
        """Mean cadence over the final ``last_revs`` revolutions."""
        target = self.q[-1] - last_revs * TWO_PI
        i = int(np.searchsorted(self.q, target))
        i = min(i, len(self.q) - 2)
        return float((self.q[-1] - self.q[i]) / (self.t[-1] - self.t[i]) * 60.0 / TWO_PI)

    def summary(self) -> dict[str, float]:
        tail = self.t >= self.t[-1] - 0.25 * (self.t[-1] - self.t[0])
        err = self.q_dot[tail] - self.q_dot_d[tail]
        return {
            "status": self.status,
            "revolutions": self.revolutions,
            "duration_s": float(self.t[-1] - self.t[0]),
            "final_cadence_rpm": self.cadence_rpm(),
            "cadence_error_min_rad_s": float(err.min()),
            "cadence_error_max_rad_s": float(err.max()),
            "max_z_tail": float(self.z_norm[tail].max()),
            "switch_cycles": len(self.switching_schedule),
            "saturation_count": len(self.saturation_events),
        }

    def write_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CHANNELS)
            cols = [self.t, self.q, self.q_dot, self.q_d, self.q_dot_d, self.e1, self.e1_dot,
                    self.e2, self.V_L, self.u_R, self.u_L]
            tags = self.tags()
            for i in range(len(self.t)):
                w.writerow([_fmt(c[i]) for c in cols] + [tags[i]])

    def write_schedule_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SCHEDULE_COLUMNS)
            for s in self.switching_schedule:
                w.writerow([s.n, _fmt(s.t_on), _fmt(s.q_on), _fmt(s.t_off), _fmt(s.q_off)])


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


STATUS = {K.ST_OK: "ok", K.ST_ESCAPE: "escape", K.ST_STALL: "stall", K.ST_CAPACITY: "capacity"}


def _schedule(events: np.ndarray, t0: float, q0: float) -> list[SwitchRecord]:
    out = []
    n = 0
    t_on, q_on = t0, q0
    for t, q, kind, before, after in events[1:]:
        if int(kind) != K.EV_REGION:
            continue
        if before != K.SIDE_NONE and after == K.SIDE_NONE and t_on is not None:
            out.append(SwitchRecord(n, float(t_on), float(q_on), float(t), float(q)))
            n += 1
            t_on = None
        elif before == K.SIDE_NONE and after != K.SIDE_NONE:
            t_on, q_on = t, q
    if t_on is not None:
        out.append(SwitchRecord(n, float(t_on), float(q_on), math.nan, math.nan))
    return out


def revolution_budget(sc: Scenario) -> float:
    """Simulated-time cap for a revolution-count run: four times the nominal time plus a minute."""
    w, r = sc.trajectory.cadence_target, sc.trajectory.ramp_rate
    return 4.0 * (sc.revolutions * TWO_PI / w + 1.0 / r) + 60.0


def simulate(scenario: Scenario, *, raise_on_failure: bool = True,
             max_time: float | None = None) -> SimulationTrace:
    """Integrate the closed loop with fixed-step RK4 and exact switching events.

    Region side and sign mode are frozen within a step; a step that crosses a
    region boundary, an e2 zero or the edge of the sliding set is cut at the
    crossing found by bisection and resumed from there.  A revolution-count
    run that has not finished after ``max_time`` seconds of simulated time
    (default: ``revolution_budget``) stops with NonForwardProgress.
    """
    sc = scenario
    regions = sc.regions
    p = sc.dynamics.vector(sc.geometry)
    cp = controller_vector(sc.gains, sc.trajectory)
    h = float(sc.step_size)
    revs = float(sc.revolutions) if sc.revolutions is not None else 0.0
    if sc.duration is not None:
        max_steps = int(round(sc.duration / h))
    else:
        budget = revolution_budget(sc) if max_time is None else max_time
        max_steps = int(math.ceil(budget / h))
    stride = int(sc.record_stride)
    bounds = np.ascontiguousarray(regions.boundaries, dtype=float)
    tags = np.ascontiguousarray(regions.boundary_tags, dtype=np.int64)
    guess = (max_steps if sc.duration is not None else
             int(revs * TWO_PI / max(sc.trajectory.cadence_target, 0.1) / h * 1.5))
    cap_rec = guess // stride + 4096
    cap_ev = 4096 + int(revs * 64)
    while True:
        rec = np.zeros((cap_rec, 6))
        ev = np.zeros((cap_ev, 5))
        status, n_rec, n_ev, n_steps = K.simulate_kernel(
            p, cp, bounds, tags, float(sc.initial.q), float(sc.initial.q_dot), float(sc.initial.t),
            h, max_steps, revs, stride, Z_ESCAPE, STALL_LIMIT, rec, ev, cap_rec, cap_ev)
        if status != K.ST_CAPACITY:
            break
        # grow only the buffer that filled up
        if n_rec >= cap_rec:
            cap_rec *= 2
        if n_ev >= cap_ev:
            cap_ev *= 4
    rec = rec[:n_rec]
    ev = ev[:n_ev]
    trace = _assemble(rec, ev, p, cp, sc, STATUS[status], n_steps)
    if raise_on_failure and status == K.ST_ESCAPE:
        raise EscapeDetected(f"tracking error norm exceeded {Z_ESCAPE:g} at t = {trace.t[-1]:.6g} s",
                             trace)
    if status == K.ST_OK and sc.duration is None and trace.revolutions < revs - 1e-9:
        trace.status = "timeout"
        if raise_on_failure:
            raise NonForwardProgress(
                f"only {trace.revolutions:.4g} of {revs:g} revolutions after "
                f"{max_steps * h:.6g} s", trace)
    if raise_on_failure and status == K.ST_STALL:
        raise NonForwardProgress(
            f"crank stalled in the uncontrolled region for more than {STALL_LIMIT:g} s "
            f"(t = {trace.t[-1]:.6g} s)", trace)
    return trace


def _assemble(rec, ev, p, cp, sc: Scenario, status: str, n_steps: int) -> SimulationTrace:
    d = K.derived_channels(rec, p, cp)
    side = rec[:, 3].astype(np.int64)
    v = d[:, 6]
    u_R = np.where(side == K.SIDE_R, v, 0.0)
    u_L = np.where(side == K.SIDE_L, v, 0.0)
    sat = [(float(rec[i, 0]), float(rec[i, 1]), float(d[i, 7]))
           for i in np.nonzero((side != K.SIDE_NONE) & (d[:, 7] != v))[0]]
    return SimulationTrace(
        t=rec[:, 0].copy(), q=rec[:, 1].copy(), q_dot=rec[:, 2].copy(), q_d=d[:, 3].copy(),
        q_dot_d=d[:, 4].copy(), e1=d[:, 0].copy(), e1_dot=d[:, 1].copy(), e2=d[:, 2].copy(),
        V_L=d[:, 5].copy(), u_R=u_R, u_L=u_L, active_region=side, sign_mode=rec[:, 4].astype(np.int64),
        is_event=rec[:, 5] != 0, switching_schedule=_schedule(ev, sc.initial.t, sc.initial.q),
        saturation_events=sat, events=ev, status=status, steps=n_steps, step_size=sc.step_size)


# ---------------------------------------------------------------- audit

@dataclass(frozen=True)
class AuditEntry:
    check: str
    segment: int
    worst: float
    limit: float
    passed: bool
    sliding: bool = False

    @property
    def margin(self) -> float:
        return self.limit - self.worst


@dataclass
class BoundReport:
    entries: list[AuditEntry]
    equilibration_index: int | None
    needed_tolerance: dict[str, float]

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def failures(self, check: str | None = None) -> list[AuditEntry]:
        return [e for e in self.entries if not e.passed and (check is None or e.check == check)]

    def by_check(self, check: str) -> list[AuditEntry]:
        return [e for e in self.entries if e.check == check]

    def text(self) -> str:
        lines = []
        for name in ("decay", "growth", "rdt", "ultimate"):
            rows = self.by_check(name)
            if not rows:
                continue
            bad = [e for e in rows if not e.passed]
            worst = min(rows, key=lambda e: e.margin)
            lines.append(f"{name:<9s} segments={len(rows):<5d} failed={len(bad):<5d} "
                         f"worst_margin={worst.margin:.6g}")
        for k, v in self.needed_tolerance.items():
            lines.append(f"needed tolerance {k}: {v:.3g}")
        lines.append(f"equilibration index N: {self.equilibration_index}")
        return "\n".join(lines) + "\n"


def _peak_ratio(v, env) -> float:
    """Largest V_L / envelope after the segment's first sample (which is 1 by construction)."""
    v, env = v[1:], env[1:]
    if v.size == 0:
        return 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(env > 0, v / env, np.where(v > 0, np.inf, 0.0))
    return float(r.max())


def audit_bounds(trace: SimulationTrace, constants: AnalysisConstants, regions: RegionMap | None = None,
                 *, tol: float = 1e-9, sliding_tol: float | None = None) -> BoundReport:
    """Check the recorded V_L against the decay, growth, dwell and ultimate bounds.

    A sample passes when V_L <= envelope * (1 + tol) + tol; samples in sliding
    mode may use the looser ``sliding_tol`` (default: the step size).  Envelope
    entries report the peak ratio V_L / envelope, so the margin is 1 + tol - peak.
    ``needed_tolerance`` holds the largest absolute excess actually observed.
    """
    k = constants
    s_tol = trace.step_size if sliding_tol is None else sliding_tol
    entries: list[AuditEntry] = []
    need = {"decay_off_sliding": 0.0, "decay_sliding": 0.0, "growth": 0.0}
    t, V = trace.t, trace.V_L
    sliding = trace.sliding
    sched = trace.switching_schedule
    z = trace.z_norm

    def idx(time):
        # event rows are recorded exactly at the switch time
        return int(np.searchsorted(t, time, side="left"))

    for s in sched:
        i0 = idx(s.t_on)
        i1 = idx(s.t_off) if math.isfinite(s.t_off) else len(t) - 1
        seg = slice(i0, i1 + 1)
        env = V[i0] * np.exp(-k.gamma1 * (t[seg] - t[i0]) / k.lambda2)
        excess = V[seg] - env * (1 + tol)
        sl = sliding[seg]
        worst_off = float(excess[~sl].max()) if np.any(~sl) else -math.inf
        worst_sl = float(excess[sl].max()) if np.any(sl) else -math.inf
        need["decay_off_sliding"] = max(need["decay_off_sliding"], worst_off, 0.0)
        need["decay_sliding"] = max(need["decay_sliding"], worst_sl, 0.0)
        ok = worst_off <= tol and worst_sl <= s_tol
        entries.append(AuditEntry("decay", s.n, _peak_ratio(V[seg], env), 1.0 + tol, ok,
                                  bool(np.any(sl))))

    for a, b in zip(sched[:-1], sched[1:]):
        i0, i1 = idx(a.t_off), idx(b.t_on)
        seg = slice(i0, i1 + 1)
        dt = t[seg] - t[i0]
        try:
            env = growth_envelope_v(V[i0], k.a1, k.a2, k.a3, dt)
            worst = float(np.max(V[seg] - env * (1 + tol)))
            ok = worst <= tol
            ratio = _peak_ratio(V[seg], env)
        except EscapeTimeExceeded:
            worst, ok, ratio = math.inf, False, math.inf
        need["growth"] = max(need["growth"], worst, 0.0)
        entries.append(AuditEntry("growth", a.n, ratio, 1.0 + tol, ok))
        dt_off = b.t_on - a.t_off
        limit = rdt_max_offtime(float(z[i0]), k.a1, k.a2, k.a3, k.lambda2)
        entries.append(AuditEntry("rdt", a.n, dt_off, limit, dt_off < limit))

    v_on = np.array([V[idx(s.t_on)] for s in sched])
    z_on = np.array([z[idx(s.t_on)] for s in sched])
    hit = np.nonzero(v_on <= k.d_bar * (1 + tol))[0] if math.isfinite(k.d_bar) else np.array([])
    n_eq = int(hit[0]) if hit.size else None
    if n_eq is None:
        entries.append(AuditEntry("ultimate", -1, float(z_on.min()) if z_on.size else math.nan,
                                  k.d_radius, False))
    else:
        for n in range(n_eq, len(sched)):
            entries.append(AuditEntry("ultimate", n, float(z_on[n]), k.d_radius,
                                      z_on[n] <= k.d_radius * (1 + tol)))
    return BoundReport(entries, n_eq, need)

