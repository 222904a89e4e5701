import csv
import math

import numpy as np
import pytest

from fescycle import _kernels as K
from fescycle import simulator
from fescycle.dynamics import CrankModel, CrankState
from fescycle.errors import ConfigError, EscapeDetected, NonForwardProgress
from fescycle.kinematics import Side, torque_transfer_ratio
from fescycle.simulator import CHANNELS, AuditEntry, audit_bounds, simulate

TWO_PI = 2 * math.pi


@pytest.fixture(scope="module")
def short_trace(default_rc):
    sc = default_rc.scenario.with_(revolutions=None, duration=6.0, record_stride=1)
    return sc, simulate(sc)


def test_ballistic_energy_conserved(default_rc):
    sc = default_rc.scenario
    dp = sc.dynamics.with_(crank_damping=0.0, visco_static=0.0, visco_viscous=0.0,
                           disturbance_amplitude=0.0)
    gains = sc.gains.with_(alpha=0.0, k1=0.0, k2=0.0, k3=0.0, k4=0.0)
    run = sc.with_(dynamics=dp, gains=gains, initial=CrankState(1.5, 3.0, 0.0),
                   revolutions=None, duration=10.0, record_stride=1)
    tr = simulate(run)
    e = CrankModel(run.geometry, dp).energy(tr.q, tr.q_dot)
    assert np.max(np.abs(e - e[0])) / abs(e[0]) < 1e-6
    assert not np.any(tr.u_R) and not np.any(tr.u_L)


def test_inputs_exclusive_and_gated(short_trace):
    _, tr = short_trace
    assert np.all(tr.u_R * tr.u_L == 0)
    unc = tr.active_region == K.SIDE_NONE
    assert not np.any(tr.u_R[unc]) and not np.any(tr.u_L[unc])
    assert not np.any(tr.u_R[tr.active_region == K.SIDE_L])
    assert not np.any(tr.u_L[tr.active_region == K.SIDE_R])


def test_tags_consistent_with_region_map(short_trace):
    sc, tr = short_trace
    rm = sc.regions
    plain = ~tr.is_event
    assert np.array_equal(rm.tag_code(tr.q[plain]), tr.active_region[plain])


def test_switching_events_exact(short_trace):
    sc, tr = short_trace
    rm, eps = sc.regions, sc.gains.epsilon
    region = tr.events[tr.events[:, 2] == K.EV_REGION]
    assert len(region) >= 3
    for t, q, _, before, after in region:
        side = Side.R if K.SIDE_R in (before, after) else Side.L
        assert abs(-torque_transfer_ratio(sc.geometry, q, side) - eps) < 1e-7
        gap = np.min(np.abs((q - rm.boundaries + math.pi) % TWO_PI - math.pi))
        assert gap < 1e-8
    sched = tr.switching_schedule
    times = [x for s in sched for x in (s.t_on, s.t_off) if math.isfinite(x)]
    assert all(a < b for a, b in zip(times, times[1:]))
    assert [s.n for s in sched] == list(range(len(sched)))


def test_sign_mode_matches_e2_off_sliding(short_trace):
    _, tr = short_trace
    ctrl = (tr.active_region != K.SIDE_NONE) & (tr.sign_mode != K.SLIDING) & ~tr.is_event
    s = np.sign(tr.e2[ctrl])
    ok = (s == tr.sign_mode[ctrl]) | (np.abs(tr.e2[ctrl]) < 1e-9)
    assert ok.all()


def test_lyapunov_channel(short_trace):
    sc, tr = short_trace
    m = CrankModel(sc.geometry, sc.dynamics).terms(tr.q)[:, 0]
    np.testing.assert_allclose(tr.V_L, 0.5 * (tr.e1 ** 2 + m * tr.e2 ** 2), rtol=1e-13, atol=1e-300)
    np.testing.assert_allclose(tr.e1, tr.q_d - tr.q, atol=1e-12)


def test_repeat_runs_bit_identical(default_rc):
    sc = default_rc.scenario.with_(revolutions=None, duration=3.0)
    a, b = simulate(sc), simulate(sc)
    for ch in ("t", "q", "q_dot", "e2", "V_L", "u_R", "u_L"):
        assert np.array_equal(getattr(a, ch), getattr(b, ch))
    assert np.array_equal(a.events, b.events)


def test_step_halving_short_horizon(default_rc):
    base = default_rc.scenario.with_(revolutions=None, duration=5.0, record_stride=1000)
    a = simulate(base)
    b = simulate(base.with_(step_size=5e-5))
    assert a.t[-1] == b.t[-1]
    assert abs(a.q[-1] - b.q[-1]) / abs(b.q[-1]) < 1e-6
    assert abs(a.q_dot[-1] - b.q_dot[-1]) / abs(b.q_dot[-1]) < 1e-6


def test_revolution_count(default_trace):
    assert default_trace.revolutions >= 90
    assert default_trace.revolutions < 90.01
    assert default_trace.status == "ok"


def test_csv_roundtrip(tmp_path, short_trace):
    _, tr = short_trace
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CHANNELS
    assert {len(r) for r in rows} == {len(CHANNELS)}
    assert len(rows) == len(tr.t) + 1
    k = len(rows) // 2
    assert float(rows[k][2]) == tr.q_dot[k - 1]
    assert rows[k][-1] in "RLU"
    tr.write_schedule_csv(tmp_path / "schedule.csv")
    with (tmp_path / "schedule.csv").open() as fh:
        sched = list(csv.reader(fh))
    assert sched[0] == ["n", "t_on", "q_on", "t_off", "q_off"]
    assert len(sched) == len(tr.switching_schedule) + 1


def test_initial_state_must_be_controlled(default_rc):
    sc = default_rc.scenario
    q_unc = sc.regions.uncontrolled_intervals[0].start + 0.01
    with pytest.raises(ConfigError, match="uncontrolled"):
        sc.with_(initial=CrankState(q_unc, 0.0, 0.0))


def test_step_size_range(default_rc):
    with pytest.raises(ConfigError):
        default_rc.scenario.with_(step_size=0.1)
    with pytest.raises(ConfigError):
        default_rc.scenario.with_(step_size=1e-7)


def test_stall_detected(default_rc):
    sc = default_rc.scenario
    dead = sc.with_(gains=sc.gains.with_(k1=0.0, k2=0.0, k3=0.0, k4=0.0), revolutions=1)
    with pytest.raises(NonForwardProgress) as exc:
        simulate(dead)
    assert exc.value.trace is not None and exc.value.trace.revolutions < 1


def test_escape_detected(default_rc, monkeypatch):
    monkeypatch.setattr(simulator, "Z_ESCAPE", 0.05)
    with pytest.raises(EscapeDetected) as exc:
        simulate(default_rc.scenario.with_(revolutions=2))
    assert exc.value.trace.z_norm[-1] > 0.05


def test_audit_perfect_tracking(certified_rc, certified_cert):
    sc = certified_rc.scenario.with_(revolutions=4)
    tr = simulate(sc)
    zero = simulator.SimulationTrace(**{**tr.__dict__})
    for ch in ("e1", "e1_dot", "e2", "V_L"):
        setattr(zero, ch, np.zeros_like(tr.t))
    rep = audit_bounds(zero, certified_cert.constants)
    envelope = [e for e in rep.entries if e.check in ("decay", "growth")]
    assert rep.passed and envelope
    assert all(e.worst == 0.0 for e in envelope)
    assert rep.equilibration_index == 0


def test_audit_certified_run(certified_trace, certified_cert):
    rep = audit_bounds(certified_trace, certified_cert.constants, certified_cert.regions)
    assert rep.passed, rep.text()
    assert {e.check for e in rep.entries} == {"decay", "growth", "rdt", "ultimate"}
    assert rep.needed_tolerance["decay_sliding"] <= certified_trace.step_size


def test_audit_entry_margin():
    assert AuditEntry("rdt", 0, 0.1, 0.3, True).margin == pytest.approx(0.2)
