"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line (visible even
without ``-s``) and then asserts the same condition.
"""
import dataclasses
import math
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from fescycle.analysis import (
    bound_residual,
    comparison_rhs,
    growth_constants,
    growth_envelope_v,
)
from fescycle.cli import pattern_rows
from fescycle.dynamics import CrankModel, CrankState, coriolis, inertia_derivative, property_constants
from fescycle.dynamics import verify_property_constants
from fescycle.kinematics import (
    Side,
    dead_points,
    knee_angle_array,
    stimulation_regions,
    torque_transfer_ratio,
    torque_transfer_ratio_array,
)
from fescycle.simulator import audit_bounds, simulate

TWO_PI = 2 * math.pi


@pytest.fixture
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return report


def fd5(f, q, h=1e-3):
    return (-f(q + 2 * h) + 8 * f(q + h) - 8 * f(q - h) + f(q - 2 * h)) / (12 * h)


def test_kinematic_correctness(geometry, verdict):
    q = np.linspace(0, TWO_PI, 4096, endpoint=False)
    knee_angle_array(geometry, q[:4])
    torque_transfer_ratio_array(geometry, q[:4])
    start = time.perf_counter()
    rel = 0.0
    for side in Side:
        b = torque_transfer_ratio_array(geometry, q, side)
        slope = fd5(lambda x: knee_angle_array(geometry, x, side), q)
        rel = max(rel, float(np.max(np.abs(slope + b) / np.abs(b))))
    dead = max(abs(torque_transfer_ratio(geometry, qs, side))
               for qs in dead_points(geometry) for side in Side)
    dense = np.linspace(0, TWO_PI, 20000, endpoint=False)
    prod = float(np.max(torque_transfer_ratio_array(geometry, dense, Side.R)
                        * torque_transfer_ratio_array(geometry, dense, Side.L)))
    elapsed = time.perf_counter() - start
    ok = rel < 1e-6 and dead < 1e-9 and prod <= 0 and elapsed < 1.0
    verdict(1, ok, f"fd_rel={rel:.2e} dead={dead:.2e} max(BR*BL)={prod:.2e} t={elapsed:.2f}s")
    assert ok


def test_model_properties(default_rc, verdict):
    sc = default_rc.scenario
    geom, params = sc.geometry, sc.dynamics
    start = time.perf_counter()
    q_dot_max = 3.0 * sc.trajectory.cadence_target
    pc = property_constants(params, geom, q_dot_max, n_samples=100_000, seed=1)
    counts = verify_property_constants(params, geom, pc, q_dot_max, n_samples=100_000, seed=2)
    violations = sum(counts.values())

    rng = np.random.default_rng(5)
    skew = max(abs(0.5 * inertia_derivative(params, geom, q) * qd - coriolis(params, geom, q, qd))
               for q, qd in zip(rng.uniform(0, TWO_PI, 2000), rng.uniform(-10, 10, 2000)))

    dp = params.with_(crank_damping=0.0, visco_static=0.0, visco_viscous=0.0, disturbance_amplitude=0.0)
    gains = sc.gains.with_(alpha=0.0, k1=0.0, k2=0.0, k3=0.0, k4=0.0)
    run = sc.with_(dynamics=dp, gains=gains, initial=CrankState(1.5, 3.0, 0.0),
                   revolutions=None, duration=10.0, record_stride=1)
    tr = simulate(run)
    e = CrankModel(geom, dp).energy(tr.q, tr.q_dot)
    drift = float(np.max(np.abs(e - e[0])) / abs(e[0]))
    elapsed = time.perf_counter() - start

    ok = violations == 0 and skew <= 1e-12 and drift < 1e-6 and elapsed < 30
    verdict(2, ok, f"violations={violations} skew={skew:.1e} energy_drift={drift:.1e} t={elapsed:.1f}s")
    assert ok


def test_envelope_dominance(certified_trace, certified_cert, verdict):
    rep = audit_bounds(certified_trace, certified_cert.constants, certified_cert.regions)
    env = [e for e in rep.entries if e.check in ("decay", "growth")]
    failed = [e for e in env if not e.passed]
    worst = max(e.worst for e in env)
    ok = (certified_cert.certified and certified_trace.revolutions >= 90 and not failed
          and certified_trace.wall_time < 120)
    verdict(3, ok, f"segments={len(env)} failed={len(failed)} worst_ratio={worst:.6f} "
                   f"sliding_tol={rep.needed_tolerance['decay_sliding']:.1e} "
                   f"t={certified_trace.wall_time:.1f}s")
    assert ok


def test_rdt_and_ultimate_bound(certified_rc, certified_trace, certified_cert, verdict):
    k = certified_cert.constants
    rep = audit_bounds(certified_trace, k, certified_cert.regions)
    rdt = rep.failures("rdt")
    ultimate = [e for e in rep.entries if e.check == "ultimate"]
    residual = abs(bound_residual(k.d_bar, k.gamma1, k.lambda2, k.a1, k.a2, k.a3,
                                  k.dt_min_on, k.dt_max_off)) / max(1.0, k.d_bar)

    sc = certified_rc.scenario
    slow = sc.with_(trajectory=dataclasses.replace(sc.trajectory, cadence_target=0.2),
                    revolutions=None, duration=25.0, record_stride=1)
    slow_rep = audit_bounds(simulate(slow, raise_on_failure=False), k, certified_cert.regions)
    slow_fails = len(slow_rep.failures("rdt"))

    ok = (not rdt and rep.by_check("rdt") and ultimate and all(e.passed for e in ultimate)
          and residual < 1e-10 and slow_fails > 0)
    verdict(4, ok, f"rdt_failures={len(rdt)} N={rep.equilibration_index} d={k.d_radius:.4f} "
                   f"residual={residual:.1e} slow_rdt_failures={slow_fails}")
    assert ok


def test_growth_oracle(certified_cert, verdict):
    k = certified_cert.constants
    a1, a2, a3 = growth_constants(k.c1, k.c2, k.c3, k.lambda1)
    rng = np.random.default_rng(11)
    v0s = 10.0 * (1.0 - rng.random(1000))
    worst, violations = 0.0, 0
    for v0 in v0s:
        t_esc = (0.5 * math.pi - math.atan(2 * a1 / a3 * math.sqrt(v0) + a2 / a3)) * 4 / a3
        t_end = 0.95 * t_esc
        sol = solve_ivp(lambda t, v: comparison_rhs(v, k.c1, k.c2, k.c3, k.lambda1), (0, t_end), [v0],
                        method="DOP853", rtol=1e-12, atol=1e-14, dense_output=True)
        t = np.linspace(0, t_end, 200)
        ratio = float(np.max(sol.sol(t)[0] / growth_envelope_v(v0, a1, a2, a3, t)))
        worst = max(worst, ratio)
        violations += ratio > 1 + 1e-9
    ok = violations == 0
    verdict(5, ok, f"samples=1000 violations={violations} worst_ratio={worst:.12f}")
    assert ok


def test_qualitative_reproduction(default_rc, default_trace, verdict):
    rpm = default_trace.cadence_rpm()
    overlap = int(np.count_nonzero(default_trace.u_R * default_trace.u_L))
    sc = default_rc.scenario
    rm = stimulation_regions(sc.geometry, sc.gains.epsilon)
    rows = pattern_rows(default_rc)
    grid = [r["tag"] for r in rows if r["point"] == "grid"]
    arcs = [a for a, b in zip(grid, grid[1:] + grid[:1]) if a != b]
    controlled = len(rm.right_intervals) + len(rm.left_intervals)
    holds_dead = all(any(iv.contains(q) for iv in rm.uncontrolled_intervals)
                     for q in dead_points(sc.geometry))
    dead_rows = [r for r in rows if r["point"] == "dead_point"]
    ok = (abs(rpm - 35.0) <= 2.0 and overlap == 0 and controlled == 2
          and len(rm.uncontrolled_intervals) == 2 and len(arcs) == 4 and holds_dead
          and all(r["tag"] == "U" for r in dead_rows))
    verdict(6, ok, f"cadence={rpm:.2f}rpm overlap={overlap} controlled_arcs={controlled} "
                   f"uncontrolled_arcs={len(rm.uncontrolled_intervals)} dead_points_uncontrolled={holds_dead}")
    assert ok


def test_numerical_convergence(default_rc, default_trace, verdict):
    t_end = float(default_trace.t[-1])
    base = default_rc.scenario.with_(revolutions=None, duration=t_end, record_stride=1000)
    a = simulate(base)
    b = simulate(base.with_(step_size=base.step_size / 2))
    x_a = np.array([a.q[-1], a.q_dot[-1]])
    x_b = np.array([b.q[-1], b.q_dot[-1]])
    rel = float(np.max(np.abs(x_a - x_b) / np.abs(x_b)))
    c = simulate(base)
    same = all(np.array_equal(getattr(a, ch), getattr(c, ch)) for ch in ("t", "q", "q_dot", "V_L"))
    ok = a.t[-1] == b.t[-1] and a.revolutions >= 90 and rel < 1e-6 and same
    verdict(7, ok, f"T={t_end:.2f}s halving_rel={rel:.1e} bit_identical={same}")
    assert ok

