import math

import numpy as np
import pytest

from fescycle.dynamics import (
    CrankModel,
    CrankState,
    DynamicsParams,
    coriolis,
    forward_dynamics,
    gravity_torque,
    inertia,
    inertia_derivative,
    passive_torque,
    potential_energy,
    property_constants,
    segment_kinematics,
    verify_property_constants,
)
from fescycle.errors import ConfigError, VerificationFailure
from fescycle.kinematics import Side

TWO_PI = 2 * math.pi


def fd(f, q, h=1e-5):
    return (f(q + h) - f(q - h)) / (2 * h)


def inertia_from_positions(params, geom, q):
    """Kinetic-energy inertia rebuilt from finite-differenced segment poses."""
    total = params.flywheel_inertia
    for side in Side:
        def pose(x):
            s = segment_kinematics(params, geom, x, side)
            return np.array([*s["thigh_com"], *s["shank_com"], s["thigh_angle"], s["shank_angle"]])
        d = fd(pose, q)
        total += params.thigh_mass * (d[0] ** 2 + d[1] ** 2) + params.shank_mass * (d[2] ** 2 + d[3] ** 2)
        total += params.thigh_inertia * d[4] ** 2 + params.shank_inertia * d[5] ** 2
    return total


@pytest.mark.parametrize("q", np.linspace(0.05, 6.2, 9))
def test_inertia_matches_segment_velocities(params, geometry, q):
    assert inertia(params, geometry, q) == pytest.approx(inertia_from_positions(params, geometry, q), rel=1e-8)


@pytest.mark.parametrize("q", np.linspace(0.05, 6.2, 9))
def test_inertia_slope(params, geometry, q):
    assert inertia_derivative(params, geometry, q) == pytest.approx(
        fd(lambda x: inertia(params, geometry, x), q), rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("q", np.linspace(0.05, 6.2, 9))
def test_gravity_is_potential_slope(params, geometry, q):
    slope = fd(lambda x: potential_energy(params, geometry, x)[0], q)
    assert gravity_torque(params, geometry, q) == pytest.approx(slope, rel=1e-7, abs=1e-8)


def test_coriolis_skew_identity(params, geometry):
    rng = np.random.default_rng(3)
    for q, qd in zip(rng.uniform(0, TWO_PI, 500), rng.uniform(-10, 10, 500)):
        assert abs(0.5 * inertia_derivative(params, geometry, q) * qd - coriolis(params, geometry, q, qd)) <= 1e-12


def test_property_constants_hold_on_samples(params, geometry):
    pc = property_constants(params, geometry, q_dot_max=8.0, n_samples=20000, seed=5)
    counts = verify_property_constants(params, geometry, pc, 8.0, n_samples=20000, seed=6)
    assert all(v == 0 for v in counts.values())
    assert 0 < pc.c_m <= pc.c_M
    assert pc.c_Omega1 == 0.5 and pc.c_Omega2 == 2.0


def test_shrunk_constant_is_caught(params, geometry):
    pc = property_constants(params, geometry, 8.0, n_samples=1000)
    bad = type(pc)(**{**pc.as_dict(), "c_G": pc.c_G * 0.9})
    with pytest.raises(VerificationFailure, match="gravity"):
        verify_property_constants(params, geometry, bad, 8.0, n_samples=5000)


def test_passive_torque_opposes_motion(params):
    for v in (-3.0, -0.1, 0.2, 5.0):
        p, tb = passive_torque(params, v)
        assert p * v < 0 and tb * v < 0
    assert passive_torque(params, 0.0) == (0.0, 0.0) or passive_torque(params, 0.0) == (-0.0, -0.0)


def test_forward_dynamics_energy_balance(params, geometry):
    # with no damping, stimulation or disturbance, dE/dt = 0
    dp = params.with_(crank_damping=0.0, visco_static=0.0, visco_viscous=0.0, disturbance_amplitude=0.0)
    m = CrankModel(geometry, dp)
    for q in np.linspace(0.1, 6.0, 7):
        qd = 2.0
        acc = forward_dynamics(dp, geometry, CrankState(q, qd, 0.0), 0.0, 0.0)
        de = fd(lambda x: m.energy(q + x * qd, qd + x * acc)[0], 0.0, h=1e-6)
        assert abs(de) < 1e-5


def test_invalid_params():
    with pytest.raises(ConfigError):
        DynamicsParams(flywheel_inertia=0.0)
    with pytest.raises(ConfigError):
        DynamicsParams(omega_const=3.0)
    with pytest.raises(ConfigError):
        DynamicsParams(thigh_com_ratio=1.2)
    with pytest.raises(ConfigError):
        DynamicsParams(disturbance_bound=0.1)
