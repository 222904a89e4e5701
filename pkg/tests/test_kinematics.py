import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fescycle.errors import ClosureViolation, ConfigError, EpsilonTooLarge
from fescycle.kinematics import (
    RiderGeometry,
    Side,
    dead_points,
    default_epsilon,
    knee_angle,
    knee_angle_array,
    max_abs_torque_ratio,
    max_propulsive_ratio,
    stimulation_regions,
    torque_transfer_ratio,
    torque_transfer_ratio_array,
)

TWO_PI = 2 * math.pi


def fd5(f, q, h=1e-3):
    return (-f(q + 2 * h) + 8 * f(q + h) - 8 * f(q - h) + f(q - 2 * h)) / (12 * h)


@pytest.mark.parametrize("side", [Side.R, Side.L])
def test_torque_ratio_is_minus_knee_angle_slope(geometry, side):
    q = np.linspace(0, TWO_PI, 4096, endpoint=False)
    slope = fd5(lambda x: knee_angle_array(geometry, x, side), q)
    b = torque_transfer_ratio_array(geometry, q, side)
    assert np.max(np.abs(slope + b) / np.abs(b)) < 1e-6


def test_scalar_and_array_paths_agree(geometry):
    q = np.linspace(0.1, 6.0, 17)
    for side in Side:
        arr = torque_transfer_ratio_array(geometry, q, side)
        np.testing.assert_allclose(arr, [torque_transfer_ratio(geometry, x, side) for x in q], rtol=1e-13)
        ang = knee_angle_array(geometry, q, side)
        np.testing.assert_allclose(ang, [knee_angle(geometry, x, side) for x in q], rtol=1e-13)


def test_dead_points_zero_both_sides(geometry):
    qs = dead_points(geometry)
    assert len(qs) == 2
    assert qs[1] - qs[0] == pytest.approx(math.pi)
    for q in qs:
        for side in Side:
            assert abs(torque_transfer_ratio(geometry, q, side)) < 1e-9


def test_sides_never_propel_together(geometry):
    q = np.linspace(0, TWO_PI, 20000, endpoint=False)
    prod = torque_transfer_ratio_array(geometry, q, Side.R) * torque_transfer_ratio_array(geometry, q, Side.L)
    assert np.all(prod <= 0)


def test_left_is_right_shifted_by_half_turn(geometry):
    q = np.linspace(0, TWO_PI, 64)
    np.testing.assert_allclose(torque_transfer_ratio_array(geometry, q, Side.L),
                               torque_transfer_ratio_array(geometry, q + math.pi, Side.R), atol=1e-14)


def test_closure_violation_reports_reach():
    with pytest.raises(ClosureViolation, match="reach"):
        RiderGeometry(0.20, 0.20, 0.17, 0.60, 0.12)


def test_negative_length_rejected():
    with pytest.raises(ConfigError):
        RiderGeometry(-0.4, 0.43, 0.17, 0.60, 0.12)


def test_max_ratios(geometry):
    q = np.linspace(0, TWO_PI, 100000)
    b = torque_transfer_ratio_array(geometry, q)
    assert max_abs_torque_ratio(geometry) >= np.abs(b).max() - 1e-12
    assert max_abs_torque_ratio(geometry) == pytest.approx(np.abs(b).max(), rel=1e-8)
    assert max_propulsive_ratio(geometry) == pytest.approx((-b).max(), rel=1e-8)


def test_regions_partition_the_cycle(geometry):
    eps = default_epsilon(geometry)
    rm = stimulation_regions(geometry, eps)
    total = rm.controlled_measure + rm.uncontrolled_measure
    assert total == pytest.approx(TWO_PI, abs=1e-12)
    assert len(rm.right_intervals) == len(rm.left_intervals) == 1
    assert len(rm.uncontrolled_intervals) == 2
    for q in dead_points(geometry):
        assert rm.tag(q) == "U"


def test_region_boundaries_sit_on_threshold(geometry):
    eps = default_epsilon(geometry)
    rm = stimulation_regions(geometry, eps)
    for iv, side in [(rm.right_intervals[0], Side.R), (rm.left_intervals[0], Side.L)]:
        for q in (iv.start, iv.end):
            assert abs(-torque_transfer_ratio(geometry, q, side) - eps) < 1e-9


def test_tags_match_threshold_on_grid(geometry):
    eps = 0.3
    rm = stimulation_regions(geometry, eps)
    q = np.linspace(0, TWO_PI, 4096, endpoint=False)
    codes = rm.tag_code(q)
    br = -torque_transfer_ratio_array(geometry, q, Side.R)
    bl = -torque_transfer_ratio_array(geometry, q, Side.L)
    clear = (np.abs(br - eps) > 1e-8) & (np.abs(bl - eps) > 1e-8)
    expect = np.where(br > eps, 1, np.where(bl > eps, 2, 0))
    assert np.array_equal(codes[clear], expect[clear])


def test_epsilon_too_large(geometry):
    with pytest.raises(EpsilonTooLarge):
        stimulation_regions(geometry, max_propulsive_ratio(geometry) * 1.01)
    with pytest.raises(EpsilonTooLarge):
        stimulation_regions(geometry, 0.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.02, 0.55), st.floats(0.02, 0.55))
def test_smaller_threshold_larger_regions(geometry, a, b):
    lo, hi = sorted((a, b))
    if hi - lo < 1e-6:
        return
    assert (stimulation_regions(geometry, lo).controlled_measure
            > stimulation_regions(geometry, hi).controlled_measure)
