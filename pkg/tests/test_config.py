import math

import pytest

from fescycle.config import load_config, packaged_config, parse_config
from fescycle.errors import ConfigError
from fescycle.kinematics import max_abs_torque_ratio


def test_default_scenario_values(default_rc):
    sc = default_rc.scenario
    g = sc.geometry
    assert (g.thigh_length, g.shank_length, g.crank_length, g.hip_horizontal, g.hip_vertical) == \
        (0.40, 0.43, 0.17, 0.60, 0.12)
    assert sc.dynamics.flywheel_inertia == 0.8 and sc.dynamics.crank_damping == 0.3
    assert (sc.gains.alpha, sc.gains.k1, sc.gains.k2, sc.gains.k3, sc.gains.k4) == (7, 10, 0.1, 0.1, 0.1)
    assert sc.gains.epsilon == pytest.approx(0.5 * max_abs_torque_ratio(g))
    assert sc.trajectory.cadence_target * 60 / (2 * math.pi) == pytest.approx(35.0, abs=0.01)
    assert sc.revolutions == 90 and sc.step_size == 1e-4
    assert sc.meta["stimulation_amplitude_mA"] == 100


def test_empty_file_is_default(default_rc):
    assert parse_config("").scenario == default_rc.scenario


def test_overlay_keeps_other_defaults(default_rc):
    rc = parse_config("gains:\n  k1: 25\n")
    assert rc.scenario.gains.k1 == 25
    assert rc.scenario.gains.alpha == 7
    assert rc.scenario.gains.epsilon == default_rc.scenario.gains.epsilon
    assert rc.scenario.geometry == default_rc.scenario.geometry


def test_epsilon_forms():
    rc = parse_config("gains:\n  epsilon: 0.25\n")
    assert rc.scenario.gains.epsilon == 0.25
    with pytest.raises(ConfigError, match="not both"):
        parse_config("gains:\n  epsilon: 0.25\n  epsilon_fraction: 0.3\n", overlay=False)


def test_duration_replaces_revolutions():
    rc = parse_config("simulation:\n  duration: 4.0\n")
    assert rc.scenario.revolutions is None and rc.scenario.duration == 4.0


@pytest.mark.parametrize("text, line, match", [
    ("gains:\n  alpha: 7\n  k9: 1\n", 3, "unknown key gains.k9"),
    ("geometry:\n  thigh_length: 0.4\nextras:\n  a: 1\n", 3, "unknown section"),
    ("gains:\n  alpha: seven\n", 2, "must be a number"),
    ("gains:\n  alpha: 7\n  k1: [1,\n", 4, "malformed YAML"),
    ("initial:\n  q: 0.195\n", 2, "uncontrolled region"),
    ("geometry:\n  thigh_length: 0.1\n", 1, "reach"),
    ("simulation:\n  step_size: 0.5\n", 2, "step_size"),
    ("gains:\n  k1: 1\n  k1: 2\n", 3, "duplicate"),
    ("dynamics:\n  omega_bounds: [0.5]\n", 2, "two-element"),
])
def test_errors_are_line_anchored(text, line, match):
    with pytest.raises(ConfigError, match=match) as exc:
        parse_config(text)
    assert exc.value.line == line
    assert str(exc.value).startswith(f"line {line}:")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.yaml")


def test_sweep_section():
    rc = parse_config("sweep:\n  param: cadence\n  grid: [1, 2]\n")
    assert rc.sweep.param == "cadence" and rc.sweep.grid == (1.0, 2.0)
    with pytest.raises(ConfigError, match="sweep parameter"):
        parse_config("sweep:\n  param: mass\n  grid: [1]\n")


def test_certified_file_loads(certified_rc):
    assert certified_rc.analysis.a3_target == 1.05
    assert certified_rc.scenario.gains.alpha == 3.0


def test_shipped_files_match_packaged(default_rc):
    from importlib import resources
    text = resources.files("fescycle").joinpath("data/default.yaml").read_text()
    assert parse_config(text, overlay=False).scenario == packaged_config().scenario
