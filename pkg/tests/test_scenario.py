import numpy as np
import pytest

from consensus_ukf.scenario import (
    PRESETS,
    OutputWeightedCov,
    Scenario,
    ScenarioError,
    dump_scenario,
    load_preset,
    load_scenario_text,
    parse_override,
    preset_path,
    resolve_cov,
    schedule_value,
    set_dotted,
)

MINIMAL = """\
plant:
  type: cruise
ts: 0.01
duration: 1.0
"""


@pytest.mark.parametrize("name", PRESETS)
def test_presets_load_and_round_trip(name):
    s = load_preset(name)
    again = load_scenario_text(dump_scenario(s))
    assert again == s


@pytest.mark.parametrize("name", PRESETS)
def test_presets_document_units(name):
    text = preset_path(name).read_text()
    for key in ("ts:", "duration:"):
        line = next(l for l in text.splitlines() if l.startswith(key))
        assert "# s" in line


def test_preset_noise_table():
    assert (load_preset("cruise").filter.Q, load_preset("cruise").filter.R) == (0.1, 0.5)
    sus = load_preset("suspension")
    assert (sus.ts, sus.filter.Q, sus.filter.R) == (0.0005, 10.0, 0.05)
    for name in ("aircraft", "motor_speed", "motor_position"):
        s = load_preset(name)
        assert s.ts == 0.01 and s.filter.R == 1.0
        assert s.filter.Q == OutputWeightedCov(output_weight=50.0)


def test_defaults():
    s = load_scenario_text(MINIMAL)
    assert s.network.nodes == 4 and s.network.l == 5 and s.network.topology == "complete"
    assert s.filter.p0 == 50.0 and s.filter.ut.alpha == 1e-3
    assert s.controller.feedback == "estimate" and s.controller.feedback_node == 0
    assert s.n_steps == 100


def test_unknown_key_reports_line():
    with pytest.raises(ScenarioError) as info:
        load_scenario_text(MINIMAL + "network:\n  nodez: 3\n", source="x.scn")
    msg = str(info.value)
    assert "x.scn:6" in msg and "network.nodez" in msg


def test_unknown_plant_param():
    with pytest.raises(ScenarioError, match="unknown cruise parameter"):
        load_scenario_text(MINIMAL.replace("type: cruise", "type: cruise\n  params: {mass: 3}"))


def test_schedule_outside_duration():
    with pytest.raises(ScenarioError, match="beyond duration"):
        load_scenario_text(MINIMAL + "references:\n  - {start: 2.0, value: 1.0}\n")


def test_duration_multiple_of_ts():
    with pytest.raises(ScenarioError, match="multiple"):
        load_scenario_text(MINIMAL.replace("1.0", "1.005"))


def test_feedback_node_in_range():
    with pytest.raises(ScenarioError, match="feedback_node"):
        load_scenario_text(MINIMAL + "controller: {feedback_node: 4}\n")


def test_bad_pole_text():
    with pytest.raises(ScenarioError, match="pole"):
        load_scenario_text(MINIMAL + "controller: {poles: ['-1+x']}\n")


def test_yaml_syntax_error_has_line():
    with pytest.raises(ScenarioError, match=r"y.scn:\d+: YAML syntax error"):
        load_scenario_text("plant: [\n", source="y.scn")


def test_overrides():
    s = load_scenario_text(MINIMAL, overrides=["network.l=0", "rng_seed=7", "filter.ut.kappa=3-L"])
    assert s.network.l == 0 and s.rng_seed == 7 and s.filter.ut.kappa == "3-L"
    assert parse_override("a.b=[1, 2]") == ("a.b", [1, 2])
    with pytest.raises(ScenarioError):
        parse_override("novalue")


def test_set_dotted_creates_and_indexes():
    d = {"references": [{"start": 0, "value": 1}]}
    set_dotted(d, "references.0.value", 5)
    set_dotted(d, "network.l", 2)
    assert d == {"references": [{"start": 0, "value": 5}], "network": {"l": 2}}


def test_schedule_value():
    s = load_preset("cruise")
    assert schedule_value(s.references, 0.0) == 10.0
    assert schedule_value(s.references, 29.99) == 10.0
    assert schedule_value(s.references, 30.0) == 7.0
    assert schedule_value([], 3.0, default=-1.0) == -1.0


def test_resolve_cov():
    C = np.array([[0.0, 1.0]])
    np.testing.assert_array_equal(resolve_cov(2.0, 2, C), 2 * np.eye(2))
    np.testing.assert_array_equal(resolve_cov([1.0, 3.0], 2, C), np.diag([1.0, 3.0]))
    np.testing.assert_array_equal(resolve_cov(OutputWeightedCov(output_weight=50), 2, C), 50 * C.T @ C)


def test_scenario_is_frozen():
    s = load_scenario_text(MINIMAL)
    with pytest.raises(Exception):
        s.ts = 1.0
    assert isinstance(s, Scenario)
