import json
import xml.etree.ElementTree as ET

import pytest

from scrl.maze import (
    MazeScenario,
    ScenarioError,
    bundled_scenario,
    load_scenario,
    policy_arrows,
    render_ascii,
    render_svg,
    scenario_to_dict,
)


def test_bundled_scenarios_validate():
    for name in ("stitching", "gap"):
        sc = bundled_scenario(name)
        sc.validate()
        assert (sc.width, sc.height) == (10, 10)
        assert sc.r_pen == -0.1 and sc.r_goal == 10.0


def test_scenario_round_trip(tmp_path):
    sc = bundled_scenario("stitching")
    (tmp_path / "s.json").write_text(json.dumps(scenario_to_dict(sc)))
    assert load_scenario(tmp_path / "s.json") == sc


def test_bad_json_scenario(tmp_path):
    (tmp_path / "s.json").write_text("{")
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario(tmp_path / "s.json")


def test_arrows_from_cells_and_names():
    arrows = policy_arrows({(1, 1): (2, 1), (1, 2): (1, 1), (0, 0): "up", (3, 3): (5, 3)})
    assert arrows == {(1, 1): ">", (1, 2): "v", (0, 0): "^", (3, 3): "+"}


def test_ascii_render_leaves_unmapped_cells_blank():
    sc = MazeScenario(3, 2, frozenset({(1, 0)}), (2, 1))
    text = render_ascii(sc, {(0, 0): (0, 1), (0, 1): (1, 1)})
    assert text == "> *\n^# \n"


def test_svg_parses():
    sc = bundled_scenario("gap")
    root = ET.fromstring(render_svg(sc, {(0, 9): (1, 9)}))
    assert root.tag.endswith("svg")
    assert len([e for e in root if e.tag.endswith("rect")]) == 100
