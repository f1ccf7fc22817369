import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from scrl.maze import bundled_scenario, dataset_from_scenario, grid_maze_from_scenario  # noqa: E402
from scrl.tabular import TabularView  # noqa: E402


@pytest.fixture(scope="session")
def stitching():
    sc = bundled_scenario("stitching")
    mdp = grid_maze_from_scenario(sc)
    ds = dataset_from_scenario(sc, mdp)
    return sc, mdp, ds, TabularView(ds)


@pytest.fixture(scope="session")
def gap():
    sc = bundled_scenario("gap")
    mdp = grid_maze_from_scenario(sc)
    ds = dataset_from_scenario(sc, mdp)
    return sc, mdp, ds, TabularView(ds)
