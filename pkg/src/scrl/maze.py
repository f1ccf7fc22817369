"""Grid mazes: scenario files, environment construction and arrow rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping
from xml.sax.saxutils import escape

import numpy as np

from .dataset import Dataset, make_dataset
from .mdp import DeterministicMdp, inverse_dynamics_lookup

ACTION_NAMES = ("left", "right", "up", "down")
ACTION_VECTORS = np.array([[-1, 0], [1, 0], [0, 1], [0, -1]], dtype=np.float64)
ARROWS = {"left": "<", "right": ">", "up": "^", "down": "v"}

Cell = tuple[int, int]


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class MazeScenario:
    width: int
    height: int
    walls: frozenset[Cell]
    goal: Cell
    r_pen: float = -0.1
    r_goal: float = 10.0
    trajectories: tuple[tuple[Cell, ...], ...] = ()
    name: str = field(default="maze", compare=False)

    def inside(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def validate(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ScenarioError(f"grid size must be positive, got {self.width}x{self.height}")
        for w in self.walls:
            if not self.inside(w):
                raise ScenarioError(f"wall cell {w} lies outside the {self.width}x{self.height} grid")
        if not self.inside(self.goal):
            raise ScenarioError(f"goal cell {self.goal} lies outside the grid")
        if self.goal in self.walls:
            raise ScenarioError(f"goal cell {self.goal} is a wall")
        for k, traj in enumerate(self.trajectories):
            for i, cell in enumerate(traj):
                if not self.inside(cell):
                    raise ScenarioError(f"trajectory {k} cell {cell} lies outside the grid")
                if cell in self.walls:
                    raise ScenarioError(f"trajectory {k} cell {cell} is a wall")
                if i and abs(cell[0] - traj[i - 1][0]) + abs(cell[1] - traj[i - 1][1]) != 1:
                    raise ScenarioError(f"trajectory {k} jumps from {traj[i - 1]} to {cell}")

    def free_cells(self) -> list[Cell]:
        return [(x, y) for y in range(self.height) for x in range(self.width) if (x, y) not in self.walls]


def _cell(v, what: str) -> Cell:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ScenarioError(f"{what} must be an [x, y] pair, got {v!r}")
    return int(v[0]), int(v[1])


def _parse_grid(lines: list[str]) -> tuple[int, int, set[Cell], Cell]:
    height = len(lines)
    width = max((len(l) for l in lines), default=0)
    walls, goal = set(), None
    for row, line in enumerate(lines):
        y = height - 1 - row
        for x, ch in enumerate(line.ljust(width, ".")):
            if ch == "#":
                walls.add((x, y))
            elif ch == "*":
                if goal is not None:
                    raise ScenarioError("grid has more than one goal '*'")
                goal = (x, y)
            elif ch not in ".":
                raise ScenarioError(f"unknown grid character {ch!r} at ({x}, {y})")
    if goal is None:
        raise ScenarioError("grid has no goal '*'")
    return width, height, walls, goal


def scenario_from_dict(obj: Mapping, name: str = "maze") -> MazeScenario:
    if "grid" in obj:
        width, height, walls, goal = _parse_grid(list(obj["grid"]))
    else:
        try:
            width, height = int(obj["width"]), int(obj["height"])
        except KeyError as exc:
            raise ScenarioError(f"scenario missing key {exc.args[0]!r}") from None
        walls = {_cell(w, "wall") for w in obj.get("walls", [])}
        if "goal" not in obj:
            raise ScenarioError("scenario missing key 'goal'")
        goal = _cell(obj["goal"], "goal")
    trajs = tuple(tuple(_cell(c, "trajectory cell") for c in t) for t in obj.get("trajectories", []))
    sc = MazeScenario(
        width=width,
        height=height,
        walls=frozenset(walls),
        goal=goal,
        r_pen=float(obj.get("r_pen", -0.1)),
        r_goal=float(obj.get("r_goal", 10.0)),
        trajectories=trajs,
        name=str(obj.get("name", name)),
    )
    sc.validate()
    return sc


def load_scenario(path) -> MazeScenario:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc.msg}") from None
    return scenario_from_dict(obj, name=path.stem)


def scenario_to_dict(sc: MazeScenario) -> dict:
    return {
        "name": sc.name,
        "width": sc.width,
        "height": sc.height,
        "walls": [list(w) for w in sorted(sc.walls)],
        "goal": list(sc.goal),
        "r_pen": sc.r_pen,
        "r_goal": sc.r_goal,
        "trajectories": [[list(c) for c in t] for t in sc.trajectories],
    }


def bundled_scenario(name: str) -> MazeScenario:
    """Load one of the scenario files shipped with the package (``stitching``, ``gap``)."""
    ref = resources.files("scrl").joinpath("scenarios", f"{name}.json")
    obj = json.loads(ref.read_text(encoding="utf-8"))
    return scenario_from_dict(obj, name=name)


def grid_maze_from_scenario(sc: MazeScenario, discount: float = 0.99) -> DeterministicMdp:
    """Build the maze MDP: blocked moves self-loop, entering the goal pays ``r_goal``."""
    sc.validate()
    cells = sc.free_cells()
    index = {c: i for i, c in enumerate(cells)}
    goal = index[sc.goal]
    trans = np.zeros((len(cells), 4), dtype=np.int64)
    rewards = {}
    for i, (x, y) in enumerate(cells):
        for a, (dx, dy) in enumerate(ACTION_VECTORS.astype(int)):
            j = index.get((x + dx, y + dy), i)
            trans[i, a] = j
            rewards[(i, j)] = sc.r_goal if j == goal else sc.r_pen
    return DeterministicMdp(
        states=np.array(cells, dtype=np.float64),
        actions=ACTION_VECTORS,
        transition=trans,
        rewards=rewards,
        discount=discount,
        terminal_states=frozenset({goal}),
        action_names=ACTION_NAMES,
    )


def maze_reward_fn(sc: MazeScenario):
    goal = np.array(sc.goal, dtype=np.float64)

    def reward(s, s_next) -> float:
        return sc.r_goal if np.array_equal(np.asarray(s_next, dtype=np.float64), goal) else sc.r_pen

    return reward


def grid_model(sc: MazeScenario):
    """Exact batched forward model ``f(s, a)`` of the maze (walls block movement)."""
    walls = set(sc.walls)

    def forward(s, a):
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        s, a = np.broadcast_arrays(s, a)
        nxt = s + a
        out = nxt.copy()
        for k, (x, y) in enumerate(nxt.astype(int)):
            if not sc.inside((x, y)) or (x, y) in walls:
                out[k] = s[k]
        return out

    return forward


def dataset_from_scenario(sc: MazeScenario, mdp: DeterministicMdp | None = None) -> Dataset:
    """Turn the scenario's cell paths into transition records."""
    mdp = mdp or grid_maze_from_scenario(sc)
    trajs = []
    for path in sc.trajectories:
        recs = []
        for c0, c1 in zip(path, path[1:]):
            s, sn = mdp.index_of(c0), mdp.index_of(c1)
            if mdp.is_terminal(s):
                break
            a = inverse_dynamics_lookup(mdp, s, sn)
            recs.append((mdp.states[s], mdp.actions[a], mdp.reward(s, sn), mdp.states[sn], mdp.is_terminal(sn)))
        trajs.append(recs)
    return make_dataset(trajs, 2, 2, metadata={"source": "maze", "scenario": sc.name, "behavior": "scripted"})


def _direction(src: Cell, dst: Cell) -> str | None:
    d = (dst[0] - src[0], dst[1] - src[1])
    for name, v in zip(ACTION_NAMES, ACTION_VECTORS.astype(int)):
        if d == tuple(v):
            return name
    return None


def policy_arrows(policy: Mapping[Cell, Cell | str]) -> dict[Cell, str]:
    """Map cell -> arrow glyph; values may be target cells or action names."""
    out = {}
    for cell, target in policy.items():
        if isinstance(target, str):
            out[cell] = ARROWS[target]
            continue
        name = _direction(cell, target)
        out[cell] = ARROWS[name] if name else "+"  # multi-step or self target
    return out


def render_ascii(sc: MazeScenario, policy: Mapping[Cell, Cell | str]) -> str:
    arrows = policy_arrows(policy)
    rows = []
    for y in range(sc.height - 1, -1, -1):
        row = []
        for x in range(sc.width):
            c = (x, y)
            if c in sc.walls:
                row.append("#")
            elif c == sc.goal:
                row.append("*")
            else:
                row.append(arrows.get(c, " "))
        rows.append("".join(row))
    return "\n".join(rows) + "\n"


def render_svg(sc: MazeScenario, policy: Mapping[Cell, Cell | str], cell_px: int = 32) -> str:
    arrows = policy_arrows(policy)
    w, h = sc.width * cell_px, sc.height * cell_px
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">']
    for y in range(sc.height):
        for x in range(sc.width):
            px, py = x * cell_px, (sc.height - 1 - y) * cell_px
            fill = "#c0392b" if (x, y) in sc.walls else "#ffffff"
            parts.append(f'<rect x="{px}" y="{py}" width="{cell_px}" height="{cell_px}" fill="{fill}" stroke="#999"/>')
            label = "*" if (x, y) == sc.goal else arrows.get((x, y))
            if label:
                parts.append(
                    f'<text x="{px + cell_px / 2}" y="{py + cell_px * 0.7}" font-size="{cell_px * 0.6}" '
                    f'text-anchor="middle">{escape(label)}</text>'
                )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
