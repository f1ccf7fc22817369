import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scrl.dataset import (
    Dataset,
    DatasetFormatError,
    GenerationError,
    load_dataset,
    make_dataset,
    normalize_states,
    rollout,
    save_dataset,
    unique_states,
)
from scrl.maze import MazeScenario, grid_maze_from_scenario
from scrl.pointmass import PointMassEnv, generate_dataset, scripted_behavior


def random_dataset(rng, n_traj=5, max_len=8, sd=3, ad=2):
    trajs = []
    for _ in range(n_traj):
        length = int(rng.integers(1, max_len + 1))
        s = rng.normal(size=sd)
        recs = []
        for i in range(length):
            sn = rng.normal(size=sd)
            recs.append((s, rng.normal(size=ad), float(rng.normal()), sn, i == length - 1 and bool(rng.integers(2))))
            s = sn
        trajs.append(recs)
    return make_dataset(trajs, sd, ad)


def test_rollout_to_goal_ends_terminal():
    mdp = grid_maze_from_scenario(MazeScenario(3, 1, frozenset(), (2, 0)))
    recs = rollout(mdp, {0: 1, 1: 1}, 0, 10)
    assert len(recs) == 2
    assert recs[-1].terminal and recs[-1].r == 10.0
    assert [r.step_index for r in recs] == [0, 1]


def test_rollout_zero_length():
    mdp = grid_maze_from_scenario(MazeScenario(3, 1, frozenset(), (2, 0)))
    assert rollout(mdp, {0: 1}, 0, 0) == []


def test_rollout_undefined_behaviour():
    mdp = grid_maze_from_scenario(MazeScenario(3, 1, frozenset(), (2, 0)))
    with pytest.raises(GenerationError):
        rollout(mdp, {0: 1}, 0, 5)


def test_bundled_maze_has_57_states(stitching):
    _, _, ds, _ = stitching
    assert ds.n_trajectories == 4
    assert len(unique_states(ds)) == 57


def test_unique_states_order_and_sharing():
    a, b, c, d = ([float(i)] for i in range(4))
    ds = make_dataset([[(a, [0.0], 0, b, False), (b, [0.0], 0, c, False)], [(d, [0.0], 0, b, False)]], 1, 1)
    assert unique_states(ds)[:, 0].tolist() == [0.0, 1.0, 2.0, 3.0]
    again = make_dataset([[(s, [0.0], 0, s, False)] for s in unique_states(ds)], 1, 1)
    assert np.array_equal(unique_states(again), unique_states(ds))


def test_normalize_constant_feature():
    trajs = [[((5.0, float(i)), (0.0,), 0.0, (5.0, float(i + 1)), False)] for i in range(4)]
    out = normalize_states(make_dataset(trajs, 2, 1))
    assert np.all(out.arrays["s"][:, 0] == 0.0)


def test_normalize_standard_input_is_scaled_by_eps():
    x = np.array([-1.0, 1.0])
    ds = make_dataset([[((x[0],), (0.0,), 0.0, (x[1],), False)]], 1, 1)
    out = normalize_states(ds)
    assert out.arrays["s"][0, 0] == pytest.approx(-1.0 / (1 + 1e-3), abs=1e-12)
    assert out.arrays["s_next"][0, 0] == pytest.approx(1.0 / (1 + 1e-3), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_normalization_mean_and_inverse(seed):
    ds = random_dataset(np.random.default_rng(seed), n_traj=10, max_len=10)
    out = normalize_states(ds)
    pooled = np.concatenate([out.arrays["s"], out.arrays["s_next"]])
    assert np.all(np.abs(pooled.mean(axis=0)) < 1e-9)
    back = out.normalization.invert(out.arrays["s"])
    assert np.max(np.abs(back - ds.arrays["s"])) < 1e-10
    assert np.all(out.normalization.std >= 0)


def test_normalize_empty_raises():
    with pytest.raises(ValueError):
        normalize_states(make_dataset([], 2, 1))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_save_load_round_trip(tmp_path_factory, seed):
    ds = random_dataset(np.random.default_rng(seed))
    path = tmp_path_factory.mktemp("ds") / "d.jsonl"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.records == ds.records
    assert (back.state_dim, back.action_dim) == (ds.state_dim, ds.action_dim)


def test_round_trip_keeps_normalization(tmp_path):
    ds = normalize_states(random_dataset(np.random.default_rng(3)))
    save_dataset(ds, tmp_path / "d.jsonl")
    back = load_dataset(tmp_path / "d.jsonl")
    assert back.records == ds.records
    assert np.array_equal(back.normalization.mean, ds.normalization.mean)


def test_bad_state_dim_reports_line(tmp_path):
    ds = random_dataset(np.random.default_rng(0), n_traj=1, max_len=8)
    save_dataset(ds, tmp_path / "d.jsonl")
    lines = (tmp_path / "d.jsonl").read_text().splitlines()
    while len(lines) < 7:
        lines.append(lines[-1])
    bad = json.loads(lines[6])
    bad["s"] = bad["s"][:-1]
    lines[6] = json.dumps(bad)
    (tmp_path / "d.jsonl").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError) as info:
        load_dataset(tmp_path / "d.jsonl")
    assert info.value.line == 7
    assert "line 7" in str(info.value)


def test_empty_file_with_header(tmp_path):
    (tmp_path / "d.jsonl").write_text('{"state_dim": 4, "action_dim": 2}\n')
    ds = load_dataset(tmp_path / "d.jsonl")
    assert len(ds) == 0 and ds.state_dim == 4 and ds.action_dim == 2


def test_invalid_json_line(tmp_path):
    (tmp_path / "d.jsonl").write_text('{"state_dim": 1, "action_dim": 1}\n{not json\n')
    with pytest.raises(DatasetFormatError, match="line 2"):
        load_dataset(tmp_path / "d.jsonl")


def test_dataset_invariants():
    rec = make_dataset([[((0.0,), (0.0,), 0.0, (1.0,), True)]], 1, 1).records[0]
    after = type(rec)(rec.s_next, rec.a, 0.0, rec.s, False, 0, 1)
    with pytest.raises(ValueError, match="after a terminal"):
        Dataset((rec, after), 1, 1)
    shifted = type(rec)(rec.s, rec.a, 0.0, rec.s_next, False, 1, 0)
    with pytest.raises(ValueError, match="contiguous"):
        Dataset((shifted,), 1, 1)


def test_pointmass_dataset_dims():
    env = PointMassEnv()
    ds = generate_dataset(env, scripted_behavior(env), n_episodes=5, seed=0)
    assert ds.n_trajectories == 5
    assert ds.state_dim == 2 and ds.action_dim == 2
    assert np.all(np.abs(ds.arrays["a"]) <= env.max_step)
