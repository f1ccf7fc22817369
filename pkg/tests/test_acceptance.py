"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``[criterion N] PASS|FAIL`` line with its measurements
and wall time, then asserts.
"""

import time

import numpy as np
import pytest

from helpers import coverage_dataset, fd_grads, mdp_ids, partial_dataset, rel_error, relu_margin, small_random_mdp
from scrl.cli import main
from scrl.dataset import make_dataset, unique_states
from scrl.maze import ACTION_VECTORS, grid_model
from scrl.mdp import policy_value
from scrl.nn import ForwardModel, Mlp, MlpEnsemble, TrainSpec, mlp_backward, train_forward_model, train_inverse_model
from scrl.pointmass import PointMassEnv, evaluate_policy, generate_dataset, scripted_behavior, uniform_transitions
from scrl.reachability import (
    ReachCriterion,
    build_reachability_index,
    exact_grid_index,
    k_step_index,
    make_index,
    reachability_report,
    rethreshold,
    union_index,
)
from scrl.spatial import RangeBox, SpatialIndex, linear_scan
from scrl.stacq import (
    Actor,
    CriticBank,
    StacqConfig,
    TransitionTable,
    actor_loss_and_grads,
    critic_loss_and_grads,
    lookahead_rows,
    onestep_targets,
    train_onestep,
    train_stacq,
)
from scrl.tabular import (
    LearnerConfig,
    QssTable,
    TabularView,
    bcql_train,
    behavior_cloning_policy,
    extract_policy_bcql,
    extract_policy_scql,
    mdp_reach_index,
    mdp_reward_fn,
    multistep_edge_rewards,
    reaches_goal,
    scql_train,
    success_states,
    to_mdp_policy,
    value_iteration_oracle,
)

ENV = PointMassEnv()


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, elapsed, limit=None):
        budget = f" / {limit:.0f}s" if limit else ""
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail} ({elapsed:.1f}s{budget})")

    return emit


def exact_cfg(gamma):
    return LearnerConfig(alpha=1.0, gamma=gamma, sweeps=5000, tol=1e-13)


def random_instances(n):
    return [small_random_mdp(1000 + k) for k in range(n)]


def test_1_scql_convergence(report):
    t0 = time.time()
    worst = 0.0
    for mdp in random_instances(20):
        ds = coverage_dataset(mdp)
        view = TabularView(ds)
        ids = mdp_ids(mdp, view)
        q = scql_train(ds, mdp_reach_index(mdp, view.states), exact_cfg(mdp.discount), reward_fn=mdp_reward_fn(mdp))
        oracle = value_iteration_oracle(mdp)
        worst = max(worst, max(abs(v - oracle[(ids[s], ids[c])]) for (s, c), v in q.values.items()))
    elapsed = time.time() - t0
    ok = worst <= 1e-8 and elapsed <= 10
    report(1, ok, f"20 random MDPs, max |Q - Q*| = {worst:.2e} (bound 1e-8)", elapsed, 10)
    assert ok


def test_2_contraction(report):
    t0 = time.time()
    worst = 0.0
    for mdp in random_instances(20):
        ds = coverage_dataset(mdp)
        view = TabularView(ds)
        ids = mdp_ids(mdp, view)
        reach = mdp_reach_index(mdp, view.states)
        oracle = value_iteration_oracle(mdp, tol=1e-15)  # ratios near gamma need a sharp Q*
        keys = [(s, int(c)) for s in range(view.n_states) if s not in view.terminals for c in reach.candidates(s)]

        def err(t):
            return max(abs(t[(s, c)] - oracle[(ids[s], ids[c])]) for s, c in keys)

        errs = [err(QssTable())]
        cfg = LearnerConfig(alpha=1.0, gamma=mdp.discount, sweeps=60, tol=0.0)
        scql_train(ds, reach, cfg, reward_fn=mdp_reward_fn(mdp), on_sweep=lambda t, _: errs.append(err(t)))
        ratios = [b / a for a, b in zip(errs, errs[1:]) if a > 1e-12]
        worst = max([worst, *(r - mdp.discount for r in ratios)])
    elapsed = time.time() - t0
    ok = worst <= 1e-9 and elapsed <= 5
    report(2, ok, f"20 random MDPs, max (error ratio - gamma) = {worst:.2e} (bound 1e-9)", elapsed, 5)
    assert ok


def test_3_dominance(report):
    t0 = time.time()
    instances = violations = checked = 0
    seed = 0
    while instances < 120:
        seed += 1
        mdp = small_random_mdp(5000 + seed, reward_low=0.0, reward_high=1.0)
        rng = np.random.default_rng(seed)
        ds = partial_dataset(mdp, rng, n_traj=int(rng.integers(1, 4)), max_len=int(rng.integers(2, 7)))
        if not ds.records:
            continue
        instances += 1
        view = TabularView(ds)
        cfg = exact_cfg(mdp.discount)
        reach = mdp_reach_index(mdp, view.states)
        sc = extract_policy_scql(scql_train(ds, reach, cfg, reward_fn=mdp_reward_fn(mdp)), view.n_states, reach, view.terminals)
        bc = extract_policy_bcql(bcql_train(ds, cfg), view)
        sc_m, bc_m = to_mdp_policy(mdp, view, sc, "state"), to_mdp_policy(mdp, view, bc, "action")
        for m in mdp_ids(mdp, view):
            checked += 1
            v_sc = policy_value(mdp, sc_m, m, kind="state", on_blank="stop")
            v_bc = policy_value(mdp, bc_m, m, kind="action", on_blank="stop")
            violations += v_sc < v_bc - 1e-9
    elapsed = time.time() - t0
    ok = violations == 0 and elapsed <= 60
    report(3, ok, f"{instances} instances, {checked} dataset states, {violations} violations", elapsed, 60)
    assert ok


def test_4_maze_stitching(stitching, report):
    t0 = time.time()
    sc, mdp, ds, view = stitching
    cfg = LearnerConfig(alpha=0.25, gamma=0.99, sweeps=100)
    reach = exact_grid_index(view.states)
    sc_pol = extract_policy_scql(scql_train(ds, reach, cfg, reward_fn=mdp_reward_fn(mdp)), view.n_states, reach, view.terminals)
    bc_pol = extract_policy_bcql(bcql_train(ds, cfg), view)
    sc_ok = success_states(mdp, view, sc_pol, "state")
    bc_ok = success_states(mdp, view, bc_pol, "action")
    one_action = all(len(a) == 1 for a in view.recorded_actions.values())
    clone_ok = success_states(mdp, view, behavior_cloning_policy(view), "action")
    elapsed = time.time() - t0
    ok = len(sc_ok) == view.n_states and bc_ok < sc_ok and (not one_action or bc_ok == clone_ok) and elapsed <= 5
    detail = f"SCQL {len(sc_ok)}/{view.n_states}, BCQL {len(bc_ok)}/{view.n_states}, behaviour cloning {len(clone_ok)}/{view.n_states}"
    report(4, ok, detail, elapsed, 5)
    assert len(sc_ok) == view.n_states
    assert bc_ok < sc_ok
    assert one_action and bc_ok == clone_ok
    assert elapsed <= 5


def test_5_two_step_gap(gap, report):
    t0 = time.time()
    sc, mdp, ds, view = gap
    cfg = LearnerConfig(alpha=0.25, gamma=0.99, sweeps=100)
    starts = {view.state_id(np.array(t[0], dtype=float)) for t in sc.trajectories}
    exact = ReachCriterion("linf", 1e-9, scaled=False)

    one = exact_grid_index(view.states)
    pol1 = extract_policy_scql(scql_train(ds, one, cfg, reward_fn=mdp_reward_fn(mdp)), view.n_states, one, view.terminals)
    two = union_index(one, k_step_index(view.states, 2, grid_model(sc), exact, actions=ACTION_VECTORS))
    edges = multistep_edge_rewards(mdp, view.states, two, cfg.gamma)
    pol2 = extract_policy_scql(scql_train(ds, two, cfg, reward_fn=mdp_reward_fn(mdp), edge_rewards=edges), view.n_states, two, view.terminals)

    def connected(pol, hops):
        mp = to_mdp_policy(mdp, view, pol, "state")
        return {s for s in starts if reaches_goal(mdp, mp, mdp.index_of(view.states[s]), "state", hops)}

    c1, c2 = connected(pol1, 1), connected(pol2, 2)
    elapsed = time.time() - t0
    ok = len(c1) < len(starts) and c2 == starts and elapsed <= 5
    report(5, ok, f"starts reaching the goal: 1-step {len(c1)}/{len(starts)}, 2-step {len(c2)}/{len(starts)}", elapsed, 5)
    assert ok


def analytic_truth(states, query):
    return {int(q): set(np.flatnonzero(np.max(np.abs(states - states[q]), axis=1) <= ENV.max_step + 1e-9).tolist()) for q in query}


def test_6_reachability_estimator(report):
    t0 = time.time()
    ds = uniform_transitions(ENV, 5000, seed=0)
    fwd = train_forward_model(MlpEnsemble.create(7, [4, 64, 64, 64, 2], 0), ds, TrainSpec(seed=0))
    inv = train_inverse_model(MlpEnsemble.create(3, [4, 64, 64, 64, 2], 1), ds, TrainSpec(target="action", seed=0), ENV.action_low, ENV.action_high)
    states = unique_states(ds)
    query = np.random.default_rng(0).choice(len(states), size=300, replace=False)
    swept = build_reachability_index(states, fwd, inv, ReachCriterion(epsilon=1.0), ENV.action_low, ENV.action_high, query_ids=query, keep_errors=True)
    rep = reachability_report(rethreshold(swept, ReachCriterion()), analytic_truth(states, query))

    monotone = ordered = True
    eps_grid = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)
    sets = {(n, e): rethreshold(swept, ReachCriterion(n, e)).as_sets() for n in ("l1", "l2", "linf") for e in eps_grid}
    for s in swept.cands:
        for n in ("l1", "l2", "linf"):
            monotone &= all(sets[(n, a)][s] <= sets[(n, b)][s] for a, b in zip(eps_grid, eps_grid[1:]))
        for e in eps_grid:
            ordered &= sets[("l1", e)][s] <= sets[("l2", e)][s] <= sets[("linf", e)][s]
    elapsed = time.time() - t0
    ok = rep["precision"] >= 0.9 and rep["recall"] >= 0.9 and monotone and ordered and elapsed <= 120
    detail = f"precision {rep['precision']:.3f}, recall {rep['recall']:.3f}, eps-monotone {monotone}, L1<=L2<=Linf {ordered}"
    report(6, ok, detail, elapsed, 120)
    assert ok


def test_7_spatial_index(report):
    t0 = time.time()
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(1000):
        d = int(rng.integers(1, 5))
        n = int(rng.integers(1, 300))
        pts = rng.uniform(-1, 1, size=(n, d))
        if rng.random() < 0.2:
            pts[: n // 2] = pts[0]
        idx = SpatialIndex(pts, leaf_size=int(rng.integers(2, 17)))
        a, b = rng.uniform(-1.2, 1.2, size=(2, d))
        box = RangeBox(np.minimum(a, b), np.maximum(a, b))
        mismatches += set(idx.query(box).tolist()) != set(linear_scan(pts, box).tolist())
    elapsed = time.time() - t0
    ok = mismatches == 0 and elapsed <= 5
    report(7, ok, f"1000 random instances, {mismatches} mismatches", elapsed, 5)
    assert ok


def _model_loss_error(rng, sizes, seed):
    net = Mlp(sizes, seed=seed)
    x, y = rng.normal(size=(8, sizes[0])), rng.normal(size=(8, sizes[-1]))
    if relu_margin(net.forward(x)[1]) < 1e-4:
        return None
    grads = mlp_backward(net, x, y)[1]
    return rel_error(grads, fd_grads(lambda: mlp_backward(net, x, y)[0], net.params))


def _critic_loss_error(rng, seed, y=None, s=None, s2=None):
    critic = Mlp([4, 6, 6, 1], seed=seed)
    s = rng.normal(size=(8, 2)) if s is None else s
    s2 = rng.normal(size=(8, 2)) if s2 is None else s2
    y = rng.normal(size=len(s)) if y is None else y
    if relu_margin(critic.forward(np.concatenate([s, s2], 1))[1]) < 1e-4:
        return None
    grads = critic_loss_and_grads(critic, s, s2, y)[1]
    return rel_error(grads, fd_grads(lambda: critic_loss_and_grads(critic, s, s2, y)[0], critic.params))


def _actor_loss_error(rng, seed, n_critics):
    actor = Actor.create(2, ENV.action_low, ENV.action_high, (6,), seed=seed)
    bank = CriticBank.create(n_critics, 2, (6,), seed + 1)
    fwd = ForwardModel(MlpEnsemble.create(2, [4, 6, 2], seed + 2))
    s, s_hat = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    noise = rng.normal(0, 0.1, size=(6, 2))
    a = actor(s)
    a_noisy = np.clip(a + noise, ENV.action_low, ENV.action_high)
    margins = [relu_margin(actor.net.forward(s)[1])]
    for x in (np.concatenate([s, a], 1), np.concatenate([s, a_noisy], 1)):
        margins += [relu_margin(m.forward(x)[1]) for m in fwd.ensemble.members]
    sp = fwd(s, a_noisy)
    margins += [relu_margin(c.forward(np.concatenate([s, sp], 1))[1]) for c in bank.critics]
    q = bank.q_all(s, sp)
    gap = np.min(np.abs(q[0] - q[1])) if n_critics > 1 else np.inf
    edge = np.min(np.minimum(np.abs(a + noise - ENV.action_low), np.abs(a + noise - ENV.action_high)))
    if min(margins) < 1e-4 or gap < 1e-4 or edge < 1e-4:
        return None
    grads = actor_loss_and_grads(actor, s, s_hat, fwd, bank, 0.7, noise)[1]
    return rel_error(grads, fd_grads(lambda: actor_loss_and_grads(actor, s, s_hat, fwd, bank, 0.7, noise)[0], actor.net.params))


def _onestep_critic_error(rng, seed):
    xs = np.linspace(0, 1, 6)
    recs = [([xs[i], 0.0], [0.2, 0.0], float(rng.normal()), [xs[i + 1], 0.0], i == 4) for i in range(5)]
    table = TransitionTable.from_dataset(make_dataset([recs], 2, 2))
    n = len(table.states)
    reach = make_index({s: {j for j in (s, s + 1) if j < n} for s in range(n)}, n)
    bank = CriticBank.create(1, 2, (6,), seed)
    rows = lookahead_rows(table.s_next, table, reach, lambda a, b: np.sum(b - a, axis=1))
    y = onestep_targets(table, rows, bank.min_q(table.states[table.s], table.states[table.s_next], target=True), 0.9, warn=False)
    return _critic_loss_error(rng, seed, y, table.states[table.s], table.states[table.s_next])


def test_8_gradient_oracles(report):
    t0 = time.time()
    worst, counts = {}, {}
    checks = {
        "forward model": lambda rng, k: _model_loss_error(rng, [4, 6, 6, 2], k),
        "inverse model": lambda rng, k: _model_loss_error(rng, [4, 6, 6, 2], k + 50),
        "reward model": lambda rng, k: _model_loss_error(rng, [4, 6, 6, 1], k + 100),
        "critic": lambda rng, k: _critic_loss_error(rng, k),
        "actor": lambda rng, k: _actor_loss_error(rng, k, 2),
        "one-step critic": lambda rng, k: _onestep_critic_error(rng, k),
        "one-step actor": lambda rng, k: _actor_loss_error(rng, k, 1),
    }
    for name, fn in checks.items():
        errs = []
        k = 0
        while len(errs) < 5 and k < 50:
            e = fn(np.random.default_rng(k), k)
            k += 1
            if e is not None:
                errs.append(e)
        worst[name], counts[name] = max(errs, default=np.inf), len(errs)
    elapsed = time.time() - t0
    ok = all(v <= 1e-4 for v in worst.values()) and all(c == 5 for c in counts.values()) and elapsed <= 30
    report(8, ok, "max relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()), elapsed, 30)
    assert ok


def test_9_stacq_smoke(report):
    t0 = time.time()
    ds = generate_dataset(ENV, scripted_behavior(ENV), n_episodes=20, seed=0)
    behavior = float(ds.trajectory_returns().mean())
    fwd = train_forward_model(MlpEnsemble.create(7, [4, 64, 64, 64, 2], 0), ds, TrainSpec(seed=0))
    inv = train_inverse_model(MlpEnsemble.create(3, [4, 64, 64, 64, 2], 1), ds, TrainSpec(target="action", seed=0), ENV.action_low, ENV.action_high)
    reach = build_reachability_index(unique_states(ds), fwd, inv, ReachCriterion(), ENV.action_low, ENV.action_high)
    means = {}
    for name, train, n_critics in (("StaCQ", train_stacq, 4), ("one-step", train_onestep, 1)):
        returns = []
        for seed in range(5):
            cfg = StacqConfig(iterations=700, hidden=(64, 64), alpha_reg=1.0, n_critics=n_critics, seed=seed, eval_interval=700)
            res = train(ds, reach, fwd, cfg, reward_fn=ENV.reward, low=ENV.action_low, high=ENV.action_high)
            returns.extend(evaluate_policy(ENV, res.actor.act, 10, seed=1000 + seed).tolist())
        means[name] = float(np.mean(returns))
    elapsed = time.time() - t0
    ok = all(m >= behavior for m in means.values()) and elapsed <= 600
    detail = f"behaviour mean {behavior:.2f}; " + ", ".join(f"{k} {v:.2f}" for k, v in means.items()) + " over 5 seeds x 10 episodes"
    report(9, ok, detail, elapsed, 600)
    assert ok


def test_10_cli_determinism(tmp_path, report):
    t0 = time.time()

    def run(*argv):
        assert main(["--workdir", str(tmp_path), *argv]) == 0

    run("gen-data", "--env", "maze", "--scenario", "stitching", "--out", "maze.jsonl")
    run("build-reach", "--data", "maze.jsonl", "--exact-grid", "--out", "maze_reach.jsonl")
    run("gen-data", "--env", "pointmass", "--episodes", "3", "--out", "pm.jsonl")
    run("build-reach", "--data", "pm.jsonl", "--train-models", "--model-hidden", "16,16", "--model-epochs", "3", "--out", "pm_reach.jsonl")
    tiny = ["--set", "iterations=40", "--set", "batch_size=16", "--set", "hidden=16,16", "--set", "eval_interval=10", "--set", "eval_episodes=2"]
    commands = {
        "tabular scql": ["tabular", "--data", "maze.jsonl", "--reach", "maze_reach.jsonl"],
        "tabular bcql": ["tabular", "--data", "maze.jsonl", "--learner", "bcql"],
        "stacq": ["stacq", "--data", "pm.jsonl", "--reach", "pm_reach.jsonl", *tiny],
        "onestep": ["onestep", "--data", "pm.jsonl", "--reach", "pm_reach.jsonl", *tiny],
    }
    same = {}
    for name, argv in commands.items():
        for k in ("a", "b"):
            run("train", *argv, "--out", f"{name.replace(' ', '_')}_{k}")
        base = tmp_path / name.replace(" ", "_")
        same[name] = (base.parent / f"{base.name}_a" / "metrics.csv").read_bytes() == (base.parent / f"{base.name}_b" / "metrics.csv").read_bytes()
    elapsed = time.time() - t0
    ok = all(same.values())
    report(10, ok, "byte-identical metrics.csv: " + ", ".join(f"{k} {v}" for k, v in same.items()), elapsed)
    assert ok
