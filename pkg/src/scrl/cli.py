"""``scrl`` command line: data generation, reachability, training, evaluation and rendering.

Exit codes: 0 success, 2 input or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import Dataset, DatasetFormatError, load_dataset, save_dataset, unique_states
from .maze import (
    ACTION_NAMES,
    ACTION_VECTORS,
    ScenarioError,
    bundled_scenario,
    dataset_from_scenario,
    grid_maze_from_scenario,
    grid_model,
    load_scenario,
    maze_reward_fn,
    render_ascii,
    render_svg,
    scenario_from_dict,
    scenario_to_dict,
)
from .nn import MlpEnsemble, TrainSpec, load_model, save_model, train_forward_model, train_inverse_model, train_reward_model
from .pointmass import PointMassEnv, evaluate_policy, generate_dataset, random_behavior, scripted_behavior, uniform_transitions
from .reachability import (
    ReachConfigError,
    ReachCriterion,
    build_reachability_index,
    exact_grid_index,
    k_step_index,
    load_index,
    reachability_report,
    save_index,
    union_index,
)
from .stacq import Actor, CriticBank, NumericalError, StacqConfig, StacqConfigError, config_dict, train_onestep, train_stacq
from .tabular import (
    LearnerConfig,
    TabularView,
    bcql_train,
    extract_policy_bcql,
    extract_policy_scql,
    multistep_edge_rewards,
    reaches_goal,
    save_table,
    scql_train,
    success_states,
)

log = logging.getLogger("scrl")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: list[int]
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    wall_clock: float = 0.0
    version: str = __version__

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- helpers


def _resolve(args, p) -> Path | None:
    if p is None:
        return None
    p = Path(p)
    return p if p.is_absolute() else Path(args.workdir) / p


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SCRL_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"SCRL_SEED must be an integer, got {env!r}") from None


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise InputError(f"missing {what}")
    if not path.exists():
        raise InputError(f"{what} not found: {path}")
    return path


def _scenario(args, dataset: Dataset | None = None):
    spec = getattr(args, "scenario", None)
    if spec:
        path = _resolve(args, spec)
        return load_scenario(path) if path.exists() or spec.endswith(".json") else bundled_scenario(spec)
    if dataset is not None and "scenario_spec" in dataset.metadata:
        return scenario_from_dict(dataset.metadata["scenario_spec"], dataset.metadata.get("scenario", "maze"))
    raise InputError("a maze scenario is required (--scenario or a maze dataset)")


def _env_from(meta: dict) -> PointMassEnv:
    spec = meta.get("env", {})
    return PointMassEnv(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in spec.items()})


def _env_spec(env: PointMassEnv) -> dict:
    return {f.name: getattr(env, f.name) for f in dataclasses.fields(env) if f.init}


def _coerce(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if isinstance(default, int) or default is None:
        if raw.lower() == "none":
            return None
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config(lines, cls):
    """Flat ``key = value`` lines (``#`` comments) into overrides for a config dataclass."""
    defaults = {f.name: getattr(cls(), f.name) for f in dataclasses.fields(cls)}
    out = {}
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {n}: expected key=value, got {line!r}")
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in defaults:
            raise InputError(f"config line {n}: unknown key {key!r}")
        try:
            out[key] = _coerce(value, defaults[key])
        except ValueError as exc:
            raise InputError(f"config line {n}: {exc}") from None
    return out


def _config(args, cls):
    lines = []
    if args.config:
        lines += _require(_resolve(args, args.config), "config file").read_text(encoding="utf-8").splitlines()
    lines += args.set or []
    return parse_config(lines, cls)


def _write_csv(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args) -> int:
    t0 = time.time()
    seed = _seed(args)
    out = _resolve(args, args.out)
    if args.env == "maze":
        sc = _scenario(args)
        ds = dataset_from_scenario(sc)
        ds = Dataset(ds.records, ds.state_dim, ds.action_dim, metadata={**ds.metadata, "scenario_spec": scenario_to_dict(sc)})
    else:
        env = PointMassEnv()
        if args.behavior == "uniform":
            ds = uniform_transitions(env, args.transitions or 5000, seed)
        else:
            beh = scripted_behavior(env, noise_std=args.noise) if args.behavior == "scripted" else random_behavior(env)
            n_ep = args.episodes if args.episodes is not None or args.transitions else 50
            ds = generate_dataset(env, beh, n_episodes=n_ep, n_transitions=args.transitions, seed=seed, uniform_starts=args.behavior == "random", name=args.behavior)
        ds = Dataset(ds.records, ds.state_dim, ds.action_dim, metadata={**ds.metadata, "env": _env_spec(env)})
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    RunManifest(
        "gen-data",
        {"env": args.env, "scenario": args.scenario, "behavior": args.behavior, "episodes": args.episodes, "transitions": args.transitions},
        [seed],
        outputs=[str(out)],
        wall_clock=time.time() - t0,
    ).write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {len(ds)} transitions in {ds.n_trajectories} trajectories to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- build-reach


def _train_models(args, ds: Dataset, seed: int, models_dir: Path):
    low, high = ds.arrays["a"].min(axis=0), ds.arrays["a"].max(axis=0)
    if "env" in ds.metadata:
        env = _env_from(ds.metadata)
        low, high = env.action_low, env.action_high
    hidden = [int(h) for h in args.model_hidden.split(",")]
    d, k = ds.state_dim, ds.action_dim
    spec = TrainSpec(epochs=args.model_epochs, seed=seed)
    fwd = train_forward_model(MlpEnsemble.create(args.ensemble_fwd, [d + k, *hidden, d], seed), ds, spec)
    inv = train_inverse_model(
        MlpEnsemble.create(args.ensemble_inv, [2 * d, *hidden, k], seed + 1), ds, dataclasses.replace(spec, target="action"), low, high
    )
    models_dir.mkdir(parents=True, exist_ok=True)
    save_model(fwd, models_dir / "forward.json")
    save_model(inv, models_dir / "inverse.json")
    outs = [models_dir / "forward.json", models_dir / "inverse.json"]
    if args.reward_model:
        rew = train_reward_model(MlpEnsemble.create(1, [2 * d, *hidden[:2], 1], seed + 2), ds, dataclasses.replace(spec, target="reward"))
        save_model(rew, models_dir / "reward.json")
        outs.append(models_dir / "reward.json")
    return fwd, inv, low, high, outs


def cmd_build_reach(args) -> int:
    t0 = time.time()
    seed = _seed(args)
    data_path = _require(_resolve(args, args.data), "dataset")
    ds = load_dataset(data_path)
    states = unique_states(ds)
    out = _resolve(args, args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    crit = ReachCriterion(args.reach_norm, args.reach_eps, args.reach_scaled)
    inputs = {str(data_path): file_hash(data_path)}
    outputs = [str(out)]
    if args.exact_grid:
        index = exact_grid_index(states)
        if args.reach_k > 1:
            sc = _scenario(args, ds)
            exact = ReachCriterion("linf", 1e-9, scaled=False)
            for k in range(2, args.reach_k + 1):
                index = union_index(index, k_step_index(states, k, grid_model(sc), exact, actions=ACTION_VECTORS))
    else:
        models_dir = _resolve(args, args.models)
        if args.train_models:
            fwd, inv, low, high, outs = _train_models(args, ds, seed, models_dir)
            outputs += [str(p) for p in outs]
        else:
            f_path = _require(models_dir / "forward.json" if models_dir else None, "forward model (use --train-models or --models)")
            i_path = _require(models_dir / "inverse.json", "inverse model")
            fwd, inv = load_model(f_path), load_model(i_path)
            inputs.update({str(f_path): file_hash(f_path), str(i_path): file_hash(i_path)})
            low, high = inv.low, inv.high
            if low is None:
                low, high = ds.arrays["a"].min(axis=0), ds.arrays["a"].max(axis=0)
        index = build_reachability_index(states, fwd, inv, crit, low, high, n_random=args.n_random, seed=seed, bypass_index=args.bypass_index)
        if args.reach_k > 1:
            for k in range(2, args.reach_k + 1):
                more = k_step_index(states, k, fwd, crit, inverse=inv, low=low, high=high, n_random=args.n_random, rng=np.random.default_rng(seed + k))
                index = union_index(index, more)
    index.meta.pop("boxes", None)
    save_index(index, out)
    report = reachability_report(index)
    report_path = out.with_suffix(out.suffix + ".report.json")
    report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    outputs.append(str(report_path))
    RunManifest(
        "build-reach",
        {"criterion": crit.to_dict(), "exact_grid": args.exact_grid, "reach_k": args.reach_k, "n_random": args.n_random, "bypass_index": args.bypass_index},
        [seed],
        inputs,
        outputs,
        time.time() - t0,
    ).write(out.with_suffix(out.suffix + ".manifest.json"))
    print(f"indexed {len(index.cands)} states, mean {report['mean_candidates']:.2f} candidates -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train


def _tabular_metrics(rows) -> str:
    lines = ["sweep,max_update,mean_q"]
    lines += [f"{s},{d!r},{q!r}" for s, d, q in rows]
    return "\n".join(lines) + "\n"


def _train_tabular(args, ds, reach, out: Path, seed: int) -> list[Path]:
    overrides = _config(args, LearnerConfig)
    overrides.setdefault("seed", seed)
    cfg = LearnerConfig(**overrides)
    view = TabularView(ds)
    rows = []
    prev: dict = {}

    def on_sweep(table, i):
        nonlocal prev
        delta = max((abs(v - prev.get(k, table.init_value)) for k, v in table.values.items()), default=0.0)
        mean_q = float(np.mean(list(table.values.values()))) if table.values else 0.0
        rows.append((i + 1, float(delta), mean_q))
        prev = dict(table.values)

    sc = _scenario(args, ds) if ds.metadata.get("source") == "maze" or args.scenario else None
    policy_rows = []
    if args.learner == "bcql":
        table = bcql_train(ds, cfg, on_sweep)
        policy = extract_policy_bcql(table, view)
        for s, a in sorted(policy.items()):
            policy_rows.append({"s": view.states[s].tolist(), "action": view.actions[a].tolist()})
        max_hops = 1
    else:
        if reach is None:
            raise InputError("SCQL needs a reachability index (--reach)")
        reward_fn = maze_reward_fn(sc) if sc is not None else None
        edge = None
        if sc is not None and np.any([np.any(reach.steps_of(s) > 1) for s in reach.cands]):
            edge = multistep_edge_rewards(grid_maze_from_scenario(sc, cfg.gamma), view.states, reach, cfg.gamma)
        table = scql_train(ds, reach, cfg, reward_fn=reward_fn, edge_rewards=edge, on_sweep=on_sweep)
        policy = extract_policy_scql(table, view.n_states, reach, view.terminals)
        for s, c in sorted(policy.items()):
            policy_rows.append({"s": view.states[s].tolist(), "next": view.states[c].tolist()})
        max_hops = int(max((int(np.max(reach.steps_of(s))) for s in reach.cands if len(reach.candidates(s))), default=1))
    out.mkdir(parents=True, exist_ok=True)
    save_table(table, out / "table.json")
    art = {"kind": "tabular", "learner": args.learner, "max_hops": max_hops, "gamma": cfg.gamma, "policy": policy_rows}
    if sc is not None:
        art["scenario"] = scenario_to_dict(sc)
    (out / "policy.json").write_text(json.dumps(art) + "\n", encoding="utf-8")
    _write_csv(out / "metrics.csv", _tabular_metrics(rows))
    print(f"{args.learner}: {table.sweeps} sweeps, {len(policy_rows)} states mapped")
    return [out / "table.json", out / "policy.json", out / "metrics.csv"]


def _train_deep(args, ds, reach, out: Path, seed: int) -> list[Path]:
    if reach is None:
        raise InputError(f"{args.algo} needs a reachability index (--reach)")
    overrides = _config(args, StacqConfig)
    overrides.setdefault("seed", seed)
    if args.algo == "onestep":
        overrides.setdefault("n_critics", 1)
        overrides.setdefault("alpha_reg", 0.1)
    try:
        cfg = StacqConfig(**overrides)
    except StacqConfigError as exc:
        raise InputError(str(exc)) from None
    models_dir = _resolve(args, args.models)
    fwd = load_model(_require(models_dir / "forward.json" if models_dir else None, "forward model (--models)"))
    env = _env_from(ds.metadata) if ds.metadata.get("source") == "pointmass" else None
    if args.reward_model:
        reward_fn = load_model(_require(_resolve(args, args.reward_model), "reward model"))
    elif env is not None:
        reward_fn = env.reward
    else:
        raise InputError("no reward source: pass --reward-model or use an environment with a known reward")
    low, high = (env.action_low, env.action_high) if env is not None else (None, None)
    evaluate = None
    if env is not None and cfg.eval_episodes > 0:
        evaluate = lambda actor: evaluate_policy(env, actor.act, cfg.eval_episodes, seed=cfg.seed + 10_000)  # noqa: E731
    train = train_stacq if args.algo == "stacq" else train_onestep
    res = train(ds, reach, fwd, cfg, reward_fn=reward_fn, low=low, high=high, evaluate=evaluate)
    out.mkdir(parents=True, exist_ok=True)
    art = {"kind": "actor", "algo": args.algo, "state_dim": ds.state_dim, "actor": res.actor.to_dict(), "config": config_dict(cfg)}
    if env is not None:
        art["env"] = _env_spec(env)
    (out / "policy.json").write_text(json.dumps(art) + "\n", encoding="utf-8")
    (out / "critics.json").write_text(json.dumps(res.critics.to_dict()) + "\n", encoding="utf-8")
    _write_csv(out / "metrics.csv", res.metrics_csv())
    last = res.metrics[-1] if res.metrics else {}
    print(f"{args.algo}: {cfg.iterations} iterations, final eval return {last.get('eval_return_mean')}")
    return [out / "policy.json", out / "critics.json", out / "metrics.csv"]


def cmd_train(args) -> int:
    t0 = time.time()
    seed = _seed(args)
    data_path = _require(_resolve(args, args.data), "dataset")
    ds = load_dataset(data_path)
    inputs = {str(data_path): file_hash(data_path)}
    reach = None
    if args.reach:
        r_path = _require(_resolve(args, args.reach), "reachability index")
        reach = load_index(r_path)
        inputs[str(r_path)] = file_hash(r_path)
        if reach.n_states != len(unique_states(ds)):
            raise InputError(f"reachability index covers {reach.n_states} states but the dataset has {len(unique_states(ds))}")
    out = _resolve(args, args.out)
    if args.algo == "tabular":
        outputs = _train_tabular(args, ds, reach, out, seed)
        cfg = dataclasses.asdict(LearnerConfig(**{"seed": seed, **_config(args, LearnerConfig)}))
    else:
        outputs = _train_deep(args, ds, reach, out, seed)
        cfg = json.loads((out / "policy.json").read_text())["config"]
    RunManifest(f"train {args.algo}", cfg, [seed], inputs, [str(p) for p in outputs], time.time() - t0).write(out / "manifest.json")
    return EXIT_OK


# ---------------------------------------------------------------- eval / render


def _load_artifact(args) -> dict:
    path = _require(_resolve(args, args.policy), "policy artifact")
    if path.is_dir():
        path = _require(path / "policy.json", "policy artifact")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc.msg}") from None


def _tabular_policy(art: dict, mdp):
    """Policy in MDP ids from an artifact's state-vector rows."""
    out = {}
    for row in art["policy"]:
        s = mdp.index_of(row["s"])
        if "next" in row:
            out[s] = mdp.index_of(row["next"])
        else:
            out[s] = int(np.flatnonzero(np.all(mdp.actions == np.asarray(row["action"]), axis=1))[0])
    return out


def cmd_eval(args) -> int:
    art = _load_artifact(args)
    seed = _seed(args)
    result: dict = {"kind": art.get("kind")}
    if art.get("kind") == "tabular":
        if "scenario" not in art:
            raise InputError("tabular policy has no maze scenario to evaluate in")
        sc = scenario_from_dict(art["scenario"])
        mdp = grid_maze_from_scenario(sc, art.get("gamma", 0.99))
        ds = dataset_from_scenario(sc, mdp)
        view = TabularView(ds)
        kind = "state" if art["learner"] != "bcql" else "action"
        pol = _tabular_policy(art, mdp)
        ok = [view.states[s].astype(int).tolist() for s in range(view.n_states) if reaches_goal(mdp, pol, mdp.index_of(view.states[s]), kind, art.get("max_hops", 1))]
        result.update(dataset_states=view.n_states, success_states=len(ok), success_cells=sorted(ok))
    elif art.get("kind") == "actor":
        env = _env_from({"env": art.get("env", {})})
        actor = Actor.from_dict(art["actor"])
        if art.get("state_dim", env.state_dim) != env.state_dim or len(actor.low) != env.action_dim:
            raise InputError(f"policy dims ({art.get('state_dim')}, {len(actor.low)}) do not match the environment ({env.state_dim}, {env.action_dim})")
        per_seed = []
        if args.episodes > 0:
            for k in range(args.seeds):
                per_seed.append(evaluate_policy(env, actor.act, args.episodes, seed=seed + k).tolist())
        flat = [x for r in per_seed for x in r]
        result.update(
            per_seed_returns=per_seed,
            per_seed_mean=[float(np.mean(r)) for r in per_seed],
            return_mean=float(np.mean(flat)) if flat else None,
            return_std=float(np.std(flat)) if flat else None,
        )
    else:
        raise InputError(f"unknown policy artifact kind {art.get('kind')!r}")
    text = json.dumps(result, indent=2)
    if args.out:
        _resolve(args, args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_render(args) -> int:
    art = _load_artifact(args)
    if art.get("kind") != "tabular" or "scenario" not in art:
        raise InputError("render needs a tabular maze policy")
    sc = scenario_from_dict(art["scenario"])
    policy = {}
    for row in art["policy"]:
        cell = tuple(int(round(x)) for x in row["s"])
        if "next" in row:
            policy[cell] = tuple(int(round(x)) for x in row["next"])
        else:
            policy[cell] = ACTION_NAMES[int(np.flatnonzero(np.all(ACTION_VECTORS == np.asarray(row["action"]), axis=1))[0])]
    text = render_svg(sc, policy) if args.format == "svg" else render_ascii(sc, policy)
    if args.out:
        _resolve(args, args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_reach_report(args) -> int:
    index = load_index(_require(_resolve(args, args.reach), "reachability index"))
    truth = None
    if args.ground_truth:
        ds = load_dataset(_require(_resolve(args, args.data), "dataset (--data) for ground truth"))
        states = unique_states(ds)
        if args.ground_truth == "grid":
            exact = exact_grid_index(states).as_sets()
            truth = exact
        else:
            env = _env_from(ds.metadata)
            truth = lambda s, c: env.truly_reachable(states[s], states[c])  # noqa: E731
    report = reachability_report(index, truth, bins=args.bins)
    text = json.dumps(report, indent=2)
    if args.out:
        _resolve(args, args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scrl", description="State-constrained offline RL toolkit.")
    p.add_argument("--workdir", default=".", help="base directory for relative paths")
    p.add_argument("--seed", type=int, default=None, help="global seed (falls back to $SCRL_SEED, then 0)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"scrl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate an offline dataset")
    g.add_argument("--env", choices=("maze", "pointmass"), default="maze")
    g.add_argument("--scenario", help="bundled scenario name or JSON path (maze)")
    g.add_argument("--behavior", choices=("scripted", "random", "uniform"), default="scripted")
    g.add_argument("--episodes", type=int)
    g.add_argument("--transitions", type=int)
    g.add_argument("--noise", type=float, default=0.1, help="scripted behaviour action noise std")
    g.add_argument("--out", default="data.jsonl")
    g.set_defaults(func=cmd_gen_data)

    r = sub.add_parser("build-reach", help="build a reachability index over dataset states")
    r.add_argument("--data", required=True)
    r.add_argument("--out", default="reach.jsonl")
    r.add_argument("--exact-grid", action="store_true", help="use exact grid adjacency (mazes)")
    r.add_argument("--scenario", help="maze scenario for multi-step exact search")
    r.add_argument("--models", default="models", help="directory holding forward.json / inverse.json")
    r.add_argument("--train-models", action="store_true", help="train and save the dynamics models first")
    r.add_argument("--reward-model", action="store_true", help="also train a reward model")
    r.add_argument("--ensemble-fwd", type=int, default=7)
    r.add_argument("--ensemble-inv", type=int, default=3)
    r.add_argument("--model-hidden", default="256,256,256")
    r.add_argument("--model-epochs", type=int, default=200)
    r.add_argument("--reach-norm", choices=("l1", "l2", "linf"), default="linf")
    r.add_argument("--reach-eps", type=float, default=0.1)
    r.add_argument("--reach-scaled", dest="reach_scaled", action="store_true", default=True)
    r.add_argument("--reach-unscaled", dest="reach_scaled", action="store_false")
    r.add_argument("--reach-k", type=int, default=1)
    r.add_argument("--n-random", type=int, default=64)
    r.add_argument("--bypass-index", action="store_true", help="linear scan instead of the R-tree")
    r.set_defaults(func=cmd_build_reach)

    t = sub.add_parser("train", help="train a tabular or deep learner")
    t.add_argument("algo", choices=("tabular", "stacq", "onestep"))
    t.add_argument("--data", required=True)
    t.add_argument("--reach")
    t.add_argument("--learner", choices=("scql", "bcql"), default="scql", help="tabular learner")
    t.add_argument("--scenario")
    t.add_argument("--models", default="models")
    t.add_argument("--reward-model")
    t.add_argument("--config", help="flat key=value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
    t.add_argument("--out", default="run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained policy")
    e.add_argument("--policy", required=True)
    e.add_argument("--episodes", type=int, default=10)
    e.add_argument("--seeds", type=int, default=5)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("render", help="draw a maze policy as arrows")
    d.add_argument("--policy", required=True)
    d.add_argument("--format", choices=("ascii", "svg"), default="ascii")
    d.add_argument("--out")
    d.set_defaults(func=cmd_render)

    q = sub.add_parser("reach-report", help="summarise a reachability index")
    q.add_argument("--reach", required=True)
    q.add_argument("--data")
    q.add_argument("--ground-truth", choices=("grid", "pointmass"))
    q.add_argument("--bins", type=int, default=10)
    q.add_argument("--out")
    q.set_defaults(func=cmd_reach_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalError, FloatingPointError) as exc:
        print(f"scrl: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ScenarioError, DatasetFormatError, ReachConfigError, StacqConfigError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"scrl: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
