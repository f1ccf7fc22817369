"""Small numpy MLPs with hand-written backprop, Adam, ensembles and the
forward / inverse / reward models trained on offline transitions."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class Mlp:
    """Fully connected net: ReLU hidden layers, identity output.

    Weights are stored as ``(fan_in, fan_out)`` matrices and inputs as row batches.
    """

    def __init__(self, sizes: Sequence[int], seed: int = 0, weights=None, biases=None):
        self.sizes = [int(s) for s in sizes]
        self.seed = int(seed)
        if weights is None:
            rng = np.random.default_rng(seed)
            weights, biases = [], []
            for fan_in, fan_out in zip(self.sizes, self.sizes[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
                biases.append(rng.uniform(-bound, bound, size=fan_out))
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, self.seed, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.sizes[0]}")
        h = np.atleast_2d(x)
        cache = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if i == last else np.maximum(z, 0.0)
            cache.append(z)
        return h, cache

    def backward(self, cache, grad_out):
        """Return (parameter gradients in ``params`` order, gradient w.r.t. the input)."""
        grads: list[np.ndarray] = []
        g = np.asarray(grad_out, dtype=np.float64)
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            z = cache[i + 1]
            if i != last:
                g = g * (z > 0)
            h_in = cache[0] if i == 0 else np.maximum(cache[i], 0.0)
            grads = [h_in.T @ g, g.sum(axis=0)] + grads
            g = g @ self.weights[i].T
        return grads, g

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "seed": self.seed,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d) -> "Mlp":
        return cls(d["sizes"], d["seed"], d["weights"], d["biases"])


def mlp_forward(net: Mlp, x) -> np.ndarray:
    return net(x)


def mse_loss(pred, target) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def mlp_backward(net: Mlp, x, y) -> tuple[float, list[np.ndarray]]:
    """Mean-squared-error loss of ``net`` on a batch and its parameter gradients."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if len(x) == 0:
        raise ValueError("empty batch")
    pred, cache = net.forward(x)
    loss, g = mse_loss(pred, np.asarray(y, dtype=np.float64).reshape(pred.shape))
    grads, _ = net.backward(cache, g)
    return loss, grads


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class MlpEnsemble:
    def __init__(self, members: Sequence[Mlp]):
        if not members:
            raise ValueError("ensemble needs at least one member")
        sizes = members[0].sizes
        if any(m.sizes != sizes for m in members):
            raise ValueError("ensemble members must share one architecture")
        self.members = list(members)

    @classmethod
    def create(cls, n: int, sizes: Sequence[int], seed: int = 0) -> "MlpEnsemble":
        return cls([Mlp(sizes, seed=seed * 1000 + k) for k in range(n)])

    @property
    def sizes(self) -> list[int]:
        return self.members[0].sizes

    def __len__(self) -> int:
        return len(self.members)

    def predict(self, x) -> np.ndarray:
        return np.mean([m(x) for m in self.members], axis=0)

    def forward(self, x):
        outs, caches = zip(*(m.forward(x) for m in self.members))
        return np.mean(outs, axis=0), caches

    def input_grad(self, caches, grad_out) -> np.ndarray:
        scale = 1.0 / len(self.members)
        return sum(m.backward(c, grad_out * scale)[1] for m, c in zip(self.members, caches))

    def to_dict(self) -> dict:
        return {"members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, d) -> "MlpEnsemble":
        return cls([Mlp.from_dict(m) for m in d["members"]])


def ensemble_predict(ensemble: MlpEnsemble, x) -> np.ndarray:
    return ensemble.predict(x)


@dataclass
class TrainSpec:
    target: str = "next_state_delta"  # next_state_delta | action | reward
    lr: float = 4e-3
    batch_size: int = 256
    epochs: int = 200
    patience: int = 10
    holdout: float = 0.1
    seed: int = 0


def fit_mlp(net: Mlp, x, y, spec: TrainSpec, seed: int | None = None) -> dict:
    """Minibatch Adam on MSE with plateau stopping on a held-out split.

    The best held-out parameters are restored at the end.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(len(x), -1)
    n = len(x)
    perm = rng.permutation(n)
    n_hold = int(round(spec.holdout * n)) if n >= 20 else 0
    hold, train = perm[:n_hold], perm[n_hold:]
    opt = Adam(net.params, lr=spec.lr)
    best, best_params, stale, epoch = np.inf, None, 0, 0
    for epoch in range(spec.epochs):
        order = rng.permutation(train)
        for i in range(0, len(order), spec.batch_size):
            idx = order[i : i + spec.batch_size]
            _, grads = mlp_backward(net, x[idx], y[idx])
            opt.step(grads)
        check = hold if n_hold else train
        val = float(np.mean((net(x[check]) - y[check]) ** 2))
        if val < best - 1e-12:
            best, stale = val, 0
            best_params = [p.copy() for p in net.params]
        else:
            stale += 1
            if stale >= spec.patience:
                break
    if best_params is not None:
        for p, bp in zip(net.params, best_params):
            p[...] = bp
    log.debug("fit_mlp: %d epochs, held-out mse %.3e", epoch + 1, best)
    return {"epochs": epoch + 1, "holdout_mse": best}


def fit_ensemble(ensemble: MlpEnsemble, x, y, spec: TrainSpec) -> list[dict]:
    return [fit_mlp(m, x, y, spec, seed=spec.seed * 1000 + k) for k, m in enumerate(ensemble.members)]


class ForwardModel:
    """``f(s, a) = s + g([s, a])`` where ``g`` is an ensemble regressing the state delta."""

    kind = "forward"

    def __init__(self, ensemble: MlpEnsemble, spec: TrainSpec | None = None):
        self.ensemble = ensemble
        self.spec = spec

    def __call__(self, s, a) -> np.ndarray:
        s = np.atleast_2d(np.asarray(s, dtype=np.float64))
        a = np.atleast_2d(np.asarray(a, dtype=np.float64))
        s, a = _broadcast_rows(s, a)
        return s + self.ensemble.predict(np.concatenate([s, a], axis=1))

    def forward(self, s, a):
        s, a = _broadcast_rows(np.atleast_2d(s), np.atleast_2d(a))
        delta, caches = self.ensemble.forward(np.concatenate([s, a], axis=1))
        return s + delta, (caches, s.shape[1])

    def action_grad(self, cache, grad_out) -> np.ndarray:
        caches, ds = cache
        return self.ensemble.input_grad(caches, grad_out)[:, ds:]


class InverseModel:
    """``I(s, s')`` predicting the action; outputs clipped to the action bounds when given."""

    kind = "inverse"

    def __init__(self, ensemble: MlpEnsemble, low=None, high=None, spec: TrainSpec | None = None):
        self.ensemble = ensemble
        self.low = None if low is None else np.asarray(low, dtype=np.float64)
        self.high = None if high is None else np.asarray(high, dtype=np.float64)
        self.spec = spec

    def __call__(self, s, s_next) -> np.ndarray:
        s, s_next = _broadcast_rows(np.atleast_2d(s), np.atleast_2d(s_next))
        a = self.ensemble.predict(np.concatenate([s, s_next], axis=1))
        if self.low is not None:
            a = np.clip(a, self.low, self.high)
        return a


class RewardModel:
    kind = "reward"

    def __init__(self, ensemble: MlpEnsemble, spec: TrainSpec | None = None):
        self.ensemble = ensemble
        self.spec = spec

    def __call__(self, s, s_next) -> np.ndarray:
        s, s_next = _broadcast_rows(np.atleast_2d(s), np.atleast_2d(s_next))
        return self.ensemble.predict(np.concatenate([s, s_next], axis=1))[:, 0]


def _broadcast_rows(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 1 and len(b) > 1:
        a = np.repeat(a, len(b), axis=0)
    elif len(b) == 1 and len(a) > 1:
        b = np.repeat(b, len(a), axis=0)
    return a, b


def _check_target(spec: TrainSpec, expected: str) -> None:
    if spec.target != expected:
        raise ValueError(f"train spec target is {spec.target!r}, expected {expected!r}")


def train_forward_model(ensemble: MlpEnsemble, dataset, spec: TrainSpec) -> ForwardModel:
    _check_target(spec, "next_state_delta")
    arr = dataset.arrays
    fit_ensemble(ensemble, np.concatenate([arr["s"], arr["a"]], axis=1), arr["s_next"] - arr["s"], spec)
    return ForwardModel(ensemble, spec)


def train_inverse_model(ensemble: MlpEnsemble, dataset, spec: TrainSpec, low=None, high=None) -> InverseModel:
    _check_target(spec, "action")
    arr = dataset.arrays
    fit_ensemble(ensemble, np.concatenate([arr["s"], arr["s_next"]], axis=1), arr["a"], spec)
    return InverseModel(ensemble, low, high, spec)


def train_reward_model(ensemble: MlpEnsemble, dataset, spec: TrainSpec) -> RewardModel:
    _check_target(spec, "reward")
    arr = dataset.arrays
    fit_ensemble(ensemble, np.concatenate([arr["s"], arr["s_next"]], axis=1), arr["r"][:, None], spec)
    return RewardModel(ensemble, spec)


def save_model(model, path) -> None:
    d = {"kind": model.kind, **model.ensemble.to_dict()}
    if model.spec is not None:
        d["train_spec"] = asdict(model.spec)
    if getattr(model, "low", None) is not None:
        d["action_low"], d["action_high"] = model.low.tolist(), model.high.tolist()
    Path(path).write_text(json.dumps(d), encoding="utf-8")


def load_model(path):
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    ens = MlpEnsemble.from_dict(d)
    spec = TrainSpec(**d["train_spec"]) if "train_spec" in d else None
    kind = d.get("kind")
    if kind == "forward":
        return ForwardModel(ens, spec)
    if kind == "inverse":
        return InverseModel(ens, d.get("action_low"), d.get("action_high"), spec)
    if kind == "reward":
        return RewardModel(ens, spec)
    raise ValueError(f"unknown model kind {kind!r} in {path}")
