"""Training loops (classification, value regression, fitted value iteration)
and evaluation metrics."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from groundnet import puddleworld as pw
from groundnet import tensor as T
from groundnet.nn import Module
from groundnet.optim import Adam
from groundnet.tensor import ConfigError

log = logging.getLogger(__name__)

TASKS = ("classification", "regression", "rl")


@dataclass
class TrainConfig:
    task: str = "regression"
    model: str = "trnetattn"
    batch_size: int = 512
    lr: float = 1e-3
    epochs: int = 50
    seed: int = 0
    patience: int = 10
    val_fraction: float = 0.1
    eval_batch: int = 256
    # fitted value iteration
    env_steps: int = 20_000
    replay_capacity: int = 10_000
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_fraction: float = 0.5
    target_sync: int = 100
    episode_cap: int = 50
    update_every: int = 1
    warmup: int = 0
    rl_eval_every: int = 0
    # evaluation
    random_rollouts: int = 100
    md_mode: str = "rollout"

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        for name in ("batch_size", "epochs", "env_steps", "replay_capacity", "target_sync",
                     "episode_cap", "eval_batch", "update_every", "random_rollouts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.lr < 0:
            raise ConfigError("learning rate must be non-negative")
        for name in ("eps_start", "eps_end", "eps_decay_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if self.md_mode not in ("rollout", "argmax"):
            raise ConfigError("md_mode must be 'rollout' or 'argmax'")

    def epsilon(self, step):
        """Linear anneal from eps_start to eps_end over the decay window, flat after."""
        horizon = max(1, int(self.env_steps * self.eps_decay_fraction))
        frac = min(1.0, step / horizon)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def to_dict(self):
        return asdict(self)


@dataclass
class EvalReport:
    task: str
    records: list
    aggregates: dict
    config: dict
    seed: int

    @staticmethod
    def aggregate(records):
        if not records:
            return {}
        out = {}
        for key in sorted(records[0]):
            if key == "index":
                continue
            vals = np.array([r[key] for r in records], dtype=np.float64)
            out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
        return out

    def to_dict(self):
        return {"task": self.task, "seed": self.seed, "config": self.config,
                "aggregates": self.aggregates, "records": self.records}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls(d["task"], d["records"], d["aggregates"], d["config"], d["seed"])

    def mean(self, key):
        return self.aggregates[key]["mean"]


@dataclass
class TrainResult:
    model: Module
    report: EvalReport
    curves: list = field(default_factory=list)
    best_epoch: int = 0


def write_curves(curves, path):
    keys = []
    for row in curves:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in curves:
            w.writerow(row)


# -- inputs ----------------------------------------------------------------
@dataclass
class Prepared:
    obs: np.ndarray
    ids: list
    targets: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)

    def batch(self, idx):
        obs = self.obs[idx]
        if obs.dtype != np.int64:
            obs = obs.astype(np.float64)
        return obs, [self.ids[i] for i in idx]


def _is_caption(sample):
    return hasattr(sample, "caption")


def prepare(samples, vocab):
    """Stack observations, token ids and supervision for a list of samples."""
    if not samples:
        raise ValueError("empty dataset")
    if _is_caption(samples[0]):
        obs = np.stack([s.scene.image for s in samples]).astype(np.float32)
        ids = [vocab.encode(s.caption) for s in samples]
        return Prepared(obs, ids, labels=np.array([int(s.label) for s in samples], dtype=np.int64))
    obs = np.stack([pw.entity_grid(s.world) for s in samples])
    ids = [vocab.encode(s.instruction) for s in samples]
    targets = None
    if all(s.oracle_values is not None for s in samples):
        targets = np.stack([s.oracle_values for s in samples])
    return Prepared(obs, ids, targets=targets)


def predict(model, data, batch=256):
    outs = []
    for lo in range(0, len(data), batch):
        idx = np.arange(lo, min(lo + batch, len(data)))
        outs.append(model(*data.batch(idx)).data)
    return np.concatenate(outs, axis=0)


def _softmax(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _split(n, frac, rng):
    perm = rng.permutation(n)
    n_val = int(round(n * frac)) if frac > 0 else 0
    if n_val >= n:
        n_val = n - 1
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _subset(data, idx):
    return Prepared(data.obs[idx], [data.ids[i] for i in idx],
                    None if data.targets is None else data.targets[idx],
                    None if data.labels is None else data.labels[idx])


def _check_pairing(model, task):
    if task == "classification" and getattr(model, "task", None) != "classification":
        raise ConfigError(f"model {model.kind!r} is not configured for classification")
    if task in ("regression", "rl") and getattr(model, "task", None) != "regression":
        raise ConfigError(f"model {model.kind!r} does not predict value maps")


# -- supervised loops ------------------------------------------------------
def _supervised(samples, model, vocab, config, loss_fn, metric_fn, higher_is_better, eval_fn):
    rng = np.random.default_rng(config.seed)
    data = prepare(samples, vocab)
    tr_idx, va_idx = _split(len(data), config.val_fraction, rng)
    train, val = _subset(data, tr_idx), (_subset(data, va_idx) if len(va_idx) else None)
    params = model.named_parameters()
    opt = Adam(params, lr=config.lr)
    curves = []
    best, best_state, best_epoch, waited = None, model.state_dict(), 0, 0
    step = 0
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(len(train))
        losses = []
        for lo in range(0, len(train), config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            opt.zero_grad()
            loss = loss_fn(model, train, idx)
            loss.backward()
            opt.step()
            step += 1
            losses.append(loss.item())
        row = {"epoch": epoch, "step": step, "loss": float(np.mean(losses)),
               "train_metric": metric_fn(model, train, config)}
        score = metric_fn(model, val, config) if val is not None else row["train_metric"]
        row["val_metric"] = score
        curves.append(row)
        log.info("epoch %d loss %.5f train %.4f val %.4f", epoch, row["loss"], row["train_metric"], score)
        improved = best is None or (score > best if higher_is_better else score < best)
        if improved:
            best, best_state, best_epoch, waited = score, model.state_dict(), epoch, 0
        else:
            waited += 1
            if config.patience and waited >= config.patience:
                break
    model.load_state_dict(best_state)
    return TrainResult(model, eval_fn(model), curves, best_epoch)


def _ce_loss(model, data, idx):
    return T.cross_entropy(model(*data.batch(idx)), data.labels[idx])


def _mse_loss(model, data, idx):
    return T.mse_loss(model(*data.batch(idx)), data.targets[idx])


def _accuracy(model, data, config):
    pred = predict(model, data, config.eval_batch).argmax(axis=-1)
    return float(np.mean(pred == data.labels))


def _mse(model, data, config):
    pred = predict(model, data, config.eval_batch)
    return float(np.mean((pred - data.targets) ** 2))


def train_classification(dataset, model, vocab, config, eval_set=None):
    _check_pairing(model, "classification")
    if _is_caption(dataset[0]) is False:
        raise ConfigError("classification needs captioned scenes")
    return _supervised(dataset, model, vocab, config, _ce_loss, _accuracy, True,
                       lambda m: evaluate(eval_set or dataset, m, vocab, config))


def train_regression(dataset, model, vocab, config, eval_set=None):
    _check_pairing(model, "regression")
    if any(getattr(s, "oracle_values", None) is None for s in dataset):
        raise ValueError("regression needs oracle value maps on every sample")
    return _supervised(dataset, model, vocab, config, _mse_loss, _mse, False,
                       lambda m: evaluate(eval_set or dataset, m, vocab, config))


# -- evaluation ------------------------------------------------------------
def policy_quality(j_hat, j_opt, j_rand):
    if j_opt == j_rand:
        return 1.0 if j_hat == j_opt else 0.0
    return (j_hat - j_rand) / (j_opt - j_rand)


def manhattan(a, b):
    return abs(int(a[0]) - int(b[0])) + abs(int(a[1]) - int(b[1]))


def _reference_returns(sample, index, config):
    key = ("ref", config.seed, config.random_rollouts)
    if key not in sample.cache:
        world = sample.world
        oracle = sample.oracle_values if sample.oracle_values is not None else pw.value_iteration_oracle(world)
        j_opt = pw.rollout(world, pw.induce_policy(oracle, world)).ret
        j_rand = pw.random_policy_return(world, config.random_rollouts, seed=[config.seed, index])
        sample.cache[key] = (j_opt, j_rand)
    return sample.cache[key]


def navigation_record(sample, values, index, config):
    world = sample.world
    ro = pw.rollout(world, pw.induce_policy(values, world))
    j_opt, j_rand = _reference_returns(sample, index, config)
    if config.md_mode == "argmax":
        final = np.unravel_index(int(np.argmax(values)), values.shape)
    else:
        final = ro.final
    rec = {"index": index, "PQ": policy_quality(ro.ret, j_opt, j_rand), "MD": manhattan(final, world.goal)}
    if sample.oracle_values is not None:
        rec["MSE"] = float(np.mean((values - sample.oracle_values) ** 2))
    return rec


def evaluate(dataset, model, vocab, config, values=None):
    """Per-instance metrics: ACC for captions; MSE, PQ and MD for value maps."""
    data = prepare(dataset, vocab)
    if _is_caption(dataset[0]):
        probs = _softmax(predict(model, data, config.eval_batch))
        pred = probs.argmax(axis=-1)
        records = [{"index": i, "ACC": float(pred[i] == data.labels[i])} for i in range(len(dataset))]
        task = "classification"
    else:
        values = predict(model, data, config.eval_batch) if values is None else values
        records = [navigation_record(s, values[i], i, config) for i, s in enumerate(dataset)]
        task = config.task if config.task != "classification" else "regression"
    return EvalReport(task, records, EvalReport.aggregate(records), config.to_dict(), config.seed)


# -- fitted value iteration ------------------------------------------------
@dataclass(frozen=True)
class StoredTransition:
    instance: int
    state: tuple
    action: int
    reward: float
    next_state: tuple
    done: bool


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling without replacement."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.items = []
        self.pos = 0

    def push(self, item):
        if len(self.items) < self.capacity:
            self.items.append(item)
        else:
            self.items[self.pos] = item
        self.pos = (self.pos + 1) % self.capacity

    def __len__(self):
        return len(self.items)

    def sample(self, size, rng):
        if size > len(self.items):
            raise ValueError(f"cannot sample {size} from {len(self.items)} transitions")
        return [self.items[i] for i in rng.choice(len(self.items), size=size, replace=False)]


class TabularValues(Module):
    """One free value per cell, shared by every instruction (for sanity runs)."""

    kind = "tabular"
    task = "regression"
    observation = "grid"

    def __init__(self, shape, init=0.0):
        super().__init__()
        self.shape = tuple(shape)
        self.V = self.add_param("V", np.full(self.shape, float(init)))

    def config(self):
        return {"shape": list(self.shape)}

    def forward(self, obs, id_lists, aux=False):
        b = len(id_lists)
        out = T.mul(self.V.reshape(1, *self.shape), np.ones((b, 1, 1)))
        return (out, {}) if aux else out

    __call__ = forward


def _target_values(model, state_snapshot, data, instances, cache):
    """Target-network value maps for ``instances``, cached until the next sync."""
    missing = sorted({i for i in instances if i not in cache})
    if missing:
        live = model.state_dict()
        model.load_state_dict(state_snapshot)
        preds = predict(model, _subset(data, np.array(missing)))
        model.load_state_dict(live)
        for i, p in zip(missing, preds):
            cache[i] = p
    return cache


def fitted_targets(batch, target_maps, gamma, succ):
    """Bootstrapped values for the arrival cell of each transition."""
    out = np.empty(len(batch))
    for t, tr in enumerate(batch):
        if tr.done:
            out[t] = tr.reward
        else:
            nxt = succ[tr.next_state[0], tr.next_state[1]]
            v = target_maps[tr.instance][nxt[:, 0], nxt[:, 1]]
            out[t] = tr.reward + gamma * float(v.max())
    return out


def train_rl(env, model, vocab, config, eval_set=None):
    """Fitted value iteration with an epsilon-greedy behaviour policy.

    ``env`` is a list of instruction samples; episodes pick one uniformly.
    Each update regresses the predicted value of the arrival cell of a replayed
    transition toward its reward plus the discounted best successor value
    under the periodically synced target parameters.
    """
    _check_pairing(model, "rl")
    rng = np.random.default_rng(config.seed)
    data = prepare(env, vocab)
    opt = Adam(model.named_parameters(), lr=config.lr)
    buffer = ReplayBuffer(config.replay_capacity)
    target_state = model.state_dict()
    target_cache = {}
    succ = pw.successor_table(env[0].world.shape)
    batch_size = min(config.batch_size, config.replay_capacity)
    warmup = max(config.warmup, batch_size)
    curves, updates, steps, episodes = [], 0, 0, 0
    losses = []
    while steps < config.env_steps:
        inst = int(rng.integers(len(env)))
        world = env[inst].world
        values = predict(model, _subset(data, np.array([inst])))[0]
        policy = pw.induce_policy(values, world)
        state = tuple(world.start)
        for _ in range(config.episode_cap):
            eps = config.epsilon(steps)
            action = int(rng.integers(4)) if rng.random() < eps else int(policy[state])
            tr = pw.step(world, state, action)
            buffer.push(StoredTransition(inst, tr.state, tr.action, tr.reward, tr.next_state, tr.done))
            steps += 1
            state = tr.next_state
            if len(buffer) >= warmup and steps % config.update_every == 0:
                batch = buffer.sample(batch_size, rng)
                _target_values(model, target_state, data, [b.instance for b in batch], target_cache)
                y = fitted_targets(batch, target_cache, world.gamma, succ)
                uniq = sorted({b.instance for b in batch})
                pos = {i: k for k, i in enumerate(uniq)}
                obs, ids = data.batch(np.array(uniq))
                opt.zero_grad()
                pred = model(obs, ids)
                rows = np.array([pos[b.instance] for b in batch])
                rr = np.array([b.next_state[0] for b in batch])
                cc = np.array([b.next_state[1] for b in batch])
                loss = T.mse_loss(T.getitem(pred, (rows, rr, cc)), y)
                loss.backward()
                opt.step()
                losses.append(loss.item())
                updates += 1
                if updates % config.target_sync == 0:
                    target_state = model.state_dict()
                    target_cache = {}
                # the behaviour policy follows the newest parameters at episode start only
            if tr.done or steps >= config.env_steps:
                break
        episodes += 1
        if config.rl_eval_every and episodes % config.rl_eval_every == 0:
            row = {"episode": episodes, "step": steps, "updates": updates,
                   "loss": float(np.mean(losses)) if losses else float("nan"), "epsilon": config.epsilon(steps)}
            if eval_set is not None:
                rep = evaluate(eval_set, model, vocab, config)
                row["PQ"] = rep.mean("PQ")
                row["MD"] = rep.mean("MD")
            curves.append(row)
            log.info("rl %s", row)
            losses = []
    report = evaluate(eval_set or env, model, vocab, config)
    return TrainResult(model, report, curves, updates)
