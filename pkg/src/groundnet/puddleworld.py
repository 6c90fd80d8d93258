"""PuddleWorld: random grid maps, templated instructions and exact MDP tools.

Cells hold water or grass; grass may carry one object. Six objects are unique
per map, four may repeat. Observations fed to models are entity-id grids (see
:func:`entity_grid`). Rewards are state based: entering water costs
``puddle_penalty``, entering grass gives ``step_reward`` and entering the goal
gives ``goal_reward`` and ends the episode.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from groundnet import kernels

GRASS, WATER = 0, 1
UNIQUE_OBJECTS = ("triangle", "star", "diamond", "circle", "heart", "spade")
COMMON_OBJECTS = ("rock", "tree", "horse", "house")
OBJECTS = UNIQUE_OBJECTS + COMMON_OBJECTS
OBJECT_CODE = {name: i + 1 for i, name in enumerate(OBJECTS)}
NUM_UNSEEN = 10
# object codes 11..20 are the reserved unseen objects used only as noise
UNSEEN_CODES = tuple(range(len(OBJECTS) + 1, len(OBJECTS) + 1 + NUM_UNSEEN))
# entity ids: 0 grass, 1 water, 2..11 objects, 12..21 unseen objects
NUM_ENTITIES = 2 + len(OBJECTS) + NUM_UNSEEN
FIRST_UNSEEN_ENTITY = 2 + len(OBJECTS)

ACTIONS = ("up", "down", "left", "right")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))

NUMBER_WORDS = {1: "one", 2: "two", 3: "three"}


class GenerationError(RuntimeError):
    """Random generation failed within its retry budget."""


@dataclass(frozen=True)
class PuddleConfig:
    height: int = 10
    width: int = 10
    water_density: float = 0.25
    object_density: float = 0.2
    gamma: float = 0.95
    goal_reward: float = 3.0
    puddle_penalty: float = -1.0
    step_reward: float = 0.0
    max_retries: int = 200


@dataclass
class GridWorld:
    terrain: np.ndarray
    objects: np.ndarray
    goal: tuple
    start: tuple
    gamma: float = 0.95
    goal_reward: float = 3.0
    puddle_penalty: float = -1.0
    step_reward: float = 0.0

    @property
    def shape(self):
        return self.terrain.shape

    def reward_grid(self):
        return np.where(self.terrain == WATER, self.puddle_penalty, self.step_reward).astype(np.float64)

    def copy(self):
        return replace(self, terrain=self.terrain.copy(), objects=self.objects.copy())


@dataclass
class InstructionSample:
    instruction: str
    world: GridWorld
    oracle_values: np.ndarray | None
    kind: str
    referent: tuple | None = None
    cache: dict = field(default_factory=dict, repr=False, compare=False)


def entity_grid(world):
    """Entity id per cell: 0 empty grass, 1 water, 2.. objects."""
    ent = np.where(world.terrain == WATER, 1, 0)
    ent = np.where(world.objects > 0, world.objects + 1, ent)
    return ent.astype(np.int64)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _grass_cells(world):
    return [tuple(c) for c in np.argwhere(world.terrain == GRASS)]


def _sample_start(world, goal, rng):
    cands = [c for c in _grass_cells(world) if abs(c[0] - goal[0]) + abs(c[1] - goal[1]) >= 2]
    if not cands:
        raise GenerationError("no grass cell at distance >= 2 from the goal")
    return tuple(int(v) for v in cands[rng.integers(len(cands))])


def generate_map(seed, config=PuddleConfig()):
    """Random map satisfying the object and placement invariants."""
    for name in ("water_density", "object_density"):
        val = getattr(config, name)
        if not 0.0 <= val < 1.0:
            raise ValueError(f"{name} must lie in [0, 1), got {val}")
    rng = _rng(seed)
    m, n = config.height, config.width
    for _ in range(config.max_retries):
        terrain = (rng.random((m, n)) < config.water_density).astype(np.int64)
        objects = np.zeros((m, n), dtype=np.int64)
        used = set()
        for r, c in np.argwhere(terrain == GRASS):
            if rng.random() >= config.object_density:
                continue
            name = OBJECTS[rng.integers(len(OBJECTS))]
            if name in UNIQUE_OBJECTS:
                if name in used:
                    name = COMMON_OBJECTS[rng.integers(len(COMMON_OBJECTS))]
                else:
                    used.add(name)
            objects[r, c] = OBJECT_CODE[name]
        grass = np.argwhere(terrain == GRASS)
        if len(grass) < 2:
            continue
        world = GridWorld(terrain, objects, (0, 0), (0, 0), config.gamma, config.goal_reward,
                          config.puddle_penalty, config.step_reward)
        goal = tuple(int(v) for v in grass[rng.integers(len(grass))])
        try:
            start = _sample_start(world, goal, rng)
        except GenerationError:
            continue
        world.goal, world.start = goal, start
        return world
    raise GenerationError("could not place a goal and a start on grass")


# -- instruction templates -------------------------------------------------
# Each local template is (format, axis) where axis selects which offsets it can
# express: "h" horizontal only, "v" vertical only, "hv" either cardinal,
# "diag" both non-zero, "diag_eq" both non-zero and equal, "pair" a named
# object one step from the referent.
LOCAL_TEMPLATES = (
    ("{n} {cells} to the {lr} of the {ref}", "h"),
    ("reach cell {n} to the {lr} of the {ref}", "h"),
    ("reach cell {n} {ud} the {ref}", "v"),
    ("go to the cell {n} {cells} {ud} the {ref}", "v"),
    ("go {n} {cells} {ud} the {ref}", "v"),
    ("move {n} {cells} {compass} of the {ref}", "hv"),
    ("reach the cell {n} {compass} of the {ref}", "hv"),
    ("reach cell {nv} {ud} and {nh} to the {lr} of the {ref}", "diag"),
    ("go to the cell {nv} {compass_v} and {nh} {compass_h} of the {ref}", "diag"),
    ("reach cell {n} {tb} and {lr} of the {ref}", "diag_eq"),
    ("reach cell that is {obj} one {ud} {ref}", "pair_v"),
    ("reach cell that is {obj} one to the {lr} of {ref}", "pair_h"),
)

GLOBAL_TEMPLATES = (
    "the {sup} {obj}",
    "reach the {sup} {obj}",
    "go to the {sup} {obj}",
    "move to the {sup} {obj}",
    "reach the cell with the {sup} {obj}",
    "go to the {sup} {obj} on the map",
)

SUPERLATIVES = {
    "westernmost": (1, min), "leftmost": (1, min),
    "easternmost": (1, max), "rightmost": (1, max),
    "northernmost": (0, min), "topmost": (0, min),
    "southernmost": (0, max), "bottommost": (0, max),
}

NOISE_VERBS = ("locate", "reach", "go")
NOISE_ARTICLES = ("the", "a")
NOISE_OBJECTS = ("car", "stone", "boat", "lamp", "chair", "bike", "cloud", "door", "book", "cup")
NOISE_LEXICON = NOISE_VERBS + NOISE_ARTICLES + NOISE_OBJECTS


def _offset_words(dr, dc):
    words = {}
    if dr:
        words["ud"] = "above" if dr < 0 else "below"
        words["compass_v"] = "north" if dr < 0 else "south"
        words["tb"] = "top" if dr < 0 else "bottom"
        words["nv"] = NUMBER_WORDS[abs(dr)]
    if dc:
        words["lr"] = "left" if dc < 0 else "right"
        words["compass_h"] = "west" if dc < 0 else "east"
        words["nh"] = NUMBER_WORDS[abs(dc)]
    n = abs(dr) or abs(dc)
    words["n"] = NUMBER_WORDS[n]
    words["cells"] = "cell" if n == 1 else "cells"
    if dr and not dc:
        words["compass"] = words["compass_v"]
    elif dc and not dr:
        words["compass"] = words["compass_h"]
    return words


def _candidate_offsets(axis):
    if axis == "h":
        return [(0, d) for d in (-3, -2, -1, 1, 2, 3)]
    if axis == "v":
        return [(d, 0) for d in (-3, -2, -1, 1, 2, 3)]
    if axis == "hv":
        return _candidate_offsets("h") + _candidate_offsets("v")
    if axis == "diag":
        return [(a, b) for a in (-3, -2, -1, 1, 2, 3) for b in (-3, -2, -1, 1, 2, 3)
                if max(abs(a), abs(b)) <= 3]
    if axis == "diag_eq":
        return [(a, b) for a in (-3, -2, -1, 1, 2, 3) for b in (-3, -2, -1, 1, 2, 3) if abs(a) == abs(b)]
    if axis == "pair_v":
        return [(-1, 0), (1, 0)]
    if axis == "pair_h":
        return [(0, -1), (0, 1)]
    raise ValueError(axis)


def _in_bounds(world, cell):
    m, n = world.shape
    return 0 <= cell[0] < m and 0 <= cell[1] < n


def local_options(world):
    """Every (template index, referent, offset, goal) the map supports."""
    options = []
    by_code = {int(world.objects[r, c]): (int(r), int(c)) for r, c in np.argwhere(world.objects > 0)}
    for t_idx, (_, axis) in enumerate(LOCAL_TEMPLATES):
        for name in UNIQUE_OBJECTS:
            ref = by_code.get(OBJECT_CODE[name])
            if ref is None:
                continue
            for dr, dc in _candidate_offsets(axis):
                goal = (ref[0] + dr, ref[1] + dc)
                if not _in_bounds(world, goal) or world.terrain[goal] == WATER:
                    continue
                if axis.startswith("pair") and world.objects[goal] not in [OBJECT_CODE[o] for o in COMMON_OBJECTS]:
                    continue
                options.append((t_idx, name, ref, (dr, dc), goal))
    return options


def global_options(world):
    options = []
    for t_idx in range(len(GLOBAL_TEMPLATES)):
        for name in COMMON_OBJECTS:
            cells = [tuple(int(v) for v in c) for c in np.argwhere(world.objects == OBJECT_CODE[name])]
            if not cells:
                continue
            for sup, (axis, pick) in SUPERLATIVES.items():
                best = pick(c[axis] for c in cells)
                winners = [c for c in cells if c[axis] == best]
                if len(winners) == 1:
                    options.append((t_idx, name, winners[0], sup, winners[0]))
    return options


def render_local(t_idx, ref_name, offset, goal_object=None):
    fmt, _ = LOCAL_TEMPLATES[t_idx]
    words = _offset_words(*offset)
    return fmt.format(ref=ref_name, obj=goal_object or "", **words)


def render_global(t_idx, obj_name, superlative):
    return GLOBAL_TEMPLATES[t_idx].format(sup=superlative, obj=obj_name)


def generate_instruction(world, kind, seed):
    """Pick a template realisable on ``world``, set the goal it denotes and
    resample the start. Returns an :class:`InstructionSample` with oracle values."""
    rng = _rng(seed)
    world = world.copy()
    if kind == "local":
        options = local_options(world)
        if not options:
            raise GenerationError("map has no unique referent usable by a local template")
        # pick the template first so every template is equally likely when realisable
        t_choices = sorted({o[0] for o in options})
        t_idx = t_choices[rng.integers(len(t_choices))]
        options = [o for o in options if o[0] == t_idx]
        _, ref_name, ref, offset, goal = options[rng.integers(len(options))]
        goal_obj = OBJECTS[world.objects[goal] - 1] if LOCAL_TEMPLATES[t_idx][1].startswith("pair") else None
        text = render_local(t_idx, ref_name, offset, goal_obj)
        referent = ref
    elif kind == "global":
        options = global_options(world)
        if not options:
            raise GenerationError("map has no object with a unique extreme position")
        t_choices = sorted({o[0] for o in options})
        t_idx = t_choices[rng.integers(len(t_choices))]
        options = [o for o in options if o[0] == t_idx]
        _, obj_name, ref, sup, goal = options[rng.integers(len(options))]
        text = render_global(t_idx, obj_name, sup)
        referent = ref
    else:
        raise ValueError(f"unknown instruction kind {kind!r}")
    world.goal = tuple(int(v) for v in goal)
    world.start = _sample_start(world, world.goal, rng)
    return InstructionSample(text, world, value_iteration_oracle(world), kind, tuple(referent))


def generate_sample(seed, kind, config=PuddleConfig()):
    rng = _rng(seed)
    last = None
    for _ in range(config.max_retries):
        try:
            world = generate_map(rng, config)
            return generate_instruction(world, kind, rng)
        except GenerationError as err:
            last = err
    raise GenerationError(f"no {kind} sample after {config.max_retries} attempts: {last}")


def generate_dataset(count, kind, seed, config=PuddleConfig()):
    """``count`` samples; sample ``i`` depends only on ``(seed, i)``."""
    return [generate_sample(np.random.default_rng([seed, i]), kind, config) for i in range(count)]


# -- MDP machinery ---------------------------------------------------------
def value_iteration_oracle(world, tol=1e-9):
    return kernels.value_iteration(world.reward_grid(), world.goal, world.gamma, world.goal_reward, tol)


@dataclass(frozen=True)
class Transition:
    state: tuple
    action: int
    reward: float
    next_state: tuple
    done: bool


def _move(shape, state, action):
    dr, dc = MOVES[action]
    r = min(max(state[0] + dr, 0), shape[0] - 1)
    c = min(max(state[1] + dc, 0), shape[1] - 1)
    return (r, c)


def step(world, state, action):
    if not _in_bounds(world, state):
        raise ValueError(f"state {state} outside a {world.shape} map")
    nxt = _move(world.shape, state, action)
    done = nxt == tuple(world.goal)
    if done:
        reward = world.goal_reward
    else:
        reward = world.puddle_penalty if world.terrain[nxt] == WATER else world.step_reward
    return Transition(tuple(state), int(action), float(reward), nxt, done)


def successor_table(shape):
    """(m, n, 4, 2) next cell for every cell/action under wall clamping."""
    m, n = shape
    rows, cols = np.meshgrid(np.arange(m), np.arange(n), indexing="ij")
    out = np.empty((m, n, 4, 2), dtype=np.int64)
    for a, (dr, dc) in enumerate(MOVES):
        out[:, :, a, 0] = np.clip(rows + dr, 0, m - 1)
        out[:, :, a, 1] = np.clip(cols + dc, 0, n - 1)
    return out


def induce_policy(values, world):
    """Greedy action per cell from R(s) + gamma * V(s'); ties go to the first
    action in (up, down, left, right)."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("value map has non-finite entries")
    succ = successor_table(world.shape)
    nxt = values[succ[..., 0], succ[..., 1]]
    scores = world.reward_grid()[..., None] + world.gamma * nxt
    return np.argmax(scores, axis=-1)


@dataclass
class Rollout:
    final: tuple
    ret: float
    path: list
    done: bool


def rollout(world, policy, budget=None):
    m, n = world.shape
    budget = 2 * (m + n) if budget is None else budget
    if budget < 1:
        raise ValueError("budget must be at least 1")
    state = tuple(world.start)
    path = [state]
    ret, disc, done = 0.0, 1.0, False
    for _ in range(budget):
        tr = step(world, state, int(policy[state]))
        ret += disc * tr.reward
        disc *= world.gamma
        state = tr.next_state
        path.append(state)
        if tr.done:
            done = True
            break
    return Rollout(state, ret, path, done)


def random_policy_return(world, rollouts=100, seed=0, budget=None):
    """Mean discounted return of the uniform-random policy (vectorised rollouts)."""
    m, n = world.shape
    budget = 2 * (m + n) if budget is None else budget
    rng = np.random.default_rng(seed)
    succ = successor_table(world.shape)
    reward = world.reward_grid()
    pos = np.tile(np.asarray(world.start, dtype=np.int64), (rollouts, 1))
    alive = np.ones(rollouts, dtype=bool)
    ret = np.zeros(rollouts)
    disc = 1.0
    goal = np.asarray(world.goal)
    for _ in range(budget):
        acts = rng.integers(4, size=rollouts)
        nxt = succ[pos[:, 0], pos[:, 1], acts]
        at_goal = np.all(nxt == goal, axis=1)
        r = np.where(at_goal, world.goal_reward, reward[nxt[:, 0], nxt[:, 1]])
        ret += np.where(alive, disc * r, 0.0)
        disc *= world.gamma
        pos = np.where(alive[:, None], nxt, pos)
        alive &= ~at_goal
        if not alive.any():
            break
    return float(ret.mean())


# -- persistence -----------------------------------------------------------
def sample_to_record(sample):
    w = sample.world
    rec = {
        "terrain": w.terrain.tolist(),
        "objects": w.objects.tolist(),
        "goal": list(w.goal),
        "start": list(w.start),
        "instruction": sample.instruction,
        "kind": sample.kind,
        "oracle_values": None if sample.oracle_values is None else sample.oracle_values.tolist(),
        "gamma": w.gamma,
        "rewards": [w.goal_reward, w.puddle_penalty, w.step_reward],
    }
    if sample.referent is not None:
        rec["referent"] = list(sample.referent)
    return rec


def record_to_sample(rec):
    rewards = rec.get("rewards", [3.0, -1.0, 0.0])
    world = GridWorld(np.asarray(rec["terrain"], dtype=np.int64), np.asarray(rec["objects"], dtype=np.int64),
                      tuple(rec["goal"]), tuple(rec["start"]), rec.get("gamma", 0.95), *rewards)
    vals = rec.get("oracle_values")
    ref = rec.get("referent")
    return InstructionSample(rec["instruction"], world, None if vals is None else np.asarray(vals, dtype=np.float64),
                             rec["kind"], None if ref is None else tuple(ref))


def save_jsonl(samples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), separators=(",", ":")) + "\n")


def load_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [record_to_sample(json.loads(line)) for line in fh if line.strip()]
