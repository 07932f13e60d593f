"""Finite-horizon episodic MDPs: explicit models, trajectory sampling, and the
two access contracts (online reset/step and generative queries).

Models are dense and immutable.  Transition and reward tables are stored once
and shared across levels through a per-level index, so the time-homogeneous
hard instances cost O(m^2) rather than O(H m^2).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import policies as pol
from .rng import NS_BATCH, NS_EPISODE, NS_GENERATIVE, stream

SCHEMA_VERSION = 1
ROW_TOL = 1e-12


class ContractViolation(Exception):
    """An access-contract breach: inadmissible action, step after episode end, ..."""


@dataclass(frozen=True)
class DiscreteReward:
    """Finite discrete reward distribution."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if abs(p.sum() - 1.0) > ROW_TOL or (p < 0).any():
            raise ValueError("reward probabilities must be a distribution")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(q) for q in p))

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def abs_max(self) -> float:
        return max(abs(v) for v in self.values)


def _forced_cumsum(rows: np.ndarray) -> np.ndarray:
    """Cumulative sums with the final column pinned to 1.0 so inverse-CDF
    sampling can never fall off the end from rounding."""
    cum = np.cumsum(rows, axis=-1)
    cum[..., -1] = 1.0
    return cum


class MdpModel:
    """Explicit finite-horizon MDP.

    Parameters
    ----------
    admissible : per-state sequence of ActionIds, ascending.
    transition_tables : list of ragged tables; table[s][j] is a probability
        vector over next states for the j-th admissible action at s.
    reward_tables : list of ragged tables; entries are floats (deterministic)
        or DiscreteReward.
    transition_levels, reward_levels : length-H index mapping level h (1-based)
        to a table; default all level 0.
    """

    def __init__(self, num_states, horizon, admissible, transition_tables,
                 reward_tables, initial_dist, transition_levels=None,
                 reward_levels=None, r_max=None, terminal_state=None):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.num_states = int(num_states)
        self.horizon = int(horizon)
        self.admissible = tuple(tuple(int(a) for a in acts) for acts in admissible)
        if len(self.admissible) != self.num_states:
            raise ValueError("admissible must have one entry per state")
        for s, acts in enumerate(self.admissible):
            if not acts:
                raise ValueError(f"state {s} has no admissible actions")
            if list(acts) != sorted(set(acts)):
                raise ValueError(f"admissible actions at state {s} must be ascending and unique")

        self.n_actions = np.array([len(a) for a in self.admissible], dtype=np.int64)
        self.max_actions = int(self.n_actions.max())
        self.actions_padded = np.full((self.num_states, self.max_actions), -1, dtype=np.int64)
        max_aid = max(max(a) for a in self.admissible)
        self.max_action_id = int(max_aid)
        self._slot = np.full((self.num_states, max_aid + 1), -1, dtype=np.int64)
        for s, acts in enumerate(self.admissible):
            for j, a in enumerate(acts):
                self.actions_padded[s, j] = a
                self._slot[s, a] = j

        self.transition_levels = self._level_index(transition_levels, len(transition_tables))
        self.reward_levels = self._level_index(reward_levels, len(reward_tables))

        self._trans = []
        self._cum_trans = []
        self._det_next = []
        for table in transition_tables:
            cube = np.zeros((self.num_states, self.max_actions, self.num_states))
            for s in range(self.num_states):
                cube[s, :, s] = 1.0  # benign pad rows, never sampled
                for j, row in enumerate(table[s]):
                    row = np.asarray(row, dtype=float)
                    if row.shape != (self.num_states,):
                        raise ValueError("transition row has wrong length")
                    if (row < 0).any() or abs(row.sum() - 1.0) > ROW_TOL:
                        raise ValueError(f"invalid transition row at state {s}, slot {j}")
                    cube[s, j] = row
            self._trans.append(cube)
            self._cum_trans.append(_forced_cumsum(cube))
            det = np.where(cube.max(axis=-1) == 1.0, cube.argmax(axis=-1), -1)
            self._det_next.append(det.astype(np.int64))

        self._rmean = []
        self._stoch = []
        bound = 0.0
        for table in reward_tables:
            mean = np.zeros((self.num_states, self.max_actions))
            stoch = {}
            for s in range(self.num_states):
                for j, r in enumerate(table[s]):
                    if isinstance(r, DiscreteReward):
                        stoch[(s, j)] = r
                        mean[s, j] = r.mean()
                        bound = max(bound, r.abs_max())
                    else:
                        mean[s, j] = float(r)
                        bound = max(bound, abs(float(r)))
            self._rmean.append(mean)
            self._stoch.append(stoch)

        self.r_max = float(r_max) if r_max is not None else bound
        if bound > self.r_max + ROW_TOL:
            raise ValueError("reward support exceeds declared r_max")

        mu = np.asarray(initial_dist, dtype=float)
        if mu.shape != (self.num_states,) or (mu < 0).any() or abs(mu.sum() - 1.0) > ROW_TOL:
            raise ValueError("initial_dist must be a distribution over states")
        self.initial_dist = mu
        self._cum_mu = _forced_cumsum(mu)
        self.terminal_state = None if terminal_state is None else int(terminal_state)

    def _level_index(self, levels, n_tables):
        if levels is None:
            idx = tuple(0 for _ in range(self.horizon))
        else:
            idx = tuple(int(i) for i in levels)
        if len(idx) != self.horizon or any(not 0 <= i < n_tables for i in idx):
            raise ValueError("level index must map every level to a table")
        return idx

    @classmethod
    def time_homogeneous(cls, num_states, horizon, admissible, transitions,
                         rewards, initial_dist, **kw):
        return cls(num_states, horizon, admissible, [transitions], [rewards],
                   initial_dist, **kw)

    # -- lookups ----------------------------------------------------------

    def action_slot(self, s: int, a: int) -> int:
        if 0 <= a < self._slot.shape[1]:
            j = int(self._slot[s, a])
            if j >= 0:
                return j
        raise ContractViolation(f"action {a} not admissible at state {s}")

    def check_level(self, h: int) -> None:
        if not 1 <= h <= self.horizon:
            raise ContractViolation(f"level {h} outside 1..{self.horizon}")

    def transition_row(self, h: int, s: int, a: int) -> np.ndarray:
        self.check_level(h)
        return self._trans[self.transition_levels[h - 1]][s, self.action_slot(s, a)]

    def reward_mean(self, h: int, s: int, a: int) -> float:
        self.check_level(h)
        return float(self._rmean[self.reward_levels[h - 1]][s, self.action_slot(s, a)])

    def reward_spec(self, h: int, s: int, a: int):
        self.check_level(h)
        j = self.action_slot(s, a)
        t = self.reward_levels[h - 1]
        return self._stoch[t].get((s, j), float(self._rmean[t][s, j]))

    def trans_cube(self, h: int) -> np.ndarray:
        return self._trans[self.transition_levels[h - 1]]

    def reward_cube(self, h: int) -> np.ndarray:
        return self._rmean[self.reward_levels[h - 1]]

    # -- sampling kernels --------------------------------------------------

    def _sample_initial(self, rng, n: int) -> np.ndarray:
        u = rng.random(n)
        return (u[:, None] < self._cum_mu[None, :]).argmax(axis=1)

    def _sample_next(self, h, s_vec, j_vec, rng) -> np.ndarray:
        cum = self._cum_trans[self.transition_levels[h - 1]][s_vec, j_vec]
        u = rng.random(len(s_vec))
        return (u[:, None] < cum).argmax(axis=1)

    def _sample_rewards(self, h, s_vec, j_vec, rng) -> np.ndarray:
        t = self.reward_levels[h - 1]
        r = self._rmean[t][s_vec, j_vec].copy()
        if self._stoch[t]:
            for (s, j), spec in self._stoch[t].items():
                hit = np.flatnonzero((s_vec == s) & (j_vec == j))
                if hit.size:
                    draws = rng.choice(spec.values, size=hit.size, p=spec.probs)
                    r[hit] = draws
        return r

    # -- serialization ------------------------------------------------------

    def to_json_dict(self) -> dict:
        def ragged_trans(cube):
            return [[list(map(float, cube[s, j])) for j in range(self.n_actions[s])]
                    for s in range(self.num_states)]

        def ragged_rewards(t):
            out = []
            for s in range(self.num_states):
                row = []
                for j in range(self.n_actions[s]):
                    spec = self._stoch[t].get((s, j))
                    if spec is None:
                        row.append(float(self._rmean[t][s, j]))
                    else:
                        row.append({"values": list(spec.values), "probs": list(spec.probs)})
                out.append(row)
            return out

        return {
            "schema_version": SCHEMA_VERSION,
            "num_states": self.num_states,
            "horizon": self.horizon,
            "admissible": [list(a) for a in self.admissible],
            "transitions": {
                "level_tables": list(self.transition_levels),
                "tables": [ragged_trans(c) for c in self._trans],
            },
            "rewards": {
                "level_tables": list(self.reward_levels),
                "tables": [ragged_rewards(t) for t in range(len(self._rmean))],
            },
            "initial_dist": list(map(float, self.initial_dist)),
            "r_max": self.r_max,
            "terminal_state": self.terminal_state,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MdpModel":
        def parse_rewards(table):
            out = []
            for row in table:
                parsed = []
                for r in row:
                    if isinstance(r, dict):
                        parsed.append(DiscreteReward(tuple(r["values"]), tuple(r["probs"])))
                    else:
                        parsed.append(float(r))
                out.append(parsed)
            return out

        return cls(
            num_states=obj["num_states"],
            horizon=obj["horizon"],
            admissible=obj["admissible"],
            transition_tables=obj["transitions"]["tables"],
            reward_tables=[parse_rewards(t) for t in obj["rewards"]["tables"]],
            initial_dist=obj["initial_dist"],
            transition_levels=obj["transitions"]["level_tables"],
            reward_levels=obj["rewards"]["level_tables"],
            r_max=obj.get("r_max"),
            terminal_state=obj.get("terminal_state"),
        )


class FeatureMap:
    """Per (state, action-slot) feature vectors, aligned with an MdpModel's
    admissible lists."""

    def __init__(self, dim, table, phi_max=None):
        self.dim = int(dim)
        self.n_vectors = np.array([len(row) for row in table], dtype=np.int64)
        A = int(self.n_vectors.max())
        self.padded = np.zeros((len(table), A, self.dim))
        for s, row in enumerate(table):
            for j, v in enumerate(row):
                v = np.asarray(v, dtype=float)
                if v.shape != (self.dim,):
                    raise ValueError("feature vector has wrong dimension")
                self.padded[s, j] = v
        norms = np.linalg.norm(self.padded, axis=-1)
        observed = float(norms.max())
        self.phi_max = observed if phi_max is None else float(phi_max)
        if observed > self.phi_max + 1e-9:
            raise ValueError("feature norms exceed declared phi_max")

    def phi(self, s: int, j: int) -> np.ndarray:
        return self.padded[s, j]

    def features_at(self, s: int) -> np.ndarray:
        return self.padded[s, : self.n_vectors[s]]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "dim": self.dim,
            "features": [[list(map(float, self.padded[s, j])) for j in range(self.n_vectors[s])]
                         for s in range(len(self.n_vectors))],
            "phi_max": self.phi_max,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "FeatureMap":
        return cls(obj["dim"], obj["features"], phi_max=obj.get("phi_max"))


def save_json(obj: dict, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    steps: tuple  # H records of (state, action, reward)

    @property
    def total_return(self) -> float:
        return float(sum(r for _, _, r in self.steps))


@dataclass(frozen=True)
class TrajectoryBatch:
    states: np.ndarray   # (n, H)
    actions: np.ndarray  # (n, H) ActionIds
    slots: np.ndarray    # (n, H) action slots
    rewards: np.ndarray  # (n, H)

    def __len__(self):
        return self.states.shape[0]

    @property
    def returns(self) -> np.ndarray:
        return self.rewards.sum(axis=1)


def _compile_cum(mdp: MdpModel, probs_cube: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs_cube, axis=-1)
    last = mdp.n_actions - 1
    for h in range(mdp.horizon):
        cum[h, np.arange(mdp.num_states), last] = 1.0
        for s in range(mdp.num_states):
            cum[h, s, mdp.n_actions[s]:] = 1.0
    return cum


def _rollout_compiled(mdp: MdpModel, probs_cube: np.ndarray, n: int, rng) -> TrajectoryBatch:
    H = mdp.horizon
    cum_act = _compile_cum(mdp, probs_cube)
    states = np.empty((n, H), dtype=np.int64)
    slots = np.empty((n, H), dtype=np.int64)
    rewards = np.empty((n, H))
    s = mdp._sample_initial(rng, n)
    for h in range(1, H + 1):
        states[:, h - 1] = s
        rows = cum_act[h - 1][s]
        j = (rng.random(n)[:, None] < rows).argmax(axis=1)
        slots[:, h - 1] = j
        rewards[:, h - 1] = mdp._sample_rewards(h, s, j, rng)
        if h < H:
            s = mdp._sample_next(h, s, j, rng)
    actions = mdp.actions_padded[states, slots]
    return TrajectoryBatch(states, actions, slots, rewards)


def rollout(mdp: MdpModel, policy, n: int, rng, features=None) -> TrajectoryBatch:
    """Sample n episodes under a policy spec (mixtures sampled per episode)."""
    if isinstance(policy, pol.MixturePolicy):
        k = len(policy.components)
        comp = rng.integers(0, k, size=n)
        parts = []
        order = []
        for c in range(k):
            idx = np.flatnonzero(comp == c)
            if idx.size:
                parts.append(rollout(mdp, policy.components[c], idx.size, rng, features))
                order.append(idx)
        states = np.empty((n, mdp.horizon), dtype=np.int64)
        actions = np.empty_like(states)
        slots = np.empty_like(states)
        rewards = np.empty((n, mdp.horizon))
        for idx, part in zip(order, parts):
            states[idx], actions[idx] = part.states, part.actions
            slots[idx], rewards[idx] = part.slots, part.rewards
        return TrajectoryBatch(states, actions, slots, rewards)
    cube = pol.compile_policy(policy, mdp, features)
    return _rollout_compiled(mdp, cube, n, rng)


def sample_trajectory(mdp: MdpModel, policy, rng_seed: int, episode_index: int = 0,
                      features=None) -> Trajectory:
    """One seeded episode.  Draws are consumed in fixed (state, action, reward,
    transition) order within the episode's derived stream; degenerate draws are
    skipped, so deterministic runs are bit-identical across seeds."""
    rng = stream(rng_seed, NS_EPISODE, episode_index)
    if isinstance(policy, pol.MixturePolicy):
        comp = int(rng.integers(0, len(policy.components)))
        cube = pol.compile_policy(policy.components[comp], mdp, features)
    else:
        cube = pol.compile_policy(policy, mdp, features)

    if (mdp.initial_dist == 1.0).any():
        s = int(mdp.initial_dist.argmax())
    else:
        s = int(mdp._sample_initial(rng, 1)[0])
    steps = []
    for h in range(1, mdp.horizon + 1):
        n = int(mdp.n_actions[s])
        row = cube[h - 1, s, :n]
        if (row == 1.0).any():
            j = int(row.argmax())
        else:
            j = min(int(np.searchsorted(np.cumsum(row), rng.random(), side="right")), n - 1)
        a = int(mdp.actions_padded[s, j])
        if row[j] <= 0.0:
            raise ContractViolation(f"policy emitted inadmissible action at (h={h}, s={s}, a={a})")
        spec = mdp.reward_spec(h, s, a)
        if isinstance(spec, DiscreteReward):
            r = float(rng.choice(spec.values, p=spec.probs))
        else:
            r = float(spec)
        steps.append((s, a, r))
        if h < mdp.horizon:
            det = mdp._det_next[mdp.transition_levels[h - 1]][s, j]
            if det >= 0:
                s = int(det)
            else:
                s = int(mdp._sample_next(h, np.array([s]), np.array([j]), rng)[0])
    return Trajectory(tuple(steps))


# ---------------------------------------------------------------------------
# Access layers
# ---------------------------------------------------------------------------


class OnlineEnv:
    """Online interaction handle: reset/step plus bulk episode collection.

    Exposes the feature map and the action-space geometry but hides the
    transition and reward tables; learners bound to this handle cannot peek
    at the model.  One sample is counted per step.
    """

    def __init__(self, mdp: MdpModel, features: FeatureMap | None = None, seed: int = 0):
        self._mdp = mdp
        self.features = features
        self.seed = int(seed)
        self.horizon = mdp.horizon
        self.num_states = mdp.num_states
        self.admissible = mdp.admissible
        self.n_actions = mdp.n_actions
        self.max_actions = mdp.max_actions
        self._samples = 0
        self._episodes_started = 0
        self._episodes_done = 0
        self._batches = 0
        self._state = None
        self._h = None
        self._rng = None
        self.actions_taken = np.zeros(mdp.max_action_id + 1, dtype=bool)

    def action_slot(self, s, a):
        return self._mdp.action_slot(s, a)

    @property
    def samples_consumed(self) -> int:
        return self._samples

    @property
    def episodes_completed(self) -> int:
        return self._episodes_done

    def reset(self) -> int:
        self._rng = stream(self.seed, NS_EPISODE, self._episodes_started)
        self._episodes_started += 1
        if (self._mdp.initial_dist == 1.0).any():
            self._state = int(self._mdp.initial_dist.argmax())
        else:
            self._state = int(self._mdp._sample_initial(self._rng, 1)[0])
        self._h = 1
        return self._state

    def step(self, action: int):
        if self._h is None or self._h > self.horizon:
            raise ContractViolation("episode over (or never started); call reset()")
        h, s = self._h, self._state
        j = self._mdp.action_slot(s, action)  # raises with (s, a) context
        spec = self._mdp.reward_spec(h, s, action)
        if isinstance(spec, DiscreteReward):
            r = float(self._rng.choice(spec.values, p=spec.probs))
        else:
            r = float(spec)
        if h < self.horizon:
            det = self._mdp._det_next[self._mdp.transition_levels[h - 1]][s, j]
            if det >= 0:
                s2 = int(det)
            else:
                s2 = int(self._mdp._sample_next(h, np.array([s]), np.array([j]), self._rng)[0])
        else:
            s2 = s
            self._episodes_done += 1
        self.actions_taken[action] = True
        self._samples += 1
        self._state = s2
        self._h = h + 1
        return r, s2, h

    def rollout(self, policy, n_episodes: int) -> TrajectoryBatch:
        """Collect n full episodes under a policy spec (vectorized)."""
        rng = stream(self.seed, NS_BATCH, self._batches)
        self._batches += 1
        batch = rollout(self._mdp, policy, n_episodes, rng, self.features)
        self._episodes_started += n_episodes
        self._episodes_done += n_episodes
        self._samples += n_episodes * self.horizon
        self.actions_taken[np.unique(batch.actions)] = True
        return batch


def generative_query(mdp: MdpModel, h: int, s: int, a: int, rng_seed: int,
                     draw_index: int = 0):
    """One seeded draw of (reward, next state) for any (h, s, a)."""
    mdp.check_level(h)
    j = mdp.action_slot(s, a)
    rng = stream(rng_seed, NS_GENERATIVE, draw_index)
    spec = mdp.reward_spec(h, s, a)
    if isinstance(spec, DiscreteReward):
        r = float(rng.choice(spec.values, p=spec.probs))
    else:
        r = float(spec)
    det = mdp._det_next[mdp.transition_levels[h - 1]][s, j]
    if det >= 0:
        s2 = int(det)
    else:
        s2 = int(mdp._sample_next(h, np.array([s]), np.array([j]), rng)[0])
    return r, s2


class GenerativeModel:
    """Generative access handle with a query counter."""

    def __init__(self, mdp: MdpModel, features: FeatureMap | None = None, seed: int = 0):
        self._mdp = mdp
        self.features = features
        self.seed = int(seed)
        self.horizon = mdp.horizon
        self.num_states = mdp.num_states
        self.admissible = mdp.admissible
        self.n_actions = mdp.n_actions
        self.max_actions = mdp.max_actions
        self._queries = 0
        self._calls = 0
        self.actions_queried = np.zeros(mdp.max_action_id + 1, dtype=bool)

    def action_slot(self, s, a):
        return self._mdp.action_slot(s, a)

    @property
    def queries_used(self) -> int:
        return self._queries

    def query(self, h: int, s: int, a: int):
        r, s2 = self.query_batch(h, np.array([s]), np.array([a]))
        return float(r[0]), int(s2[0])

    def query_batch(self, h: int, s_vec, a_vec):
        """Vectorized draws; counts one query per element."""
        self._mdp.check_level(h)
        s_vec = np.asarray(s_vec, dtype=np.int64)
        a_vec = np.asarray(a_vec, dtype=np.int64)
        j_vec = np.empty_like(s_vec)
        for i in range(len(s_vec)):
            j_vec[i] = self._mdp.action_slot(int(s_vec[i]), int(a_vec[i]))
        rng = stream(self.seed, NS_GENERATIVE, self._calls)
        self._calls += 1
        r = self._mdp._sample_rewards(h, s_vec, j_vec, rng)
        s2 = self._mdp._sample_next(h, s_vec, j_vec, rng)
        self._queries += len(s_vec)
        self.actions_queried[np.unique(a_vec)] = True
        return r, s2
