"""Policy specifications and their expansion to per-level action tables.

A policy spec is a small immutable description; `compile_policy` expands it
into an (H, S, A_max) array of action-slot probabilities against a concrete
state/action space.  Everything except mixtures compiles exactly; mixtures
are handled by the callers that can average or sample components.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np


class UnsupportedPolicy(Exception):
    """Policy cannot be expanded into exact per-state action distributions."""


@dataclass(frozen=True)
class TabularPolicy:
    """Explicit per-level, per-state distribution over action slots.

    `probs[h-1][s, j]` is the probability of the j-th admissible action at
    state s on level h.  Rows must sum to 1 over the valid slots.
    """

    probs: tuple  # tuple of H arrays, each (S, A_max)

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(np.asarray(p, dtype=float) for p in self.probs))


@dataclass(frozen=True)
class LinearGreedyPolicy:
    """argmax_a phi(s,a)^T theta_h with ties broken toward the lowest action id."""

    thetas: np.ndarray  # (H, d)

    def __post_init__(self):
        object.__setattr__(self, "thetas", np.asarray(self.thetas, dtype=float))


@dataclass(frozen=True)
class DesignSamplerPolicy:
    """Follow `below` before `level`, sample the state design at `level`,
    then follow `above` (typically a greedy policy) afterwards."""

    level: int
    designs: Any  # provider with action_weights(state) -> weights over slots
    below: Any    # policy spec for levels < level (unused when level == 1)
    above: Any    # policy spec for levels > level


@dataclass(frozen=True)
class MixturePolicy:
    """Uniform mixture over component policies, drawn once per episode."""

    components: tuple

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))


PolicySpec = TabularPolicy | LinearGreedyPolicy | DesignSamplerPolicy | MixturePolicy


def uniform_policy(space) -> TabularPolicy:
    """Uniform over admissible actions at every level and state."""
    S, A = space.num_states, space.max_actions
    row = np.zeros((S, A))
    for s in range(S):
        n = space.n_actions[s]
        row[s, :n] = 1.0 / n
    return TabularPolicy(tuple(row.copy() for _ in range(space.horizon)))


def deterministic_policy(space, choice) -> TabularPolicy:
    """One-hot tabular policy; `choice[h-1][s]` is an ActionId."""
    S, A = space.num_states, space.max_actions
    tables = []
    for h in range(space.horizon):
        row = np.zeros((S, A))
        for s in range(S):
            j = space.action_slot(s, choice[h][s])
            row[s, j] = 1.0
        tables.append(row)
    return TabularPolicy(tuple(tables))


def greedy_slots(space, features, theta: np.ndarray) -> np.ndarray:
    """Greedy slot per state under phi . theta, lowest action id among ties."""
    scores = features.padded @ np.asarray(theta, dtype=float)  # (S, A_max)
    scores = scores.copy()
    for s in range(space.num_states):
        scores[s, space.n_actions[s]:] = -np.inf
    return scores.argmax(axis=1)


def eps_greedy_policy(space, features, thetas=None, eps: float = 0.1) -> TabularPolicy:
    """(1 - eps) greedy on thetas plus eps uniform over admissible actions."""
    if thetas is None:
        thetas = np.zeros((space.horizon, features.dim))
    thetas = np.asarray(thetas, dtype=float)
    S, A = space.num_states, space.max_actions
    tables = []
    for h in range(space.horizon):
        row = np.zeros((S, A))
        slots = greedy_slots(space, features, thetas[h])
        for s in range(S):
            n = space.n_actions[s]
            row[s, :n] = eps / n
            row[s, slots[s]] += 1.0 - eps
        tables.append(row)
    return TabularPolicy(tuple(tables))


def compile_policy(policy, space, features=None) -> np.ndarray:
    """Expand a policy spec to an (H, S, A_max) slot-probability cube.

    Raises UnsupportedPolicy for mixtures (no state-wise exact expansion) and
    for feature-dependent policies when `features` is missing.
    """
    H, S, A = space.horizon, space.num_states, space.max_actions
    if isinstance(policy, TabularPolicy):
        if len(policy.probs) != H:
            raise UnsupportedPolicy(f"tabular policy has {len(policy.probs)} levels, space has {H}")
        cube = np.stack([np.asarray(p, dtype=float) for p in policy.probs])
        if cube.shape != (H, S, A):
            raise UnsupportedPolicy(f"tabular policy shape {cube.shape} != {(H, S, A)}")
        return cube
    if isinstance(policy, LinearGreedyPolicy):
        if features is None:
            raise UnsupportedPolicy("linear-greedy policy needs a feature map")
        cube = np.zeros((H, S, A))
        for h in range(H):
            slots = greedy_slots(space, features, policy.thetas[h])
            cube[h, np.arange(S), slots] = 1.0
        return cube
    if isinstance(policy, DesignSamplerPolicy):
        lvl = policy.level
        if not 1 <= lvl <= H:
            raise UnsupportedPolicy(f"design level {lvl} outside 1..{H}")
        cube = np.zeros((H, S, A))
        if lvl > 1:
            cube[: lvl - 1] = compile_policy(policy.below, space, features)[: lvl - 1]
        for s in range(S):
            w = policy.designs.action_weights(s)
            cube[lvl - 1, s, : len(w)] = w
        if lvl < H:
            cube[lvl:] = compile_policy(policy.above, space, features)[lvl:]
        return cube
    if isinstance(policy, MixturePolicy):
        raise UnsupportedPolicy("mixture policies have no exact per-state expansion; "
                                "evaluate components separately")
    raise UnsupportedPolicy(f"unknown policy spec {type(policy).__name__}")
