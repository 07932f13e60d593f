"""Exact dynamic programming on explicit MDPs.

Backward induction for optimal values, exact policy evaluation, forward
visitation pushes, and the minimum suboptimality gap.  These are the ground
truth every statistical component is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import policies as pol
from .mdp import MdpModel

TOL_ZERO = 1e-10


@dataclass(frozen=True)
class ValueTables:
    """Optimal Q/V tables plus the greedy action (lowest ActionId among
    exact maximizers).  q is padded with -inf on invalid slots."""

    q: np.ndarray       # (H, S, A_max)
    v: np.ndarray       # (H, S)
    greedy: np.ndarray  # (H, S) ActionIds

    def q_at(self, h, s, a, mdp: MdpModel) -> float:
        return float(self.q[h - 1, s, mdp.action_slot(s, a)])

    def v_at(self, h, s) -> float:
        return float(self.v[h - 1, s])

    def to_json_dict(self, mdp: MdpModel) -> dict:
        return {
            "q": [[[float(self.q[h, s, j]) for j in range(mdp.n_actions[s])]
                   for s in range(mdp.num_states)] for h in range(mdp.horizon)],
            "v": [[float(x) for x in row] for row in self.v],
            "greedy": [[int(a) for a in row] for row in self.greedy],
        }


def _pad_mask(mdp: MdpModel) -> np.ndarray:
    mask = np.zeros((mdp.num_states, mdp.max_actions), dtype=bool)
    for s in range(mdp.num_states):
        mask[s, mdp.n_actions[s]:] = True
    return mask


def optimal_values(mdp: MdpModel) -> ValueTables:
    H, S, A = mdp.horizon, mdp.num_states, mdp.max_actions
    pad = _pad_mask(mdp)
    q = np.empty((H, S, A))
    v = np.empty((H, S))
    greedy = np.empty((H, S), dtype=np.int64)
    v_next = np.zeros(S)
    for h in range(H, 0, -1):
        qh = mdp.reward_cube(h) + mdp.trans_cube(h) @ v_next
        qh[pad] = -np.inf
        q[h - 1] = qh
        slots = qh.argmax(axis=1)  # first maximizer = lowest ActionId
        v[h - 1] = qh[np.arange(S), slots]
        greedy[h - 1] = mdp.actions_padded[np.arange(S), slots]
        v_next = v[h - 1]
    return ValueTables(q, v, greedy)


@dataclass(frozen=True)
class PolicyValues:
    q: np.ndarray
    v: np.ndarray
    value_at_mu: float


def _action_cube(mdp: MdpModel, policy, features=None) -> np.ndarray:
    """Exact per-level action distributions; raises UnsupportedPolicy if the
    policy has no state-wise expansion (mixtures)."""
    return pol.compile_policy(policy, mdp, features)


def policy_evaluation(mdp: MdpModel, policy, features=None) -> PolicyValues:
    cube = _action_cube(mdp, policy, features)
    H, S, A = mdp.horizon, mdp.num_states, mdp.max_actions
    q = np.zeros((H, S, A))
    v = np.zeros((H, S))
    v_next = np.zeros(S)
    for h in range(H, 0, -1):
        qh = mdp.reward_cube(h) + mdp.trans_cube(h) @ v_next
        q[h - 1] = qh
        v[h - 1] = np.einsum("sa,sa->s", cube[h - 1], qh)
        v_next = v[h - 1]
    return PolicyValues(q, v, float(mdp.initial_dist @ v[0]))


def visitation_distribution(mdp: MdpModel, policy, h: int, features=None) -> np.ndarray:
    """Law of s_h under the policy (h is 1-based; h=1 returns mu)."""
    mdp.check_level(h)
    if isinstance(policy, pol.MixturePolicy):
        parts = [visitation_distribution(mdp, c, h, features) for c in policy.components]
        return np.mean(parts, axis=0)
    cube = _action_cube(mdp, policy, features)
    dist = mdp.initial_dist.copy()
    for level in range(1, h):
        flow = cube[level - 1][:, :, None] * mdp.trans_cube(level)
        dist = np.einsum("s,saz->z", dist, flow)
    total = dist.sum()
    if abs(total - 1.0) > 1e-9:
        raise AssertionError(f"visitation mass {total} drifted from 1")
    return dist / total


@dataclass(frozen=True)
class GapReport:
    """Minimum positive suboptimality gap over the included (h, s, a)."""

    delta_min: float | None
    witness: tuple | None      # (h, s, ActionId)
    excluded_states: tuple
    tol_zero: float

    @property
    def has_positive_gap(self) -> bool:
        return self.delta_min is not None


def min_gap(mdp: MdpModel, excluded_states=(), tables: ValueTables | None = None,
            tol_zero: float = TOL_ZERO) -> GapReport:
    """Smallest gap V*_h(s) - Q*_h(s,a) strictly above tol_zero, skipping the
    excluded states entirely; ties at the optimum do not count as gaps."""
    if tables is None:
        tables = optimal_values(mdp)
    excluded = set(int(s) for s in excluded_states)
    best = None
    witness = None
    for h in range(1, mdp.horizon + 1):
        for s in range(mdp.num_states):
            if s in excluded:
                continue
            n = mdp.n_actions[s]
            gaps = tables.v[h - 1, s] - tables.q[h - 1, s, :n]
            for j in np.flatnonzero(gaps > tol_zero):
                g = float(gaps[j])
                if best is None or g < best:
                    best = g
                    witness = (h, s, int(mdp.actions_padded[s, j]))
    return GapReport(best, witness, tuple(sorted(excluded)), tol_zero)
