"""Builders for the leaking-complete-graph MDP family and its variants.

Variants
--------
base          m+1 states; optimal action a* leads straight to the terminal
              state with a large reward; every other action leaks there with
              probability at least 1 - 3*gamma.  Q* is linear in the features
              with coefficients v(a*).
reference     the a*-free twin: identical tables except where a* is taken and
              at the final level, used for the online-hardness argument.
gap_complete  d+1-dimensional variant (gamma = 1/6) whose positive minimum
              gap holds at *every* state, terminal included.
reachable     gap_complete with the unreachable state removed and a
              deterministic initial state from which every state is reachable
              at every level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import FeatureMap, MdpModel, load_json, save_json
from .oracle import GapReport, ValueTables, min_gap, optimal_values
from .packs import VectorPack, pack_from_json_dict, pack_to_json_dict

VARIANTS = ("base", "reference", "gap_complete", "reachable")
REWARD_MODES = ("bellman_consistent", "strict_paper")
GAP_COMPLETE_GAMMA = 1.0 / 6.0


class UnsupportedVariant(Exception):
    """Operation undefined for this instance variant."""


@dataclass(frozen=True)
class HardInstance:
    variant: str
    pack: VectorPack
    a_star: int | None
    horizon: int
    mdp: MdpModel
    features: FeatureMap
    theta_star: np.ndarray | None   # (H, dim); constant across levels
    state_labels: tuple             # ("abar", a) | ("f",) | ("init",)
    reward_mode: str | None = None

    @property
    def gamma(self) -> float:
        return self.pack.gamma

    @property
    def dim(self) -> int:
        return self.features.dim

    @property
    def terminal_index(self) -> int:
        return self.state_labels.index(("f",))

    @property
    def initial_index(self) -> int | None:
        return self.state_labels.index(("init",)) if ("init",) in self.state_labels else None

    def abar_index(self, a: int) -> int:
        return self.state_labels.index(("abar", a))


def _check_pack(pack: VectorPack) -> None:
    if pack.max_abs_inner > pack.gamma + 1e-12:
        raise ValueError("pack certificate exceeds its gamma bound")
    if 3.0 * pack.gamma >= 1.0:
        raise ValueError("need 3*gamma < 1 for valid transition rows")


def _check_a_star(pack: VectorPack, a_star: int) -> None:
    if not 1 <= a_star <= pack.m:
        raise ValueError(f"a_star {a_star} outside [1, {pack.m}]")


def build_base(pack: VectorPack, a_star: int, horizon: int) -> HardInstance:
    """The m-MDP family member with optimal action a*.

    Features phi(abar_a1, a2) = (<v(a1), v(a2)> + 2*gamma) * v(a2) and
    phi(f, .) = 0 are shared across the family; only rewards and the rows
    where a* is taken depend on a*.
    """
    _check_pack(pack)
    _check_a_star(pack, a_star)
    m, g = pack.m, pack.gamma
    V = pack.vectors
    G = pack.gram()
    v_star = V[a_star - 1]
    f = m
    labels = tuple(("abar", a) for a in range(1, m + 1)) + (("f",),)
    admissible = [tuple(a for a in range(1, m + 1) if a != i) for i in range(1, m + 1)]
    admissible.append(tuple(range(1, m)))

    def leak(i, a):
        return G[i - 1, a - 1] + 2.0 * g

    feats = []
    for i in range(1, m + 1):
        feats.append([leak(i, a) * V[a - 1] for a in admissible[i - 1]])
    feats.append([np.zeros(pack.d) for _ in admissible[f]])

    trans = []
    rew_mid = []
    for i in range(1, m + 1):
        rows, rrow = [], []
        for a in admissible[i - 1]:
            if a == a_star:
                row = np.zeros(m + 1)
                row[f] = 1.0
                rows.append(row)
                rrow.append(leak(i, a_star))
            else:
                p = leak(i, a)
                row = np.zeros(m + 1)
                row[a - 1] = p
                row[f] = 1.0 - p
                rows.append(row)
                rrow.append(-2.0 * g * p)
        trans.append(rows)
        rew_mid.append(rrow)
    absorb = np.zeros(m + 1)
    absorb[f] = 1.0
    trans.append([absorb.copy() for _ in admissible[f]])
    rew_mid.append([0.0 for _ in admissible[f]])

    rew_last = [[float(phi @ v_star) for phi in feats[s]] for s in range(m + 1)]

    mdp = MdpModel(
        num_states=m + 1,
        horizon=horizon,
        admissible=admissible,
        transition_tables=[trans],
        reward_tables=[rew_mid, rew_last],
        initial_dist=np.concatenate([np.full(m, 1.0 / m), [0.0]]),
        reward_levels=[0] * (horizon - 1) + [1],
        terminal_state=f,
    )
    features = FeatureMap(pack.d, feats)
    theta = np.tile(v_star, (horizon, 1))
    return HardInstance("base", pack, a_star, horizon, mdp, features, theta, labels)


def build_reference(pack: VectorPack, horizon: int) -> HardInstance:
    """The a*-free reference MDP: every action at abar_a1 leaks toward the
    graph, every non-terminal reward is the generic negative one, at every
    level including the last."""
    _check_pack(pack)
    m, g = pack.m, pack.gamma
    V = pack.vectors
    G = pack.gram()
    f = m
    labels = tuple(("abar", a) for a in range(1, m + 1)) + (("f",),)
    admissible = [tuple(a for a in range(1, m + 1) if a != i) for i in range(1, m + 1)]
    admissible.append(tuple(range(1, m)))

    def leak(i, a):
        return G[i - 1, a - 1] + 2.0 * g

    feats = []
    for i in range(1, m + 1):
        feats.append([leak(i, a) * V[a - 1] for a in admissible[i - 1]])
    feats.append([np.zeros(pack.d) for _ in admissible[f]])

    trans = []
    rew = []
    for i in range(1, m + 1):
        rows, rrow = [], []
        for a in admissible[i - 1]:
            p = leak(i, a)
            row = np.zeros(m + 1)
            row[a - 1] = p
            row[f] = 1.0 - p
            rows.append(row)
            rrow.append(-2.0 * g * p)
        trans.append(rows)
        rew.append(rrow)
    absorb = np.zeros(m + 1)
    absorb[f] = 1.0
    trans.append([absorb.copy() for _ in admissible[f]])
    rew.append([0.0 for _ in admissible[f]])

    mdp = MdpModel(
        num_states=m + 1,
        horizon=horizon,
        admissible=admissible,
        transition_tables=[trans],
        reward_tables=[rew],
        initial_dist=np.concatenate([np.full(m, 1.0 / m), [0.0]]),
        terminal_state=f,
    )
    features = FeatureMap(pack.d, feats)
    return HardInstance("reference", pack, None, horizon, mdp, features, None, labels)


def _require_gap_gamma(pack: VectorPack) -> None:
    if abs(pack.gamma - GAP_COMPLETE_GAMMA) > 1e-12:
        raise ValueError("gap-complete construction requires gamma = 1/6 "
                         "(its gap arithmetic is specific to that value)")


def build_gap_complete(pack: VectorPack, a_star: int, horizon: int,
                       reward_mode: str = "bellman_consistent") -> HardInstance:
    """d+1-dimensional variant whose minimum gap holds with no exclusions.

    reward_mode selects how the rows at the (unreachable) state abar_{a*} are
    filled for h < H: "strict_paper" keeps the printed product-form reward,
    which is not Bellman-consistent with the variant's claimed Q*;
    "bellman_consistent" (default) uses the generic negative reward, under
    which realizability holds exactly.
    """
    _check_pack(pack)
    _check_a_star(pack, a_star)
    _require_gap_gamma(pack)
    if reward_mode not in REWARD_MODES:
        raise ValueError(f"reward_mode must be one of {REWARD_MODES}")
    m, g = pack.m, pack.gamma
    V = pack.vectors
    G = pack.gram()
    d1 = pack.d + 1
    f = m
    labels = tuple(("abar", a) for a in range(1, m + 1)) + (("f",),)
    admissible = [tuple(range(1, m + 1)) for _ in range(m + 1)]

    def leak(i, a):
        return G[i - 1, a - 1] + 2.0 * g

    def lifted(head, tail):
        out = np.zeros(d1)
        out[0] = head
        if tail is not None:
            out[1:] = tail
        return out

    feats = []
    for i in range(1, m + 1):
        row = []
        for a in range(1, m + 1):
            if a == i:
                row.append(lifted(0.75 * g, None))
            else:
                row.append(lifted(0.0, leak(i, a) * V[a - 1]))
        feats.append(row)
    feats.append([lifted(0.0, None) if a == 1 else lifted(-1.0, None)
                  for a in range(1, m + 1)])

    theta_vec = np.concatenate([[1.0], V[a_star - 1]])

    trans = []
    rew_mid = []
    for i in range(1, m + 1):
        rows, rrow = [], []
        for a in range(1, m + 1):
            if a == a_star or a == i:
                row = np.zeros(m + 1)
                row[f] = 1.0
            else:
                p = leak(i, a)
                row = np.zeros(m + 1)
                row[a - 1] = p
                row[f] = 1.0 - p
            rows.append(row)
            if a == i:
                rrow.append(0.75 * g)
            elif i == a_star:
                if reward_mode == "strict_paper":
                    rrow.append(leak(a_star, a) * G[a_star - 1, a - 1])
                else:
                    rrow.append(-2.0 * g * leak(a_star, a))
            elif a == a_star:
                rrow.append(leak(i, a_star))
            else:
                rrow.append(-2.0 * g * leak(i, a))
        trans.append(rows)
        rew_mid.append(rrow)
    absorb = np.zeros(m + 1)
    absorb[f] = 1.0
    trans.append([absorb.copy() for _ in range(m)])
    rew_mid.append([0.0 if a == 1 else -1.0 for a in range(1, m + 1)])

    rew_last = [[float(phi @ theta_vec) for phi in feats[s]] for s in range(m + 1)]

    mdp = MdpModel(
        num_states=m + 1,
        horizon=horizon,
        admissible=admissible,
        transition_tables=[trans],
        reward_tables=[rew_mid, rew_last],
        initial_dist=np.concatenate([np.full(m, 1.0 / m), [0.0]]),
        reward_levels=[0] * (horizon - 1) + [1],
        terminal_state=f,
    )
    features = FeatureMap(d1, feats)
    theta = np.tile(theta_vec, (horizon, 1))
    return HardInstance("gap_complete", pack, a_star, horizon, mdp, features, theta,
                        labels, reward_mode)


def build_reachable(pack: VectorPack, a_star: int, horizon: int) -> HardInstance:
    """gap_complete with abar_{a*} removed and a deterministic initial state s:
    action 0 ends the episode, action a* loops at s, any other action a moves
    to abar_a, so every surviving state is reachable at every level."""
    _check_pack(pack)
    _check_a_star(pack, a_star)
    _require_gap_gamma(pack)
    m, g = pack.m, pack.gamma
    V = pack.vectors
    G = pack.gram()
    d1 = pack.d + 1
    kept = [a for a in range(1, m + 1) if a != a_star]
    labels = tuple(("abar", a) for a in kept) + (("f",), ("init",))
    index = {lab: i for i, lab in enumerate(labels)}
    f = index[("f",)]
    init = index[("init",)]
    S = len(labels)

    admissible = []
    for lab in labels:
        if lab == ("init",):
            admissible.append(tuple(range(0, m + 1)))
        else:
            admissible.append(tuple(range(1, m + 1)))

    def leak(i, a):
        return G[i - 1, a - 1] + 2.0 * g

    def lifted(head, tail):
        out = np.zeros(d1)
        out[0] = head
        if tail is not None:
            out[1:] = tail
        return out

    theta_vec = np.concatenate([[1.0], V[a_star - 1]])

    feats = []
    trans = []
    rew_mid = []
    for lab in labels:
        frow, rows, rrow = [], [], []
        if lab[0] == "abar":
            i = lab[1]
            for a in range(1, m + 1):
                if a == i:
                    frow.append(lifted(0.75 * g, None))
                    row = np.zeros(S)
                    row[f] = 1.0
                    rrow.append(0.75 * g)
                elif a == a_star:
                    frow.append(lifted(0.0, leak(i, a) * V[a - 1]))
                    row = np.zeros(S)
                    row[f] = 1.0
                    rrow.append(leak(i, a_star))
                else:
                    p = leak(i, a)
                    frow.append(lifted(0.0, p * V[a - 1]))
                    row = np.zeros(S)
                    row[index[("abar", a)]] = p
                    row[f] = 1.0 - p
                    rrow.append(-2.0 * g * p)
                rows.append(row)
        elif lab == ("f",):
            for a in range(1, m + 1):
                frow.append(lifted(0.0, None) if a == 1 else lifted(-1.0, None))
                row = np.zeros(S)
                row[f] = 1.0
                rows.append(row)
                rrow.append(0.0 if a == 1 else -1.0)
        else:  # initial state
            for a in range(0, m + 1):
                row = np.zeros(S)
                if a == 0:
                    frow.append(lifted(-1.0, None))
                    row[f] = 1.0
                    rrow.append(-1.0)
                elif a == a_star:
                    frow.append(lifted(-1.0, V[a - 1]))
                    row[init] = 1.0
                    rrow.append(0.0)
                else:
                    frow.append(lifted(-1.0, V[a - 1]))
                    row[index[("abar", a)]] = 1.0
                    rrow.append(-1.0 - 2.0 * g)
                rows.append(row)
        feats.append(frow)
        trans.append(rows)
        rew_mid.append(rrow)

    rew_last = [[float(phi @ theta_vec) for phi in feats[s]] for s in range(S)]

    mu = np.zeros(S)
    mu[init] = 1.0
    mdp = MdpModel(
        num_states=S,
        horizon=horizon,
        admissible=admissible,
        transition_tables=[trans],
        reward_tables=[rew_mid, rew_last],
        initial_dist=mu,
        reward_levels=[0] * (horizon - 1) + [1],
        terminal_state=f,
    )
    features = FeatureMap(d1, feats)
    theta = np.tile(theta_vec, (horizon, 1))
    return HardInstance("reachable", pack, a_star, horizon, mdp, features, theta, labels)


# ---------------------------------------------------------------------------
# Closed forms and verifiers
# ---------------------------------------------------------------------------


def closed_form_q(instance: HardInstance, h: int, s: int, a: int) -> float:
    """Closed-form Q* of the base variant: zero at the terminal state,
    leak * <v(a), v(a*)> off the optimal action, leak itself on it."""
    if instance.variant != "base":
        raise UnsupportedVariant(
            "closed-form Q* is defined for the base variant only; the lifted "
            "variants are checked through their theta* linear form")
    instance.mdp.check_level(h)
    instance.mdp.action_slot(s, a)
    label = instance.state_labels[s]
    if label == ("f",):
        return 0.0
    i = label[1]
    V = instance.pack.vectors
    g = instance.gamma
    v_star = V[instance.a_star - 1]
    if a == instance.a_star:
        return float(V[i - 1] @ v_star + 2.0 * g)
    leak = float(V[i - 1] @ V[a - 1] + 2.0 * g)
    return leak * float(V[a - 1] @ v_star)


@dataclass(frozen=True)
class RealizabilityReport:
    max_residual: float
    witness: tuple   # (h, s, ActionId)
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_residual <= self.tol


def verify_realizability(instance: HardInstance, tol: float = 1e-9,
                         tables: ValueTables | None = None) -> RealizabilityReport:
    """Max over (h, s, a) of |Q*_DP - phi . theta*_h| against the DP oracle."""
    if instance.variant == "reference":
        raise UnsupportedVariant("reference MDP carries no theta*")
    mdp = instance.mdp
    if tables is None:
        tables = optimal_values(mdp)
    worst = -1.0
    witness = None
    for h in range(1, mdp.horizon + 1):
        pred = instance.features.padded @ instance.theta_star[h - 1]
        for s in range(mdp.num_states):
            n = mdp.n_actions[s]
            res = np.abs(tables.q[h - 1, s, :n] - pred[s, :n])
            j = int(res.argmax())
            if res[j] > worst:
                worst = float(res[j])
                witness = (h, s, int(mdp.actions_padded[s, j]))
    return RealizabilityReport(worst, witness, tol)


@dataclass(frozen=True)
class GapCheck:
    report: GapReport
    bound: float
    excluded_states: tuple

    @property
    def passed(self) -> bool:
        return (self.report.delta_min is not None
                and self.report.delta_min >= self.bound - 1e-9)


def gap_bound(instance: HardInstance) -> float:
    """Certified lower bound on the minimum gap for the variant.

    For the base variant the guarantee is gamma - 3*gamma^2, which equals or
    exceeds gamma/4 exactly when gamma <= 1/4 (the construction's setting)."""
    g = instance.gamma
    if instance.variant == "base":
        return g / 4.0 if g <= 0.25 else g - 3.0 * g * g
    return 1.0 / 24.0


def verify_gap(instance: HardInstance, tables: ValueTables | None = None) -> GapCheck:
    if instance.variant == "reference":
        raise UnsupportedVariant("reference MDP has no optimal-action structure")
    if instance.variant == "base":
        excluded = (instance.terminal_index, instance.abar_index(instance.a_star))
    else:
        excluded = ()
    report = min_gap(instance.mdp, excluded, tables=tables)
    return GapCheck(report, gap_bound(instance), tuple(excluded))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def instance_to_json_dict(instance: HardInstance) -> dict:
    return {
        "schema_version": 1,
        "variant": instance.variant,
        "a_star": instance.a_star,
        "gamma": instance.gamma,
        "horizon": instance.horizon,
        "reward_mode": instance.reward_mode,
        "state_labels": [list(lab) for lab in instance.state_labels],
        "mdp": instance.mdp.to_json_dict(),
        "features": instance.features.to_json_dict(),
        "theta_star": None if instance.theta_star is None
        else [[float(x) for x in row] for row in instance.theta_star],
        "provenance": {
            "pack_seed": instance.pack.seed,
            "pack": pack_to_json_dict(instance.pack),
        },
    }


def instance_from_json_dict(obj: dict) -> HardInstance:
    pack = pack_from_json_dict(obj["provenance"]["pack"])
    theta = obj["theta_star"]
    return HardInstance(
        variant=obj["variant"],
        pack=pack,
        a_star=obj["a_star"],
        horizon=obj["horizon"],
        mdp=MdpModel.from_json_dict(obj["mdp"]),
        features=FeatureMap.from_json_dict(obj["features"]),
        theta_star=None if theta is None else np.asarray(theta, dtype=float),
        state_labels=tuple(tuple(lab) for lab in obj["state_labels"]),
        reward_mode=obj.get("reward_mode"),
    )


def save_instance(instance: HardInstance, path) -> None:
    save_json(instance_to_json_dict(instance), path)


def load_instance(path) -> HardInstance:
    return instance_from_json_dict(load_json(path))


def build_variant(variant: str, pack: VectorPack, a_star: int | None, horizon: int,
                  reward_mode: str = "bellman_consistent") -> HardInstance:
    if variant == "base":
        return build_base(pack, a_star, horizon)
    if variant == "reference":
        return build_reference(pack, horizon)
    if variant == "gap_complete":
        return build_gap_complete(pack, a_star, horizon, reward_mode)
    if variant == "reachable":
        return build_reachable(pack, a_star, horizon)
    raise UnsupportedVariant(f"unknown variant {variant!r}")
