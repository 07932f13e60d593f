"""Experiment harness: baseline learners, the generative-model planner,
survival-decay measurements, and the online-vs-generative separation study.

Online learners are handed only an OnlineEnv (reset/step/rollout plus the
feature map); the planner is handed a GenerativeModel.  Final policies are
always scored exactly by the DP oracle, never by rollouts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .design import kw_design
from .dmq import default_config, run_dmq
from .instances import HardInstance, UnsupportedVariant, build_variant, load_instance
from .mdp import GenerativeModel, OnlineEnv, rollout
from .oracle import ValueTables, optimal_values, policy_evaluation
from .policies import LinearGreedyPolicy, compile_policy, eps_greedy_policy, uniform_policy
from .regression import ridge_fit
from .rng import NS_MONTE_CARLO, NS_TRIAL, stream, thread_count

LEARNERS = ("dmq", "uniform_random", "lsvi_greedy", "generative_planner")


class AccessViolation(Exception):
    """A learner demanded an access mode the experiment does not grant."""


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = k / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


# ---------------------------------------------------------------------------
# Baseline learners
# ---------------------------------------------------------------------------


def uniform_random_learner(env: OnlineEnv, budget: int, chunk: int = 50_000):
    """Plays uniformly admissible actions for the whole budget and returns
    the uniform policy."""
    policy = uniform_policy(env)
    left = budget
    while left > 0:
        n = min(chunk, left)
        env.rollout(policy, n)
        left -= n
    return policy


def lsvi_greedy_learner(env: OnlineEnv, budget: int, lam: float = 1e-3,
                        eps: float = 0.1, epochs: int = 10):
    """Backward least-squares value iteration with eps-greedy exploration.

    Each epoch collects a slice of the budget under the current eps-greedy
    policy and refits all levels on the data gathered so far, using greedy
    bootstrap targets r_h + max_a phi(s_{h+1}, a)^T theta_{h+1}.
    """
    H = env.horizon
    feats = env.features
    d = feats.dim
    thetas = np.zeros((H, d))
    batches = []
    per = max(1, budget // max(1, epochs))
    used = 0
    pad_mask = np.zeros(feats.padded.shape[:2], dtype=bool)
    for s in range(env.num_states):
        pad_mask[s, env.n_actions[s]:] = True
    while used < budget:
        n = min(per, budget - used)
        policy = eps_greedy_policy(env, feats, thetas, eps)
        batches.append(env.rollout(policy, n))
        used += n
        states = np.concatenate([b.states for b in batches])
        slots = np.concatenate([b.slots for b in batches])
        rewards = np.concatenate([b.rewards for b in batches])
        for h in range(H, 0, -1):
            X = feats.padded[states[:, h - 1], slots[:, h - 1]]
            if h == H:
                cont = 0.0
            else:
                scores = feats.padded @ thetas[h]
                scores[pad_mask] = -np.inf
                v_next = scores.max(axis=1)
                cont = v_next[states[:, h]]
            thetas[h - 1] = ridge_fit(X, rewards[:, h - 1] + cont, lam).theta
    return LinearGreedyPolicy(thetas)


# ---------------------------------------------------------------------------
# Generative-model planner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlannerStats:
    queries: int
    truncated: bool
    samples_per_level: int
    levels_fit: int


def generative_planner(instance: HardInstance, query_budget: int,
                       per_level_samples: int | None = None, seed: int = 0,
                       gm: GenerativeModel | None = None,
                       ridge_lambda: float = 1e-9, eps_design: float = 0.01):
    """Backward design-based planning through a generative model.

    For each level h = H..1: take the G-optimal design over all observed
    feature vectors, Monte-Carlo the Q-values at the design points (reward
    draw plus a greedy rollout through already-fit levels), ridge-regress the
    level's coefficients, and freeze the greedy policy for that level.  With
    per-point error below half the suboptimality gap this identifies optimal
    actions exactly.
    """
    if instance.variant == "reference":
        raise UnsupportedVariant("the reference MDP has no optimal action to plan for")
    mdp, feats = instance.mdp, instance.features
    gm = gm or GenerativeModel(mdp, feats, seed)
    H, d = mdp.horizon, feats.dim
    thetas = np.zeros((H, d))
    greedy_ids = [None] * (H + 1)  # ActionId per state, for levels already fit

    rows = []
    for s in range(mdp.num_states):
        for j in range(mdp.n_actions[s]):
            if np.linalg.norm(feats.padded[s, j]) > 0:
                rows.append((s, j))
    X_all = np.array([feats.padded[s, j] for s, j in rows])

    cost = {h: 1 + (H - h) for h in range(1, H + 1)}
    if per_level_samples is None:
        per_level_samples = max(1, query_budget // sum(cost.values()))

    pad_mask = np.zeros(feats.padded.shape[:2], dtype=bool)
    for s in range(mdp.num_states):
        pad_mask[s, mdp.n_actions[s]:] = True

    def freeze_level(h):
        scores = feats.padded @ thetas[h - 1]
        scores[pad_mask] = -np.inf
        slots = scores.argmax(axis=1)
        greedy_ids[h] = mdp.actions_padded[np.arange(mdp.num_states), slots]

    truncated = False
    levels_fit = 0
    design = kw_design(X_all, eps_design)
    weights = design.full_weights(len(rows))
    alloc = np.maximum(1, np.round(weights * per_level_samples)).astype(int)
    alloc[weights == 0.0] = 0
    for h in range(H, 0, -1):
        need = int(alloc.sum()) * cost[h]
        if gm.queries_used + need > query_budget:
            truncated = True
            break
        X_parts, y_parts = [], []
        for (s, j), n_i in zip(rows, alloc):
            if n_i == 0:
                continue
            a = int(mdp.actions_padded[s, j])
            r, s2 = gm.query_batch(h, np.full(n_i, s), np.full(n_i, a))
            y = r.copy()
            for level in range(h + 1, H + 1):
                a_next = greedy_ids[level][s2]
                r2, s2 = gm.query_batch(level, s2, a_next)
                y += r2
            X_parts.append(np.repeat(feats.padded[s, j][None, :], n_i, axis=0))
            y_parts.append(y)
        thetas[h - 1] = ridge_fit(np.vstack(X_parts), np.concatenate(y_parts),
                                  ridge_lambda).theta
        freeze_level(h)
        levels_fit += 1
    policy = LinearGreedyPolicy(thetas)
    return policy, PlannerStats(gm.queries_used, truncated, per_level_samples, levels_fit)


# ---------------------------------------------------------------------------
# Survival decay
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalTable:
    name: str
    gamma: float
    episodes: int
    rows: tuple  # dicts: policy, h, p_empirical, p_exact, stderr, cap

    def csv_header(self):
        return ["policy", "h", "p_empirical", "p_exact", "stderr", "cap"]

    def csv_rows(self):
        return [[r["policy"], r["h"], r["p_empirical"], r["p_exact"], r["stderr"], r["cap"]]
                for r in self.rows]

    def json_payload(self):
        return {"kind": "survival", "name": self.name, "gamma": self.gamma,
                "episodes": self.episodes, "rows": list(self.rows)}


def survival_decay(instance: HardInstance, policies: dict, episodes: int,
                   seed: int = 0, name: str = "survival") -> SurvivalTable:
    """Empirical and exact probabilities of being off the terminal state at
    each level, with the (3 gamma)^(h-1) per-step cap for reference."""
    if instance.variant not in ("base", "reference"):
        raise UnsupportedVariant("survival decay is defined on the base/reference family")
    mdp, feats = instance.mdp, instance.features
    f = instance.terminal_index
    g = instance.gamma
    rows = []
    from .oracle import visitation_distribution

    for k, (label, policy) in enumerate(sorted(policies.items())):
        rng = stream(seed, NS_MONTE_CARLO, k)
        batch = rollout(mdp, policy, episodes, rng, feats)
        alive = batch.states != f
        for h in range(1, mdp.horizon + 1):
            cap = (3.0 * g) ** (h - 1)
            try:
                exact = float(1.0 - visitation_distribution(mdp, policy, h, feats)[f])
            except Exception:
                exact = None
            rows.append({
                "policy": label,
                "h": h,
                "p_empirical": float(alive[:, h - 1].mean()),
                "p_exact": exact,
                "stderr": float(math.sqrt(cap * (1.0 - cap) / episodes)),
                "cap": cap,
            })
    return SurvivalTable(name, g, episodes, tuple(rows))


# ---------------------------------------------------------------------------
# Separation study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentSpec:
    instance: dict | str          # builder params or an instance file path
    learner: str
    budget: int
    trials: int
    seed: int = 0
    access: str | None = None     # "online" | "generative"; default by learner
    learner_options: dict = field(default_factory=dict)
    outputs: str | None = None
    name: str = "separation"

    def __post_init__(self):
        if self.learner not in LEARNERS:
            raise ValueError(f"learner must be one of {LEARNERS}")
        if self.budget < 1 or self.trials < 1:
            raise ValueError("budget and trials must be >= 1")

    @property
    def resolved_access(self) -> str:
        if self.access is not None:
            return self.access
        return "generative" if self.learner == "generative_planner" else "online"


@dataclass(frozen=True)
class TrialResult:
    trial: int
    a_star: int
    seed: int
    ever_took_a_star: bool
    episodes: int
    queries: int
    value: float
    v_star: float
    astar_freq_s1: float
    truncated: bool
    exactly_optimal: bool

    @property
    def value_gap(self) -> float:
        return self.v_star - self.value


@dataclass(frozen=True)
class SeparationReport:
    name: str
    learner: str
    budget: int
    seed: int
    trials: tuple
    aggregates: dict

    def csv_header(self):
        return ["trial", "a_star", "seed", "ever_took_a_star", "episodes", "queries",
                "value", "v_star", "value_gap", "astar_freq_s1", "truncated",
                "exactly_optimal"]

    def csv_rows(self):
        return [[t.trial, t.a_star, t.seed, int(t.ever_took_a_star), t.episodes,
                 t.queries, t.value, t.v_star, t.value_gap, t.astar_freq_s1,
                 int(t.truncated), int(t.exactly_optimal)] for t in self.trials]

    def json_payload(self):
        return {
            "kind": "separation",
            "name": self.name,
            "learner": self.learner,
            "budget": self.budget,
            "seed": self.seed,
            "trials": [dict(trial=t.trial, a_star=t.a_star, seed=t.seed,
                            ever_took_a_star=t.ever_took_a_star, episodes=t.episodes,
                            queries=t.queries, value=t.value, v_star=t.v_star,
                            value_gap=t.value_gap, astar_freq_s1=t.astar_freq_s1,
                            truncated=t.truncated, exactly_optimal=t.exactly_optimal)
                       for t in self.trials],
            "aggregates": self.aggregates,
        }


def _resolve_template(spec: ExperimentSpec) -> HardInstance:
    if isinstance(spec.instance, str):
        inst = load_instance(spec.instance)
    else:
        params = dict(spec.instance)
        from .packs import build_pack

        pack = build_pack(params["d"], params["m"], params["gamma"],
                          seed=params.get("pack_seed", 0),
                          retry_budget=params.get("retry_budget", 1_000_000),
                          exact_basis=params.get("exact_basis", False))
        inst = build_variant(params.get("variant", "base"), pack,
                             params.get("a_star", 1), params["horizon"],
                             params.get("reward_mode", "bellman_consistent"))
    if inst.variant == "reference":
        raise UnsupportedVariant("separation needs an instance with an optimal action")
    return inst


def astar_frequency_at_s1(mdp, features, policy, a_star: int) -> float:
    """Exact Pr_{s1 ~ mu}[pi_1(s1) = a*] from the compiled policy."""
    cube = compile_policy(policy, mdp, features)
    freq = 0.0
    for s in np.flatnonzero(mdp.initial_dist > 0):
        try:
            j = mdp.action_slot(int(s), a_star)
        except Exception:
            continue
        freq += float(mdp.initial_dist[s]) * float(cube[0, s, j])
    return freq


def exact_policy_match(mdp, features, policy, tables: ValueTables) -> bool:
    """True iff the policy puts all its mass on the oracle's greedy action at
    every level and state."""
    cube = compile_policy(policy, mdp, features)
    for h in range(mdp.horizon):
        for s in range(mdp.num_states):
            j = mdp.action_slot(s, int(tables.greedy[h, s]))
            if cube[h, s, j] < 1.0 - 1e-12:
                return False
    return True


def _run_trial(spec: ExperimentSpec, template: HardInstance, trial: int) -> TrialResult:
    rng = stream(spec.seed, NS_TRIAL, trial)
    m = template.pack.m
    a_star = int(rng.integers(1, m + 1))
    seed_t = int(rng.integers(0, 2**63 - 1))
    inst = build_variant(template.variant, template.pack, a_star, template.horizon,
                         template.reward_mode or "bellman_consistent")
    mdp, feats = inst.mdp, inst.features
    tables = optimal_values(mdp)
    v_star = float(mdp.initial_dist @ tables.v[0])

    episodes = queries = 0
    truncated = False
    if spec.learner == "generative_planner":
        if spec.resolved_access != "generative":
            raise AccessViolation("generative_planner needs generative access, "
                                  f"spec grants {spec.resolved_access!r}")
        gm = GenerativeModel(mdp, feats, seed_t)
        policy, pstats = generative_planner(inst, spec.budget, seed=seed_t, gm=gm,
                                            **spec.learner_options)
        queries = gm.queries_used
        truncated = pstats.truncated
        ever = bool(gm.actions_queried[a_star])
    else:
        env = OnlineEnv(mdp, feats, seed_t)
        if spec.learner == "uniform_random":
            policy = uniform_random_learner(env, spec.budget, **spec.learner_options)
        elif spec.learner == "lsvi_greedy":
            policy = lsvi_greedy_learner(env, spec.budget, **spec.learner_options)
        else:  # dmq
            opts = dict(spec.learner_options)
            config = opts.pop("config", None)
            if config is None:
                config = default_config(opts.pop("epsilon", 0.1), feats.dim, mdp.horizon,
                                        opts.pop("mode", "low_variance"),
                                        scale_factor=opts.pop("scale_factor", 1.0),
                                        budget=spec.budget)
            policy, dstats = run_dmq(mdp, feats, config, seed_t, env=env)
            truncated = dstats.truncated
        episodes = env.episodes_completed
        ever = bool(env.actions_taken[a_star])
        assert env.samples_consumed == episodes * mdp.horizon

    values = policy_evaluation(mdp, policy, feats)
    return TrialResult(
        trial=trial,
        a_star=a_star,
        seed=seed_t,
        ever_took_a_star=ever,
        episodes=episodes,
        queries=queries,
        value=float(values.value_at_mu),
        v_star=v_star,
        astar_freq_s1=astar_frequency_at_s1(mdp, feats, policy, a_star),
        truncated=truncated,
        exactly_optimal=exact_policy_match(mdp, feats, policy, tables),
    )


def run_separation(spec: ExperimentSpec, gap_threshold: float = 0.05) -> SeparationReport:
    """Run the trial loop with a fresh optimal action and seed per trial.

    Trials are independent with derived seeds; they may execute on a thread
    pool capped by LINRL_THREADS, and results reduce in trial order either way.
    """
    template = _resolve_template(spec)
    workers = min(thread_count(), spec.trials)
    results: list = [None] * spec.trials
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_run_trial, spec, template, t): t
                       for t in range(spec.trials)}
            for fut, t in futures.items():
                results[t] = fut.result()
    else:
        for t in range(spec.trials):
            results[t] = _run_trial(spec, template, t)

    n = spec.trials
    ever = sum(t.ever_took_a_star for t in results)
    failing = sum(t.value_gap >= gap_threshold for t in results)
    exact = sum(t.exactly_optimal for t in results)
    lo, hi = wilson_interval(ever, n)
    aggregates = {
        "trials": n,
        "ever_took_a_star_rate": ever / n,
        "ever_took_a_star_ci95": [lo, hi],
        "mean_value_gap": float(np.mean([t.value_gap for t in results])),
        "min_value_gap": float(np.min([t.value_gap for t in results])),
        "gap_threshold": gap_threshold,
        "frac_gap_at_least_threshold": failing / n,
        "frac_exactly_optimal": exact / n,
        "mean_episodes": float(np.mean([t.episodes for t in results])),
        "mean_queries": float(np.mean([t.queries for t in results])),
    }
    return SeparationReport(spec.name, spec.learner, spec.budget, spec.seed,
                            tuple(results), aggregates)
