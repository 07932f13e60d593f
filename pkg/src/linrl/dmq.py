"""Difference-maximization Q-learning with G-optimal-design exploration.

LearnLevel keeps, per level h: estimated coefficients theta_h, an exploratory
policy set Pi_h, and the covariance Sigma_h of the data theta_h was fit on.
A spectral distribution-shift check guards every level above h; a failed
check adds the offending exploratory policy to that level's set, refits it
recursively, and restarts the current check loop.  Regression targets are
on-the-go returns sum_{h' >= h} r_{h'} collected under the level-h design.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .design import StatePolicyDesigns
from .mdp import FeatureMap, MdpModel, OnlineEnv
from .policies import DesignSamplerPolicy, LinearGreedyPolicy, uniform_policy

ASSUMPTION_MODES = ("low_variance", "hypercontractive")


class InvariantViolation(Exception):
    """A structural bound of the algorithm was breached (implementation bug)."""


class SingularCovariance(Exception):
    """Reference covariance not positive definite; lambda_r is misconfigured."""


class BudgetExhausted(Exception):
    """Trajectory budget cannot cover the next collection."""


@dataclass(frozen=True)
class DmqConfig:
    epsilon: float
    assumption_mode: str
    beta: float
    lambda_r: float
    lambda_ridge: float
    N: int
    B: int
    budget: int
    scale_factor: float = 1.0
    eps_design: float = 0.01
    record_regression_data: bool = False

    @property
    def non_theoretical(self) -> bool:
        return self.scale_factor != 1.0

    @property
    def trajectory_cap(self) -> int:
        """H-free part of the accounting bound; multiply by H(1+B) outside."""
        return self.N * self.B + self.N

    def __post_init__(self):
        if not (self.beta > 0 and self.lambda_r > 0 and self.lambda_ridge > 0
                and self.N >= 1 and self.B >= 1 and self.epsilon > 0):
            raise ValueError("all DMQ parameters must be positive")
        if self.assumption_mode not in ASSUMPTION_MODES:
            raise ValueError(f"assumption_mode must be one of {ASSUMPTION_MODES}")
        if self.budget < self.N:
            raise ValueError("budget must cover at least one collection of N trajectories")
        # the theta update inverts (lambda_ridge - lambda_r/|Pi|) I + Sigma;
        # positive definiteness needs lambda_ridge |Pi| > lambda_r for |Pi| >= 1
        if self.lambda_ridge <= self.lambda_r:
            raise ValueError("need lambda_ridge > lambda_r")


def default_config(epsilon: float, d: int, H: int, mode: str = "low_variance",
                   scale_factor: float = 1.0, budget: int | None = None,
                   eps_design: float = 0.01, record_regression_data: bool = False) -> DmqConfig:
    """Parameter settings from the algorithm's analysis.

    low_variance:      beta=8, lambda_ridge=eps^2, lambda_r=eps^6,
                       B=2d log(d/lambda_r), eps2=lambda_r/(2B),
                       N=d log(1/eps2)/eps2^2.
    hypercontractive:  beta=8, lambda_ridge=eps^3, lambda_r=eps^9, same B,
                       N=d/eps2^3.

    scale_factor < 1 shrinks N for desk-scale runs; such configs are flagged
    non-theoretical in the run stats.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie strictly inside (0, 1)")
    if mode == "low_variance":
        lam_ridge, lam_r = epsilon**2, epsilon**6
    elif mode == "hypercontractive":
        lam_ridge, lam_r = epsilon**3, epsilon**9
    else:
        raise ValueError(f"mode must be one of {ASSUMPTION_MODES}")
    B = int(math.ceil(2.0 * d * math.log(d / lam_r)))
    eps2 = lam_r / (2.0 * B)
    if mode == "low_variance":
        n_theory = d * math.log(1.0 / eps2) / eps2**2
    else:
        n_theory = d / eps2**3
    N = max(1, int(math.ceil(n_theory * scale_factor)))
    if budget is None:
        budget = H * (1 + B) * (N * B + N)
    return DmqConfig(epsilon, mode, 8.0, lam_r, lam_ridge, N, B, int(budget),
                     scale_factor, eps_design, record_regression_data)


# ---------------------------------------------------------------------------
# Learner state
# ---------------------------------------------------------------------------


@dataclass
class DmqCounters:
    trajectories: int = 0
    learnlevel_calls: int = 0
    restarts_total: int = 0
    restarts_shift: int = 0
    bootstrap_inits: int = 0
    depth: int = 0


@dataclass
class DmqState:
    thetas: np.ndarray            # (H, d); row h-1 is theta_h
    policy_sets: list             # index 0..H; Pi_0 exists but never grows
    sigmas: list                  # index h-1; None until the level is fit
    counters: DmqCounters = field(default_factory=DmqCounters)
    regression_data: dict = field(default_factory=dict)

    @classmethod
    def fresh(cls, space, dim: int) -> "DmqState":
        H = space.horizon
        unif = uniform_policy(space)
        return cls(
            thetas=np.zeros((H, dim)),
            policy_sets=[[unif] for _ in range(H + 1)],
            sigmas=[None] * H,
        )

    def policy_set_sizes(self) -> list:
        return [len(p) for p in self.policy_sets]


def make_exploratory_policy(base, h: int, thetas: np.ndarray, designs) :
    """The three-phase policy: base before h, design sample at h, greedy on a
    snapshot of the current thetas afterwards.  h = 0 is the pure greedy
    policy."""
    greedy = LinearGreedyPolicy(np.array(thetas, dtype=float, copy=True))
    if h == 0:
        return greedy
    return DesignSamplerPolicy(level=h, designs=designs, below=base, above=greedy)


def shift_check(sigma_ref: np.ndarray, sigma_hat: np.ndarray, beta: float,
                pi_count: int) -> tuple[bool, float]:
    """Spectral-norm distribution-shift statistic.

    statistic = largest eigenvalue of sigma_ref^{-1/2} sigma_hat sigma_ref^{-1/2};
    the flag fires when it exceeds beta * pi_count.  sigma_ref must carry its
    lambda_r/|Pi| ridge and be positive definite.
    """
    try:
        L = np.linalg.cholesky(sigma_ref)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance("reference covariance is not positive definite") from exc
    half = np.linalg.solve(L, sigma_hat)
    W = np.linalg.solve(L, half.T).T
    W = 0.5 * (W + W.T)
    statistic = float(np.linalg.eigvalsh(W)[-1])
    return statistic > beta * pi_count, statistic


# ---------------------------------------------------------------------------
# LearnLevel
# ---------------------------------------------------------------------------


def _collect(env: OnlineEnv, state: DmqState, cfg: DmqConfig, policy, n: int):
    if state.counters.trajectories + n > cfg.budget:
        raise BudgetExhausted(f"{state.counters.trajectories} used, next batch of {n} "
                              f"exceeds budget {cfg.budget}")
    batch = env.rollout(policy, n)
    state.counters.trajectories += n
    return batch


def _level_features(env: OnlineEnv, batch, level: int) -> np.ndarray:
    s = batch.states[:, level - 1]
    j = batch.slots[:, level - 1]
    return env.features.padded[s, j]


def _guard(state: DmqState, cfg: DmqConfig, H: int) -> None:
    cap = H * (1 + cfg.B)
    if state.counters.restarts_total > cap:
        raise InvariantViolation(f"restart count exceeded H(1+B) = {cap}")
    if state.counters.learnlevel_calls > cap + 1:
        raise InvariantViolation(f"LearnLevel call count exceeded H(1+B)+1 = {cap + 1}")
    if state.counters.depth > H + 1:
        raise InvariantViolation("recursion deeper than the level hierarchy")


def learn_level(env: OnlineEnv, state: DmqState, h: int, cfg: DmqConfig,
                designs: StatePolicyDesigns | None = None):
    """One LearnLevel invocation; returns the greedy policy when h = 0.

    The check loop walks pi in Pi_h and h' = H..h+1, drawing N design-probed
    states from the exploratory policy's level-h' distribution.  A fired check
    (or an unfitted Sigma_{h'}, which reads as an infinite statistic) adds the
    exploratory policy to Pi_{h'}, recurses, and restarts this invocation's
    loop with fresh samples.
    """
    if designs is None:
        designs = StatePolicyDesigns(env.features, env.n_actions, cfg.eps_design)
    H = env.horizon
    if not 0 <= h <= H:
        raise ValueError(f"level {h} outside 0..{H}")
    state.counters.learnlevel_calls += 1
    state.counters.depth += 1
    _guard(state, cfg, H)
    try:
        while True:
            clean = True
            for base in list(state.policy_sets[h]):
                tilde = make_exploratory_policy(base, h, state.thetas, designs)
                for hp in range(H, h, -1):
                    probe = DesignSamplerPolicy(level=hp, designs=designs, below=tilde,
                                                above=LinearGreedyPolicy(state.thetas.copy()))
                    batch = _collect(env, state, cfg, probe, cfg.N)
                    F = _level_features(env, batch, hp)
                    sigma_hat = F.T @ F / cfg.N
                    n_pol = len(state.policy_sets[hp])
                    if state.sigmas[hp - 1] is None:
                        flagged, fresh_level = True, True
                    else:
                        flagged, _ = shift_check(state.sigmas[hp - 1], sigma_hat,
                                                 cfg.beta, n_pol)
                        fresh_level = False
                    if flagged:
                        if n_pol + 1 > cfg.B:
                            raise InvariantViolation(
                                f"|Pi_{hp}| would exceed B = {cfg.B}")
                        state.policy_sets[hp].append(tilde)
                        if fresh_level:
                            state.counters.bootstrap_inits += 1
                        else:
                            state.counters.restarts_shift += 1
                        learn_level(env, state, hp, cfg, designs)
                        state.counters.restarts_total += 1
                        _guard(state, cfg, H)
                        clean = False
                        break
                if not clean:
                    break
            if clean:
                break

        if h == 0:
            return LinearGreedyPolicy(state.thetas.copy())

        # regression phase: N trajectories per policy in Pi_h (stratified
        # stand-in for uniform policy draws; same marginal, less variance)
        n_pi = len(state.policy_sets[h])
        feats, targets = [], []
        for base in state.policy_sets[h]:
            tilde = make_exploratory_policy(base, h, state.thetas, designs)
            batch = _collect(env, state, cfg, tilde, cfg.N)
            feats.append(_level_features(env, batch, h))
            targets.append(batch.rewards[:, h - 1:].sum(axis=1))
        F = np.vstack(feats)
        y = np.concatenate(targets)
        total = cfg.N * n_pi
        dim = F.shape[1]
        sigma = (cfg.lambda_r / n_pi) * np.eye(dim) + F.T @ F / total
        w = F.T @ y / total
        lhs = (cfg.lambda_ridge - cfg.lambda_r / n_pi) * np.eye(dim) + sigma
        state.thetas[h - 1] = np.linalg.solve(lhs, w)
        state.sigmas[h - 1] = sigma
        if cfg.record_regression_data:
            state.regression_data[h] = (F, y, n_pi)
        return None
    finally:
        state.counters.depth -= 1


# ---------------------------------------------------------------------------
# Top-level runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DmqStats:
    trajectories: int
    restarts_total: int
    restarts_shift: int
    bootstrap_inits: int
    learnlevel_calls: int
    policy_set_sizes: tuple
    truncated: bool
    non_theoretical: bool
    wall_time: float
    N: int
    B: int
    budget: int

    @property
    def max_policy_set(self) -> int:
        return max(self.policy_set_sizes)

    def to_json_dict(self) -> dict:
        return {
            "trajectories": self.trajectories,
            "restarts_total": self.restarts_total,
            "restarts_shift": self.restarts_shift,
            "bootstrap_inits": self.bootstrap_inits,
            "learnlevel_calls": self.learnlevel_calls,
            "policy_set_sizes": list(self.policy_set_sizes),
            "truncated": self.truncated,
            "non_theoretical": self.non_theoretical,
            "wall_time": self.wall_time,
            "N": self.N,
            "B": self.B,
            "budget": self.budget,
        }


def run_dmq(mdp: MdpModel, features: FeatureMap, config: DmqConfig, seed: int = 0,
            env: OnlineEnv | None = None, state_out: list | None = None):
    """Run LearnLevel from the root level and return (policy, stats).

    Exhausting the trajectory budget aborts the run and returns the current
    greedy policy with the truncation flag set.  An existing OnlineEnv may be
    passed in (it must be fresh); by default one is built from the model.
    """
    if env is None:
        env = OnlineEnv(mdp, features, seed)
    elif env.episodes_completed:
        raise ValueError("run_dmq needs a fresh environment handle")
    designs = StatePolicyDesigns(features, mdp.n_actions, config.eps_design)
    state = DmqState.fresh(env, features.dim)
    if state_out is not None:
        state_out.append(state)
    t0 = time.perf_counter()
    truncated = False
    try:
        policy = learn_level(env, state, 0, config, designs)
    except BudgetExhausted:
        policy = LinearGreedyPolicy(state.thetas.copy())
        truncated = True
    wall = time.perf_counter() - t0
    if env.episodes_completed != state.counters.trajectories:
        raise InvariantViolation("episode accounting drifted from the env counter")
    stats = DmqStats(
        trajectories=state.counters.trajectories,
        restarts_total=state.counters.restarts_total,
        restarts_shift=state.counters.restarts_shift,
        bootstrap_inits=state.counters.bootstrap_inits,
        learnlevel_calls=state.counters.learnlevel_calls,
        policy_set_sizes=tuple(state.policy_set_sizes()),
        truncated=truncated,
        non_theoretical=config.non_theoretical,
        wall_time=wall,
        N=config.N,
        B=config.B,
        budget=config.budget,
    )
    return policy, stats
