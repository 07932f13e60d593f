"""Ridge regression and empirical checks of the low-variance and
hypercontractivity conditions.

The condition estimators certify only the supplied policies or directions:
both assumptions quantify over all policies, which no finite procedure can
test, so reports are labeled per-policy certificates / lower bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .oracle import optimal_values, policy_evaluation, visitation_distribution
from .policies import LinearGreedyPolicy
from .rng import NS_MONTE_CARLO, stream


@dataclass(frozen=True)
class RegressionSample:
    x: np.ndarray
    y: float


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([np.asarray(s.x, dtype=float) for s in samples])
    y = np.array([float(s.y) for s in samples])
    return X, y


@dataclass(frozen=True)
class RidgeResult:
    theta: np.ndarray
    rank: int
    rank_deficient: bool


def ridge_fit(X, y, lam: float) -> RidgeResult:
    """theta = (sum x x^T + N lam I)^{-1} sum x y.

    lam = 0 on a rank-deficient Gram matrix falls back to the minimum-norm
    solution and flags the rank.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n == 0:
        raise ValueError("ridge_fit needs at least one sample")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    if lam == 0.0:
        theta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        return RidgeResult(theta, int(rank), int(rank) < d)
    gram = X.T @ X + n * lam * np.eye(d)
    theta = np.linalg.solve(gram, X.T @ y)
    return RidgeResult(theta, d, False)


def epsilon_n(N: int, d: int, delta: float) -> float:
    """Statistical rate implied by N = d log(d/delta) / eps^2 (unit constant)."""
    return float(np.sqrt(d * np.log(d / delta) / N))


# ---------------------------------------------------------------------------
# Condition estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionReport:
    estimate: float | None
    samples_used: int
    breakdown: tuple
    lower_bound_only: bool = False
    undefined: bool = False
    skipped: tuple = ()


def estimate_c_var(mdp, policy=None, *, features=None, thetas=None, oracle=None) -> ConditionReport:
    """Exact per-policy low-variance ratio from the DP oracle.

    For each level h the ratio E|V^pi - V*|^2 / (E|V^pi - V*|)^2 is computed
    under the policy's exact visitation distribution; the estimate is the max
    over levels where the denominator is nonzero.  A policy optimal on its
    visited support gets the distinguished undefined (vacuously satisfied)
    result.  No sampling is involved.
    """
    if policy is None:
        if thetas is None:
            raise ValueError("give a policy or per-level thetas")
        policy = LinearGreedyPolicy(np.asarray(thetas, dtype=float))
    tables = oracle if oracle is not None else optimal_values(mdp)
    values = policy_evaluation(mdp, policy, features)
    rows = []
    ratios = []
    for h in range(1, mdp.horizon + 1):
        dist = visitation_distribution(mdp, policy, h, features)
        dev = np.abs(values.v[h - 1] - tables.v[h - 1])
        mean_dev = float(dist @ dev)
        mean_sq = float(dist @ dev**2)
        defined = mean_dev**2 > 1e-24
        ratio = mean_sq / mean_dev**2 if defined else None
        rows.append({"level": h, "ratio": ratio, "mean_dev": mean_dev,
                     "mean_sq_dev": mean_sq, "defined": defined})
        if defined:
            ratios.append(ratio)
    return ConditionReport(
        estimate=max(ratios) if ratios else None,
        samples_used=0,
        breakdown=tuple(rows),
        undefined=not ratios,
    )


def estimate_c_hyper(feature_samples, directions=None, mode: str = "sampled") -> ConditionReport:
    """Empirical 4th/2nd-moment ratio sup over the supplied directions.

    "spectral" additionally scans eigenvectors of the empirical second-moment
    matrix and of the fourth-moment contraction E[|x|^2 x x^T].  Exact
    maximization of the quartic ratio is nonconvex, so the result is a lower
    bound on the true constant and is labeled as such.
    """
    X = np.atleast_2d(np.asarray(feature_samples, dtype=float))
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    if mode not in ("sampled", "spectral"):
        raise ValueError("mode must be 'sampled' or 'spectral'")
    cand = [np.asarray(v, dtype=float) for v in (directions or [])]
    if mode == "spectral":
        m2 = X.T @ X / n
        sq = np.einsum("ij,ij->i", X, X)
        m4c = np.einsum("i,ij,ik->jk", sq, X, X) / n
        for mat in (m2, m4c):
            _, vecs = np.linalg.eigh(mat)
            cand.extend(vecs.T)
    if not cand:
        raise ValueError("no directions to evaluate")
    scale = float(np.mean(np.einsum("ij,ij->i", X, X))) or 1.0
    rows = []
    skipped = []
    ratios = []
    for idx, v in enumerate(cand):
        proj = X @ v
        m2v = float(np.mean(proj**2))
        if m2v <= 1e-18 * scale:
            skipped.append(idx)
            rows.append({"direction": idx, "ratio": None, "m2": m2v, "skipped": True})
            continue
        m4v = float(np.mean(proj**4))
        ratio = m4v / m2v**2
        ratios.append(ratio)
        rows.append({"direction": idx, "ratio": ratio, "m2": m2v, "skipped": False})
    return ConditionReport(
        estimate=max(ratios) if ratios else None,
        samples_used=n,
        breakdown=tuple(rows),
        lower_bound_only=True,
        undefined=not ratios,
        skipped=tuple(skipped),
    )


# ---------------------------------------------------------------------------
# Risk-bound Monte Carlo checks
# ---------------------------------------------------------------------------


class GaussianCovariates:
    """Standard Gaussian covariates; hypercontractive with constant 3."""

    c_hyper = 3.0

    def __init__(self, d: int, cov=None):
        self.d = d
        self.cov = np.eye(d) if cov is None else np.asarray(cov, dtype=float)
        self._chol = np.linalg.cholesky(self.cov)

    def sample(self, rng, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.d)) @ self._chol.T

    @property
    def second_moment(self) -> np.ndarray:
        return self.cov


@dataclass(frozen=True)
class RiskCheckRow:
    seed: int
    risk: float
    bound: float

    @property
    def below(self) -> bool:
        return self.risk <= self.bound


@dataclass(frozen=True)
class RiskCheckReport:
    rows: tuple
    eps_n: float
    params: dict = field(default_factory=dict)

    @property
    def n_below(self) -> int:
        return sum(r.below for r in self.rows)

    @property
    def all_below(self) -> bool:
        return self.n_below == len(self.rows)


def _sparse_bias(rng, n: int, eta: float) -> np.ndarray:
    b = np.zeros(n)
    hit = rng.random(n) < eta
    b[hit] = rng.choice([-1.0, 1.0], size=int(hit.sum()))
    return b


def _one_risk_draw(dist, rng, N, eta, lam, bias_direction=None):
    d = dist.d
    theta = rng.standard_normal(d)
    theta /= np.linalg.norm(theta)
    X = dist.sample(rng, N)
    if bias_direction is None:
        b = _sparse_bias(rng, N, eta)
    else:
        # adversarial: put the sparse bias where it tilts the fit along one axis
        proj = X @ np.asarray(bias_direction, dtype=float)
        k = max(0, int(round(eta * N)))
        b = np.zeros(N)
        if k:
            worst = np.argsort(np.abs(proj))[-k:]
            b[worst] = -np.sign(proj[worst])
    xi = rng.uniform(-1.0, 1.0, N)
    y = X @ theta + b + xi
    fit = ridge_fit(X, y, lam)
    err = fit.theta - theta
    return float(err @ dist.second_moment @ err)


def ridge_risk_check(d: int, N: int, eta: float, lam: float, dist=None,
                     seeds: int = 100, delta: float = 0.01, base_seed: int = 0,
                     bias_direction=None) -> RiskCheckReport:
    """Monte Carlo check of the plain ridge risk bound 4 (eta + eps_N + lam).

    Bias is sparse +-1 with hit probability eta, so E[b^2] = eta; noise is
    uniform on [-1, 1]; the excess risk is evaluated exactly through the
    covariate second moment.
    """
    dist = dist or GaussianCovariates(d)
    eps = epsilon_n(N, d, delta)
    bound = 4.0 * (eta + eps + lam)
    rows = []
    for i in range(seeds):
        rng = stream(base_seed, NS_MONTE_CARLO, i)
        risk = _one_risk_draw(dist, rng, N, eta, lam, bias_direction)
        rows.append(RiskCheckRow(i, risk, bound))
    return RiskCheckReport(tuple(rows), eps, {"d": d, "N": N, "eta": eta, "lam": lam,
                                              "delta": delta, "kind": "plain"})


def sparse_bias_risk_check(d: int, N: int, eta: float, lam: float, dist=None,
                           seeds: int = 50, delta: float = 0.01, base_seed: int = 0,
                           bias_direction=None) -> RiskCheckReport:
    """Monte Carlo check of the hypercontractive sparse-bias ridge bound
    8 (eps_N + lam) + 288 eta^1.5 C^2.5 d^4.5 / sqrt(delta)."""
    dist = dist or GaussianCovariates(d)
    eps = epsilon_n(N, d, delta)
    c = dist.c_hyper
    bound = 8.0 * (eps + lam) + 288.0 * eta**1.5 * c**2.5 * d**4.5 / np.sqrt(delta)
    rows = []
    for i in range(seeds):
        rng = stream(base_seed, NS_MONTE_CARLO, i)
        risk = _one_risk_draw(dist, rng, N, eta, lam, bias_direction)
        rows.append(RiskCheckRow(i, risk, float(bound)))
    return RiskCheckReport(tuple(rows), eps, {"d": d, "N": N, "eta": eta, "lam": lam,
                                              "delta": delta, "kind": "hypercontractive"})
