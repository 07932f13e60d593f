"""G-optimal designs over finite vector sets.

The solver runs Frank-Wolfe ascent on log det of the design covariance
(D-optimality, equivalent to G-optimality by Kiefer-Wolfowitz) inside the
span of the input set, with a greedy volume-maximizing start.  Certificates
are recomputed by an exhaustive leverage scan, independent of the solver's
internal state.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

RANK_RCOND = 1e-10
DEFAULT_EPS = 0.01


class DegenerateInput(Exception):
    """No nonzero vectors to design over (e.g. the terminal state's features)."""


@dataclass(frozen=True)
class DesignDistribution:
    support: np.ndarray      # indices into the input set
    weights: np.ndarray      # probabilities over support
    covariance: np.ndarray   # sum_i w_i x_i x_i^T in the ambient space
    g_value: float           # certified max leverage over the whole input set
    effective_dim: int       # numerical rank of the input span
    certified: bool
    iterations: int

    def full_weights(self, n: int) -> np.ndarray:
        w = np.zeros(n)
        w[self.support] = self.weights
        return w


def span_leverages(X: np.ndarray, covariance: np.ndarray) -> np.ndarray:
    """Span-restricted leverages x_i^T cov^+ x_i via eigendecomposition."""
    evals, evecs = np.linalg.eigh(covariance)
    keep = evals > RANK_RCOND * evals[-1]
    Z = X @ evecs[:, keep]
    return (Z * Z / evals[keep]).sum(axis=1)


def max_leverage(X: np.ndarray, covariance: np.ndarray) -> tuple[float, int]:
    """Exhaustive span-restricted leverage scan: max_i x_i^T cov^+ x_i."""
    lev = span_leverages(np.atleast_2d(X), covariance)
    i = int(lev.argmax())
    return float(lev[i]), i


def _greedy_volume_start(Z: np.ndarray, k: int) -> list[int]:
    """Kumar-Yildirim style start: pick vectors maximizing residual volume."""
    chosen: list[int] = []
    R = Z.copy()
    for _ in range(k):
        norms = np.linalg.norm(R, axis=1)
        i = int(norms.argmax())
        if norms[i] <= 0.0:
            break
        chosen.append(i)
        q = R[i] / norms[i]
        R = R - np.outer(R @ q, q)
    return chosen


def kw_design(X, eps_design: float = DEFAULT_EPS, max_iter: int = 100_000) -> DesignDistribution:
    """Frank-Wolfe G-optimal design over the rows of X.

    Stops once the max leverage is within (1 + eps_design) of the effective
    dimension, using the closed-form step (g - k) / (k (g - 1)); a run that
    exhausts max_iter returns uncertified (caller decides what to do).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d = X.shape
    if n == 0 or not np.any(np.linalg.norm(X, axis=1) > 0.0):
        raise DegenerateInput("design input has no nonzero vectors")

    _, sing, Vt = np.linalg.svd(X, full_matrices=False)
    k = int((sing > RANK_RCOND * sing[0]).sum())
    basis = Vt[:k]
    Z = X @ basis.T

    w = np.zeros(n)
    start = _greedy_volume_start(Z, k)
    w[start] = 1.0 / len(start)

    logdet_prev = None
    iters = 0
    certified = False
    for iters in range(1, max_iter + 1):
        sigma_z = Z.T @ (w[:, None] * Z)
        if __debug__:
            logdet = np.linalg.slogdet(sigma_z)[1]
            assert logdet_prev is None or logdet >= logdet_prev - 1e-9, \
                "Frank-Wolfe objective decreased"
            logdet_prev = logdet
        lev = np.einsum("ij,ij->i", Z, np.linalg.solve(sigma_z, Z.T).T)
        i_star = int(lev.argmax())
        g = float(lev[i_star])
        if g <= k * (1.0 + eps_design):
            certified = True
            break
        alpha = (g - k) / (k * (g - 1.0))
        w *= 1.0 - alpha
        w[i_star] += alpha

    keep = np.flatnonzero(w > 1e-15)
    weights = w[keep]
    total = weights.sum()
    # renormalize only when pruning or drift actually moved mass, so exact
    # symmetric designs (uniform over an orthonormal basis) stay bit-exact
    if len(keep) < n or abs(total - 1.0) > 1e-13:
        weights = weights / total
    covariance = np.einsum("i,ij,ik->jk", weights, X[keep], X[keep])
    g_value, _ = max_leverage(X, covariance)
    certified = certified and g_value <= k * (1.0 + eps_design) * (1.0 + 1e-9)
    return DesignDistribution(keep, weights, covariance, g_value, k, certified, iters)


def state_design(features_at_s, eps_design: float = DEFAULT_EPS,
                 max_iter: int = 100_000) -> DesignDistribution:
    """G-optimal design over one state's admissible-action features."""
    return kw_design(features_at_s, eps_design, max_iter)


class StatePolicyDesigns:
    """Per-state design cache with a uniform fallback at degenerate states.

    Lookups are lock-free; inserts are serialized, so concurrent readers over
    a shared feature map are safe.
    """

    def __init__(self, features, n_actions, eps_design: float = DEFAULT_EPS):
        self.features = features
        self.n_actions = np.asarray(n_actions, dtype=np.int64)
        self.eps_design = eps_design
        self._cache: dict[int, object] = {}
        self._lock = threading.Lock()

    def design(self, s: int) -> DesignDistribution:
        hit = self._cache.get(s)
        if hit is None:
            with self._lock:
                hit = self._cache.get(s)
                if hit is None:
                    try:
                        hit = state_design(self.features.features_at(s), self.eps_design)
                    except DegenerateInput as exc:
                        hit = exc
                    self._cache[s] = hit
        if isinstance(hit, DegenerateInput):
            raise hit
        return hit

    def action_weights(self, s: int) -> np.ndarray:
        """Sampling weights over the state's action slots; uniform when the
        state's features are all zero (exploration there is informationless)."""
        n = int(self.n_actions[s])
        try:
            dist = self.design(s)
        except DegenerateInput:
            return np.full(n, 1.0 / n)
        return dist.full_weights(n)


@dataclass(frozen=True)
class AvgDesignReport:
    value: float
    bound: float
    excluded_mass: float
    excluded_states: tuple
    dim: int

    @property
    def passed(self) -> bool:
        return self.value <= self.bound + 1e-9


def avg_design_bound(mdp, features, state_dist, designs: StatePolicyDesigns) -> AvgDesignReport:
    """Average worst-case leverage under per-state designs.

    Computes Sigma = E_{s~nu} Sigma_s over states with nondegenerate designs
    (mass on degenerate states is excluded and reported) and returns
    E_{s~nu} max_a phi(s,a)^T Sigma^+ phi(s,a), checked against dim^2.
    """
    nu = np.asarray(state_dist, dtype=float)
    if nu.shape != (mdp.num_states,) or (nu < 0).any() or abs(nu.sum() - 1.0) > 1e-9:
        raise ValueError("state_dist must be a distribution over states")
    d = features.dim
    included = []
    excluded = []
    for s in np.flatnonzero(nu > 0):
        try:
            dist = designs.design(int(s))
        except DegenerateInput:
            excluded.append(int(s))
            continue
        included.append((int(s), dist))
    excluded_mass = float(nu[excluded].sum()) if excluded else 0.0
    if not included:
        return AvgDesignReport(0.0, float(d * d), excluded_mass, tuple(excluded), d)
    mass = 1.0 - excluded_mass
    sigma = np.zeros((d, d))
    for s, dist in included:
        sigma += (nu[s] / mass) * dist.covariance
    value = 0.0
    for s, _ in included:
        lev = span_leverages(features.features_at(s), sigma)
        value += (nu[s] / mass) * float(lev.max())
    return AvgDesignReport(value, float(d * d), excluded_mass, tuple(excluded), d)
