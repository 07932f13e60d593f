"""Packs of near-orthogonal unit vectors.

The hard-instance construction needs m unit vectors in R^d whose pairwise
inner products stay below a bound gamma.  The builder uses greedy rejection
sampling on the sphere and certifies the result by an exhaustive pair check;
feasibility is treated empirically (the existence bound m <= exp(gamma^2 d / 8)
is far below what random packs achieve at desk scale).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import load_json, save_json
from .rng import NS_BUILD, stream

NORM_TOL = 1e-12


class PackInfeasible(Exception):
    """Retry budget exhausted before reaching the requested pack size."""

    def __init__(self, requested: int, achieved: int, attempts: int):
        super().__init__(
            f"accepted {achieved}/{requested} vectors after {attempts} candidate draws")
        self.requested = requested
        self.achieved = achieved
        self.attempts = attempts


@dataclass(frozen=True)
class VectorPack:
    d: int
    m: int
    gamma: float
    vectors: np.ndarray      # (m, d), unit rows
    max_abs_inner: float     # certified max over pairs
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "vectors", np.asarray(self.vectors, dtype=float))
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.abs(norms - 1.0).max() > NORM_TOL:
            raise ValueError("pack vectors must be unit norm")

    def gram(self) -> np.ndarray:
        return self.vectors @ self.vectors.T


@dataclass(frozen=True)
class PackReport:
    max_abs_inner: float
    worst_pair: tuple
    max_norm_deviation: float


def build_pack(d: int, m: int, gamma: float, seed: int = 0,
               retry_budget: int = 1_000_000, exact_basis: bool = False) -> VectorPack:
    """Greedy randomized pack construction.

    Candidates are uniform on the sphere (normalized Gaussians); a candidate
    is accepted when its inner products with all accepted vectors stay within
    gamma.  With exact_basis=True (requires m <= d) the standard basis is
    returned immediately.
    """
    if d < 1 or m < 1:
        raise ValueError("d and m must be positive")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if exact_basis:
        if m > d:
            raise ValueError("exact_basis needs m <= d")
        vectors = np.eye(d)[:m]
        return VectorPack(d, m, gamma, vectors, 0.0, seed)

    rng = stream(seed, NS_BUILD)
    accepted = np.empty((m, d))
    count = 0
    attempts = 0
    block = 8192
    while count < m:
        if attempts >= retry_budget:
            raise PackInfeasible(m, count, attempts)
        k = min(block, retry_budget - attempts)
        attempts += k
        cands = rng.standard_normal((k, d))
        norms = np.linalg.norm(cands, axis=1)
        good = norms > 1e-12
        cands = cands[good] / norms[good, None]
        # cheap vectorized prefilter against the vectors accepted so far;
        # survivors are rechecked one by one as the set grows inside the block
        if count:
            viable = np.flatnonzero(np.abs(cands @ accepted[:count].T).max(axis=1) <= gamma)
        else:
            viable = np.arange(len(cands))
        base = count
        for i in viable:
            cand = cands[i]
            if count > base and np.abs(accepted[base:count] @ cand).max() > gamma:
                continue
            accepted[count] = cand
            count += 1
            if count == m:
                break
    inner = np.abs(accepted @ accepted.T)
    np.fill_diagonal(inner, 0.0)
    return VectorPack(d, m, gamma, accepted, float(inner.max()), seed)


def verify_pack(pack: VectorPack) -> PackReport:
    """Exhaustive O(m^2) recomputation of the pack certificate."""
    inner = np.abs(pack.gram())
    np.fill_diagonal(inner, 0.0)
    i, j = np.unravel_index(inner.argmax(), inner.shape)
    worst = (int(min(i, j)), int(max(i, j))) if pack.m > 1 else (0, 0)
    dev = float(np.abs(np.linalg.norm(pack.vectors, axis=1) - 1.0).max())
    return PackReport(float(inner.max()), worst, dev)


def pack_to_json_dict(pack: VectorPack) -> dict:
    return {
        "d": pack.d,
        "m": pack.m,
        "gamma": pack.gamma,
        "vectors": [[float(x) for x in row] for row in pack.vectors],
        "max_abs_inner": pack.max_abs_inner,
        "seed": pack.seed,
    }


def pack_from_json_dict(obj: dict) -> VectorPack:
    return VectorPack(obj["d"], obj["m"], obj["gamma"], np.asarray(obj["vectors"]),
                      obj["max_abs_inner"], obj["seed"])


def save_pack(pack: VectorPack, path) -> None:
    save_json(pack_to_json_dict(pack), path)


def load_pack(path) -> VectorPack:
    return pack_from_json_dict(load_json(path))
