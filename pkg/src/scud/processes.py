"""Structured forward processes: uniform, masking, Gaussian band, substitution
(BLOSUM-style) and the sparse nearest-neighbour + rank-one mixture.

All constructors return either a ``GeneratorMatrix``/``EventProcess`` or, for
the sparse graph, a ``SparseRankOneKernel`` at unit event rate; combine with
``build_event_process`` / ``event_process_from_kernel`` to pick the
conditioning level gamma.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import scipy.sparse as sp

from .config import TOLERANCES
from .ctmc_core import (
    DenseKernel,
    EventProcess,
    GeneratorMatrix,
    SparseRankOneKernel,
)

DEFAULT_BANDWIDTH = 200.0
DEFAULT_MIX_WEIGHT = 0.4
DEFAULT_TEMPERATURE = 0.3


def build_uniform(B: int) -> GeneratorMatrix:
    """Constant rate 1/B of moving to every other state."""
    if B < 2:
        raise ValueError(f"need at least 2 states, got {B}")
    L = np.full((B, B), 1.0 / B)
    np.fill_diagonal(L, -(B - 1) / B)
    return GeneratorMatrix(L)


def build_masking(B: int) -> GeneratorMatrix:
    """Unit rate of absorption into the mask state (index B - 1)."""
    if B < 2:
        raise ValueError(f"need at least 2 states, got {B}")
    L = np.zeros((B, B))
    mask = B - 1
    for b in range(B - 1):
        L[b, mask] = 1.0
        L[b, b] = -1.0
    return GeneratorMatrix(L)


def build_gaussian_band(
    B: int, bandwidth: float = DEFAULT_BANDWIDTH, relative_distance: bool = True
) -> GeneratorMatrix:
    """Banded generator favouring transitions between nearby token values.

    With ``relative_distance`` the off-diagonal rate is
    ``exp(-bandwidth ((i - j)/B)^2)``, which keeps the effective band width a
    fixed fraction of the vocabulary; the alternative form divides the squared
    distance by B instead.
    """
    if B < 2:
        raise ValueError(f"need at least 2 states, got {B}")
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    idx = np.arange(B)
    diff = idx[:, None] - idx[None, :]
    if relative_distance:
        L = np.exp(-bandwidth * (diff / B) ** 2)
    else:
        L = np.exp(-bandwidth * diff.astype(np.float64) ** 2 / B)
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    return GeneratorMatrix(L)


def build_blosum(
    pair_probs: np.ndarray,
    marginals: Optional[np.ndarray] = None,
    canonical_mask: Optional[np.ndarray] = None,
) -> EventProcess:
    """Substitution process from a symmetric pair-probability table.

    Canonical states i move to canonical j with the conditional probability
    P(j | i) = P_ij / P_i; non-canonical states (padding and the like) jump
    straight to a canonical state drawn from the marginals.  The generator is
    L = K - I, so events fire at unit rate.
    """
    P = np.asarray(pair_probs, dtype=np.float64)
    nc = P.shape[0]
    if P.ndim != 2 or P.shape[1] != nc:
        raise ValueError(f"pair-probability table must be square, got {P.shape}")
    if np.abs(P - P.T).max() > 1e-9:
        raise ValueError("pair-probability table must be symmetric within 1e-9")
    if abs(P.sum() - 1.0) > 1e-9:
        raise ValueError("pair probabilities must sum to 1 within 1e-9")
    if P.min() <= 0:
        raise ValueError("pair probabilities must be strictly positive")
    if marginals is None:
        marginals = P.sum(axis=1)
    marginals = np.asarray(marginals, dtype=np.float64)
    if np.abs(marginals - P.sum(axis=1)).max() > 1e-9:
        raise ValueError("marginals are inconsistent with the pair table")
    if canonical_mask is None:
        canonical_mask = np.ones(nc, dtype=bool)
    canonical_mask = np.asarray(canonical_mask, dtype=bool)
    B = canonical_mask.shape[0]
    canon = np.flatnonzero(canonical_mask)
    if len(canon) != nc:
        raise ValueError(
            f"canonical mask selects {len(canon)} states but the table has {nc}"
        )
    K = np.zeros((B, B))
    cond = P / marginals[:, None]
    K[np.ix_(canon, canon)] = cond
    non_canon = np.flatnonzero(~canonical_mask)
    for i in non_canon:
        K[i, canon] = marginals
    kernel = DenseKernel(K)
    L = GeneratorMatrix(K - np.eye(B))
    r_star = L.max_exit_rate()
    return EventProcess(gamma=r_star, rate=1.0, kernel=kernel, generator=L)


def build_sparse_graph(
    similarities: np.ndarray,
    k: int,
    temperature: float = DEFAULT_TEMPERATURE,
    mix_weight: float = DEFAULT_MIX_WEIGHT,
    frequencies: Optional[np.ndarray] = None,
    n_states: Optional[int] = None,
) -> SparseRankOneKernel:
    """Nearest-neighbour graph kernel stored as sparse + rank-one.

    ``similarities`` scores the frequent-state subset (the first
    ``len(similarities)`` token ids); each frequent state keeps its ``k``
    nearest neighbours with rate ``exp(sim / temperature)``, rows scaled to
    unit exit rate.  Every state additionally jumps to a random frequent
    state drawn from ``frequencies`` with weight ``mix_weight``; infrequent
    states move only that way.  The combined generator is rescaled so its
    largest exit rate is 1 and returned as the kernel K = L + I.
    """
    sims = np.asarray(similarities, dtype=np.float64)
    nf = sims.shape[0]
    if sims.ndim != 2 or sims.shape[1] != nf:
        raise ValueError(f"similarity matrix must be square, got {sims.shape}")
    if n_states is None:
        n_states = nf
    if n_states < nf:
        raise ValueError("n_states smaller than the frequent subset")
    if not (1 <= k <= nf - 1):
        raise ValueError(f"k must lie in [1, {nf - 1}], got {k}")
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if mix_weight < 0:
        raise ValueError("mix weight must be non-negative")
    if frequencies is None:
        frequencies = np.full(nf, 1.0 / nf)
    p = np.asarray(frequencies, dtype=np.float64)
    if p.shape != (nf,) or p.min() < 0 or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("frequencies must be a probability vector over the subset")

    rows, cols, vals = [], [], []
    order = np.argsort(-sims, axis=1)
    for i in range(nf):
        neighbours = [j for j in order[i] if j != i][:k]
        w = np.exp(sims[i, neighbours] / temperature)
        w = w / w.sum()  # unit exit rate per row
        rows.extend([i] * len(neighbours))
        cols.extend(neighbours)
        vals.extend(w)
    graph = sp.csr_matrix(
        (np.array(vals), (np.array(rows), np.array(cols))),
        shape=(n_states, n_states),
    )

    if mix_weight == 0.0 and nf < n_states:
        raise ValueError("mix weight 0 leaves infrequent states frozen")
    p_full = np.zeros(n_states)
    p_full[:nf] = p

    # Exit rate of row i is 1(frequent) + mix_weight (1 - p_i): the rank-one
    # jump can land back on i, which does not count as leaving.  Rescale so
    # the largest exit rate (most negative generator diagonal) is exactly 1.
    gross_rates = np.full(n_states, mix_weight)
    gross_rates[:nf] += 1.0
    scale = 1.0 / (gross_rates - mix_weight * p_full).max()

    rank_one = scale * mix_weight * p_full  # applies to every row of K
    sparse_part = sp.lil_matrix((n_states, n_states))
    sparse_part[:nf, :] = scale * graph[:nf, :]
    # Diagonal of K minus the rank-one contribution is constant per row class.
    sparse_part.setdiag(sparse_part.diagonal() + 1.0 - scale * gross_rates)
    kernel = SparseRankOneKernel(sp.csr_matrix(sparse_part), rank_one)
    return kernel


def ring_similarity(n: int) -> np.ndarray:
    """Synthetic similarity over n states arranged on a ring (for tests)."""
    idx = np.arange(n)
    d = np.minimum(np.abs(idx[:, None] - idx[None, :]), n - np.abs(idx[:, None] - idx[None, :]))
    return np.cos(2.0 * np.pi * d / n)


def synthetic_pair_probs(n: int = 8, seed: int = 7, concentration: float = 3.0) -> np.ndarray:
    """Deterministic symmetric pair-probability table with a diagonal bias."""
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.2, 1.0, size=(n, n))
    raw = 0.5 * (raw + raw.T)
    raw[np.diag_indices(n)] += concentration
    return raw / raw.sum()
