"""Continuous-time Markov chain core: generators, event kernels, simulation.

A forward process is described by an infinitesimal generator ``L`` (rows sum
to zero, off-diagonals are transition rates).  Any such process can be run as
a constant-rate stream of latent *events*: events fire at rate ``r`` and move
the state by one draw from a row-stochastic kernel ``K = L/r + I``; a row may
keep the state where it is, so not every event is a visible transition.  The
conditioning parameter ``gamma`` in (0, 1] selects ``r = r*/gamma`` where
``r*`` is the slowest admissible event rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .config import TOLERANCES
from .rand import categorical_from_uniform, exponential_from_uniform, poisson_window


@dataclass(frozen=True)
class GeneratorMatrix:
    """B x B infinitesimal generator of a CTMC (rates per unit process time)."""

    entries: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"generator must be square, got shape {a.shape}")
        off = a.copy()
        np.fill_diagonal(off, 0.0)
        if off.min() < -TOLERANCES.kernel_entry_tol:
            raise ValueError(
                f"generator has negative off-diagonal entry {off.min():.3e}"
            )
        row_sums = a.sum(axis=1)
        worst = np.abs(row_sums).max()
        if worst > TOLERANCES.row_sum_tol:
            raise ValueError(f"generator rows must sum to 0, worst residual {worst:.3e}")
        a = a.copy()
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def max_exit_rate(self) -> float:
        """r* = max_b of the exit rate -L[b, b]."""
        return float(np.max(-np.diag(self.entries)))


def _as_prob_rows(matrix: np.ndarray, what: str) -> np.ndarray:
    tol = TOLERANCES
    if matrix.min() < -tol.kernel_entry_tol or matrix.max() > 1.0 + tol.kernel_entry_tol:
        raise ValueError(f"{what} entries outside [0, 1]: min {matrix.min():.3e} max {matrix.max():.3e}")
    worst = np.abs(matrix.sum(axis=1) - 1.0).max()
    if worst > tol.row_sum_tol:
        raise ValueError(f"{what} rows must sum to 1, worst residual {worst:.3e}")
    return matrix


class DenseKernel:
    """Dense row-stochastic event kernel with precomputed spectral form.

    Symmetric kernels diagonalize directly; reversible kernels are symmetrized
    by a similarity transform through the square root of the stationary law;
    anything else (e.g. the absorbing masking kernel) falls back to cached
    repeated multiplication.
    """

    def __init__(self, matrix: np.ndarray):
        m = np.ascontiguousarray(np.asarray(matrix, dtype=np.float64))
        self.matrix = _as_prob_rows(m, "kernel")
        self.size = m.shape[0]
        self._power_cache: dict[int, np.ndarray] = {}
        self._decompose()
        self.matrix.setflags(write=False)

    # -- spectral setup ----------------------------------------------------
    def _decompose(self):
        m = self.matrix
        tol = 1e-10 * max(1.0, np.abs(m).max())
        self.mode = "repeat"
        self._U = self._lam = self._dl = self._dr = None
        if np.abs(m - m.T).max() <= tol:
            lam, U = np.linalg.eigh(m)
            self.mode = "sym"
            self._lam, self._U = lam, U
            return
        pi = _stationary_of_kernel(m)
        if pi is not None and pi.min() > 1e-12:
            flux = pi[:, None] * m
            if np.abs(flux - flux.T).max() <= 1e-10 * max(1.0, flux.max()):
                d = np.sqrt(pi)
                sym = (m * d[:, None]) / d[None, :]
                sym = 0.5 * (sym + sym.T)
                lam, U = np.linalg.eigh(sym)
                self.mode = "rev"
                self._lam, self._U = lam, U
                self._dl, self._dr = 1.0 / d, d  # K^s = diag(dl) U lam^s U^T diag(dr)
                return

    # -- basic applications -------------------------------------------------
    def apply(self, v: np.ndarray) -> np.ndarray:
        """K v (column action)."""
        return self.matrix @ v

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        """K^T v; maps distributions forward by one event."""
        return self.matrix.T @ v

    def row(self, i: int) -> np.ndarray:
        return self.matrix[i]

    def power_matrix(self, s: int) -> np.ndarray:
        """Dense K^s (entries clipped at 0: spectral round-off can undershoot)."""
        if s < 0:
            raise ValueError("kernel power must be >= 0")
        if s == 0:
            return np.eye(self.size)
        if s == 1:
            return np.array(self.matrix)
        if self.mode in ("sym", "rev"):
            lam_s = self._lam**s
            core = (self._U * lam_s[None, :]) @ self._U.T
            if self.mode == "rev":
                core = self._dl[:, None] * core * self._dr[None, :]
            return np.maximum(core, 0.0)
        return self._power_repeat(s)

    def _power_repeat(self, s: int) -> np.ndarray:
        if s in self._power_cache:
            return self._power_cache[s]
        if s == 1:
            out = self.matrix
        elif s % 2 == 0:
            h = self._power_repeat(s // 2)
            out = h @ h
        else:
            out = self._power_repeat(s - 1) @ self.matrix
        if len(self._power_cache) < 4096:
            self._power_cache[s] = out
        return out

    def power_apply(self, s: int, v: np.ndarray, transpose: bool = False) -> np.ndarray:
        """K^s v, or (K^T)^s v when ``transpose``."""
        if s < 0:
            raise ValueError("kernel power must be >= 0")
        if s == 0:
            return np.array(v, dtype=np.float64, copy=True)
        if self.mode in ("sym", "rev"):
            lam_s = self._lam**s
            if self.mode == "sym":
                return self._U @ (lam_s * (self._U.T @ v))
            if transpose:
                # (K^s)^T = diag(dr) U lam^s U^T diag(dl)
                return self._dr * (self._U @ (lam_s * (self._U.T @ (self._dl * v))))
            return self._dl * (self._U @ (lam_s * (self._U.T @ (self._dr * v))))
        p = self._power_repeat(s)
        return (p.T if transpose else p) @ v

    def power_apply_batch(
        self, counts: np.ndarray, vectors: np.ndarray, transpose: bool = False
    ) -> np.ndarray:
        """Apply K^{counts[i]} (or its transpose) to ``vectors[i]`` for all i."""
        counts = np.asarray(counts)
        out = np.empty_like(vectors, dtype=np.float64)
        if self.mode in ("sym", "rev"):
            v = vectors
            if self.mode == "rev":
                v = v * (self._dl if transpose else self._dr)[None, :]
            coeff = v @ self._U  # (N, B)
            coeff = coeff * (self._lam[None, :] ** counts[:, None])
            out = coeff @ self._U.T
            if self.mode == "rev":
                out = out * (self._dr if transpose else self._dl)[None, :]
            zero = counts == 0
            if zero.any():
                out[zero] = vectors[zero]
            return out
        for s in np.unique(counts):
            mask = counts == s
            p = self.power_matrix(int(s))
            block = vectors[mask]
            out[mask] = block @ (p if transpose else p.T)
        return out

    def is_idempotent(self) -> bool:
        """True when K^2 == K, i.e. rows after one event no longer depend on s."""
        return bool(np.abs(self.matrix @ self.matrix - self.matrix).max() <= 1e-12)

    def densify(self) -> np.ndarray:
        return np.array(self.matrix)


class SparseRankOneKernel:
    """Event kernel stored as ``K = S + 1 q^T`` with sparse ``S``.

    Never materializes the dense matrix; powers are applied by repeated
    sparse products plus a rank-one correction.
    """

    def __init__(self, sparse_part: sp.spmatrix, rank_one: np.ndarray):
        self.sparse = sp.csr_matrix(sparse_part, dtype=np.float64)
        self.rank_one = np.asarray(rank_one, dtype=np.float64)
        if self.sparse.shape[0] != self.sparse.shape[1]:
            raise ValueError("sparse part must be square")
        if self.rank_one.shape != (self.sparse.shape[0],):
            raise ValueError("rank-one factor length must match kernel size")
        self.size = self.sparse.shape[0]
        self._sparse_T = sp.csr_matrix(self.sparse.T)
        row_sums = np.asarray(self.sparse.sum(axis=1)).ravel() + self.rank_one.sum()
        worst = np.abs(row_sums - 1.0).max()
        if worst > TOLERANCES.row_sum_tol * max(1.0, self.size * 1e-2):
            raise ValueError(f"sparse kernel rows must sum to 1, worst residual {worst:.3e}")

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.sparse @ v + np.full(self.size, self.rank_one @ v)

    def apply_transpose(self, v: np.ndarray) -> np.ndarray:
        return self._sparse_T @ v + self.rank_one * v.sum()

    def row(self, i: int) -> np.ndarray:
        dense = np.asarray(self.sparse.getrow(i).todense()).ravel()
        return dense + self.rank_one

    def power_apply(self, s: int, v: np.ndarray, transpose: bool = False) -> np.ndarray:
        if s < 0:
            raise ValueError("kernel power must be >= 0")
        out = np.array(v, dtype=np.float64, copy=True)
        step = self.apply_transpose if transpose else self.apply
        for _ in range(s):
            out = step(out)
        return out

    def power_apply_batch(
        self, counts: np.ndarray, vectors: np.ndarray, transpose: bool = False
    ) -> np.ndarray:
        counts = np.asarray(counts)
        out = np.array(vectors, dtype=np.float64, copy=True)
        active = counts.copy()
        step = 0
        while (active > 0).any():
            mask = active > 0
            block = out[mask]
            if transpose:
                moved = (self._sparse_T @ block.T).T + np.outer(
                    block.sum(axis=1), self.rank_one
                )
            else:
                moved = (self.sparse @ block.T).T + (block @ self.rank_one)[:, None]
            out[mask] = moved
            active = active - mask.astype(active.dtype)
            step += 1
        return out

    def is_idempotent(self) -> bool:
        probe = np.zeros(self.size)
        probe[0] = 1.0
        one = self.apply_transpose(probe)
        return bool(np.abs(self.apply_transpose(one) - one).max() <= 1e-12)

    def power_matrix(self, s: int) -> np.ndarray:
        if self.size > TOLERANCES.dense_joint_cap:
            raise ValueError(
                f"refusing to densify a {self.size}x{self.size} sparse kernel"
            )
        eye = np.eye(self.size)
        out = eye
        for _ in range(s):
            out = out @ self.densify()
        return out

    def densify(self) -> np.ndarray:
        if self.size > TOLERANCES.dense_joint_cap:
            raise ValueError(
                f"refusing to densify a {self.size}x{self.size} sparse kernel"
            )
        return np.asarray(self.sparse.todense()) + np.outer(
            np.ones(self.size), self.rank_one
        )


KernelRepresentation = Union[DenseKernel, SparseRankOneKernel]


@dataclass(frozen=True)
class EventProcess:
    """The (r, K, gamma) event-stream form of a generator."""

    gamma: float
    rate: float  # events per unit internal process time
    kernel: KernelRepresentation
    generator: Optional[GeneratorMatrix]

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.rate <= 0.0:
            raise ValueError(f"event rate must be positive, got {self.rate}")
        if self.generator is not None:
            tol = TOLERANCES
            L = self.generator.entries
            r_star = self.generator.max_exit_rate()
            if abs(self.rate * self.gamma - r_star) > tol.reconstruction_tol * max(1.0, r_star):
                raise ValueError("rate, gamma and generator are inconsistent (r != r*/gamma)")
            if isinstance(self.kernel, DenseKernel):
                recon = self.rate * (self.kernel.matrix - np.eye(self.size))
                worst = np.abs(recon - L).max()
                if worst > tol.reconstruction_tol * max(1.0, self.rate):
                    raise ValueError(
                        f"r (K - I) does not reconstruct the generator, worst {worst:.3e}"
                    )

    @property
    def size(self) -> int:
        return self.kernel.size

    def stationary(self) -> np.ndarray:
        """Stationary law; dense generators solve exactly, sparse use power iteration."""
        if self.generator is not None:
            return stationary_distribution(self.generator)
        return _power_iteration_stationary(self.kernel)

    def state_distribution_after(self, x0: int, s: int) -> np.ndarray:
        """Row ``x0`` of K^s: the law of the state after s events from x0."""
        one_hot = np.zeros(self.size)
        one_hot[x0] = 1.0
        return np.maximum(self.kernel.power_apply(s, one_hot, transpose=True), 0.0)


def build_event_process(L: GeneratorMatrix, gamma: float) -> EventProcess:
    """Reparameterize a generator as events at rate r = r*/gamma moved by K = L/r + I."""
    if not (0.0 < gamma <= 1.0):
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    r_star = L.max_exit_rate()
    if r_star <= 0.0:
        raise ValueError("generator has no transitions (r* = 0)")
    r = r_star / gamma
    K = L.entries / r + np.eye(L.size)
    return EventProcess(gamma=gamma, rate=r, kernel=DenseKernel(K), generator=L)


def event_process_from_kernel(
    kernel: KernelRepresentation, gamma: float, generator: Optional[GeneratorMatrix] = None
) -> EventProcess:
    """Event process for ``L = K - I`` slowed down to conditioning level ``gamma``.

    The base kernel is taken at unit event rate (gamma = 1); for gamma < 1 the
    kernel is mixed with the identity, K_gamma = gamma K + (1 - gamma) I, which
    preserves sparse + rank-one structure.
    """
    if not (0.0 < gamma <= 1.0):
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if gamma == 1.0:
        return EventProcess(gamma=1.0, rate=1.0, kernel=kernel, generator=generator)
    if isinstance(kernel, SparseRankOneKernel):
        mixed = sp.csr_matrix(
            gamma * kernel.sparse + (1.0 - gamma) * sp.eye(kernel.size, format="csr")
        )
        out_kernel: KernelRepresentation = SparseRankOneKernel(mixed, gamma * kernel.rank_one)
    else:
        out_kernel = DenseKernel(
            gamma * kernel.matrix + (1.0 - gamma) * np.eye(kernel.size)
        )
    return EventProcess(gamma=gamma, rate=1.0 / gamma, kernel=out_kernel, generator=generator)


def kernel_power_apply(process: EventProcess, s: int, v: np.ndarray) -> np.ndarray:
    """K^s v.  Probability vectors stay probability vectors."""
    if s < 0:
        raise ValueError(f"event count must be >= 0, got {s}")
    return process.kernel.power_apply(int(s), np.asarray(v, dtype=np.float64))


def generator_exponential_apply(
    process: EventProcess, tau: float, v: np.ndarray, transpose: bool = False
) -> np.ndarray:
    """exp(tau L) v by uniformization: a Poisson(r tau) mixture of kernel powers."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    v = np.asarray(v, dtype=np.float64)
    if tau == 0.0:
        return v.copy()
    s_lo, pmf = poisson_window(process.rate * tau)
    acc = np.zeros_like(v)
    term = process.kernel.power_apply(s_lo, v, transpose=transpose)
    step = process.kernel.apply_transpose if transpose else process.kernel.apply
    for j, w in enumerate(pmf):
        acc += w * term
        if j + 1 < len(pmf):
            term = step(term)
    return acc


def stationary_distribution(L: GeneratorMatrix) -> np.ndarray:
    """Probability vector p with p^T L = 0.

    Solved from the eigenvector of L^T at eigenvalue 0; the absorbing masking
    generator is covered because its mask state is the unique invariant one.
    """
    lam, vecs = np.linalg.eig(L.entries.T)
    idx = int(np.argmin(np.abs(lam)))
    v = np.real(vecs[:, idx])
    v = np.abs(v)
    total = v.sum()
    if total <= 0:
        raise ValueError("could not extract a stationary distribution")
    p = v / total
    residual = np.abs(p @ L.entries).max()
    if residual > TOLERANCES.stationary_residual_tol:
        raise ValueError(
            f"stationary residual {residual:.3e} exceeds tolerance; "
            "generator may be reducible"
        )
    return p


def _stationary_of_kernel(matrix: np.ndarray) -> Optional[np.ndarray]:
    """Stationary law of a dense row-stochastic matrix, or None if ill-posed."""
    try:
        lam, vecs = np.linalg.eig(matrix.T)
    except np.linalg.LinAlgError:
        return None
    idx = int(np.argmin(np.abs(lam - 1.0)))
    if abs(lam[idx] - 1.0) > 1e-8:
        return None
    v = np.abs(np.real(vecs[:, idx]))
    if v.sum() <= 0:
        return None
    return v / v.sum()


def _power_iteration_stationary(kernel: KernelRepresentation) -> np.ndarray:
    """Left fixed point of K via damped power iteration (handles periodicity)."""
    b = kernel.size
    p = np.full(b, 1.0 / b)
    for _ in range(TOLERANCES.power_iteration_cap):
        nxt = 0.5 * (kernel.apply_transpose(p) + p)
        nxt = np.maximum(nxt, 0.0)
        nxt /= nxt.sum()
        if np.abs(nxt - p).max() < 1e-14:
            p = nxt
            break
        p = nxt
    residual = np.abs(kernel.apply_transpose(p) - p).max()
    if residual > TOLERANCES.stationary_residual_tol:
        raise ValueError(
            f"power iteration did not converge (residual {residual:.3e}); "
            "kernel may be reducible"
        )
    return p


@dataclass(frozen=True)
class Trajectory:
    """Forward simulation record over modulated time [0, horizon].

    ``jumps`` holds every event, including self-transitions that leave the
    state unchanged: the models downstream condition on events, not on visible
    transitions.
    """

    initial: np.ndarray  # token id per dimension
    times: np.ndarray    # event times, globally sorted
    dims: np.ndarray     # dimension of each event
    states: np.ndarray   # state after each event
    horizon: float = 1.0

    @property
    def jumps(self) -> list[tuple[float, int, int]]:
        return [
            (float(t), int(d), int(s))
            for t, d, s in zip(self.times, self.dims, self.states)
        ]

    def state_at(self, t: float) -> np.ndarray:
        """State vector just after the last event at or before ``t``."""
        x = np.array(self.initial, copy=True)
        for tt, d, s in zip(self.times, self.dims, self.states):
            if tt > t:
                break
            x[d] = s
        return x

    def counts_at(self, t: float) -> np.ndarray:
        """Number of events per dimension up to and including ``t``."""
        counts = np.zeros(len(self.initial), dtype=np.int64)
        for tt, d in zip(self.times, self.dims):
            if tt > t:
                break
            counts[d] += 1
        return counts


def gillespie_simulate(
    process: EventProcess,
    x0: Sequence[int],
    schedule,
    rng: np.random.Generator,
) -> Trajectory:
    """Simulate the modulated forward process on t in [0, 1].

    Waiting times between events are exponential at rate ``r`` in internal
    time; the schedule maps internal time back to modulated time.  Events that
    draw the current state again are recorded but do not change the state.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    if x0.min() < 0 or x0.max() >= process.size:
        raise ValueError("initial states out of range")
    horizon_internal = schedule.cumulative(1.0)
    events: list[tuple[float, int, int]] = []
    for d in range(len(x0)):
        tau = 0.0
        state = int(x0[d])
        while True:
            tau += exponential_from_uniform(process.rate, rng.random())
            if tau > horizon_internal:
                break
            t = float(schedule.inverse_cumulative(tau))
            state = categorical_from_uniform(process.kernel.row(state), rng.random())
            events.append((t, d, state))
    events.sort(key=lambda e: e[0])
    times = np.array([e[0] for e in events], dtype=np.float64)
    dims = np.array([e[1] for e in events], dtype=np.int64)
    states = np.array([e[2] for e in events], dtype=np.int64)
    return Trajectory(initial=x0, times=times, dims=dims, states=states, horizon=1.0)
