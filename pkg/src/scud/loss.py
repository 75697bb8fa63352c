"""Event-conditioned posteriors, the ELBO estimator and verification losses.

The training bound decomposes into one KL per event between the true
single-event reversal (known in closed form from the kernel) and the model's
reversal built from the denoiser prediction, plus one terminal KL against the
stationary law.  Sampling a time uniformly and weighting each dimension by
``count * beta_t / B(t)`` gives an unbiased single-evaluation estimate that
scores every dimension at once.

Two rewritings of that objective are implemented for verification: the
mask-indicator form (valid when one event already erases a token, i.e. the
kernel is idempotent) and the score-entropy form reached in the limit of
infinitely fast events.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import rel_entr, xlogy

from .config import TOLERANCES
from .ctmc_core import EventProcess
from .rand import poisson_cdf_inverse, poisson_window, spawn_streams, stratified_time
from .schedule import RateSchedule


class UnreachableStateError(ValueError):
    """A conditioning state has zero probability under the event kernel."""


class NonFiniteLossError(RuntimeError):
    """A KL term came out non-finite; carries the offending sample context."""

    def __init__(self, message: str, sample: Optional[int] = None, dim: Optional[int] = None):
        super().__init__(message)
        self.sample = sample
        self.dim = dim


def _one_hot(index: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[index] = 1.0
    return v


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) in nats; +inf on support mismatch."""
    return float(rel_entr(p, q).sum())


def forward_noise(
    process: EventProcess,
    x0: Sequence[int],
    counts: Sequence[int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample the state after ``counts[d]`` events per dimension.

    Dimensions with zero events keep their token and consume no randomness,
    which keeps paired estimators on identical uniform streams.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    if counts.min() < 0:
        raise ValueError("event counts must be >= 0")
    out = x0.copy()
    cache: dict[tuple[int, int], np.ndarray] = {}
    for d in range(len(x0)):
        s = int(counts[d])
        if s == 0:
            continue
        key = (int(x0[d]), s)
        cdf = cache.get(key)
        if cdf is None:
            cdf = np.cumsum(process.state_distribution_after(int(x0[d]), s))
            cache[key] = cdf
        u = rng.random()
        out[d] = int(np.searchsorted(cdf, u * cdf[-1], side="right").clip(0, process.size - 1))
    return out


def posterior_prev(process: EventProcess, x_t: int, x0: int, s: int) -> np.ndarray:
    """Law of the state just before the latest of ``s`` events.

    Proportional to (row x0 of K^{s-1}) elementwise with (column x_t of K).
    A zero normalizer means x_t cannot be reached from x0 in s events, which
    is surfaced rather than smoothed over.
    """
    if s < 1:
        raise ValueError(f"posterior needs at least one event, got s={s}")
    B = process.size
    prev = process.state_distribution_after(x0, s - 1)
    col = process.kernel.apply(_one_hot(x_t, B))
    numer = prev * col
    z = numer.sum()
    if z <= 0.0:
        raise UnreachableStateError(
            f"state {x_t} is unreachable from {x0} in {s} events"
        )
    return numer / z


def backward_from_denoiser(
    process: EventProcess,
    x0_prediction: np.ndarray,
    x_t: int,
    s: int,
    k: int = 1,
) -> np.ndarray:
    """Model reversal of the last ``k`` of ``s`` events for one dimension.

    Proportional to (K^k x_t) elementwise with (K^{s-k, T} prediction).
    """
    if not (1 <= k <= s):
        raise ValueError(f"need 1 <= k <= s, got k={k}, s={s}")
    B = process.size
    pred = np.asarray(x0_prediction, dtype=np.float64)
    a = np.maximum(process.kernel.power_apply(k, _one_hot(x_t, B)), 0.0)
    b = np.maximum(process.kernel.power_apply(s - k, pred, transpose=True), 0.0)
    numer = a * b
    z = numer.sum()
    if z <= 0.0:
        raise UnreachableStateError(
            f"denoiser prediction puts no mass on any predecessor of state {x_t}"
        )
    return numer / z


def score_from_denoiser(
    process: EventProcess, tau: float, x0_prediction: np.ndarray, x_t: int
) -> np.ndarray:
    """Score vector q(x_t = b)/q(x_t) implied by a denoiser prediction."""
    from .ctmc_core import generator_exponential_apply

    qt = generator_exponential_apply(process, tau, np.asarray(x0_prediction), transpose=True)
    if qt[x_t] <= 0.0:
        raise UnreachableStateError(f"implied marginal gives state {x_t} zero mass")
    return np.maximum(qt, 0.0) / qt[x_t]


@dataclass(frozen=True)
class LossEstimate:
    """Losses in nats per dimension, with per-sample detail for the CLI."""

    denoising: float
    convergence: float
    total: float
    per_dimension: np.ndarray
    n_samples: int
    sample_t: np.ndarray
    sample_denoising: np.ndarray
    sample_convergence: np.ndarray
    total_std_error: float

    @property
    def sample_total(self) -> np.ndarray:
        return self.sample_denoising + self.sample_convergence


def _collapsed_event_term(process, x_pred_row, x_t: int, x0: int, mu: float) -> float:
    """E[s * KL_s | s >= 1] for one corrupted dimension, by Poisson summation.

    Valid pairing partner of the mask-indicator objective: requires an
    idempotent kernel so the corrupted token law does not depend on s.
    """
    B = process.size
    s_lo, pmf = poisson_window(mu)
    if s_lo > 0:  # realign so index 0 is s = 0 (negligible-mass case)
        full = np.zeros(int(s_lo) + len(pmf))
        full[int(s_lo):] = pmf
        pmf = full
    alpha = pmf[0]
    col = process.kernel.apply(_one_hot(x_t, B))
    prev = _one_hot(x0, B)                        # row x0 of K^{s-1} at s = 1
    u = np.asarray(x_pred_row, dtype=np.float64)  # K^{s-1,T} pred at s = 1
    acc = 0.0
    for s in range(1, len(pmf)):
        p_num = prev * col
        zp = p_num.sum()
        if zp > 0.0:
            q_num = u * col
            zq = q_num.sum()
            if zq <= 0.0:
                raise UnreachableStateError(
                    f"prediction incompatible with state {x_t} after {s} events"
                )
            acc += pmf[s] * s * kl_divergence(p_num / zp, q_num / zq)
        if s + 1 < len(pmf):
            prev = process.kernel.apply_transpose(prev)
            u = process.kernel.apply_transpose(u)
    return acc / (1.0 - alpha)


def scud_elbo_estimate(
    process: EventProcess,
    schedule: RateSchedule,
    denoiser,
    x0: Sequence[int],
    rng: np.random.Generator,
    n_samples: int,
    collapse_counts: bool = False,
    threads: int = 1,
) -> LossEstimate:
    """Unbiased Monte Carlo estimate of the negative bound, nats per dimension.

    Per sample: one stratified uniform time, per-dimension Poisson event
    counts, one corrupted state per dimension, one denoiser evaluation; the
    terminal term uses the exact after-count marginal rather than a sampled
    endpoint.  With ``collapse_counts`` the per-dimension weight-times-KL is
    summed over the count distribution given the corruption indicator
    (idempotent kernels only), the form the mask-indicator objective matches
    sample by sample.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    if n_samples < 1:
        raise ValueError("need at least one sample")
    if collapse_counts and not process.kernel.is_idempotent():
        raise ValueError(
            "collapse_counts requires an idempotent kernel (corrupted tokens "
            "must not depend on the event count)"
        )
    D = len(x0)
    r = process.rate
    horizon = schedule.cumulative(1.0)
    p_inf = process.stationary()
    streams = spawn_streams(rng, 2 * n_samples)
    sample_t = np.empty(n_samples)
    sample_den = np.empty(n_samples)
    sample_conv = np.empty(n_samples)
    per_dim = np.zeros((n_samples, D))

    def run_sample(i: int) -> None:
        g = streams[2 * i]
        g_term = streams[2 * i + 1]
        t = stratified_time(i, n_samples, g.random())
        tau, beta = schedule.cumulative_and_rate(t)
        mu = r * tau
        counts = np.array(
            [poisson_cdf_inverse(mu, g.random()) if mu > 0 else 0 for _ in range(D)],
            dtype=np.int64,
        )
        noise_counts = np.minimum(counts, 1) if collapse_counts else counts
        x_t = forward_noise(process, x0, noise_counts, g)
        pred = np.asarray(denoiser.forward(x_t[None, :], noise_counts[None, :])[0])
        den_i = 0.0
        for d in range(D):
            s = int(counts[d])
            if s == 0:
                continue
            if collapse_counts:
                contrib = beta / tau * _collapsed_event_term(
                    process, pred[d], int(x_t[d]), int(x0[d]), mu
                )
            else:
                p = posterior_prev(process, int(x_t[d]), int(x0[d]), s)
                q = backward_from_denoiser(process, pred[d], int(x_t[d]), s, k=1)
                term = kl_divergence(p, q)
                if not np.isfinite(term):
                    raise NonFiniteLossError(
                        f"non-finite event KL at sample {i}, dimension {d}",
                        sample=i, dim=d,
                    )
                contrib = beta * s / tau * term
            den_i += contrib
            per_dim[i, d] += contrib
        conv_i = 0.0
        mu_tail = r * (horizon - tau)
        for d in range(D):
            s1 = int(counts[d])
            if mu_tail > 0:
                s1 += poisson_cdf_inverse(mu_tail, g_term.random())
            row = process.state_distribution_after(int(x0[d]), s1)
            term = kl_divergence(row, p_inf)
            if not np.isfinite(term):
                raise NonFiniteLossError(
                    f"non-finite terminal KL at sample {i}, dimension {d} "
                    f"(law after {s1} events escapes the stationary support)",
                    sample=i, dim=d,
                )
            conv_i += term
            per_dim[i, d] += term
        sample_t[i] = t
        sample_den[i] = den_i / D
        sample_conv[i] = conv_i / D

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_sample, range(n_samples)))
    else:
        for i in range(n_samples):
            run_sample(i)

    totals = sample_den + sample_conv
    sem = float(totals.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("inf")
    return LossEstimate(
        denoising=float(sample_den.mean()),
        convergence=float(sample_conv.mean()),
        total=float(totals.mean()),
        per_dimension=per_dim.mean(axis=0),
        n_samples=n_samples,
        sample_t=sample_t,
        sample_denoising=sample_den,
        sample_convergence=sample_conv,
        total_std_error=sem,
    )


def masking_objective_per_sample(
    process: EventProcess,
    schedule: RateSchedule,
    denoiser,
    x0: Sequence[int],
    rng: np.random.Generator,
    n_samples: int,
) -> np.ndarray:
    """Mask-indicator objective samples.

    Weight ``r beta alpha / (1 - alpha)`` with ``alpha = exp(-r B(t))`` (the
    proposition's form at unit event rate), cross entropy of the normalized
    prediction on corrupted positions only.  Kept on the same uniform stream
    layout as ``scud_elbo_estimate`` so the two can be compared sample by
    sample under a shared seed.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    if not process.kernel.is_idempotent():
        raise ValueError("the mask-indicator objective needs an idempotent kernel")
    D = len(x0)
    r = process.rate
    streams = spawn_streams(rng, 2 * n_samples)
    values = np.empty(n_samples)
    for i in range(n_samples):
        g = streams[2 * i]
        t = stratified_time(i, n_samples, g.random())
        tau, beta = schedule.cumulative_and_rate(t)
        mu = r * tau
        # The Bernoulli(1 - alpha) mask is realized through the count inverse
        # CDF so the indicator matches the count draw of the paired estimator.
        mask = np.array(
            [poisson_cdf_inverse(mu, g.random()) > 0 if mu > 0 else False for _ in range(D)]
        )
        m_counts = mask.astype(np.int64)
        x_t = forward_noise(process, x0, m_counts, g)
        if not mask.any():
            values[i] = 0.0
            continue
        pred = np.asarray(denoiser.forward(x_t[None, :], m_counts[None, :])[0])
        alpha = float(np.exp(-mu))
        rows = pred[mask]
        rows = rows / rows.sum(axis=1, keepdims=True)
        ce = float(-np.log(rows[np.arange(int(mask.sum())), x0[mask]]).sum())
        values[i] = r * beta * alpha / (1.0 - alpha) * ce / D
    return values


def masking_objective(
    process: EventProcess,
    schedule: RateSchedule,
    denoiser,
    x0: Sequence[int],
    rng: np.random.Generator,
    n_samples: int,
) -> float:
    return float(
        masking_objective_per_sample(process, schedule, denoiser, x0, rng, n_samples).mean()
    )


def transition_matrix_at(process: EventProcess, tau: float) -> np.ndarray:
    """Dense exp(tau L): spectral closed form when available, else uniformization."""
    B = process.size
    if B > TOLERANCES.dense_joint_cap:
        raise ValueError(f"refusing to build a dense {B}x{B} transition matrix")
    kernel = process.kernel
    mode = getattr(kernel, "mode", None)
    if mode in ("sym", "rev"):
        # exp(tau r (K - I)) shares the kernel's eigenvectors
        expo = np.exp(process.rate * tau * (kernel._lam - 1.0))
        core = (kernel._U * expo[None, :]) @ kernel._U.T
        if mode == "rev":
            core = kernel._dl[:, None] * core * kernel._dr[None, :]
        return np.maximum(core, 0.0)
    s_lo, pmf = poisson_window(process.rate * tau)
    term = kernel.power_matrix(int(s_lo))
    acc = np.zeros((B, B))
    kd = kernel.power_matrix(1)
    for j, w in enumerate(pmf):
        acc += w * term
        if j + 1 < len(pmf):
            term = term @ kd
    return np.maximum(acc, 0.0)


def _score_entropy_bracket(
    L_col: np.ndarray, ratio: np.ndarray, score: np.ndarray, x_t: int
) -> float:
    """sum over b != x_t of L[b, x_t] (score_b - ratio_b log score_b + g(ratio_b))
    with g(x) = x (log x - 1); vanishes exactly at score == ratio."""
    idx = np.arange(len(ratio)) != x_t
    sc = score[idx]
    ra = np.maximum(ratio[idx], 0.0)
    w = L_col[idx]
    if np.any((sc <= 0) & (ra > 0) & (w > 0)):
        raise UnreachableStateError("score assigns zero mass where the ratio is positive")
    g = xlogy(ra, ra) - ra
    cross = np.where(ra > 0, ra * np.log(np.where(sc > 0, sc, 1.0)), 0.0)
    return float((w * (sc - cross + g)).sum())


def sedd_loss(
    process: EventProcess,
    schedule: RateSchedule,
    denoiser,
    x0: Sequence[int],
    t: float,
    rng: np.random.Generator,
    n_samples: int,
    score_fn=None,
) -> float:
    """Monte Carlo score-entropy loss at time ``t`` (the fast-event limit form).

    Samples the noised state from the classical marginal exp(B(t) L) and
    evaluates the score-entropy bracket with scores derived from the denoiser
    (or from ``score_fn(x_t, dim) -> length-B vector`` when given).
    """
    if process.generator is None:
        raise ValueError("score-entropy loss needs a dense generator")
    x0 = np.asarray(x0, dtype=np.int64)
    D = len(x0)
    tau, beta = schedule.cumulative_and_rate(t)
    if beta == 0.0:
        return 0.0
    L = process.generator.entries
    Qt = transition_matrix_at(process, tau)
    count_proxy = int(round(process.rate * tau))
    rows = {int(b): Qt[int(b)] / Qt[int(b)].sum() for b in np.unique(x0)}
    x_t = np.empty((n_samples, D), dtype=np.int64)
    for d in range(D):
        x_t[:, d] = rng.choice(process.size, size=n_samples, p=rows[int(x0[d])])
    counts = np.full((n_samples, D), count_proxy, dtype=np.int64)
    preds = np.asarray(denoiser.forward(x_t, counts))
    total = 0.0
    for i in range(n_samples):
        for d in range(D):
            xt = int(x_t[i, d])
            row = rows[int(x0[d])]
            ratio = row / row[xt]
            if score_fn is not None:
                score = np.asarray(score_fn(xt, d))
            else:
                score = preds[i, d] @ Qt
                if score[xt] <= 0:
                    raise UnreachableStateError(
                        f"implied marginal gives state {xt} zero mass"
                    )
                score = score / score[xt]
            total += _score_entropy_bracket(L[:, xt], ratio, score, xt)
    return beta * total / (n_samples * D)


# ---------------------------------------------------------------------------
# Exact (enumeration) evaluators, used by the verification suite and tests.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExactLoss:
    denoising: float
    convergence: float

    @property
    def total(self) -> float:
        return self.denoising + self.convergence


def _row_stack(process: EventProcess, x0: int, max_s: int) -> np.ndarray:
    """Rows x0 of K^0 .. K^max_s."""
    kernel = process.kernel
    if getattr(kernel, "mode", None) in ("sym", "rev"):
        counts = np.arange(max_s + 1)
        base = np.tile(_one_hot(x0, process.size), (max_s + 1, 1))
        # spectral reconstruction can undershoot zero by rounding noise
        return np.maximum(kernel.power_apply_batch(counts, base, transpose=True), 0.0)
    rows = np.empty((max_s + 1, process.size))
    v = _one_hot(x0, process.size)
    rows[0] = v
    for s in range(1, max_s + 1):
        v = kernel.apply_transpose(v)
        rows[s] = v
    return rows


def exact_denoising_at(
    process: EventProcess,
    schedule: RateSchedule,
    denoiser,
    x0_points: np.ndarray,
    t: float,
    combo_cap: int = 2_000_000,
) -> np.ndarray:
    """Exact expected denoising integrand (nats/dim) at time ``t``.

    Enumerates the joint (counts, corrupted state) across dimensions with the
    Poisson window truncated at the shared tail policy; returns one value per
    row of ``x0_points``.
    """
    x0_points = np.atleast_2d(np.asarray(x0_points, dtype=np.int64))
    n_points, D = x0_points.shape
    B = process.size
    tau, beta = schedule.cumulative_and_rate(t)
    if tau <= 0.0:
        return np.zeros(n_points)
    mu = process.rate * tau
    s_lo, pmf = poisson_window(mu)
    keep = pmf > 1e-16  # unimodal, so this trims only the tails
    s_values = (int(s_lo) + np.arange(len(pmf)))[keep]
    pmf = pmf[keep]
    s_base = int(s_values[0])
    S = len(s_values)
    if (S * B) ** D > combo_cap:
        raise ValueError(
            f"exact evaluation needs {(S * B) ** D} combinations; cap is {combo_cap}"
        )
    max_s = int(s_values[-1])
    row_stacks = {
        int(b): _row_stack(process, int(b), max_s) for b in np.unique(x0_points)
    }

    # Joint enumeration of (s_d, x_d) pairs per dimension.
    pair_s = np.repeat(s_values, B)        # (S*B,)
    pair_x = np.tile(np.arange(B), S)      # (S*B,)
    grids = np.meshgrid(*([np.arange(S * B)] * D), indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=1)  # (M, D)
    S_mat = pair_s[idx]
    X_mat = pair_x[idx]
    preds = np.asarray(denoiser.forward(X_mat, S_mat))  # (M, D, B)

    kd = process.kernel.power_matrix(1)  # columns kd[:, x]
    out = np.zeros(n_points)
    for j in range(n_points):
        x0 = x0_points[j]
        w = np.ones(len(S_mat))
        for d in range(D):
            stack = row_stacks[int(x0[d])]
            w *= pmf[S_mat[:, d] - s_base] * stack[S_mat[:, d], X_mat[:, d]]
        acc = 0.0
        for d in range(D):
            m = (w > 0) & (S_mat[:, d] >= 1)
            if not m.any():
                continue
            s_d = S_mat[m, d]
            x_d = X_mat[m, d]
            stack = row_stacks[int(x0[d])]
            prev = stack[s_d - 1]              # (n, B)
            col = kd[:, x_d].T                 # (n, B)
            p_num = prev * col
            zp = p_num.sum(axis=1)
            ok = zp > 0
            if not ok.all():
                # negligible-mass float corner: drop those combos
                m_idx = np.flatnonzero(m)[~ok]
                w[m_idx] = 0.0
                s_d, x_d = s_d[ok], x_d[ok]
                prev, col, p_num, zp = prev[ok], col[ok], p_num[ok], zp[ok]
                m = (w > 0) & (S_mat[:, d] >= 1)
                if not m.any():
                    continue
            p_vec = p_num / zp[:, None]
            u = np.maximum(
                process.kernel.power_apply_batch(s_d - 1, preds[m, d, :], transpose=True),
                0.0,
            )
            q_num = col * u
            zq = q_num.sum(axis=1, keepdims=True)
            if np.any(zq <= 0):
                raise UnreachableStateError("prediction support empty in exact evaluation")
            q_vec = q_num / zq
            kl = rel_entr(p_vec, q_vec).sum(axis=1)
            if not np.all(np.isfinite(kl)):
                raise NonFiniteLossError("non-finite KL in exact evaluation")
            acc += float((w[m] * (beta * s_d / tau) * kl).sum())
        out[j] = acc / D
    return out


def exact_convergence(
    process: EventProcess, schedule: RateSchedule, x0_points: np.ndarray
) -> np.ndarray:
    """Exact terminal KL (nats/dim): expectation over the count at t = 1."""
    x0_points = np.atleast_2d(np.asarray(x0_points, dtype=np.int64))
    n_points, D = x0_points.shape
    p_inf = process.stationary()
    mu = process.rate * schedule.cumulative(1.0)
    s_lo, pmf = poisson_window(mu)
    out = np.zeros(n_points)
    cache: dict[int, float] = {}
    for j in range(n_points):
        acc = 0.0
        for d in range(D):
            b = int(x0_points[j, d])
            if b not in cache:
                rows = _row_stack(process, b, int(s_lo) + len(pmf) - 1)
                kls = np.array(
                    [kl_divergence(rows[int(s_lo) + i], p_inf) for i in range(len(pmf))]
                )
                if not np.all(np.isfinite(kls)):
                    raise NonFiniteLossError(
                        f"terminal KL diverges for token {b}: the stationary law "
                        "does not cover states reachable at t = 1"
                    )
                cache[b] = float(pmf @ kls)
            acc += cache[b]
        out[j] = acc / D
    return out


def _gauss_nodes(t_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(t_nodes)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def exact_expected_loss(
    process: EventProcess,
    schedule: RateSchedule,
    denoiser,
    toy=None,
    x0: Optional[Sequence[int]] = None,
    t_nodes: int = 64,
) -> ExactLoss:
    """Deterministic bound value: Gauss-Legendre in time, enumeration elsewhere.

    Pass either a toy distribution (expectation over its support) or a single
    data point.
    """
    if (toy is None) == (x0 is None):
        raise ValueError("pass exactly one of toy= or x0=")
    if toy is not None:
        pts, wts = toy.support()
    else:
        pts = np.atleast_2d(np.asarray(x0, dtype=np.int64))
        wts = np.ones(1)
    ts, tw = _gauss_nodes(t_nodes)
    den = 0.0
    for t, w in zip(ts, tw):
        den += w * float(exact_denoising_at(process, schedule, denoiser, pts, t) @ wts)
    conv = float(exact_convergence(process, schedule, pts) @ wts)
    return ExactLoss(denoising=den, convergence=conv)


def sedd_exact_at(
    process: EventProcess,
    schedule: RateSchedule,
    denoiser,
    x0: Sequence[int],
    t: float,
) -> float:
    """Exact score-entropy integrand at time ``t`` (nats/dim).

    Enumerates the noised state per dimension while holding the others at the
    data point; meant for per-dimension predictors (D = 1) or denoisers that
    ignore the other dimensions.
    """
    if process.generator is None:
        raise ValueError("score-entropy loss needs a dense generator")
    x0 = np.asarray(x0, dtype=np.int64)
    D = len(x0)
    B = process.size
    tau, beta = schedule.cumulative_and_rate(t)
    L = process.generator.entries
    Qt = transition_matrix_at(process, tau)
    count_proxy = int(round(process.rate * tau))
    total = 0.0
    xs = np.arange(B, dtype=np.int64)
    for d in range(D):
        row = Qt[int(x0[d])]
        x_grid = np.tile(x0[None, :], (B, 1))
        x_grid[:, d] = xs
        preds = np.asarray(
            denoiser.forward(x_grid, np.full((B, D), count_proxy, dtype=np.int64))
        )
        for xt in range(B):
            if row[xt] <= 0:
                continue
            ratio = row / row[xt]
            score = preds[xt, d] @ Qt
            if score[xt] <= 0:
                raise UnreachableStateError(f"implied marginal gives state {xt} zero mass")
            score = score / score[xt]
            total += row[xt] * _score_entropy_bracket(L[:, xt], ratio, score, xt)
    return beta * total / D


def scud_denoising_exact_curve(
    process: EventProcess,
    schedule: RateSchedule,
    denoiser,
    x0: Sequence[int],
    t_nodes: int = 64,
) -> float:
    """Time integral of the exact denoising term for one data point."""
    pts = np.atleast_2d(np.asarray(x0, dtype=np.int64))
    ts, tw = _gauss_nodes(t_nodes)
    return float(
        sum(
            w * exact_denoising_at(process, schedule, denoiser, pts, t)[0]
            for t, w in zip(ts, tw)
        )
    )


def sedd_exact_curve(
    process: EventProcess,
    schedule: RateSchedule,
    denoiser,
    x0: Sequence[int],
    t_nodes: int = 64,
) -> float:
    """Time integral of the exact score-entropy loss for one data point."""
    ts, tw = _gauss_nodes(t_nodes)
    return float(
        sum(w * sedd_exact_at(process, schedule, denoiser, x0, t) for t, w in zip(ts, tw))
    )
