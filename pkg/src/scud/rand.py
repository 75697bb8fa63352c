"""Random-stream discipline and Poisson utilities.

All sampling entry points take a ``numpy.random.Generator``.  Work that is
split across samples or worker tasks derives one child stream per task with
``spawn_streams(rng, n)``; child ``i`` depends only on the parent seed and the
index ``i``, so results are reproducible regardless of execution order.

Several paired tests rely on two estimators consuming *identical* uniforms in
identical order.  To keep that possible everything here samples by inverse
CDF from explicit uniform draws rather than through distribution-specific
generator methods.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .config import TOLERANCES


def spawn_streams(rng: np.random.Generator, n: int) -> list[np.random.Generator]:
    """Derive ``n`` independent child streams from ``rng`` (one per task)."""
    return rng.spawn(n)


def stratified_time(index: int, n: int, u: float) -> float:
    """Stratified uniform draw on (0, 1): sample ``index`` lands in its stratum."""
    return (index + u) / n


def poisson_window(mean: float, tail: float | None = None) -> tuple[int, np.ndarray]:
    """Support window and pmf of a Poisson distribution.

    Returns ``(s_lo, pmf)`` where ``pmf[j]`` is the probability of
    ``s_lo + j``.  The window covers all but ``tail`` probability mass,
    subject to the hard cap ``factor * (mean + offset)`` on the largest count.
    """
    tol = TOLERANCES
    if tail is None:
        tail = tol.poisson_tail
    if mean < 0:
        raise ValueError(f"Poisson mean must be >= 0, got {mean}")
    hard_cap = int(tol.poisson_hard_cap_factor * (mean + tol.poisson_hard_cap_offset))
    if mean == 0.0:
        return 0, np.ones(1)
    half_width = 10.0 + 9.0 * np.sqrt(mean)
    s_lo = max(0, int(np.floor(mean - half_width)))
    s_hi = min(hard_cap, int(np.ceil(mean + half_width)))
    # Adequate width is judged by the density at the window edges (the pmf sum
    # itself carries ~1e-11 of float cancellation at large means).
    edge = tail * 1e-3
    while True:
        s = np.arange(s_lo, s_hi + 1, dtype=np.float64)
        pmf = np.exp(s * np.log(mean) - mean - gammaln(s + 1.0))
        left_ok = s_lo == 0 or pmf[0] < edge
        right_ok = s_hi >= hard_cap or pmf[-1] < edge
        if left_ok and right_ok:
            break
        if not left_ok:
            s_lo = max(0, s_lo - int(half_width))
        if not right_ok:
            s_hi = min(hard_cap, s_hi + int(half_width))
    pmf = pmf / pmf.sum()
    keep = pmf > (tail * 1e-4) / max(len(pmf), 1)
    if keep.any():
        first = int(np.argmax(keep))
        last = len(keep) - int(np.argmax(keep[::-1])) - 1
        return s_lo + first, pmf[first : last + 1]
    return s_lo, pmf


def poisson_cdf_inverse(mean: float, u: float) -> int:
    """Inverse CDF of Poisson(mean) at ``u``: smallest s with CDF(s) >= u."""
    s_lo, pmf = poisson_window(mean)
    cdf = np.cumsum(pmf)
    idx = int(np.searchsorted(cdf, u, side="left"))
    return s_lo + min(idx, len(pmf) - 1)


def categorical_from_uniform(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF categorical sample from one uniform draw."""
    cdf = np.cumsum(probs)
    total = cdf[-1]
    return int(np.searchsorted(cdf, u * total, side="right").clip(0, len(probs) - 1))


def exponential_from_uniform(rate: float, u: float) -> float:
    """Inverse-CDF exponential sample (mean ``1/rate``) from one uniform."""
    return -np.log1p(-u) / rate
