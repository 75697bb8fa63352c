"""Rate schedules and Poisson event schedules.

The forward process is run through a time change ``beta_t`` chosen so that the
expected schedule-conditional mutual information between the data and the
noised state decays linearly from 1 to ``epsilon`` over t in [0, 1]:

    E_{s_t ~ Pois(r * B(t))} MI_{s_t} = 1 - (1 - epsilon) t,

where ``B(t)`` is the cumulative time change and ``MI_m`` the normalized
mutual information left after m events.  Processes whose first event already
destroys all information (masking, the all-1/B kernel) admit the closed form
``B(t) = -log(1 - (1 - epsilon) t) / r``; everything else is fitted with a
Newton root finder warm-started along a grid, with bisection as fallback.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .config import TOLERANCES
from .ctmc_core import EventProcess
from .rand import poisson_window

DEFAULT_EPSILON = 0.01


class MutualInformationCurve:
    """Normalized mutual information between the data law and the state after
    m events, together with its Poisson-smoothed expectation."""

    def __init__(self, process: EventProcess, p0: np.ndarray):
        p0 = np.asarray(p0, dtype=np.float64)
        if p0.ndim != 1 or p0.shape[0] != process.size:
            raise ValueError("p0 must be a length-B probability vector")
        if p0.min() < 0 or abs(p0.sum() - 1.0) > 1e-9:
            raise ValueError("p0 must be a probability vector")
        if process.size > TOLERANCES.dense_joint_cap:
            raise ValueError(
                f"mutual-information fitting materializes a {process.size}^2 joint; "
                f"cap is {TOLERANCES.dense_joint_cap}"
            )
        self.process = process
        self.p0 = p0
        self._entropy0 = float(-xlogy(p0, p0).sum())
        if self._entropy0 <= 0.0:
            raise ValueError("data distribution is a point mass; MI curve is degenerate")
        self._kernel_dense = (
            process.kernel.matrix
            if hasattr(process.kernel, "matrix")
            else process.kernel.densify()
        )
        self._joint = np.diag(p0).astype(np.float64)
        self._table = [1.0]  # normalized MI_0

    def _mi_of_joint(self, joint: np.ndarray) -> float:
        col = joint.sum(axis=0)
        mi = (
            xlogy(joint, joint).sum()
            - xlogy(self.p0, self.p0).sum()
            - xlogy(col, col).sum()
        )
        return max(float(mi), 0.0) / self._entropy0

    def _extend(self, m_max: int) -> None:
        while len(self._table) <= m_max:
            self._joint = self._joint @ self._kernel_dense
            self._table.append(self._mi_of_joint(self._joint))

    def value(self, m: int) -> float:
        """Normalized MI after exactly m events; value(0) is 1."""
        if m < 0:
            raise ValueError("event count must be >= 0")
        self._extend(m)
        return self._table[m]

    def values_window(self, s_lo: int, n: int) -> np.ndarray:
        self._extend(s_lo + n - 1)
        return np.asarray(self._table[s_lo : s_lo + n])

    def expected(self, tau: float) -> float:
        """E MI over a Poisson(r tau) number of events."""
        if tau < 0:
            raise ValueError("tau must be >= 0")
        if tau == 0.0:
            return 1.0
        s_lo, pmf = poisson_window(self.process.rate * tau)
        return float(pmf @ self.values_window(s_lo, len(pmf)))

    def expected_derivative(self, tau: float) -> float:
        """d/dtau of the expected MI (non-positive for ergodic processes)."""
        r = self.process.rate
        if tau == 0.0:
            return r * (self.value(1) - self.value(0))
        s_lo, pmf = poisson_window(r * tau)
        mi = self.values_window(s_lo, len(pmf) + 1)
        return float(r * (pmf @ (mi[1:] - mi[:-1])))


def event_mutual_information(process: EventProcess, p0: np.ndarray, m: int) -> float:
    """Normalized MI of the joint p0(b) (K^m)_{b,b'}; 1 at m = 0."""
    return MutualInformationCurve(process, p0).value(m)


@dataclass(frozen=True)
class EventSchedule:
    """Realized per-dimension Poisson event times on [0, 1]."""

    counts: np.ndarray
    times: tuple  # one sorted array per dimension

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if len(self.times) != len(counts):
            raise ValueError("times and counts disagree on dimension count")
        for d, ts in enumerate(self.times):
            if len(ts) != counts[d]:
                raise ValueError(f"dimension {d}: {len(ts)} times but count {counts[d]}")
            if len(ts) > 1 and not np.all(np.diff(ts) > 0):
                raise ValueError(f"dimension {d}: event times must increase strictly")

    def counts_at(self, t: float) -> np.ndarray:
        """Events up to and including t (an event exactly at t counts)."""
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"t must lie in [0, 1], got {t}")
        return np.array(
            [int(np.searchsorted(ts, t, side="right")) for ts in self.times],
            dtype=np.int64,
        )


def counts_at(schedule_sample: EventSchedule, t: float) -> np.ndarray:
    return schedule_sample.counts_at(t)


class RateSchedule:
    """Monotone time change fitted to the linear-MI target."""

    def __init__(self, process: EventProcess, epsilon: float):
        if not (0.0 < epsilon <= 0.2):
            raise ValueError(f"epsilon must lie in (0, 0.2], got {epsilon}")
        self.process = process
        self.epsilon = epsilon
        self.event_rate = process.rate

    # Subclasses implement cumulative / rate / schedule_mi / inverse_cumulative.
    @property
    def horizon(self) -> float:
        return self.cumulative(1.0)

    def cumulative_and_rate(self, t: float) -> tuple[float, float]:
        """(B(t), beta_t) with a single root solve for tabulated schedules."""
        return self.cumulative(t), self.rate(t)

    def alpha(self, t: float) -> float:
        """Probability that a dimension has seen no event by time t."""
        return float(np.exp(-self.event_rate * self.cumulative(t)))

    def event_mean(self, t: float = 1.0) -> float:
        return self.event_rate * self.cumulative(t)


class AnalyticMaskingSchedule(RateSchedule):
    """Closed form for processes whose first event erases all information."""

    representation = "analytic-masking"

    def cumulative(self, t: float) -> float:
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"t must lie in [0, 1], got {t}")
        return -np.log1p(-(1.0 - self.epsilon) * t) / self.event_rate

    def rate(self, t: float) -> float:
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"t must lie in [0, 1], got {t}")
        return (1.0 - self.epsilon) / (self.event_rate * (1.0 - (1.0 - self.epsilon) * t))

    def schedule_mi(self, tau: float) -> float:
        return float(np.exp(-self.event_rate * tau))

    def inverse_cumulative(self, tau):
        return -np.expm1(-self.event_rate * np.asarray(tau)) / (1.0 - self.epsilon)


class TabulatedSchedule(RateSchedule):
    """Newton-fitted schedule over a warm-start grid of the MI inverse."""

    representation = "tabulated"

    def __init__(self, process: EventProcess, p0: np.ndarray, epsilon: float, grid: int = 129):
        super().__init__(process, epsilon)
        self.curve = MutualInformationCurve(process, p0)
        self._grid_t = np.linspace(0.0, 1.0, grid)
        taus = np.empty(grid)
        taus[0] = 0.0
        for i, t in enumerate(self._grid_t[1:], start=1):
            taus[i] = self._solve(1.0 - (1.0 - epsilon) * t, taus[i - 1])
        self._grid_tau = taus

    def _solve(self, target: float, guess: float) -> float:
        """Root of expected MI(tau) = target, Newton then bisection fallback."""
        tol = TOLERANCES
        curve = self.curve
        lo, lo_val = 0.0, 1.0
        hi = max(guess * 2.0, 1.0 / self.event_rate)
        hi_val = curve.expected(hi)
        expansions = 0
        while hi_val > target:
            lo, lo_val = hi, hi_val
            hi *= 2.0
            hi_val = curve.expected(hi)
            expansions += 1
            if expansions > 200:
                raise ValueError(
                    "expected mutual information does not decay below the target; "
                    "the process is degenerate for schedule fitting"
                )
        tau = min(max(guess, lo), hi)
        for _ in range(tol.newton_max_iter):
            val = curve.expected(tau)
            resid = val - target
            if abs(resid) <= tol.newton_residual_tol:
                return tau
            if resid > 0:
                lo, lo_val = tau, val
            else:
                hi, hi_val = tau, val
            deriv = curve.expected_derivative(tau)
            step = resid / deriv if deriv < 0 else np.inf
            nxt = tau - step
            if not np.isfinite(nxt) or not (lo < nxt < hi):
                nxt = 0.5 * (lo + hi)
            tau = nxt
        for _ in range(tol.bisection_max_iter):
            mid = 0.5 * (lo + hi)
            val = curve.expected(mid)
            if abs(val - target) <= tol.newton_residual_tol or hi - lo < 1e-15 * max(hi, 1.0):
                return mid
            if val > target:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def cumulative(self, t: float) -> float:
        if not (0.0 <= t <= 1.0):
            raise ValueError(f"t must lie in [0, 1], got {t}")
        if t == 0.0:
            return 0.0
        guess = float(np.interp(t, self._grid_t, self._grid_tau))
        return self._solve(1.0 - (1.0 - self.epsilon) * t, guess)

    def rate(self, t: float) -> float:
        # Implicit function theorem on MI(B(t)) = 1 - (1 - eps) t.
        return self._rate_given_cumulative(t, self.cumulative(t))

    def _rate_given_cumulative(self, t: float, tau: float) -> float:
        deriv = self.curve.expected_derivative(tau)
        if deriv >= 0:
            raise ValueError(f"mutual information is not decreasing at t={t}")
        return (1.0 - self.epsilon) / (-deriv)

    def cumulative_and_rate(self, t: float) -> tuple[float, float]:
        tau = self.cumulative(t)
        return tau, self._rate_given_cumulative(t, tau)

    def schedule_mi(self, tau: float) -> float:
        return self.curve.expected(tau)

    def inverse_cumulative(self, tau):
        if np.ndim(tau) == 0:
            return (1.0 - self.curve.expected(float(tau))) / (1.0 - self.epsilon)
        return np.array(
            [(1.0 - self.curve.expected(float(v))) / (1.0 - self.epsilon) for v in tau]
        )


def fit_schedule(
    process: EventProcess,
    p0: np.ndarray,
    epsilon: float = DEFAULT_EPSILON,
    force_tabulated: bool = False,
) -> RateSchedule:
    """Fit the linear-MI time change for a process and data frequencies.

    Uses the closed form whenever a single event already makes the state
    independent of the data (MI_1 = 0), which covers masking and the
    uniform kernel at unit event rate.
    """
    if not force_tabulated:
        curve = MutualInformationCurve(process, np.asarray(p0, dtype=np.float64))
        if curve.value(1) <= 1e-12:
            return AnalyticMaskingSchedule(process, epsilon)
    return TabulatedSchedule(process, np.asarray(p0, dtype=np.float64), epsilon)


def sample_event_schedule(
    schedule: RateSchedule,
    process: EventProcess,
    D: int,
    rng: np.random.Generator,
) -> EventSchedule:
    """Draw per-dimension Poisson event counts and times on [0, 1].

    Counts are Poisson with mean r B(1); times are i.i.d. with density
    proportional to the rate, i.e. uniform in internal time mapped back
    through the inverse time change.
    """
    if D < 1:
        raise ValueError(f"need at least one dimension, got {D}")
    horizon = schedule.cumulative(1.0)
    counts = rng.poisson(process.rate * horizon, size=D)
    flat = np.asarray(
        schedule.inverse_cumulative(rng.random(int(counts.sum())) * horizon),
        dtype=np.float64,
    )
    times = []
    offset = 0
    for d in range(D):
        ts = np.sort(flat[offset : offset + counts[d]])
        offset += counts[d]
        times.append(ts)
    return EventSchedule(counts=counts, times=tuple(times))
