import numpy as np
import pytest
import scipy.linalg as la
from scipy.optimize import brentq
from scipy.special import xlogy

from scud.config import TOLERANCES
from scud.ctmc_core import build_event_process
from scud.processes import (
    build_blosum,
    build_gaussian_band,
    build_masking,
    build_uniform,
    synthetic_pair_probs,
)
from scud.schedule import (
    EventSchedule,
    MutualInformationCurve,
    counts_at,
    event_mutual_information,
    fit_schedule,
    sample_event_schedule,
)

EPS = 0.01


def classical_mi(L_entries, p0, tau):
    """Independent oracle: normalized MI of the joint p0(b) exp(tau L)_{b, .}."""
    joint = p0[:, None] * la.expm(tau * L_entries)
    col = joint.sum(axis=0)
    h0 = -xlogy(p0, p0).sum()
    mi = xlogy(joint, joint).sum() - xlogy(p0, p0).sum() - xlogy(col, col).sum()
    return max(mi, 0.0) / h0


class TestEventMutualInformation:
    def test_masking_zero_after_one_event(self):
        proc = build_event_process(build_masking(4), 1.0)
        p0 = np.array([0.5, 0.3, 0.2, 0.0])
        for m in (1, 2, 5):
            assert event_mutual_information(proc, p0, m) == pytest.approx(0.0, abs=1e-12)

    def test_zero_events_is_one(self):
        proc = build_event_process(build_gaussian_band(5, 30.0), 0.8)
        assert event_mutual_information(proc, np.full(5, 0.2), 0) == 1.0

    def test_flat_kernel_zero_after_one_event(self):
        proc = build_event_process(build_uniform(3), 2.0 / 3.0)  # all-1/3 kernel
        assert event_mutual_information(proc, np.full(3, 1 / 3), 1) == pytest.approx(
            0.0, abs=1e-12
        )

    def test_monotone_in_event_count(self):
        for proc, p0 in [
            (build_event_process(build_gaussian_band(4, 20.0), 0.6), np.array([0.4, 0.3, 0.2, 0.1])),
            (build_blosum(synthetic_pair_probs(5)), np.full(5, 0.2)),
        ]:
            curve = MutualInformationCurve(proc, p0)
            values = [curve.value(m) for m in range(25)]
            assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))

    def test_point_mass_rejected(self):
        proc = build_event_process(build_uniform(3), 0.5)
        with pytest.raises(ValueError, match="point mass"):
            event_mutual_information(proc, np.array([1.0, 0.0, 0.0]), 1)


class TestFitSchedule:
    def test_masking_closed_form(self):
        proc = build_event_process(build_masking(3), 1.0)
        sched = fit_schedule(proc, np.array([0.6, 0.4, 0.0]), EPS)
        assert sched.representation == "analytic-masking"
        for t in np.linspace(0.0, 1.0, 64):
            assert sched.cumulative(t) == pytest.approx(-np.log1p(-(1 - EPS) * t), abs=1e-12)

    def test_masking_tabulated_matches_closed_form(self):
        proc = build_event_process(build_masking(3), 1.0)
        sched = fit_schedule(proc, np.array([0.6, 0.4, 0.0]), EPS, force_tabulated=True)
        assert sched.representation == "tabulated"
        worst = max(
            abs(sched.cumulative(t) - (-np.log1p(-(1 - EPS) * t)))
            for t in np.linspace(0.0, 1.0, 128)
        )
        assert worst < 1e-6

    def test_cumulative_zero_at_origin(self):
        proc = build_event_process(build_gaussian_band(4, 25.0), 0.8)
        sched = fit_schedule(proc, np.full(4, 0.25), EPS)
        assert sched.cumulative(0.0) == 0.0

    def test_small_gamma_matches_classical_schedule(self):
        # classical side: root-find the matrix-exponential MI, fully independent
        B = 2
        gamma = 1e-3
        L = build_uniform(B)
        proc = build_event_process(L, gamma)
        p0 = np.array([0.7, 0.3])
        sched = fit_schedule(proc, p0, EPS)
        for t in (0.2, 0.5, 0.8):
            target = 1.0 - (1.0 - EPS) * t
            classical = brentq(
                lambda tau: classical_mi(L.entries, p0, tau) - target, 1e-12, 50.0, xtol=1e-12
            )
            assert sched.cumulative(t) == pytest.approx(classical, abs=1e-3)

    def test_roundtrip_linearity(self):
        cases = [
            (build_event_process(build_uniform(3), 2.0 / 3.0), np.full(3, 1 / 3)),
            (build_event_process(build_gaussian_band(5, 40.0), 0.7), np.array([0.3, 0.2, 0.2, 0.2, 0.1])),
            (build_blosum(synthetic_pair_probs(5)), np.full(5, 0.2)),
            (build_event_process(build_masking(4), 1.0), np.array([0.4, 0.3, 0.3, 0.0])),
        ]
        for proc, p0 in cases:
            sched = fit_schedule(proc, p0, EPS)
            for t in np.linspace(0.0, 1.0, 100):
                resid = abs(sched.schedule_mi(sched.cumulative(t)) - (1 - (1 - EPS) * t))
                assert resid < TOLERANCES.schedule_mi_tol

    def test_rate_matches_finite_difference(self):
        proc = build_event_process(build_gaussian_band(4, 30.0), 0.6)
        sched = fit_schedule(proc, np.array([0.4, 0.3, 0.2, 0.1]), EPS)
        delta = 1e-4
        for t in (0.15, 0.5, 0.85):
            fd = (sched.cumulative(t + delta) - sched.cumulative(t - delta)) / (2 * delta)
            assert sched.rate(t) == pytest.approx(fd, rel=1e-5)
            assert sched.rate(t) > 0

    def test_expected_mi_monotone_in_internal_time(self):
        for proc, p0 in [
            (build_event_process(build_gaussian_band(4, 20.0), 0.6), np.full(4, 0.25)),
            (build_blosum(synthetic_pair_probs(5)), np.full(5, 0.2)),
        ]:
            curve = MutualInformationCurve(proc, p0)
            taus = np.linspace(0.0, 5.0, 40)
            vals = [curve.expected(tau) for tau in taus]
            assert all(a >= b - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_degenerate_process_rejected(self):
        # the two-state swap kernel at full conditioning never loses information
        proc = build_event_process(build_uniform(2), 1.0)
        with pytest.raises(ValueError, match="degenerate"):
            fit_schedule(proc, np.array([0.5, 0.5]), EPS, force_tabulated=True)

    def test_epsilon_bounds(self):
        proc = build_event_process(build_uniform(3), 0.5)
        with pytest.raises(ValueError, match="epsilon"):
            fit_schedule(proc, np.full(3, 1 / 3), 0.5)


class TestEventScheduleSampling:
    def test_count_mean(self):
        proc = build_event_process(build_uniform(3), 2.0 / 3.0)
        sched = fit_schedule(proc, np.full(3, 1 / 3), EPS)
        rng = np.random.default_rng(0)
        D = 100_000  # dimensions are i.i.d., so one wide draw is 1e5 samples
        es = sample_event_schedule(sched, proc, D, rng)
        mean = proc.rate * sched.cumulative(1.0)
        assert abs(es.counts.mean() - mean) < 3 * np.sqrt(mean / D)

    def test_counts_independent_across_dimensions(self):
        proc = build_event_process(build_uniform(3), 2.0 / 3.0)
        sched = fit_schedule(proc, np.full(3, 1 / 3), EPS)
        rng = np.random.default_rng(1)
        draws = np.array(
            [sample_event_schedule(sched, proc, 2, rng).counts for _ in range(20000)]
        )
        corr = np.corrcoef(draws[:, 0], draws[:, 1])[0, 1]
        assert abs(corr) < 0.01

    def test_time_fraction_tracks_cumulative(self):
        proc = build_event_process(build_gaussian_band(4, 30.0), 0.7)
        sched = fit_schedule(proc, np.full(4, 0.25), EPS)
        rng = np.random.default_rng(2)
        es = sample_event_schedule(sched, proc, 3000, rng)
        all_times = np.concatenate(es.times)
        t_probe = 0.5
        frac = (all_times <= t_probe).mean()
        expected = sched.cumulative(t_probe) / sched.cumulative(1.0)
        sigma = np.sqrt(expected * (1 - expected) / len(all_times))
        assert abs(frac - expected) < 3 * sigma

    def test_times_sorted_strictly(self):
        proc = build_event_process(build_uniform(3), 0.5)
        sched = fit_schedule(proc, np.full(3, 1 / 3), EPS)
        es = sample_event_schedule(sched, proc, 50, np.random.default_rng(3))
        for ts in es.times:
            if len(ts) > 1:
                assert np.all(np.diff(ts) > 0)

    def test_rejects_zero_dimensions(self):
        proc = build_event_process(build_uniform(3), 0.5)
        sched = fit_schedule(proc, np.full(3, 1 / 3), EPS)
        with pytest.raises(ValueError, match="dimension"):
            sample_event_schedule(sched, proc, 0, np.random.default_rng(0))


class TestCountsAt:
    def make_schedule(self):
        return EventSchedule(
            counts=np.array([2, 1, 0]),
            times=(np.array([0.25, 0.5]), np.array([0.5]), np.array([])),
        )

    def test_zero_at_origin(self):
        np.testing.assert_array_equal(self.make_schedule().counts_at(0.0), [0, 0, 0])

    def test_full_at_horizon(self):
        es = self.make_schedule()
        np.testing.assert_array_equal(es.counts_at(1.0), es.counts)

    def test_inclusive_boundary(self):
        # an event at exactly t counts towards s_t
        es = self.make_schedule()
        np.testing.assert_array_equal(counts_at(es, 0.5), [2, 1, 0])
        np.testing.assert_array_equal(counts_at(es, 0.49), [1, 0, 0])

    def test_validation(self):
        with pytest.raises(ValueError, match="strictly"):
            EventSchedule(counts=np.array([2]), times=(np.array([0.5, 0.5]),))
        with pytest.raises(ValueError, match="count"):
            EventSchedule(counts=np.array([2]), times=(np.array([0.5]),))
