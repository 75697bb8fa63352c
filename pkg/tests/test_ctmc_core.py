import numpy as np
import pytest
import scipy.linalg as la
from scipy.stats import chisquare

from scud.config import TOLERANCES
from scud.ctmc_core import (
    DenseKernel,
    EventProcess,
    GeneratorMatrix,
    SparseRankOneKernel,
    build_event_process,
    event_process_from_kernel,
    generator_exponential_apply,
    gillespie_simulate,
    kernel_power_apply,
    stationary_distribution,
)
from scud.processes import build_gaussian_band, build_masking, build_uniform
from scud.rand import poisson_window
from scud.schedule import fit_schedule


def random_generator(rng, B):
    L = rng.uniform(0.0, 1.0, size=(B, B))
    np.fill_diagonal(L, 0.0)
    np.fill_diagonal(L, -L.sum(axis=1))
    return GeneratorMatrix(L)


class TestGeneratorMatrix:
    def test_rejects_negative_off_diagonal(self):
        with pytest.raises(ValueError, match="negative off-diagonal"):
            GeneratorMatrix(np.array([[0.5, -0.5], [0.5, -0.5]]))

    def test_rejects_bad_row_sums(self):
        with pytest.raises(ValueError, match="sum to 0"):
            GeneratorMatrix(np.array([[-0.5, 0.6], [0.5, -0.5]]))

    def test_rejects_non_square(self):
        with pytest.raises(ValueError, match="square"):
            GeneratorMatrix(np.zeros((2, 3)))

    def test_entries_read_only(self):
        L = build_uniform(3)
        with pytest.raises(ValueError):
            L.entries[0, 0] = 1.0


class TestBuildEventProcess:
    def test_uniform_half_gamma_gives_flat_kernel(self):
        # the all-1/B kernel appears exactly at unit event rate
        L = GeneratorMatrix(np.array([[-0.5, 0.5], [0.5, -0.5]]))
        proc = build_event_process(L, 0.5)
        assert proc.rate == pytest.approx(1.0)
        np.testing.assert_allclose(proc.kernel.matrix, np.full((2, 2), 0.5), atol=1e-15)

    def test_uniform_gamma_one_gives_swap(self):
        L = GeneratorMatrix(np.array([[-0.5, 0.5], [0.5, -0.5]]))
        proc = build_event_process(L, 1.0)
        assert proc.rate == pytest.approx(0.5)
        np.testing.assert_allclose(proc.kernel.matrix, np.array([[0.0, 1.0], [1.0, 0.0]]), atol=1e-15)

    def test_gamma_one_zeroes_a_diagonal(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            proc = build_event_process(random_generator(rng, 6), 1.0)
            assert np.min(np.diag(proc.kernel.matrix)) == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("gamma", [0.0, -0.2, 1.2])
    def test_rejects_bad_gamma(self, gamma):
        with pytest.raises(ValueError, match="gamma"):
            build_event_process(build_uniform(3), gamma)

    def test_reconstruction_invariant(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            B = int(rng.integers(2, 33))
            L = random_generator(rng, B)
            gamma = float(rng.uniform(0.05, 1.0))
            proc = build_event_process(L, gamma)
            recon = proc.rate * (proc.kernel.matrix - np.eye(B))
            assert np.abs(recon - L.entries).max() < TOLERANCES.reconstruction_tol
            assert np.abs(proc.kernel.matrix.sum(axis=1) - 1.0).max() < TOLERANCES.row_sum_tol
            assert proc.rate * proc.gamma == pytest.approx(L.max_exit_rate(), rel=1e-14)

    def test_inconsistent_process_rejected(self):
        L = build_uniform(3)
        K = DenseKernel(L.entries / 2.0 + np.eye(3))
        with pytest.raises(ValueError, match="inconsistent"):
            EventProcess(gamma=0.5, rate=7.0, kernel=K, generator=L)


class TestKernelPowerApply:
    def test_flat_kernel_power_is_uniform(self):
        proc = build_event_process(build_uniform(4), 0.75)  # r = 1, all-1/4 kernel
        v = np.array([1.0, 0.0, 0.0, 0.0])
        np.testing.assert_allclose(kernel_power_apply(proc, 3, v), np.full(4, 0.25), atol=1e-14)

    def test_zero_power_is_identity(self):
        proc = build_event_process(build_gaussian_band(5, 30.0), 0.8)
        v = np.array([0.2, 0.1, 0.3, 0.25, 0.15])
        np.testing.assert_array_equal(kernel_power_apply(proc, 0, v), v)

    def test_swap_squared_is_identity(self):
        L = GeneratorMatrix(np.array([[-0.5, 0.5], [0.5, -0.5]]))
        proc = build_event_process(L, 1.0)
        np.testing.assert_allclose(
            kernel_power_apply(proc, 2, np.array([1.0, 0.0])), np.array([1.0, 0.0]), atol=1e-15
        )

    def test_negative_power_rejected(self):
        proc = build_event_process(build_uniform(3), 0.5)
        with pytest.raises(ValueError, match=">= 0"):
            kernel_power_apply(proc, -1, np.ones(3) / 3)

    def test_probability_vectors_stay_normalized(self):
        rng = np.random.default_rng(2)
        proc = build_event_process(build_gaussian_band(12, 60.0), 0.6)
        for s in (1, 4, 17):
            v = rng.dirichlet(np.ones(12))
            out = kernel_power_apply(proc, s, v)
            assert abs(out.sum() - 1.0) < TOLERANCES.prob_vector_tol

    def test_spectral_matches_repeated_multiply(self):
        # reversible kernel takes the spectral path; compare with raw powers
        rng = np.random.default_rng(3)
        for B in (8, 64):
            proc = build_event_process(build_gaussian_band(B, 100.0), 0.7)
            assert proc.kernel.mode in ("sym", "rev")
            K = proc.kernel.matrix
            v = rng.dirichlet(np.ones(B))
            for s in (1, 7, 64):
                brute = np.linalg.matrix_power(K, s) @ v
                ours = proc.kernel.power_apply(s, v)
                assert np.abs(brute - ours).max() < TOLERANCES.kernel_power_tol
                brute_t = np.linalg.matrix_power(K.T, s) @ v
                ours_t = proc.kernel.power_apply(s, v, transpose=True)
                assert np.abs(brute_t - ours_t).max() < TOLERANCES.kernel_power_tol

    def test_repeat_mode_matches_matrix_power(self):
        proc = build_event_process(build_masking(4), 0.6)
        assert proc.kernel.mode == "repeat"
        v = np.array([0.4, 0.3, 0.2, 0.1])
        for s in (1, 2, 9, 33):
            brute = np.linalg.matrix_power(proc.kernel.matrix, s) @ v
            assert np.abs(proc.kernel.power_apply(s, v) - brute).max() < TOLERANCES.kernel_power_tol

    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        for proc in (
            build_event_process(build_gaussian_band(6, 40.0), 0.8),
            build_event_process(build_masking(5), 1.0),
        ):
            counts = np.array([0, 1, 3, 8])
            vectors = rng.dirichlet(np.ones(proc.size), size=4)
            for transpose in (False, True):
                batch = proc.kernel.power_apply_batch(counts, vectors, transpose=transpose)
                for i, (s, v) in enumerate(zip(counts, vectors)):
                    single = proc.kernel.power_apply(int(s), v, transpose=transpose)
                    np.testing.assert_allclose(batch[i], single, atol=1e-12)


class TestGeneratorExponential:
    def test_tau_zero_is_identity(self):
        proc = build_event_process(build_uniform(3), 0.4)
        v = np.array([0.2, 0.5, 0.3])
        np.testing.assert_array_equal(generator_exponential_apply(proc, 0.0, v), v)

    def test_two_state_closed_form(self):
        L = GeneratorMatrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
        proc = build_event_process(L, 0.7)
        out = generator_exponential_apply(proc, 1.0, np.array([1.0, 0.0]))
        expected = np.array([(1 + np.exp(-2.0)) / 2, (1 - np.exp(-2.0)) / 2])
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_long_time_reaches_stationary(self):
        L = build_gaussian_band(6, 20.0)
        proc = build_event_process(L, 0.9)
        out = generator_exponential_apply(proc, 50.0, np.array([0, 0, 1.0, 0, 0, 0]))
        np.testing.assert_allclose(out, stationary_distribution(L), atol=1e-6)

    def test_negative_tau_rejected(self):
        proc = build_event_process(build_uniform(3), 0.5)
        with pytest.raises(ValueError, match=">= 0"):
            generator_exponential_apply(proc, -0.1, np.ones(3) / 3)

    def test_uniformization_matches_explicit_series(self):
        # independent oracle: explicit Poisson-weighted matrix powers
        rng = np.random.default_rng(5)
        for _ in range(15):
            B = int(rng.integers(2, 9))
            L = random_generator(rng, B)
            proc = build_event_process(L, float(rng.uniform(0.2, 1.0)))
            tau = float(rng.uniform(0.0, 5.0))
            v = rng.dirichlet(np.ones(B))
            s_lo, pmf = poisson_window(proc.rate * tau)
            series = np.zeros(B)
            for j, w in enumerate(pmf):
                series += w * (np.linalg.matrix_power(proc.kernel.matrix, int(s_lo) + j) @ v)
            ours = generator_exponential_apply(proc, tau, v)
            assert np.abs(series - ours).max() < 1e-8

    def test_matches_scipy_expm(self):
        rng = np.random.default_rng(6)
        L = random_generator(rng, 5)
        proc = build_event_process(L, 0.5)
        v = rng.dirichlet(np.ones(5))
        ref = la.expm(1.7 * L.entries).T @ v  # column convention: exp(tau L) v
        ours = generator_exponential_apply(proc, 1.7, v, transpose=True)
        np.testing.assert_allclose(ours, la.expm(1.7 * L.entries).T @ v, atol=1e-10)
        ours_col = generator_exponential_apply(proc, 1.7, v)
        np.testing.assert_allclose(ours_col, la.expm(1.7 * L.entries) @ v, atol=1e-10)


class TestStationaryDistribution:
    def test_uniform_generator(self):
        np.testing.assert_allclose(
            stationary_distribution(build_uniform(5)), np.full(5, 0.2), atol=1e-12
        )

    def test_masking_absorbs(self):
        p = stationary_distribution(build_masking(4))
        np.testing.assert_allclose(p, np.array([0, 0, 0, 1.0]), atol=1e-12)

    def test_residual_contract(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            L = random_generator(rng, int(rng.integers(2, 12)))
            p = stationary_distribution(L)
            assert abs(p.sum() - 1.0) < 1e-12
            assert np.abs(p @ L.entries).max() < TOLERANCES.stationary_residual_tol

    def test_power_iteration_agrees_with_eig(self):
        L = build_gaussian_band(7, 25.0)
        proc = build_event_process(L, 0.8)
        from scud.ctmc_core import _power_iteration_stationary

        np.testing.assert_allclose(
            _power_iteration_stationary(proc.kernel), stationary_distribution(L), atol=1e-9
        )


class TestEventProcessFromKernel:
    def test_gamma_mixing_matches_dense_construction(self):
        L = build_gaussian_band(5, 30.0)
        base = build_event_process(L, 1.0)
        # scaling interpolates towards the identity with the same generator shape
        mixed = event_process_from_kernel(DenseKernel(base.kernel.matrix), 0.4)
        direct = 0.4 * base.kernel.matrix + 0.6 * np.eye(5)
        np.testing.assert_allclose(mixed.kernel.matrix, direct, atol=1e-15)
        assert mixed.rate == pytest.approx(1.0 / 0.4)


class TestGillespie:
    def test_masking_paths_absorb(self):
        proc = build_event_process(build_masking(3), 1.0)
        sched = fit_schedule(proc, np.array([0.5, 0.5, 0.0]), 0.01)
        rng = np.random.default_rng(8)
        for _ in range(50):
            traj = gillespie_simulate(proc, [0, 1], sched, rng)
            for t, d, state in traj.jumps:
                assert state == 2  # every event lands on the mask state

    def test_rejects_out_of_range_states(self):
        proc = build_event_process(build_uniform(3), 0.5)
        sched = fit_schedule(proc, np.full(3, 1 / 3), 0.01)
        with pytest.raises(ValueError, match="out of range"):
            gillespie_simulate(proc, [5], sched, np.random.default_rng(0))

    def test_trajectory_times_strictly_increasing_per_dim(self):
        proc = build_event_process(build_uniform(4), 0.9)
        sched = fit_schedule(proc, np.full(4, 0.25), 0.01)
        rng = np.random.default_rng(9)
        for _ in range(20):
            traj = gillespie_simulate(proc, [0, 1, 2], sched, rng)
            for d in range(3):
                ts = traj.times[traj.dims == d]
                assert np.all(np.diff(ts) > 0)
            assert np.all(traj.states >= 0) and np.all(traj.states < 4)

    def test_event_count_mean(self):
        proc = build_event_process(build_uniform(3), 2.0 / 3.0)
        sched = fit_schedule(proc, np.full(3, 1 / 3), 0.01)
        rng = np.random.default_rng(10)
        n = 4000
        counts = np.array(
            [len(gillespie_simulate(proc, [0], sched, rng).times) for _ in range(n)]
        )
        mean_expected = proc.rate * sched.cumulative(1.0)
        assert abs(counts.mean() - mean_expected) < 3 * np.sqrt(mean_expected / n)

    def test_marginal_matches_exponential(self):
        # chi-square of simulated x_t against exp(B(t) L), moderate sample size;
        # the 1e5-path version runs in the acceptance suite via the estimator
        proc = build_event_process(build_gaussian_band(3, 10.0), 0.7)
        sched = fit_schedule(proc, np.array([0.5, 0.3, 0.2]), 0.01)
        rng = np.random.default_rng(11)
        n = 20000
        t_obs = 0.55
        states = np.array(
            [gillespie_simulate(proc, [1], sched, rng).state_at(t_obs)[0] for _ in range(n)]
        )
        expected = la.expm(sched.cumulative(t_obs) * proc.generator.entries)[1] * n
        obs = np.bincount(states, minlength=3)
        assert chisquare(obs, expected * (n / expected.sum())).pvalue > 0.01

    def test_state_and_counts_at(self):
        traj_proc = build_event_process(build_uniform(3), 0.5)
        from scud.ctmc_core import Trajectory

        traj = Trajectory(
            initial=np.array([0, 1]),
            times=np.array([0.2, 0.5, 0.9]),
            dims=np.array([0, 1, 0]),
            states=np.array([2, 0, 1]),
        )
        np.testing.assert_array_equal(traj.state_at(0.1), [0, 1])
        np.testing.assert_array_equal(traj.state_at(0.5), [2, 0])
        np.testing.assert_array_equal(traj.counts_at(0.5), [1, 1])
        np.testing.assert_array_equal(traj.counts_at(1.0), [2, 1])


class TestSparseRankOneKernel:
    def test_shape_validation(self):
        import scipy.sparse as sp

        with pytest.raises(ValueError, match="length"):
            SparseRankOneKernel(sp.eye(3, format="csr") * 0.5, np.full(4, 0.125))

    def test_one_hot_rows_match_densified(self):
        import scipy.sparse as sp

        rng = np.random.default_rng(12)
        B = 16
        sparse = sp.random(B, B, density=0.2, random_state=1, format="csr")
        q = rng.dirichlet(np.ones(B)) * 0.3
        row_sums = np.asarray(sparse.sum(axis=1)).ravel() + q.sum()
        sparse = sp.csr_matrix(sparse.multiply(0))  # rebuild with normalized rows
        base = rng.uniform(0.1, 1.0, size=(B, B))
        base = base / base.sum(axis=1, keepdims=True) * (1 - q.sum())
        kernel = SparseRankOneKernel(sp.csr_matrix(base), q)
        dense = kernel.densify()
        for i in range(B):
            one_hot = np.zeros(B)
            one_hot[i] = 1.0
            np.testing.assert_allclose(
                kernel.apply_transpose(one_hot), dense[i], atol=TOLERANCES.sparse_mirror_tol
            )
