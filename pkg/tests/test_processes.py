import numpy as np
import pytest

from scud.config import TOLERANCES
from scud.ctmc_core import DenseKernel, build_event_process, event_process_from_kernel
from scud.processes import (
    build_blosum,
    build_gaussian_band,
    build_masking,
    build_sparse_graph,
    build_uniform,
    ring_similarity,
    synthetic_pair_probs,
)
from scud.ctmc_core import stationary_distribution


class TestUniform:
    def test_two_states(self):
        np.testing.assert_allclose(
            build_uniform(2).entries, np.array([[-0.5, 0.5], [0.5, -0.5]])
        )

    def test_four_states(self):
        L = build_uniform(4).entries
        assert np.allclose(L.sum(axis=1), 0.0)
        off = L[~np.eye(4, dtype=bool)]
        np.testing.assert_allclose(off, 0.25)

    def test_stationary_uniform(self):
        np.testing.assert_allclose(
            stationary_distribution(build_uniform(6)), np.full(6, 1 / 6), atol=1e-12
        )

    def test_rejects_tiny(self):
        with pytest.raises(ValueError):
            build_uniform(1)


class TestMasking:
    def test_three_states(self):
        L = build_masking(3).entries
        np.testing.assert_allclose(L[0], [-1.0, 0.0, 1.0])
        np.testing.assert_allclose(L[1], [0.0, -1.0, 1.0])
        np.testing.assert_allclose(L[2], [0.0, 0.0, 0.0])

    def test_kernel_at_full_conditioning(self):
        proc = build_event_process(build_masking(3), 1.0)
        expected = np.zeros((3, 3))
        expected[:, 2] = 1.0
        np.testing.assert_allclose(proc.kernel.matrix, expected, atol=1e-15)

    def test_stationary_one_hot(self):
        np.testing.assert_allclose(
            stationary_distribution(build_masking(5)), np.eye(5)[4], atol=1e-12
        )


class TestGaussianBand:
    def test_neighbour_entry_value(self):
        L = build_gaussian_band(128, 200.0).entries
        expected = np.exp(-200.0 / 128**2)
        assert L[10, 11] == pytest.approx(expected, rel=1e-12)
        assert expected == pytest.approx(0.98786, abs=1e-5)

    def test_half_band_entry(self):
        B, bw = 64, 200.0
        L = build_gaussian_band(B, bw).entries
        assert L[0, B // 2] == pytest.approx(np.exp(-bw / 4.0), rel=1e-12)

    def test_symmetric_hence_uniform_stationary(self):
        L = build_gaussian_band(9, 50.0)
        assert np.abs(L.entries - L.entries.T).max() < 1e-15
        np.testing.assert_allclose(
            stationary_distribution(L), np.full(9, 1 / 9), atol=1e-10
        )

    def test_legacy_exponent_form(self):
        B = 16
        L = build_gaussian_band(B, 10.0, relative_distance=False).entries
        assert L[0, 1] == pytest.approx(np.exp(-10.0 / B), rel=1e-12)

    def test_rejects_bad_bandwidth(self):
        with pytest.raises(ValueError, match="bandwidth"):
            build_gaussian_band(8, -1.0)


class TestBlosum:
    def test_two_state_conditional(self):
        P = np.array([[0.4, 0.1], [0.1, 0.4]])
        proc = build_blosum(P)
        np.testing.assert_allclose(proc.kernel.matrix[0], [0.8, 0.2], atol=1e-14)

    def test_stationary_is_marginals(self):
        P = synthetic_pair_probs(8)
        proc = build_blosum(P)
        marginals = P.sum(axis=1)
        # the marginal vector is a left fixed point of the kernel
        np.testing.assert_allclose(
            proc.kernel.apply_transpose(marginals), marginals, atol=1e-9
        )
        np.testing.assert_allclose(proc.stationary(), marginals, atol=1e-9)

    def test_non_canonical_rows_use_marginals(self):
        P = synthetic_pair_probs(4)
        mask = np.array([True, True, True, True, False, False])
        proc = build_blosum(P, canonical_mask=mask)
        K = proc.kernel.matrix
        for i in (4, 5):
            np.testing.assert_allclose(K[i, :4], P.sum(axis=1), atol=1e-12)
            assert K[i, 4] == 0.0 and K[i, 5] == 0.0

    def test_rejects_asymmetric(self):
        P = synthetic_pair_probs(4).copy()
        P[0, 1] += 1e-6
        P /= P.sum()
        with pytest.raises(ValueError, match="symmetric"):
            build_blosum(P)

    def test_generator_is_kernel_minus_identity(self):
        proc = build_blosum(synthetic_pair_probs(5))
        np.testing.assert_allclose(
            proc.generator.entries, proc.kernel.matrix - np.eye(5), atol=1e-14
        )
        assert proc.rate == pytest.approx(1.0)


class TestSparseGraph:
    def test_full_neighbourhood_matches_dense_construction(self):
        # with every pair connected and no uniform mixing, the kernel is the
        # plain normalized similarity process
        n = 16
        sims = ring_similarity(n)
        kernel = build_sparse_graph(sims, k=n - 1, temperature=0.5, mix_weight=0.0)
        weights = np.exp(sims / 0.5)
        np.fill_diagonal(weights, 0.0)
        weights /= weights.sum(axis=1, keepdims=True)
        L = weights - np.eye(n)  # unit exit rates, so the rescale is a no-op
        expected = L + np.eye(n)
        np.testing.assert_allclose(kernel.densify(), expected, atol=1e-10)

    def test_equal_similarities_give_uniform_neighbours(self):
        n = 12
        sims = np.zeros((n, n))
        kernel = build_sparse_graph(sims, k=4, mix_weight=0.0)
        dense = kernel.densify()
        for i in range(n):
            row = dense[i].copy()
            row[i] = 0.0
            nz = row[row > 0]
            assert len(nz) == 4
            np.testing.assert_allclose(nz, nz[0])

    def test_power_apply_matches_dense_mirror(self):
        n = 64
        kernel = build_sparse_graph(ring_similarity(n), k=6)
        dense = DenseKernel(kernel.densify())
        one_hot = np.zeros(n)
        one_hot[7] = 1.0
        for s in (1, 2, 8):
            np.testing.assert_allclose(
                kernel.power_apply(s, one_hot),
                dense.power_apply(s, one_hot),
                atol=TOLERANCES.sparse_mirror_tol,
            )

    def test_infrequent_states_use_rank_one_only(self):
        nf, n = 8, 12
        kernel = build_sparse_graph(ring_similarity(nf), k=3, n_states=n)
        dense = kernel.densify()
        for i in range(nf, n):
            row = dense[i].copy()
            diag = row[i]
            row[i] = 0.0
            # off-diagonal mass only on the frequent subset, proportional to p
            assert np.all(row[nf:] == 0.0)
            np.testing.assert_allclose(row[:nf] / row[:nf].sum(), np.full(nf, 1 / nf), atol=1e-12)
            assert diag > 0.0

    def test_row_stochastic_and_exit_normalized(self):
        kernel = build_sparse_graph(ring_similarity(20), k=5)
        dense = kernel.densify()
        np.testing.assert_allclose(dense.sum(axis=1), 1.0, atol=1e-12)
        assert dense.diagonal().min() == pytest.approx(0.0, abs=1e-12)  # r* = 1

    def test_gamma_mixing_preserves_structure(self):
        kernel = build_sparse_graph(ring_similarity(10), k=3)
        proc = event_process_from_kernel(kernel, 0.5)
        expected = 0.5 * kernel.densify() + 0.5 * np.eye(10)
        np.testing.assert_allclose(proc.kernel.densify(), expected, atol=1e-12)
        assert proc.rate == pytest.approx(2.0)

    def test_rejects_oversized_k(self):
        with pytest.raises(ValueError, match="k must lie"):
            build_sparse_graph(ring_similarity(5), k=5)

    def test_rejects_frozen_infrequent(self):
        with pytest.raises(ValueError, match="frozen"):
            build_sparse_graph(ring_similarity(5), k=2, mix_weight=0.0, n_states=8)


def test_every_builder_yields_valid_event_process():
    procs = [
        build_event_process(build_uniform(5), 0.5),
        build_event_process(build_masking(4), 1.0),
        build_event_process(build_gaussian_band(10, 80.0), 0.7),
        build_blosum(synthetic_pair_probs(6)),
        event_process_from_kernel(build_sparse_graph(ring_similarity(12), k=4), 0.8),
    ]
    for proc in procs:
        row_sums = (
            proc.kernel.matrix.sum(axis=1)
            if hasattr(proc.kernel, "matrix")
            else proc.kernel.densify().sum(axis=1)
        )
        assert np.abs(row_sums - 1.0).max() < 1e-10
        assert 0.0 < proc.gamma <= 1.0
        assert proc.rate > 0
