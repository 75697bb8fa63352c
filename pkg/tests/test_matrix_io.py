import numpy as np
import pytest

from scud.ctmc_core import SparseRankOneKernel
from scud.matrix_io import (
    load_generator,
    load_matrix,
    save_dense,
    save_generator,
    save_kernel,
    save_sparse_rank_one,
)
from scud.processes import build_sparse_graph, build_uniform, ring_similarity


def test_dense_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = rng.normal(size=(7, 7))
    path = tmp_path / "m.txt"
    save_dense(path, m)
    np.testing.assert_array_equal(load_matrix(path), m)  # repr round trip is exact


def test_generator_round_trip(tmp_path):
    L = build_uniform(5)
    path = tmp_path / "gen.txt"
    save_generator(path, L)
    np.testing.assert_array_equal(load_generator(path).entries, L.entries)


def test_sparse_round_trip(tmp_path):
    kernel = build_sparse_graph(ring_similarity(12), k=3)
    path = tmp_path / "sparse.txt"
    save_sparse_rank_one(path, kernel)
    loaded = load_matrix(path)
    assert isinstance(loaded, SparseRankOneKernel)
    np.testing.assert_allclose(loaded.densify(), kernel.densify(), atol=0)
    np.testing.assert_array_equal(loaded.rank_one, kernel.rank_one)


def test_save_kernel_dispatches(tmp_path):
    kernel = build_sparse_graph(ring_similarity(8), k=2)
    save_kernel(tmp_path / "k.txt", kernel)
    assert (tmp_path / "k.txt").read_text().splitlines()[1].startswith("SPARSE")


def test_header_format(tmp_path):
    save_dense(tmp_path / "m.txt", np.eye(3))
    lines = (tmp_path / "m.txt").read_text().splitlines()
    assert lines[0] == "B 3"
    assert len(lines) == 4


def test_rejects_missing_header(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("1.0 0.0\n0.0 1.0\n")
    with pytest.raises(ValueError, match="first line"):
        load_matrix(p)


def test_rejects_wrong_row_count(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("B 3\n1 0 0\n0 1 0\n")
    with pytest.raises(ValueError, match="expected 3 rows"):
        load_matrix(p)


def test_rejects_sparse_on_generator_load(tmp_path):
    kernel = build_sparse_graph(ring_similarity(6), k=2)
    save_sparse_rank_one(tmp_path / "k.txt", kernel)
    with pytest.raises(ValueError, match="dense generator"):
        load_generator(tmp_path / "k.txt")
