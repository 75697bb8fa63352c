"""Plain-text serialization for matrices and kernels.

Dense format::

    B <size>
    <size> rows of <size> decimal numbers

Sparse + rank-one kernels::

    B <size>
    SPARSE <nnz>
    <nnz> lines of "row col value"
    <weight> <p_1> ... <p_size>     # rank-one right factor, scaled by weight

The last line carries the probability vector of the rank-one part together
with its mixing weight, so ``K = sparse + ones (weight * p)^T`` reconstructs
exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
import scipy.sparse as sp

from .ctmc_core import DenseKernel, GeneratorMatrix, SparseRankOneKernel


def save_dense(path: Union[str, Path], matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {matrix.shape}")
    lines = [f"B {matrix.shape[0]}"]
    for row in matrix:
        lines.append(" ".join(repr(float(x)) for x in row))
    Path(path).write_text("\n".join(lines) + "\n")


def save_sparse_rank_one(path: Union[str, Path], kernel: SparseRankOneKernel) -> None:
    coo = kernel.sparse.tocoo()
    q = kernel.rank_one
    weight = float(q.sum())
    p = q / weight if weight > 0 else q
    lines = [f"B {kernel.size}", f"SPARSE {coo.nnz}"]
    for r, c, v in zip(coo.row, coo.col, coo.data):
        lines.append(f"{int(r)} {int(c)} {repr(float(v))}")
    lines.append(" ".join([repr(weight)] + [repr(float(x)) for x in p]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_matrix(path: Union[str, Path]):
    """Load either a dense matrix (ndarray) or a SparseRankOneKernel."""
    text = Path(path).read_text().strip().splitlines()
    if not text or not text[0].startswith("B "):
        raise ValueError(f"{path}: first line must be 'B <size>'")
    size = int(text[0].split()[1])
    if len(text) >= 2 and text[1].startswith("SPARSE"):
        nnz = int(text[1].split()[1])
        if len(text) != 2 + nnz + 1:
            raise ValueError(f"{path}: expected {nnz} triples plus rank-one line")
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        vals = np.empty(nnz, dtype=np.float64)
        for i, line in enumerate(text[2 : 2 + nnz]):
            r, c, v = line.split()
            rows[i], cols[i], vals[i] = int(r), int(c), float(v)
        tail = [float(x) for x in text[2 + nnz].split()]
        if len(tail) != size + 1:
            raise ValueError(f"{path}: rank-one line must hold weight plus {size} entries")
        weight, p = tail[0], np.array(tail[1:])
        sparse = sp.csr_matrix((vals, (rows, cols)), shape=(size, size))
        return SparseRankOneKernel(sparse, weight * p)
    if len(text) != 1 + size:
        raise ValueError(f"{path}: expected {size} rows, found {len(text) - 1}")
    out = np.empty((size, size), dtype=np.float64)
    for i, line in enumerate(text[1:]):
        vals = [float(x) for x in line.split()]
        if len(vals) != size:
            raise ValueError(f"{path}: row {i} has {len(vals)} entries, expected {size}")
        out[i] = vals
    return out


def save_generator(path: Union[str, Path], L: GeneratorMatrix) -> None:
    save_dense(path, L.entries)


def load_generator(path: Union[str, Path]) -> GeneratorMatrix:
    m = load_matrix(path)
    if not isinstance(m, np.ndarray):
        raise ValueError(f"{path}: expected a dense generator, found a sparse kernel")
    return GeneratorMatrix(m)


def save_kernel(path: Union[str, Path], kernel) -> None:
    if isinstance(kernel, SparseRankOneKernel):
        save_sparse_rank_one(path, kernel)
    elif isinstance(kernel, DenseKernel):
        save_dense(path, kernel.matrix)
    else:
        save_dense(path, np.asarray(kernel))
