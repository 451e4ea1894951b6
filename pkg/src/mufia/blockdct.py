"""Block partitioning, orthonormal 2-D DCT-II and multiplicative filter banks.

Block grids are arrays of shape ``(rows, cols, N, N)``; block ``(r, c)``
covers plane rows ``r*N:(r+1)*N`` and columns ``c*N:(c+1)*N``.  Flattening
the first two axes gives the row-major block order.
"""

from functools import lru_cache

import numpy as np

from .validation import check_block_size, check_square_matrix


@lru_cache(maxsize=None)
def _dct_matrix64(n):
    u = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(np.pi * (2 * i + 1) * u / (2 * n))
    m *= np.sqrt(2.0 / n)
    m[0] /= np.sqrt(2.0)
    m.setflags(write=False)
    return m


def dct_matrix(n, dtype=np.float64):
    """Orthonormal DCT-II matrix ``C`` with ``C[u, i] = a(u) cos(pi (2i+1) u / 2n)``."""
    return _dct_matrix64(int(n)).astype(dtype, copy=False)


def _dtype_of(x):
    x = np.asarray(x)
    return x.dtype if x.dtype.kind == "f" else np.dtype(np.float64)


def dct2(block):
    """Orthonormal 2-D DCT-II over the last two axes.

    Leading axes are treated as a batch, so a whole block grid transforms in
    one call.  Axis ``-2`` carries row frequency ``u``, axis ``-1`` column
    frequency ``v``.
    """
    block = np.asarray(block, dtype=_dtype_of(block))
    if block.ndim < 2 or block.shape[-1] != block.shape[-2]:
        raise ValueError(f"DCT blocks must be square, got shape {block.shape}")
    c = dct_matrix(block.shape[-1], block.dtype)
    return c @ block @ c.T


def idct2(block):
    """Inverse (and adjoint) of :func:`dct2`."""
    block = np.asarray(block, dtype=_dtype_of(block))
    if block.ndim < 2 or block.shape[-1] != block.shape[-2]:
        raise ValueError(f"DCT blocks must be square, got shape {block.shape}")
    c = dct_matrix(block.shape[-1], block.dtype)
    return c.T @ block @ c


def partition_blocks(plane, n):
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got shape {plane.shape}")
    h, w = plane.shape
    n = check_block_size(h, w, n)
    return plane.reshape(h // n, n, w // n, n).swapaxes(1, 2).copy()


def assemble_blocks(grid):
    grid = np.asarray(grid)
    if grid.ndim != 4 or grid.shape[2] != grid.shape[3]:
        raise ValueError(f"expected a (rows, cols, N, N) block grid, got shape {grid.shape}")
    rows, cols, n, _ = grid.shape
    return grid.swapaxes(1, 2).reshape(rows * n, cols * n)


def ones_filter_bank(n, dtype=np.float64):
    if n < 2:
        raise ValueError(f"filter bank size must be >= 2, got {n}")
    return np.ones((n, n), dtype=dtype)


def apply_filter_bank(grid, q):
    """Multiply every block of ``grid`` elementwise by the shared bank ``q``."""
    grid = np.asarray(grid)
    q = check_square_matrix(q, name="filter bank")
    if grid.shape[-2:] != q.shape:
        raise ValueError(f"filter bank {q.shape} does not match block size {grid.shape[-2:]}")
    return grid * q


def filter_bank_gradient(original, upstream):
    """Gradient w.r.t. the shared bank: ``sum_b upstream_b * original_b``.

    The reduction over blocks has a fixed order for a given grid shape, so
    repeated calls are bit-identical.
    """
    original = np.asarray(original)
    upstream = np.asarray(upstream)
    if original.shape != upstream.shape or original.ndim < 2:
        raise ValueError(f"shape mismatch: {original.shape} vs {upstream.shape}")
    n = original.shape[-1]
    return (upstream * original).reshape(-1, n, n).sum(axis=0)
