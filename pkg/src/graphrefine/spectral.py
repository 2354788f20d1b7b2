"""Low-rank spectral machinery: exact and randomized SVD, truncation,
factored-form products, and a binary factor cache.

The randomized path follows the usual range-finder recipe: probe the
matrix with a Gaussian test block, sharpen the captured subspace with a
few power iterations through A A^T (QR between passes), then take the
exact SVD of the small projected matrix Q^T A.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import FormatError, NumericalError, PreconditionError

CACHE_MAGIC = b"GADPN-SVD\0"


@dataclass(frozen=True)
class SvdFactors:
    """Truncated factorization A ~= left @ diag(singular_values) @ right.T.

    Columns of left and right are orthonormal; singular values are
    non-negative and sorted in descending order. The sign of each
    component is fixed by making the first nonzero entry of the left
    vector non-negative, so factorizations are reproducible.
    """

    left: np.ndarray             # (n, r)
    singular_values: np.ndarray  # (r,)
    right: np.ndarray            # (m, r)

    def __post_init__(self):
        object.__setattr__(self, "left",
                           np.ascontiguousarray(self.left, dtype=np.float64))
        object.__setattr__(self, "singular_values",
                           np.ascontiguousarray(self.singular_values, dtype=np.float64))
        object.__setattr__(self, "right",
                           np.ascontiguousarray(self.right, dtype=np.float64))
        r = len(self.singular_values)
        if self.left.ndim != 2 or self.right.ndim != 2:
            raise PreconditionError("factor matrices must be 2-d")
        if self.left.shape[1] != r or self.right.shape[1] != r:
            raise PreconditionError("factor column counts disagree with rank")
        if r and np.any(self.singular_values < 0):
            raise PreconditionError("negative singular value")
        if r > 1 and np.any(np.diff(self.singular_values) > 1e-12):
            raise PreconditionError("singular values not in descending order")

    @property
    def rank(self) -> int:
        return len(self.singular_values)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.left.shape[0], self.right.shape[0])

    def to_dense(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right.T


def _fix_signs(u: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Flip (u_i, v_i) pairs so the first nonzero entry of u_i is >= 0."""
    u = u.copy()
    vt = vt.copy()
    for j in range(u.shape[1]):
        col = u[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if len(nz) and col[nz[0]] < 0:
            u[:, j] = -col
            vt[j] = -vt[j]
    return u, vt


def exact_svd(m) -> SvdFactors:
    """Full-rank dense SVD. Reference route for small matrices; O(N^3)."""
    dense = m.toarray() if sp.issparse(m) else np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(dense)):
        raise PreconditionError("matrix contains non-finite entries")
    try:
        u, s, vt = np.linalg.svd(dense, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"SVD did not converge: {e}") from e
    u, vt = _fix_signs(u, vt)
    return SvdFactors(u, s, vt.T)


def randomized_svd(a, target_rank: int, oversampling: int = 10,
                   power_iters: int = 2, seed: int = 0) -> SvdFactors:
    """Randomized truncated SVD, deterministic for a fixed seed.

    Probes with a Gaussian block of width target_rank + oversampling,
    runs power_iters passes through A A^T with QR re-orthonormalization,
    then solves the exact SVD of the projected matrix.
    """
    n, m = a.shape
    if not 1 <= target_rank <= min(n, m):
        raise PreconditionError(
            f"target rank {target_rank} outside [1, {min(n, m)}]")
    if oversampling < 0:
        raise PreconditionError("oversampling must be non-negative")
    width = min(target_rank + oversampling, min(n, m))
    rng = np.random.default_rng(seed)
    omega = rng.standard_normal((m, width))
    y = a @ omega
    q, _ = np.linalg.qr(y)
    for _ in range(power_iters):
        z = a.T @ q
        q, _ = np.linalg.qr(z)
        y = a @ q
        q, _ = np.linalg.qr(y)
    b = q.T @ a
    if sp.issparse(b):
        b = b.toarray()
    try:
        ub, s, vt = np.linalg.svd(np.asarray(b), full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"projected SVD did not converge: {e}") from e
    u = q @ ub
    u, vt = _fix_signs(u[:, :target_rank], vt[:target_rank])
    return SvdFactors(u, s[:target_rank], vt.T)


def truncate(f: SvdFactors, k: int) -> SvdFactors:
    """Keep the k leading components: a pure slice."""
    if not 1 <= k <= f.rank:
        raise PreconditionError(f"truncation rank {k} outside [1, {f.rank}]")
    if k == f.rank:
        return f
    return SvdFactors(f.left[:, :k], f.singular_values[:k], f.right[:, :k])


def factored_matmul(f: SvdFactors, x: np.ndarray) -> np.ndarray:
    """(U diag(s) V^T) x without densifying the low-rank matrix.

    x may be a vector of length N or a matrix with N rows.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != f.right.shape[0]:
        raise PreconditionError(
            f"operand has {x.shape[0]} rows, expected {f.right.shape[0]}")
    if x.ndim == 1:
        return f.left @ (f.singular_values * (f.right.T @ x))
    return f.left @ (f.singular_values[:, None] * (f.right.T @ x))


def factored_entry_block(f: SvdFactors, rows, cols) -> np.ndarray:
    """Dense block of U diag(s) V^T at the given row and column ids.

    Empty ranges give an empty matrix.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    n, m = f.shape
    if len(rows) and (rows.min() < 0 or rows.max() >= n):
        raise PreconditionError("row ids out of range")
    if len(cols) and (cols.min() < 0 or cols.max() >= m):
        raise PreconditionError("column ids out of range")
    if not len(rows) or not len(cols):
        return np.zeros((len(rows), len(cols)))
    return (f.left[rows] * f.singular_values) @ f.right[cols].T


def save_svd_cache(f: SvdFactors, path) -> None:
    """Write square-matrix factors to the binary cache layout: magic
    header, little-endian u64 N and u64 rank, then row-major float64
    blocks left, singular_values, right."""
    n, m = f.shape
    if n != m:
        raise PreconditionError("cache stores square-matrix factors only")
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<QQ", n, f.rank))
        fh.write(np.ascontiguousarray(f.left, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(f.singular_values, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(f.right, dtype="<f8").tobytes())


def load_svd_cache(path) -> SvdFactors:
    """Read factors written by save_svd_cache, validating the layout."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CACHE_MAGIC) + 16:
        raise FormatError(f"{path}: truncated cache header")
    if raw[:len(CACHE_MAGIC)] != CACHE_MAGIC:
        raise FormatError(f"{path}: bad cache magic")
    n, rank = struct.unpack_from("<QQ", raw, len(CACHE_MAGIC))
    offset = len(CACHE_MAGIC) + 16
    expect = offset + 8 * (2 * n * rank + rank)
    if len(raw) != expect:
        raise FormatError(
            f"{path}: cache payload is {len(raw) - offset} bytes, "
            f"expected {expect - offset} for n={n} rank={rank}")

    def take(count, off):
        return np.frombuffer(raw, dtype="<f8", count=count, offset=off)

    left = take(n * rank, offset).reshape(n, rank)
    s = take(rank, offset + 8 * n * rank)
    right = take(n * rank, offset + 8 * (n * rank + rank)).reshape(n, rank)
    try:
        return SvdFactors(left, s, right)
    except PreconditionError as e:
        raise FormatError(f"{path}: invalid factors ({e})") from e
