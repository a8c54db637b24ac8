"""Structured LU inversion of tap-delay matrices and block-circulant inversion.

A tap-delay matrix ``S`` of size M has nonzeros only at ``(i, (i - D_k) % M)``
for the delay positions ``d = [D_1 = 0, ..., D_P]``: a lower band plus a
``D_P``-wide corner in the top-right.  Gaussian elimination without pivoting
on such a matrix produces no fill in the first ``M - D_P`` rows of ``L``, and
the rows of ``U`` in that region only hold the diagonal and the corner
columns.  Only the trailing ``D_P x D_P`` Schur complement needs a regular
dense factorization, which brings the per-block inversion cost down to
``O(M^2 D_P)``.

All kernels accept a leading batch axis so the ``N`` blocks of a
block-circulant operator are processed together.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .accounting import check_dense, fft_mults, tally
from .errors import SingularMatrixError
from .transforms import MatrixSequence, block_diagonalize, from_block_diagonal

#: Pivots smaller than this (relative to the largest entry) count as zero.
PIVOT_TOL = 1e-14
#: Blocks whose element growth ``max|phi| max|U| / max|S|`` exceeds this are
#: re-inverted densely with partial pivoting.
GROWTH_TOL = 1e6


@dataclass(frozen=True)
class DelayPattern:
    """Sparsity pattern of a tap-delay matrix.

    Parameters
    ----------
    d : sequence of int
        Delay positions ``[D_1, ..., D_P]`` with ``D_1 = 0`` and ``D_P < M``.
    M : int
        Matrix size.
    """

    d: tuple
    M: int

    def __post_init__(self):
        d = tuple(int(x) for x in self.d)
        object.__setattr__(self, "d", d)
        if not d or any(b <= a for a, b in zip(d, d[1:])):
            raise ValueError(f"delay positions must be strictly increasing, got {list(d)}")
        if d[0] != 0:
            raise ValueError(f"the structured factorization needs D_1 = 0, got D_1 = {d[0]}")
        if d[-1] >= self.M:
            raise ValueError(f"D_P = {d[-1]} must be smaller than M = {self.M}")

    @classmethod
    def from_profile(cls, profile, M):
        return cls(profile.positions, M)

    @property
    def max_delay(self):
        return self.d[-1]

    @property
    def u(self):
        """Offset vector ``[D_1, ..., D_P, M - D_P]``."""
        return self.d + (self.M - self.max_delay,)

    @property
    def split(self):
        """Number of leading rows/columns handled by the structured elimination."""
        return self.M - self.max_delay

    def mask(self):
        """Boolean M x M support of the pattern."""
        M = self.M
        cols = (np.arange(M)[:, None] - np.asarray(self.d)[None, :]) % M
        out = np.zeros((M, M), dtype=bool)
        out[np.arange(M)[:, None], cols] = True
        return out

    def conforms(self, S, atol=0.0):
        """Whether every entry of ``S`` (or of each matrix in a batch) outside the support is zero."""
        off = np.abs(np.asarray(S))[..., ~self.mask()]
        return bool(off.size == 0 or off.max() <= atol)


@dataclass
class LuWorkspace:
    """Result of :func:`structured_lu`.

    ``phi`` holds the unit lower-triangular factor (multipliers below a unit
    diagonal) and ``lu`` the upper-triangular factor, so ``phi @ lu == S``.
    ``y`` is filled by :func:`structured_invert` with ``phi^{-1}``.
    ``breakdown`` flags the batch entries that hit a zero pivot (only
    populated when factorizing with ``on_breakdown="mask"``) and ``growth``
    holds the element growth factor of each entry.
    """

    phi: np.ndarray
    lu: np.ndarray
    pattern: DelayPattern
    breakdown: np.ndarray
    growth: np.ndarray
    y: np.ndarray | None = None

    @property
    def unstable(self):
        """Entries that broke down or grew past ``GROWTH_TOL``."""
        return self.breakdown | ~(self.growth <= GROWTH_TOL)


def _check_pivot(piv, scale, step, broken, mask):
    bad = np.abs(piv) <= PIVOT_TOL * scale
    if not np.any(bad):
        return piv
    if not mask:
        flat = np.flatnonzero(np.atleast_1d(bad))
        block = int(flat[0]) + 1 if np.ndim(piv) else None
        raise SingularMatrixError(
            f"zero pivot at elimination step {step + 1}" + (f" of block {block}" if block else ""),
            step=step + 1,
            block=block,
        )
    broken |= bad
    # keep eliminating the flagged entries with a dummy pivot; their result is discarded
    return np.where(bad, 1.0, piv)


def structured_lu(S, pattern: DelayPattern, on_breakdown="raise") -> LuWorkspace:
    """LU factorization without pivoting that exploits the tap-delay pattern.

    Parameters
    ----------
    S : ndarray, shape (..., M, M)
        Matrix or batch of matrices whose nonzeros obey ``pattern``.
    pattern : DelayPattern
        Delay positions; ``D_1`` must be zero so the diagonal is populated.
    on_breakdown : {"raise", "mask"}
        Raise on a zero pivot, or flag the affected batch entries in
        ``LuWorkspace.breakdown`` and carry on.

    Returns
    -------
    LuWorkspace

    Raises
    ------
    SingularMatrixError
        If a pivot vanishes; ``step`` names the 1-based elimination step.
    """
    S = np.asarray(S, dtype=complex)
    M = pattern.M
    if S.shape[-2:] != (M, M):
        raise ValueError(f"matrix shape {S.shape[-2:]} does not match pattern size {M}")
    batch = S.shape[:-2]
    nb = int(np.prod(batch)) if batch else 1
    scale = np.abs(S).max(axis=(-2, -1))
    scale = np.where(scale > 0, scale, 1.0)
    mask = on_breakdown == "mask"
    broken = np.zeros(batch, dtype=bool)
    W = S.copy()
    phi = np.broadcast_to(np.eye(M, dtype=complex), S.shape).copy()
    s = pattern.split
    offsets = pattern.d[1:]
    width = M - s

    # structured region: column c is only hit below the diagonal at rows c + D_k,
    # and row c of U is nonzero only at c and at the corner columns s..M-1
    for c in range(s):
        piv = _check_pivot(W[..., c, c], scale, c, broken, mask)
        for D in offsets:
            r = c + D
            if r >= M:
                break
            l = W[..., r, c] / piv
            phi[..., r, c] = l
            W[..., r, c] = 0
            W[..., r, s:] -= l[..., None] * W[..., c, s:]
            tally(nb * (1 + width), "lu")

    # trailing Schur complement: regular Doolittle elimination
    for c in range(s, M):
        piv = _check_pivot(W[..., c, c], scale, c, broken, mask)
        if c + 1 == M:
            break
        l = W[..., c + 1 :, c] / piv[..., None]
        phi[..., c + 1 :, c] = l
        W[..., c + 1 :, c] = 0
        W[..., c + 1 :, c + 1 :] -= l[..., :, None] * W[..., c, None, c + 1 :]
        k = M - c - 1
        tally(nb * (k + k * k), "lu")

    if mask:
        # dummy pivots leave the diagonal of U at zero; make it safe to divide by
        W[broken, ...] = np.where(np.eye(M, dtype=bool), 1.0, W[broken, ...])
    growth = np.abs(phi).max(axis=(-2, -1)) * np.abs(W).max(axis=(-2, -1)) / scale
    tally(nb, "lu")
    return LuWorkspace(phi, W, pattern, broken, growth)


def structured_invert(S, pattern: DelayPattern, workspace: LuWorkspace | None = None):
    """Inverse of a tap-delay matrix (or batch) through :func:`structured_lu`.

    Forward substitution against the identity uses only the band multipliers
    in the first ``M - D_P`` rows; back substitution touches only the corner
    columns of ``U`` there.
    """
    ws = structured_lu(S, pattern) if workspace is None else workspace
    phi, U = ws.phi, ws.lu
    M = pattern.M
    batch = U.shape[:-2]
    nb = int(np.prod(batch)) if batch else 1
    s = pattern.split
    offsets = pattern.d[1:]

    # Y = phi^{-1}; row r of Y only has entries in columns 0..r
    Y = np.broadcast_to(np.eye(M, dtype=complex), U.shape).copy()
    for r in range(M):
        for D in offsets:
            c = r - D
            if c < 0:
                break
            if c >= s:
                continue
            Y[..., r, : c + 1] -= phi[..., r, c, None] * Y[..., c, : c + 1]
            tally(nb * (c + 1), "inv")
        if r > s:
            Y[..., r, :r] -= np.einsum("...j,...jk->...k", phi[..., r, s:r], Y[..., s:r, :r])
            # row c of Y holds c + 1 nonzeros
            tally(nb * (r - s) * (r + s + 1) // 2, "inv")
    ws.y = Y

    # back substitution; row r of U is nonzero at r and at columns >= max(s, r + 1)
    X = np.empty_like(Y)
    for r in range(M - 1, -1, -1):
        f = max(s, r + 1)
        row = Y[..., r, :]
        if f < M:
            row = row - np.einsum("...j,...jk->...k", U[..., r, f:], X[..., f:, :])
            tally(nb * (M - f) * M, "inv")
        X[..., r, :] = row / U[..., r, r, None]
        tally(nb * M, "inv")
    return X


def dense_inverse_oracle(A, limit=None, return_residual=False):
    """LAPACK inverse with partial pivoting, behind the dense size guard.

    Parameters
    ----------
    A : ndarray, shape (K, K)
    limit : int, optional
        Largest admissible ``K``; defaults to the package dense limit.
    return_residual : bool
        Also return ``max |A @ inv - I|``.

    Raises
    ------
    SingularMatrixError
        When the reciprocal condition estimate falls below machine epsilon.
    """
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    K = A.shape[0]
    check_dense(K, limit, what="dense inverse")
    with warnings.catch_warnings():
        # singularity is judged by the condition estimate below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    gecon = scipy.linalg.get_lapack_funcs("gecon", (lu,))
    rcond, _ = gecon(lu, np.linalg.norm(A, 1), norm="1")
    if not rcond > np.finfo(float).eps:
        raise SingularMatrixError(f"matrix is numerically singular (condition estimate {1 / max(rcond, 1e-300):.3e})")
    inv = scipy.linalg.lu_solve((lu, piv), np.eye(K, dtype=complex), check_finite=False)
    tally(K**3, "dense")
    if return_residual:
        return inv, float(np.abs(A @ inv - np.eye(K)).max())
    return inv


def _transform_support(seq: MatrixSequence):
    """``block_diagonalize`` restricted to entries that are nonzero in some block."""
    grid = seq.grid
    support = np.any(seq.blocks != 0, axis=0)
    nnz = int(support.sum())
    if nnz == grid.M**2:
        return block_diagonalize(seq)
    tally(fft_mults(grid.N, nnz), "fft_mtx")
    out = np.zeros_like(seq.blocks)
    out[:, support] = np.fft.fft(seq.blocks[:, support], axis=0)
    return out


def invert_blocks(S, pattern: DelayPattern | None = None, stats=None):
    """Invert each ``S[t]`` of an ``(N, M, M)`` batch.

    With a conforming ``pattern`` the batch goes through the structured
    inversion; blocks that break down or show excessive element growth are
    redone with the dense pivoted inverse.  ``stats``, when given, is a dict
    that receives ``structured`` and ``fallback`` block counts.

    Raises
    ------
    SingularMatrixError
        If a block is singular to working precision; ``block`` is 1-based.
    """
    S = np.asarray(S)
    if pattern is not None and pattern.conforms(S):
        with np.errstate(over="ignore", invalid="ignore"):
            ws = structured_lu(S, pattern, on_breakdown="mask")
        redo = np.flatnonzero(ws.unstable)
        keep = np.flatnonzero(~ws.unstable)
        out = np.empty_like(S)
        if keep.size:
            sub = LuWorkspace(ws.phi[keep], ws.lu[keep], pattern, ws.breakdown[keep], ws.growth[keep])
            out[keep] = structured_invert(S[keep], pattern, sub)
    else:
        out = np.empty_like(S)
        redo = np.arange(S.shape[0])
    for t in redo:
        try:
            out[t] = dense_inverse_oracle(S[t])
        except SingularMatrixError as exc:
            raise SingularMatrixError(f"block S_{t + 1} is singular: {exc}", block=int(t) + 1) from exc
    if stats is not None:
        stats["fallback"] = stats.get("fallback", 0) + len(redo)
        stats["structured"] = stats.get("structured", 0) + S.shape[0] - len(redo)
    return out


def block_circ_inverse(seq: MatrixSequence, pattern: DelayPattern | None = None, stats=None) -> MatrixSequence:
    """First block row of the inverse of the block-circulant matrix ``circ(seq)``.

    The operator is block-diagonalized into ``S_t`` by a forward transform
    across the block index, each ``S_t`` is inverted, and the inverses are
    transformed back.  ``pattern`` enables the structured inversion whenever
    every ``S_t`` obeys it; otherwise the blocks are inverted densely.

    Raises
    ------
    SingularMatrixError
        If some ``S_t`` is singular; ``block`` names ``t`` (1-based).
    """
    S = _transform_support(seq)
    Sinv = invert_blocks(S, pattern, stats)
    return from_block_diagonal(seq.grid, Sinv)
