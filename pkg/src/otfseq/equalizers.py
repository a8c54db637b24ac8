"""Zero-forcing and MMSE equalizers for block-circulant OTFS channels.

The low-complexity equalizers never form an NM x NM matrix.  Both ZF and MMSE
matrices are block circulant, so they are stored as their first block row
together with the diagonalized blocks used for application.  The direct
equalizers invert the dense effective channel and serve as references.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .accounting import check_dense, fft_mults, tally
from .channel import EffectiveChannel, MismatchChannel
from .errors import DimensionError, SingularMatrixError
from .struct_linalg import DelayPattern, _transform_support, dense_inverse_oracle, invert_blocks
from .transforms import DdGrid, MatrixSequence, block_circ_matvec, block_diagonalize, from_block_diagonal


@dataclass(frozen=True)
class ZfEqualizer:
    """``W_ZF = circ{B_1, ..., B_N}``; ``inv_blocks[t]`` is ``S_t^{-1}``."""

    grid: DdGrid
    blocks: MatrixSequence
    inv_blocks: np.ndarray
    stats: dict = field(default_factory=dict, compare=False)

    def dense(self):
        from .transforms import block_circ_assemble

        return block_circ_assemble(self.blocks)


@dataclass(frozen=True)
class MmseEqualizer:
    """``W_MMSE = circ{W~_1, ..., W~_N}`` for noise variance ``sigma2``."""

    grid: DdGrid
    sigma2: float
    blocks: MatrixSequence
    diag_blocks: np.ndarray
    stats: dict = field(default_factory=dict, compare=False)

    def dense(self):
        from .transforms import block_circ_assemble

        return block_circ_assemble(self.blocks)


def _check_vector(grid, y):
    y = np.asarray(y)
    if y.ndim not in (1, 2) or y.shape[0] != grid.size:
        raise DimensionError(f"expected a DD vector of length {grid.size}, got shape {y.shape}")
    return y


def _diag_taps(eff: EffectiveChannel):
    """Nonzeros of the diagonalized blocks ``S_t`` (the time-domain blocks), or None."""
    if eff.taps is None:
        return None
    tally(fft_mults(eff.grid.N, eff.taps.shape[1] * eff.taps.shape[2]), "fft_mtx")
    return np.fft.fft(eff.taps, axis=0)


def zf_build(eff: EffectiveChannel, pattern: DelayPattern | None = None) -> ZfEqualizer:
    """Low-complexity ZF equalizer.

    The blocks ``S_t`` of the diagonalized channel are inverted with the
    structured LU when ``pattern`` is given, then transformed back into the
    first block row ``{B_q}`` of ``H_eff^{-1}``.

    Raises
    ------
    SingularMatrixError
        If the channel is not invertible; ``block`` names the failing ``t``.
    """
    stats = {}
    S = _transform_support(eff.blocks)
    try:
        Sinv = invert_blocks(S, pattern, stats)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"channel is not invertible: {exc}", block=exc.block) from exc
    B = from_block_diagonal(eff.grid, Sinv)
    return ZfEqualizer(eff.grid, B, Sinv, stats)


def zf_apply(eq: ZfEqualizer, y):
    """``W_ZF @ y`` through N-point transforms and the blocks ``S_t^{-1}``."""
    y = _check_vector(eq.grid, y)
    return block_circ_matvec(eq.inv_blocks, y, eq.grid, diagonal=True)


def _gram_blocks(eff: EffectiveChannel, pattern: DelayPattern | None):
    """``S_t^H S_t`` for every t, from the sparse taps when available."""
    grid = eff.grid
    M = grid.M
    s_taps = _diag_taps(eff)
    if s_taps is None or eff.profile is None:
        S = _transform_support(eff.blocks)
        tally(grid.N * M**3, "gram")
        return np.einsum("tri,trj->tij", S.conj(), S)
    d = np.asarray(eff.profile.positions)
    cols = (np.arange(M)[:, None] - d[None, :]) % M
    G = np.zeros((grid.N, M, M), dtype=complex)
    P = len(d)
    for k1 in range(P):
        for k2 in range(P):
            # (r -> cols[r, k1]) is a bijection, so no index repeats within one update
            G[:, cols[:, k1], cols[:, k2]] += s_taps[:, :, k1].conj() * s_taps[:, :, k2]
    tally(grid.N * M * P * P, "gram")
    return G


def _mmse_row_blocks(grid, c_inv, eff: EffectiveChannel, flip_index=False):
    """``W~_k = sum_i C^{-1}_i A^H_{(i - k) % N}`` (0-based), exploiting the sparsity of ``A_n``."""
    N, M = grid.N, grid.M
    i = np.arange(N)
    lag = (i[None, :] - i[:, None]) % N  # lag[k, i]
    if flip_index:
        lag = (-lag) % N
    if eff.taps is None or eff.profile is None:
        A_H = eff.blocks.blocks.conj().transpose(0, 2, 1)
        tally(N * N * M**3, "mmse_row")
        return np.einsum("imr,kirc->kmc", c_inv, A_H[lag])
    d = np.asarray(eff.profile.positions)
    cols = (np.arange(M)[:, None] - d[None, :]) % M
    W = np.zeros((N, M, M), dtype=complex)
    a_conj = eff.taps.conj()  # (n, row, path)
    for j in range(len(d)):
        # column c of C_i A_n^H is C_i[:, cols[c, j]] * conj(a[n, c, j]), summed over paths j
        G = c_inv[:, :, cols[:, j]]  # (i, m, c)
        Q = a_conj[lag, :, j]  # (k, i, c)
        W += np.einsum("imc,kic->kmc", G, Q)
    tally(N * N * M * M * len(d), "mmse_row")
    return W


def mmse_build(eff: EffectiveChannel, sigma2, pattern: DelayPattern | None = None, *, flip_index=False) -> MmseEqualizer:
    """Low-complexity MMSE equalizer ``(H^H H + sigma2 I)^{-1} H^H``.

    ``C = H^H H + sigma2 I`` is block circulant with diagonalized blocks
    ``S_t^H S_t + sigma2 I``.  Those are inverted per block and transformed
    back into ``{C_i^{-1}}``, and the first block row of ``W_MMSE`` follows
    from ``W~_k = sum_i C_i^{-1} A^H_{<i-k>_N + 1}``.

    Parameters
    ----------
    eff : EffectiveChannel
    sigma2 : float
        Noise variance per complex entry; zero reduces to ZF.
    pattern : DelayPattern, optional
        Accepted for interface symmetry with :func:`zf_build`; the regularized
        blocks are two-sided banded and always inverted densely.
    flip_index : bool
        Use ``A^H_{<k-i>_N + 1}`` instead; a deliberate fault for self-tests.
    """
    if sigma2 < 0:
        raise ValueError(f"sigma2 must be non-negative, got {sigma2}")
    grid = eff.grid
    G = _gram_blocks(eff, pattern)
    G = G + sigma2 * np.eye(grid.M)
    stats = {}
    try:
        Ginv = invert_blocks(G, None, stats)
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"regularized channel is singular: {exc}", block=exc.block) from exc
    c_inv = from_block_diagonal(grid, Ginv).blocks
    W = MatrixSequence(grid, _mmse_row_blocks(grid, c_inv, eff, flip_index))
    return MmseEqualizer(grid, float(sigma2), W, block_diagonalize(W), stats)


def mmse_apply(eq: MmseEqualizer, y):
    """``W_MMSE @ y`` through N-point transforms and the diagonalized blocks."""
    y = _check_vector(eq.grid, y)
    return block_circ_matvec(eq.diag_blocks, y, eq.grid, diagonal=True)


# --- dense references ---------------------------------------------------------


def direct_zf_matrix(H, limit=None):
    """``H^{-1}`` by dense pivoted inversion."""
    return dense_inverse_oracle(H, limit)


def direct_mmse_matrix(H, sigma2, limit=None):
    """``(H^H H + sigma2 I)^{-1} H^H`` by dense pivoted inversion."""
    H = np.asarray(H)
    K = H.shape[0]
    check_dense(K, limit, what="direct MMSE")
    C = H.conj().T @ H + sigma2 * np.eye(K)
    tally(K**3, "dense")
    W = dense_inverse_oracle(C, limit) @ H.conj().T
    tally(K**3, "dense")
    return W


def direct_zf_oracle(H, y, limit=None):
    y = np.asarray(y)
    tally(y.size * np.shape(H)[0], "apply")
    return direct_zf_matrix(H, limit) @ y


def direct_mmse_oracle(H, sigma2, y, limit=None):
    y = np.asarray(y)
    tally(y.size * np.shape(H)[0], "apply")
    return direct_mmse_matrix(H, sigma2, limit) @ y


# --- ideal-waveform (mismatched) equalizers --------------------------------------


@dataclass(frozen=True)
class IdealEqualizer:
    """Equalizer that trusts the doubly circulant channel ``H_eff^ide``.

    ``gains`` multiplies the 2-D DFT of the received frame.
    """

    grid: DdGrid
    gains: np.ndarray


def ideal_zf_build(ch: MismatchChannel) -> IdealEqualizer:
    lam = ch.eigenvalues()
    if np.any(np.abs(lam) <= 1e-14 * max(np.abs(lam).max(), 1e-300)):
        raise SingularMatrixError("ideal-waveform channel has a zero eigenvalue")
    tally(ch.grid.size, "ideal")
    return IdealEqualizer(ch.grid, 1.0 / lam)


def ideal_mmse_build(ch: MismatchChannel, sigma2) -> IdealEqualizer:
    lam = ch.eigenvalues()
    tally(2 * ch.grid.size, "ideal")
    return IdealEqualizer(ch.grid, lam.conj() / (np.abs(lam) ** 2 + sigma2))


def ideal_apply(eq: IdealEqualizer, y):
    grid = eq.grid
    y = _check_vector(grid, y)
    Y = y.reshape(grid.M, grid.N, order="F")
    tally(grid.size, "apply")
    return np.fft.ifft2(eq.gains * np.fft.fft2(Y)).reshape(-1, order="F")
