"""Delay-Doppler lattice transforms and Fourier operators on matrix sequences.

Every DFT in this package is unitary: ``F[i, p] = exp(-2j*pi*i*p/K) / sqrt(K)``
with 0-based indices.  ``fft_mtx`` and ``ifft_mtx`` are therefore exact
inverses of each other and preserve the summed Frobenius energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .accounting import check_dense, fft_mults, tally
from .errors import DimensionError


def _frozen(array, dtype=complex):
    out = np.array(array, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class DdGrid:
    """Critically sampled OTFS lattice.

    Parameters
    ----------
    M : int
        Number of subcarriers (delay bins).
    N : int
        Number of OTFS symbols (Doppler bins).
    delta_f : float
        Subcarrier spacing in Hz.
    T : float, optional
        Symbol duration in seconds. Defaults to ``1 / delta_f`` and must satisfy
        ``T * delta_f == 1``.
    """

    M: int
    N: int
    delta_f: float = 15e3
    T: float | None = None

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"M must be a positive integer, got {self.M!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "N", int(self.N))
        if not self.delta_f > 0:
            raise ValueError(f"delta_f must be positive, got {self.delta_f!r}")
        if self.T is None:
            object.__setattr__(self, "T", 1.0 / self.delta_f)
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T!r}")
        if not math.isclose(self.T * self.delta_f, 1.0, rel_tol=1e-9):
            raise ValueError(f"lattice must be critically sampled: T*delta_f = {self.T * self.delta_f}")

    @property
    def size(self):
        """Length ``N*M`` of a vectorized frame."""
        return self.M * self.N

    @property
    def sample_period(self):
        """Time-domain sample spacing ``1 / (M * delta_f)``."""
        return 1.0 / (self.M * self.delta_f)


@dataclass(frozen=True)
class DdFrame:
    """An M x N delay-Doppler frame (rows: delay, columns: Doppler)."""

    grid: DdGrid
    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data)
        if data.shape != (self.grid.M, self.grid.N):
            raise DimensionError(f"frame shape {data.shape} does not match grid ({self.grid.M}, {self.grid.N})")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class TfFrame:
    """An M x N time-frequency frame (rows: subcarrier, columns: symbol)."""

    grid: DdGrid
    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data)
        if data.shape != (self.grid.M, self.grid.N):
            raise DimensionError(f"frame shape {data.shape} does not match grid ({self.grid.M}, {self.grid.N})")
        object.__setattr__(self, "data", data)


@dataclass(frozen=True)
class MatrixSequence:
    """``N`` complex M x M blocks stored as one ``(N, M, M)`` array.

    ``blocks[n]`` is block ``n + 1`` in 1-based notation.
    """

    grid: DdGrid
    blocks: np.ndarray

    def __post_init__(self):
        blocks = _frozen(self.blocks)
        expected = (self.grid.N, self.grid.M, self.grid.M)
        if blocks.shape != expected:
            raise DimensionError(f"sequence shape {blocks.shape} does not match {expected}")
        object.__setattr__(self, "blocks", blocks)

    def __len__(self):
        return self.grid.N

    def __getitem__(self, n):
        return self.blocks[n]


def isfft(frame: DdFrame) -> TfFrame:
    """Delay-Doppler to time-frequency: ``F_M @ X @ F_N^H``."""
    x = np.fft.fft(frame.data, axis=0, norm="ortho")
    x = np.fft.ifft(x, axis=1, norm="ortho")
    return TfFrame(frame.grid, x)


def sfft(frame: TfFrame) -> DdFrame:
    """Time-frequency to delay-Doppler: ``F_M^H @ R @ F_N``."""
    y = np.fft.ifft(frame.data, axis=0, norm="ortho")
    y = np.fft.fft(y, axis=1, norm="ortho")
    return DdFrame(frame.grid, y)


def vectorize(frame: DdFrame) -> np.ndarray:
    """Column-wise stacking; entry ``(m, n)`` lands at ``n*M + m``."""
    return frame.data.reshape(-1, order="F").copy()


def devectorize(v, grid: DdGrid) -> DdFrame:
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] != grid.size:
        raise DimensionError(f"vector of length {v.size} cannot be reshaped to {grid.M}x{grid.N}")
    return DdFrame(grid, v.reshape(grid.M, grid.N, order="F"))


def fft_mtx(seq: MatrixSequence) -> MatrixSequence:
    """Unitary N-point DFT across the block index, one transform per entry."""
    grid = seq.grid
    tally(fft_mults(grid.N, grid.M**2), "fft_mtx")
    return MatrixSequence(grid, np.fft.fft(seq.blocks, axis=0, norm="ortho"))


def ifft_mtx(seq: MatrixSequence) -> MatrixSequence:
    """Unitary inverse of :func:`fft_mtx`."""
    grid = seq.grid
    tally(fft_mults(grid.N, grid.M**2), "fft_mtx")
    return MatrixSequence(grid, np.fft.ifft(seq.blocks, axis=0, norm="ortho"))


def block_circ_assemble(seq: MatrixSequence) -> np.ndarray:
    """Dense NM x NM block-circulant matrix whose block ``(i, k)`` is ``blocks[(k - i) % N]``.

    The first block row therefore reads ``A_1, A_2, ..., A_N``.  Meant for
    oracles and small problems; the allocation is subject to the dense guard.
    """
    grid = seq.grid
    M, N = grid.M, grid.N
    check_dense(grid.size, what="block-circulant assembly")
    idx = (np.arange(N)[None, :] - np.arange(N)[:, None]) % N
    tiles = seq.blocks[idx]  # (i, k, M, M)
    return tiles.transpose(0, 2, 1, 3).reshape(N * M, N * M)


def block_diagonalize(seq: MatrixSequence) -> np.ndarray:
    """Blocks ``S_t`` of ``(F_N^H x I) circ(A) (F_N x I) = diag(S_1, ..., S_N)``.

    ``S_t = sum_n exp(-2j*pi*t*n/N) A_n``, i.e. the unnormalized forward
    transform, which equals ``sqrt(N) * fft_mtx(A)``.
    """
    return math.sqrt(seq.grid.N) * fft_mtx(seq).blocks


def from_block_diagonal(grid: DdGrid, diag_blocks) -> MatrixSequence:
    """Inverse of :func:`block_diagonalize`: ``ifft_mtx(S) / sqrt(N)``."""
    seq = ifft_mtx(MatrixSequence(grid, diag_blocks))
    return MatrixSequence(grid, seq.blocks / math.sqrt(grid.N))


def block_circ_matvec(seq_or_diag, v, grid: DdGrid | None = None, *, diagonal=False):
    """Multiply a block-circulant operator by a length-NM vector.

    Parameters
    ----------
    seq_or_diag : MatrixSequence or ndarray
        The first block row ``{A_n}``, or, with ``diagonal=True``, the
        ``(N, M, M)`` array of diagonalized blocks ``S_t``.
    v : ndarray, shape (N*M,) or (N*M, K)
        Vector(s) to multiply.
    diagonal : bool
        Whether ``seq_or_diag`` already holds the blocks ``S_t``.
    """
    if diagonal:
        S = np.asarray(seq_or_diag)
        if grid is None:
            raise ValueError("grid is required when passing diagonal blocks")
    else:
        grid = seq_or_diag.grid
        S = block_diagonalize(seq_or_diag)
    M, N = grid.M, grid.N
    v = np.asarray(v)
    if v.shape[0] != grid.size:
        raise DimensionError(f"vector of length {v.shape[0]} does not match N*M = {grid.size}")
    segs = v.reshape((N, M) + v.shape[1:])
    tally(fft_mults(N, 2 * M * (v.size // grid.size)), "apply")
    V = np.fft.ifft(segs, axis=0, norm="ortho")
    tally(N * M * M * (v.size // grid.size), "apply")
    Z = np.einsum("tij,tj...->ti...", S, V)
    out = np.fft.fft(Z, axis=0, norm="ortho")
    return out.reshape(v.shape)
