"""Time-varying multipath channels and the OTFS effective channel matrices.

The time-domain channel after CP removal is block diagonal,
``H~ = diag(H~_1, ..., H~_N)``, and each ``H~_p`` is a circular tap-delay
line with ``P`` taps.  Under rectangular waveforms the delay-Doppler
effective channel ``(F_N x I_M) H~ (F_N^H x I_M)`` is block circulant, with
first block row obtained from ``{H~_p}`` by one inverse transform across
``p``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .accounting import check_dense, fft_mults, tally
from .errors import DimensionError, ProfileError
from .transforms import DdGrid, MatrixSequence, block_circ_assemble, from_block_diagonal

#: ITU-R vehicular channel B: path delays (s) and average powers (dB).
VEHICULAR_B_DELAYS = (0.0, 0.3e-6, 8.9e-6, 12.9e-6, 17.1e-6, 20.0e-6)
VEHICULAR_B_POWERS_DB = (-2.5, 0.0, -12.8, -10.0, -25.2, -16.0)
#: Sample rate the vehicular-B taps are quantized at (64 subcarriers x 15 kHz).
REFERENCE_SAMPLE_RATE = 64 * 15e3


@dataclass(frozen=True)
class DelayProfile:
    """Tap positions (in samples) and average powers of a multipath channel.

    Parameters
    ----------
    positions : sequence of int
        Strictly increasing integer delay positions ``d = [D_1, ..., D_P]``.
    powers_db : sequence of float
        Average path powers in dB, one per tap.
    cp_len : int, optional
        Cyclic prefix length in samples, at least ``D_P + 1`` (the default).
    delays_s : sequence of float, optional
        Physical delays the positions were quantized from, kept for reference.
    """

    positions: tuple
    powers_db: tuple
    cp_len: int | None = None
    delays_s: tuple | None = None

    def __post_init__(self):
        positions = tuple(int(d) for d in self.positions)
        powers = tuple(float(p) for p in self.powers_db)
        if not positions:
            raise ProfileError("a delay profile needs at least one path")
        if len(powers) != len(positions):
            raise ProfileError(f"{len(positions)} delays but {len(powers)} powers")
        if positions[0] < 0:
            raise ProfileError(f"D_1 must be >= 0, got {positions[0]}")
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ProfileError(f"delay positions must be strictly increasing and distinct, got {list(positions)}")
        cp_len = positions[-1] + 1 if self.cp_len is None else int(self.cp_len)
        if cp_len < positions[-1] + 1:
            raise ProfileError(f"L_cp = {cp_len} must exceed the maximum delay D_P = {positions[-1]}")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "powers_db", powers)
        object.__setattr__(self, "cp_len", cp_len)
        if self.delays_s is not None:
            object.__setattr__(self, "delays_s", tuple(float(t) for t in self.delays_s))

    @classmethod
    def from_delays(cls, delays_s, powers_db, sample_rate, cp_len=None):
        """Quantize physical delays to sample positions by ceiling rounding."""
        delays_s = [float(t) for t in delays_s]
        if any(b <= a for a, b in zip(delays_s, delays_s[1:])):
            raise ProfileError("delays must be strictly increasing")
        # the small slack keeps exact multiples of the sample period from rounding up
        positions = [int(math.ceil(t * sample_rate - 1e-9)) for t in delays_s]
        if len(set(positions)) != len(positions):
            raise ProfileError(f"delays collide after quantization at {sample_rate} Hz: {positions}")
        return cls(tuple(positions), tuple(powers_db), cp_len, tuple(delays_s))

    @property
    def P(self):
        return len(self.positions)

    @property
    def max_delay(self):
        """``D_P``, the largest tap position."""
        return self.positions[-1]

    @property
    def variances(self):
        """Per-path gain variances, normalized to sum to one."""
        lin = 10.0 ** (np.asarray(self.powers_db) / 10.0)
        return lin / lin.sum()

    def check_grid(self, grid: DdGrid):
        if self.max_delay >= grid.M:
            raise ProfileError(f"maximum delay D_P = {self.max_delay} violates D_P < M = {grid.M}")

    def clipped(self, M):
        """Drop the taps at positions ``>= M`` so the profile fits ``M`` subcarriers."""
        keep = [k for k, d in enumerate(self.positions) if d < M]
        if not keep:
            raise ProfileError(f"no tap of {list(self.positions)} fits M = {M}")
        delays = None if self.delays_s is None else tuple(self.delays_s[k] for k in keep)
        return DelayProfile(
            tuple(self.positions[k] for k in keep),
            tuple(self.powers_db[k] for k in keep),
            None,
            delays,
        )


def vehicular_b(sample_rate=REFERENCE_SAMPLE_RATE, cp_len=None):
    """Vehicular-B taps quantized at ``sample_rate``; ``d = [0, 1, 9, 13, 17, 20]`` by default."""
    return DelayProfile.from_delays(VEHICULAR_B_DELAYS, VEHICULAR_B_POWERS_DB, sample_rate, cp_len)


@dataclass(frozen=True)
class PathRealization:
    """Complex gain and Doppler shift (Hz) of every path."""

    gains: np.ndarray
    dopplers: np.ndarray


def draw_realization(profile: DelayProfile, f_max, rng_seed) -> PathRealization:
    """Draw Rayleigh path gains and uniform Doppler shifts in ``[-f_max, f_max]``.

    ``rng_seed`` may be an integer seed or a :class:`numpy.random.Generator`.
    """
    if f_max < 0:
        raise ValueError(f"f_max must be non-negative, got {f_max}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    P = profile.P
    std = np.sqrt(profile.variances / 2.0)
    gains = std * (rng.standard_normal(P) + 1j * rng.standard_normal(P))
    dopplers = rng.uniform(-f_max, f_max, P) if f_max > 0 else np.zeros(P)
    return PathRealization(gains, dopplers)


@dataclass(frozen=True)
class TimeVaryingChannel:
    """Sparse per-symbol channel blocks ``H~_p``.

    ``taps[p, m, k]`` is the nonzero of row ``m`` of ``H~_{p+1}`` contributed
    by path ``k``; it sits in column ``(m - D_k) % M``.
    """

    grid: DdGrid
    profile: DelayProfile
    taps: np.ndarray

    def __post_init__(self):
        expected = (self.grid.N, self.grid.M, self.profile.P)
        taps = np.array(self.taps, dtype=complex)
        if taps.shape != expected:
            raise DimensionError(f"taps shape {taps.shape} does not match {expected}")
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)

    def columns(self):
        """``(M, P)`` array of column indices of the nonzeros of each row."""
        M = self.grid.M
        return (np.arange(M)[:, None] - np.asarray(self.profile.positions)[None, :]) % M

    def blocks(self):
        """Dense ``(N, M, M)`` array of the blocks ``H~_p``."""
        N, M, P = self.taps.shape
        out = np.zeros((N, M, M), dtype=complex)
        rows = np.broadcast_to(np.arange(M)[:, None], (M, P))
        out[:, rows, self.columns()] = self.taps
        return out

    def apply_blocks(self, segments):
        """Multiply segment ``p`` of an ``(N, M, ...)`` array by ``H~_p`` using the sparsity."""
        cols = self.columns()
        gathered = segments[:, cols]  # (N, M, P, ...)
        taps = self.taps.reshape(self.taps.shape + (1,) * (segments.ndim - 2))
        tally(self.taps.size * (segments.size // (self.grid.size)), "channel")
        return (taps * gathered).sum(axis=2)


def build_time_domain(real: PathRealization, profile: DelayProfile, grid: DdGrid) -> TimeVaryingChannel:
    """Sample the path phasors on the absolute time axis, CP samples included."""
    profile.check_grid(grid)
    M, N, L = grid.M, grid.N, profile.cp_len
    p = np.arange(N)[:, None]
    m = np.arange(M)[None, :]
    q = p * (M + L) + L + m + 1  # 1-based absolute sample index
    phase = np.exp(2j * np.pi * real.dopplers[None, None, :] * q[:, :, None] * grid.sample_period)
    taps = np.asarray(real.gains)[None, None, :] * phase
    return TimeVaryingChannel(grid, profile, taps)


@dataclass(frozen=True)
class EffectiveChannel:
    """Block-circulant DD-domain channel, stored as its first block row ``{A_n}``.

    ``taps`` keeps the ``(N, M, P)`` nonzeros of the ``A_n`` when they share
    the tap-delay sparsity of the time-domain blocks.
    """

    grid: DdGrid
    blocks: MatrixSequence
    profile: DelayProfile | None = None
    taps: np.ndarray | None = None

    def dense(self):
        return block_circ_assemble(self.blocks)


def heff_rect_theorem1(ch: TimeVaryingChannel) -> EffectiveChannel:
    """Block-circulant effective channel from one inverse transform of ``{H~_p}``.

    With unitary DFTs the blocks are ``A_n = ifft_mtx(H~)_n / sqrt(N)``.  Only
    the ``M*P`` nonzero positions are transformed.
    """
    grid = ch.grid
    tally(fft_mults(grid.N, grid.M * ch.profile.P), "fft_mtx")
    # numpy's default 1/N inverse equals the unitary inverse divided by sqrt(N)
    a_taps = np.fft.ifft(ch.taps, axis=0)
    M, P = grid.M, ch.profile.P
    blocks = np.zeros((grid.N, M, M), dtype=complex)
    rows = np.broadcast_to(np.arange(M)[:, None], (M, P))
    blocks[:, rows, ch.columns()] = a_taps
    return EffectiveChannel(grid, MatrixSequence(grid, blocks), ch.profile, a_taps)


def heff_rect_dense_blocks(ch: TimeVaryingChannel) -> EffectiveChannel:
    """Same result as :func:`heff_rect_theorem1` via a dense ``ifft_mtx`` of every entry."""
    return EffectiveChannel(ch.grid, from_block_diagonal(ch.grid, ch.blocks()), ch.profile)


def _unitary_dft(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)


def heff_rect_direct(ch: TimeVaryingChannel, limit=None) -> np.ndarray:
    """Dense ``(F_N x I_M) H~ (F_N^H x I_M)``; an oracle for small grids."""
    grid = ch.grid
    check_dense(grid.size, limit, what="direct effective channel")
    F = np.kron(_unitary_dft(grid.N), np.eye(grid.M))
    H = np.zeros((grid.size, grid.size), dtype=complex)
    for p, block in enumerate(ch.blocks()):
        s = slice(p * grid.M, (p + 1) * grid.M)
        H[s, s] = block
    tally(2 * grid.size**3, "dense")
    return F @ H @ F.conj().T


@dataclass(frozen=True)
class MismatchChannel:
    """Doubly circulant channel assumed under ideal bi-orthogonal waveforms.

    ``H_DD[:, n]`` is the ``n``-th length-M segment of the first column of the
    rectangular-waveform effective channel.  The channel acts on a DD frame
    by 2-D circular convolution with ``H_DD``.
    """

    grid: DdGrid
    H_DD: np.ndarray

    def eigenvalues(self):
        """Unnormalized 2-D DFT of ``H_DD``; the eigenvalues of the dense form."""
        return np.fft.fft2(self.H_DD)

    def apply(self, x):
        X = np.asarray(x).reshape(self.grid.M, self.grid.N, order="F")
        Y = np.fft.ifft2(self.eigenvalues() * np.fft.fft2(X))
        return Y.reshape(-1, order="F")

    def dense(self, limit=None):
        """Dense ``circ{circ{h_1}, ..., circ{h_N}}`` (first-column circulants at both levels)."""
        M, N = self.grid.M, self.grid.N
        check_dense(self.grid.size, limit, what="ideal-waveform channel")
        k = np.arange(M)
        l = np.arange(N)
        dk = (k[:, None] - k[None, :]) % M
        dl = (l[:, None] - l[None, :]) % N
        # entry ((l, k), (l', k')) = H_DD[(k - k') % M, (l - l') % N]
        big = self.H_DD[dk[None, :, None, :], dl[:, None, :, None]]
        return big.reshape(N * M, N * M)


def heff_ideal_mismatch(eff: EffectiveChannel) -> MismatchChannel:
    """Reshape the first column of the rectangular channel into ``H_DD``.

    With block ``(i, k)`` holding ``A_{(k-i) % N}``, block ``(i, 0)`` of the
    first block column is ``A_{-i % N}``.
    """
    N = eff.grid.N
    idx = (-np.arange(N)) % N
    H_DD = eff.blocks.blocks[idx, :, 0].T.copy()
    return MismatchChannel(eff.grid, H_DD)


# --- plain-text channel records ------------------------------------------------

_RECORD_MAGIC = "# otfseq channel v1"


def export_channel(ch: TimeVaryingChannel, path=None):
    """Write ``ch`` as a text record; returns the text when ``path`` is None.

    Layout: a magic comment, a header line of ``key=value`` fields
    (``M N delta_f P d L_cp``), then one ``p m k re im`` line per nonzero with
    1-based indices and 17 significant digits.
    """
    grid, prof = ch.grid, ch.profile
    buf = io.StringIO()
    buf.write(_RECORD_MAGIC + "\n")
    d = ",".join(str(x) for x in prof.positions)
    buf.write(f"M={grid.M} N={grid.N} delta_f={grid.delta_f:.17g} P={prof.P} d={d} L_cp={prof.cp_len}\n")
    for p in range(grid.N):
        for m in range(grid.M):
            for k in range(prof.P):
                z = ch.taps[p, m, k]
                buf.write(f"{p + 1} {m + 1} {k + 1} {z.real:.17g} {z.imag:.17g}\n")
    text = buf.getvalue()
    if path is None:
        return text
    Path(path).write_text(text)
    return None


def import_channel(source, powers_db=None) -> TimeVaryingChannel:
    """Read a record written by :func:`export_channel` from a path or a string."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        text = Path(source).read_text()
    else:
        text = source
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValueError("empty channel record")
    header = dict(field.split("=", 1) for field in lines[0].split())
    M, N, P = int(header["M"]), int(header["N"]), int(header["P"])
    d = tuple(int(x) for x in header["d"].split(","))
    if len(d) != P:
        raise ValueError(f"header declares P={P} but lists {len(d)} delays")
    grid = DdGrid(M, N, float(header["delta_f"]))
    cp_len = int(header["L_cp"]) if "L_cp" in header else None
    profile = DelayProfile(d, powers_db if powers_db is not None else (0.0,) * P, cp_len)
    taps = np.zeros((N, M, P), dtype=complex)
    seen = 0
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 5:
            raise ValueError(f"record line {lineno}: expected 5 fields, got {len(parts)}")
        p, m, k = (int(x) - 1 for x in parts[:3])
        taps[p, m, k] = complex(float(parts[3]), float(parts[4]))
        seen += 1
    if seen != N * M * P:
        raise ValueError(f"record has {seen} nonzeros, expected {N * M * P}")
    return TimeVaryingChannel(grid, profile, taps)
