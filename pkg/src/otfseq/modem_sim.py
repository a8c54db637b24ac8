"""End-to-end OTFS link simulation, BER sweeps and complexity accounting."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .accounting import DENSE_LIMIT, counting
from .channel import (
    DelayProfile,
    TimeVaryingChannel,
    build_time_domain,
    draw_realization,
    heff_ideal_mismatch,
    heff_rect_direct,
    heff_rect_theorem1,
    vehicular_b,
)
from .equalizers import (
    direct_mmse_matrix,
    direct_zf_matrix,
    ideal_apply,
    ideal_mmse_build,
    ideal_zf_build,
    mmse_apply,
    mmse_build,
    zf_apply,
    zf_build,
)
from .errors import DimensionError, SingularMatrixError
from .struct_linalg import DelayPattern
from .transforms import DdFrame, DdGrid, isfft, sfft, vectorize

logger = logging.getLogger(__name__)

EQUALIZERS = (
    "zf_low",
    "zf_direct",
    "mmse_low",
    "mmse_direct",
    "ideal_mismatch_zf",
    "ideal_mismatch_mmse",
)
PROFILES = ("vehicular-b", "vehicular-b-clipped", "single-path")


# --- QAM ----------------------------------------------------------------------


def _gray(n):
    return n ^ (n >> 1)


def _gray_inverse(g):
    n = g.copy()
    shift = g >> 1
    while np.any(shift):
        n ^= shift
        shift >>= 1
    return n


class QamConstellation:
    """Square Gray-labelled QAM with unit average energy.

    The first half of each bit label selects the in-phase level and the
    second half the quadrature level; the all-zero label maps to the
    upper-right corner, so 4-QAM sends ``00 -> (1 + 1j) / sqrt(2)``.
    """

    def __init__(self, order=4):
        side = math.isqrt(order)
        if order < 4 or side * side != order or side & (side - 1):
            raise ValueError(f"order must be a square power of two >= 4, got {order}")
        self.order = order
        self.side = side
        self.bits_per_symbol = int(math.log2(order))
        self._half = self.bits_per_symbol // 2
        self._scale = math.sqrt(2 * (side**2 - 1) / 3)
        labels = np.arange(order)
        self.points = self._map_indices(labels)

    def _levels(self, gray_idx):
        return (self.side - 1) - 2 * _gray_inverse(gray_idx).astype(float)

    def _map_indices(self, labels):
        i_lab = labels >> self._half
        q_lab = labels & ((1 << self._half) - 1)
        return (self._levels(i_lab) + 1j * self._levels(q_lab)) / self._scale

    def _bits_to_labels(self, bits):
        bits = np.asarray(bits, dtype=np.int64).reshape(-1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol - 1, -1, -1)
        return bits @ weights

    def map(self, bits):
        bits = np.asarray(bits)
        if bits.size % self.bits_per_symbol:
            raise DimensionError(f"{bits.size} bits is not a multiple of {self.bits_per_symbol}")
        return self._map_indices(self._bits_to_labels(bits))

    def demap(self, symbols):
        """Minimum-distance hard decisions, returned as a flat bit array."""
        z = np.asarray(symbols) * self._scale
        # nearest level index along each axis, then back to a Gray label
        def axis(v):
            idx = np.clip(np.rint(((self.side - 1) - v) / 2), 0, self.side - 1).astype(np.int64)
            return _gray(idx)

        labels = (axis(z.real) << self._half) | axis(z.imag)
        shifts = np.arange(self.bits_per_symbol - 1, -1, -1)
        return ((labels[:, None] >> shifts[None, :]) & 1).astype(np.int8).reshape(-1)


def qam_map(bits, order=4):
    return QamConstellation(order).map(bits)


def qam_demap(symbols, order=4):
    return QamConstellation(order).demap(symbols)


# --- link model ---------------------------------------------------------------------


def channel_apply(ch: TimeVaryingChannel, x):
    """``H_eff^rect @ x`` as ``(F_N x I) H~ (F_N^H x I) x`` without dense matrices."""
    grid = ch.grid
    x = np.asarray(x)
    if x.shape[0] != grid.size:
        raise DimensionError(f"expected length {grid.size}, got {x.shape[0]}")
    segs = x.reshape((grid.N, grid.M) + x.shape[1:])
    segs = np.fft.ifft(segs, axis=0, norm="ortho")
    segs = ch.apply_blocks(segs)
    return np.fft.fft(segs, axis=0, norm="ortho").reshape(x.shape)


def complex_noise(rng, size, sigma2=1.0):
    """Circularly symmetric complex Gaussian samples of variance ``sigma2``."""
    return math.sqrt(sigma2 / 2) * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def transmit_frame(x_dd, ch: TimeVaryingChannel, sigma2=0.0, rng=None):
    """Received DD vector ``H_eff^rect vec(X) + w``.

    ``x_dd`` is a :class:`DdFrame` or an already vectorized frame.  ``rng``
    (a Generator or seed) drives the noise; it is only needed for ``sigma2 > 0``.
    """
    x = vectorize(x_dd) if isinstance(x_dd, DdFrame) else np.asarray(x_dd, dtype=complex)
    y = channel_apply(ch, x)
    if sigma2 > 0:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        y = y + complex_noise(rng, y.shape, sigma2)
    return y


def ofdm_chain(frame: DdFrame, ch: TimeVaryingChannel) -> DdFrame:
    """Noise-free ISFFT, OFDM modulation, channel, OFDM demodulation and SFFT.

    Reference path for :func:`transmit_frame`: each time-frequency column is
    one OFDM symbol, modulated by an M-point inverse DFT.
    """
    X_tf = isfft(frame).data
    s = np.fft.ifft(X_tf, axis=0, norm="ortho")  # column p = time samples of symbol p
    r = ch.apply_blocks(s.T[:, :, None])[:, :, 0].T
    R_tf = np.fft.fft(r, axis=0, norm="ortho")
    from .transforms import TfFrame

    return sfft(TfFrame(frame.grid, R_tf))


# --- configuration and sweeps ------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """Description of one BER experiment.

    Defaults reproduce the full-scale setup: 64 subcarriers, 32 symbols,
    15 kHz spacing, vehicular-B taps, 1 kHz maximum Doppler and 4-QAM.
    """

    M: int = 64
    N: int = 32
    delta_f: float = 15e3
    profile: str = "vehicular-b"
    f_max: float = 1e3
    cp_len: int | None = None
    snr_db: tuple = (5.0, 8.0, 10.0, 12.0, 14.0, 16.0)
    frames: int = 20000
    seed: int = 0
    equalizers: tuple = ("zf_low", "mmse_low")
    qam_order: int = 4
    check_equivalence: bool = True

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(s) for s in self.snr_db))
        object.__setattr__(self, "equalizers", tuple(self.equalizers))
        if self.frames < 1:
            raise ValueError(f"frames must be >= 1, got {self.frames}")
        if not self.snr_db:
            raise ValueError("snr_db must list at least one SNR point")
        unknown = [e for e in self.equalizers if e not in EQUALIZERS]
        if unknown or not self.equalizers:
            raise ValueError(f"unknown equalizers {unknown}; choose from {', '.join(EQUALIZERS)}")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown profile {self.profile!r}; choose from {', '.join(PROFILES)}")
        if self.f_max < 0:
            raise ValueError(f"f_max must be non-negative, got {self.f_max}")
        QamConstellation(self.qam_order)
        self.delay_profile().check_grid(self.grid)

    @property
    def grid(self):
        return DdGrid(self.M, self.N, self.delta_f)

    def delay_profile(self) -> DelayProfile:
        if self.profile == "vehicular-b":
            prof = vehicular_b()
        elif self.profile == "vehicular-b-clipped":
            prof = vehicular_b().clipped(self.M)
        else:
            prof = DelayProfile((0,), (0.0,))
        if self.cp_len is not None:
            prof = DelayProfile(prof.positions, prof.powers_db, self.cp_len, prof.delays_s)
        return prof


@dataclass
class BerRecord:
    """Bit-error tally of one equalizer at one SNR point."""

    equalizer: str
    snr_db: float
    bits: int = 0
    errors: int = 0
    frames: int = 0
    skipped: int = 0
    wall_ms: float = 0.0
    mult_count: int = 0
    #: largest pre-decision relative gap to the matching direct equalizer
    max_rel_diff: float | None = field(default=None, compare=False)

    @property
    def ber(self):
        return self.errors / self.bits if self.bits else float("nan")

    def merge(self, other: BerRecord):
        self.bits += other.bits
        self.errors += other.errors
        self.frames += other.frames
        self.skipped += other.skipped
        self.wall_ms += other.wall_ms
        self.mult_count += other.mult_count
        if other.max_rel_diff is not None:
            self.max_rel_diff = max(self.max_rel_diff or 0.0, other.max_rel_diff)


def frame_rng(seed, frame):
    """Generator for frame ``frame`` of a sweep; independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(frame)]))


def _build(name, eff, H, mismatch, pattern, sigma2):
    if name == "zf_low":
        eq = zf_build(eff, pattern)
        return lambda y: zf_apply(eq, y)
    if name == "zf_direct":
        W = direct_zf_matrix(H)
        return lambda y: W @ y
    if name == "mmse_low":
        eq = mmse_build(eff, sigma2, pattern)
        return lambda y: mmse_apply(eq, y)
    if name == "mmse_direct":
        W = direct_mmse_matrix(H, sigma2)
        return lambda y: W @ y
    if name == "ideal_mismatch_zf":
        eq = ideal_zf_build(mismatch)
        return lambda y: ideal_apply(eq, y)
    eq = ideal_mmse_build(mismatch, sigma2)
    return lambda y: ideal_apply(eq, y)


_SNR_FREE = {"zf_low", "zf_direct", "ideal_mismatch_zf"}
_PAIRS = {"zf_low": "zf_direct", "mmse_low": "mmse_direct"}


def _simulate_frame(cfg: SimConfig, frame: int, profile, pattern, qam):
    """Outcome of one frame: ``{(eq, snr): (errors, wall_ms, mults, rel_diff)}`` or None if skipped."""
    grid = cfg.grid
    rng = frame_rng(cfg.seed, frame)
    real = draw_realization(profile, cfg.f_max, rng)
    ch = build_time_domain(real, profile, grid)
    bits = rng.integers(0, 2, grid.size * qam.bits_per_symbol, dtype=np.int8)
    x = qam.map(bits)
    noise = complex_noise(rng, grid.size)
    y_clean = channel_apply(ch, x)

    eff = heff_rect_theorem1(ch)
    needs_dense = any(e.endswith("_direct") for e in cfg.equalizers)
    H = heff_rect_direct(ch) if needs_dense else None
    mismatch = heff_ideal_mismatch(eff) if any(e.startswith("ideal") for e in cfg.equalizers) else None

    def timed(fn):
        t0 = time.perf_counter()
        with counting() as ops:
            value = fn()
        return value, (time.perf_counter() - t0) * 1e3, ops.mults

    out = {}
    shared = {}
    try:
        for snr in cfg.snr_db:
            sigma2 = 10.0 ** (-snr / 10.0)
            y = y_clean + math.sqrt(sigma2) * noise
            estimates = {}
            for name in cfg.equalizers:
                if name in _SNR_FREE:
                    # built once per frame and charged to every SNR row
                    if name not in shared:
                        shared[name] = timed(lambda: _build(name, eff, H, mismatch, pattern, sigma2))
                    apply, build_ms, build_mults = shared[name]
                else:
                    apply, build_ms, build_mults = timed(lambda: _build(name, eff, H, mismatch, pattern, sigma2))
                xhat, apply_ms, apply_mults = timed(lambda: apply(y))
                estimates[name] = xhat
                errors = int(np.count_nonzero(qam.demap(xhat) != bits))
                out[(name, snr)] = [errors, build_ms + apply_ms, build_mults + apply_mults, None]
            if cfg.check_equivalence:
                for low, direct in _PAIRS.items():
                    if low in estimates and direct in estimates:
                        ref = estimates[direct]
                        diff = float(np.abs(estimates[low] - ref).max() / np.abs(ref).max())
                        out[(low, snr)][3] = diff
    except SingularMatrixError as exc:
        logger.debug("frame %d skipped: %s", frame, exc)
        return None
    return out


def _run_frames(cfg: SimConfig, frames):
    profile = cfg.delay_profile()
    try:
        pattern = DelayPattern.from_profile(profile, cfg.M)
    except ValueError:
        pattern = None
    qam = QamConstellation(cfg.qam_order)
    bits_per_frame = cfg.grid.size * qam.bits_per_symbol
    records = {(e, s): BerRecord(e, s) for e in cfg.equalizers for s in cfg.snr_db}
    for frame in frames:
        result = _simulate_frame(cfg, frame, profile, pattern, qam)
        if result is None:
            for rec in records.values():
                rec.skipped += 1
            continue
        for key, (errors, wall, mults, diff) in result.items():
            rec = records[key]
            rec.merge(BerRecord(key[0], key[1], bits_per_frame, errors, 1, 0, wall, mults, diff))
    return records


def run_ber_sweep(cfg: SimConfig, jobs=1) -> list[BerRecord]:
    """Monte-Carlo BER of every selected equalizer at every SNR point.

    Each frame draws its channel, data and unit noise from its own seed
    ``(cfg.seed, frame)``; all equalizers and SNR points of a frame see the
    same draws.  Frames where any equalizer hits a singular channel are
    skipped for all equalizers and counted in ``skipped``.  Results do not
    depend on ``jobs`` apart from the wall-time column.
    """
    frames = range(cfg.frames)
    if jobs <= 1:
        merged = _run_frames(cfg, frames)
    else:
        chunks = [frames[i::jobs] for i in range(jobs)]
        merged = {(e, s): BerRecord(e, s) for e in cfg.equalizers for s in cfg.snr_db}
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for part in pool.map(_run_frames, [cfg] * len(chunks), chunks):
                for key, rec in part.items():
                    merged[key].merge(rec)
    return [merged[(e, s)] for e in cfg.equalizers for s in cfg.snr_db]


def estimate_runtime_s(cfg: SimConfig):
    """Rough wall-time estimate from timing two frames of the configuration."""
    probe = replace(cfg, frames=2, check_equivalence=False)
    t0 = time.perf_counter()
    _run_frames(probe, range(2))
    return (time.perf_counter() - t0) / 2 * cfg.frames


# --- complexity accounting ------------------------------------------------------------


def analytic_costs(M, N, P):
    """Table-I cost formulas: direct ``(NM)^3``, ZF ``M^2 N log2 N``, MMSE ``M^2 N^2 P``."""
    return {
        "direct": float((N * M) ** 3),
        "zf_low": float(M * M * N * math.log2(N)) if N > 1 else 0.0,
        "mmse_low": float(M * M * N * N * P),
    }


def headline_ratios(M=32, N=32, P=6):
    costs = analytic_costs(M, N, P)
    return {
        "zf": costs["direct"] / costs["zf_low"],
        "mmse": costs["direct"] / costs["mmse_low"],
    }


@dataclass
class ComplexityRow:
    scheme: str
    M: int
    N: int
    P: int
    mult_count: int | None
    wall_ms: float | None
    analytic: float
    note: str = ""


def complexity_report(grid: DdGrid, profile: DelayProfile, *, f_max=1e3, sigma2=0.1, seed=0, reps=5, dense_limit=DENSE_LIMIT):
    """Measured multiply counts and median wall times of each scheme's build and one application.

    Dense schemes are marked ``skipped (guard)`` when ``N*M`` exceeds ``dense_limit``.
    """
    real = draw_realization(profile, f_max, seed)
    ch = build_time_domain(real, profile, grid)
    try:
        pattern = DelayPattern.from_profile(profile, grid.M)
    except ValueError:
        pattern = None
    y = complex_noise(np.random.default_rng(seed), grid.size)
    costs = analytic_costs(grid.M, grid.N, profile.P)
    dense_ok = grid.size <= dense_limit
    H = None

    def run(fn):
        times = []
        for _ in range(max(reps, 1)):
            t0 = time.perf_counter()
            with counting() as ops:
                fn()
            times.append((time.perf_counter() - t0) * 1e3)
        return ops.mults, float(np.median(times))

    def zf_low():
        eff = heff_rect_theorem1(ch)
        zf_apply(zf_build(eff, pattern), y)

    def mmse_low():
        eff = heff_rect_theorem1(ch)
        mmse_apply(mmse_build(eff, sigma2, pattern), y)

    rows = []
    for scheme, fn, analytic in (("zf_low", zf_low, costs["zf_low"]), ("mmse_low", mmse_low, costs["mmse_low"])):
        mults, wall = run(fn)
        rows.append(ComplexityRow(scheme, grid.M, grid.N, profile.P, mults, wall, analytic))
    if dense_ok:
        H = heff_rect_direct(ch, limit=dense_limit)
    for scheme, build in (("zf_direct", lambda: direct_zf_matrix(H, dense_limit)),
                          ("mmse_direct", lambda: direct_mmse_matrix(H, sigma2, dense_limit))):
        if not dense_ok:
            rows.append(ComplexityRow(scheme, grid.M, grid.N, profile.P, None, None, costs["direct"], "skipped (guard)"))
            continue
        mults, wall = run(lambda: build() @ y)
        rows.append(ComplexityRow(scheme, grid.M, grid.N, profile.P, mults, wall, costs["direct"]))
    return rows
