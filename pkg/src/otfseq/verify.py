"""Desk-scale self-check suite run by ``otfseq verify``.

Each property returns ``(passed, detail)``.  With ``fault=True`` the MMSE
build uses a mirrored block index, which only the MMSE equivalence property
should catch.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import binomtest

from .channel import (
    DelayProfile,
    build_time_domain,
    draw_realization,
    heff_rect_direct,
    heff_rect_theorem1,
    vehicular_b,
)
from .equalizers import (
    direct_mmse_matrix,
    direct_zf_matrix,
    mmse_apply,
    mmse_build,
    zf_apply,
    zf_build,
)
from .modem_sim import SimConfig, complex_noise, run_ber_sweep
from .struct_linalg import DelayPattern, structured_invert, structured_lu
from .transforms import DdGrid, block_circ_assemble

TOL_STRUCT = 1e-10
TOL_EQUIV = 1e-8


def block_shift_deviation(H, M, N):
    """Largest gap between block ``(i, k)`` and block ``(0, (k - i) % N)`` of an NM x NM matrix."""
    B = H.reshape(N, M, N, M).transpose(0, 2, 1, 3)
    i = np.arange(N)
    ref = B[0][(i[None, :] - i[:, None]) % N]
    return float(np.abs(B - ref).max())


def random_structured(rng, pattern: DelayPattern, batch=1):
    """Random blocks whose nonzeros sit at ``(m, (m - D_k) % M)``, with a dominant main tap."""
    M = pattern.M
    S = np.zeros((batch, M, M), dtype=complex)
    rows = np.arange(M)
    for k, d in enumerate(pattern.d):
        vals = rng.standard_normal((batch, M)) + 1j * rng.standard_normal((batch, M))
        if k == 0:
            vals = vals * 0.3 + 2.0
        S[:, rows, (rows - d) % M] = vals
    return S


def _channel(grid, profile, f_max, seed):
    return build_time_domain(draw_realization(profile, f_max, seed), profile, grid)


def prop_block_circulant(fault=False, realizations=10):
    grid = DdGrid(8, 8)
    profile = DelayProfile((0, 1, 3), (0.0, -3.0, -6.0))
    worst_shift = worst_match = 0.0
    for seed in range(realizations):
        ch = _channel(grid, profile, 2000.0, seed)
        H = heff_rect_direct(ch)
        worst_shift = max(worst_shift, block_shift_deviation(H, grid.M, grid.N))
        worst_match = max(worst_match, float(np.abs(H - block_circ_assemble(heff_rect_theorem1(ch).blocks)).max()))
    ok = worst_shift < TOL_STRUCT and worst_match < TOL_STRUCT
    return ok, f"block-shift deviation {worst_shift:.2e}, construction gap {worst_match:.2e}"


def prop_lu(fault=False, count=30):
    rng = np.random.default_rng(7)
    worst_rec = worst_res = 0.0
    fill_ok = True
    for trial in range(count):
        M = (8, 16, 32)[trial % 3]
        P = (2, 4, 6)[trial % 3]
        d = (0,) + tuple(sorted(rng.choice(np.arange(1, M // 2), P - 1, replace=False)))
        pattern = DelayPattern(d, M)
        S = random_structured(rng, pattern)
        ws = structured_lu(S, pattern)
        L = ws.phi[0]
        U = ws.lu[0]
        worst_rec = max(worst_rec, float(np.abs(L @ U - S[0]).max() / np.abs(S[0]).max()))
        Sinv = structured_invert(S, pattern, ws)[0]
        worst_res = max(worst_res, float(np.abs(S[0] @ Sinv - np.eye(M)).max()))
        s = pattern.split
        allowed_u = np.zeros((M, M), dtype=bool)
        allowed_u[np.arange(s), np.arange(s)] = True
        allowed_u[:s, s:] = True
        allowed_u[s:, s:] = np.triu(np.ones((M - s, M - s), dtype=bool))
        fill_ok &= bool(np.all(U[~allowed_u] == 0))
    ok = worst_rec < 1e-9 and worst_res < 1e-8 and fill_ok
    return ok, f"LU reconstruction {worst_rec:.2e}, inverse residual {worst_res:.2e}, fill confined: {fill_ok}"


def _equiv_setup(seeds):
    grid = DdGrid(16, 8)
    profile = vehicular_b().clipped(grid.M)
    pattern = DelayPattern.from_profile(profile, grid.M)
    for seed in seeds:
        ch = _channel(grid, profile, 4000.0, seed)
        y = complex_noise(np.random.default_rng(seed + 1000), grid.size)
        yield heff_rect_theorem1(ch), heff_rect_direct(ch), pattern, y


def _rel(a, b):
    return float(np.abs(a - b).max() / np.abs(b).max())


def prop_zf_equivalence(fault=False, seeds=5):
    worst = 0.0
    for eff, H, pattern, y in _equiv_setup(range(seeds)):
        worst = max(worst, _rel(zf_apply(zf_build(eff, pattern), y), direct_zf_matrix(H) @ y))
    return worst < TOL_EQUIV, f"max relative error {worst:.2e}"


def prop_mmse_equivalence(fault=False, seeds=5):
    worst = 0.0
    for eff, H, pattern, y in _equiv_setup(range(seeds)):
        for sigma2 in (0.1, 0.01):
            eq = mmse_build(eff, sigma2, pattern, flip_index=fault)
            worst = max(worst, _rel(mmse_apply(eq, y), direct_mmse_matrix(H, sigma2) @ y))
    return worst < TOL_EQUIV, f"max relative error {worst:.2e}"


def prop_mismatch_degradation(fault=False, frames=300):
    cfg = SimConfig(
        M=16, N=8, profile="vehicular-b-clipped", f_max=4000.0, snr_db=(12.0,), frames=frames,
        seed=11, equalizers=("zf_low", "ideal_mismatch_zf"), check_equivalence=False,
    )
    low, ideal = run_ber_sweep(cfg)
    n = low.bits
    # errors of the ideal-waveform equalizer exceed those of the matched one beyond chance
    p = binomtest(ideal.errors, n, low.ber, alternative="greater").pvalue if low.errors else 0.0
    ok = ideal.ber > low.ber and p < 0.01
    return ok, f"BER matched {low.ber:.4f} vs ideal-assumption {ideal.ber:.4f} (p = {p:.1e})"


PROPERTIES = {
    "block_circulant_channel": prop_block_circulant,
    "structured_lu": prop_lu,
    "zf_low_vs_direct": prop_zf_equivalence,
    "mmse_low_vs_direct": prop_mmse_equivalence,
    "mismatch_degradation": prop_mismatch_degradation,
}


def run_properties(names=None, fault=False, report=print):
    """Run the named properties (all by default) and return ``{name: (passed, detail)}``."""
    results = {}
    for name in names or PROPERTIES:
        try:
            results[name] = PROPERTIES[name](fault=fault)
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            results[name] = (False, f"numerical failure: {exc}")
        passed, detail = results[name]
        report(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return results
