import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import crandn, random_channel
from otfseq.accounting import counting, forbid_dense
from otfseq.channel import DelayProfile, MismatchChannel, PathRealization, build_time_domain, heff_ideal_mismatch, heff_rect_direct, heff_rect_theorem1
from otfseq.equalizers import (
    direct_mmse_matrix,
    direct_mmse_oracle,
    direct_zf_matrix,
    direct_zf_oracle,
    ideal_apply,
    ideal_mmse_build,
    ideal_zf_build,
    mmse_apply,
    mmse_build,
    zf_apply,
    zf_build,
)
from otfseq.errors import DimensionError, SingularMatrixError
from otfseq.modem_sim import channel_apply
from otfseq.struct_linalg import DelayPattern
from otfseq.transforms import DdGrid


def identity_eff(M, N):
    profile = DelayProfile((0,), (0.0,))
    ch = build_time_domain(PathRealization(np.array([1.0 + 0j]), np.zeros(1)), profile, DdGrid(M, N))
    return heff_rect_theorem1(ch), ch


def setup(M, N, positions=(0, 1, 3), seed=0, f_max=3e3):
    ch = random_channel(M, N, positions, f_max=f_max, seed=seed)
    eff = heff_rect_theorem1(ch)
    return ch, eff, DelayPattern.from_profile(ch.profile, M), heff_rect_direct(ch)


def rel(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


class TestZf:
    def test_identity(self):
        eff, _ = identity_eff(4, 3)
        B = zf_build(eff).blocks.blocks
        np.testing.assert_allclose(B[0], np.eye(4), atol=1e-15)
        assert np.abs(B[1:]).max() < 1e-15

    def test_matches_dense_inverse(self):
        _, eff, pattern, H = setup(4, 4, (0, 1))
        W = zf_build(eff, pattern).dense()
        assert np.abs(W - direct_zf_matrix(H)).max() < 1e-8

    def test_pure_delay_inverse_shift(self, rng):
        profile = DelayProfile((2,), (0.0,))
        ch = build_time_domain(PathRealization(np.array([1.0 + 0j]), np.zeros(1)), profile, DdGrid(6, 4))
        eq = zf_build(heff_rect_theorem1(ch))
        x = crandn(rng, 24)
        assert np.abs(zf_apply(eq, channel_apply(ch, x)) - x).max() < 1e-12

    def test_identity_apply(self, rng):
        eff, _ = identity_eff(4, 2)
        y = crandn(rng, 8)
        np.testing.assert_allclose(zf_apply(zf_build(eff), y), y, atol=1e-14)

    def test_zeros(self):
        _, eff, pattern, _ = setup(4, 4, (0, 1))
        assert np.all(zf_apply(zf_build(eff, pattern), np.zeros(16)) == 0)

    def test_noiseless_round_trip(self, rng):
        ch, eff, pattern, _ = setup(4, 4, (0, 1))
        x = crandn(rng, 16)
        assert np.abs(zf_apply(zf_build(eff, pattern), channel_apply(ch, x)) - x).max() < 1e-8

    def test_rejects_wrong_length(self):
        _, eff, pattern, _ = setup(4, 4, (0, 1))
        with pytest.raises(DimensionError):
            zf_apply(zf_build(eff, pattern), np.zeros(15))

    def test_singular_channel(self):
        profile = DelayProfile((0, 1), (0.0, 0.0))
        ch = build_time_domain(PathRealization(np.array([1.0, -1.0 + 0j]), np.zeros(2)), profile, DdGrid(4, 2))
        with pytest.raises(SingularMatrixError):
            zf_build(heff_rect_theorem1(ch), DelayPattern((0, 1), 4))

    def test_no_frame_sized_allocation(self, rng):
        ch, eff, pattern, _ = setup(16, 8, (0, 1, 9, 13))
        y = crandn(rng, 128)
        with forbid_dense(128):
            x = zf_apply(zf_build(eff, pattern), y)
        assert x.shape == (128,)

    def test_cheaper_than_direct(self):
        _, eff, pattern, H = setup(8, 8, (0, 1))
        with counting() as low:
            zf_build(eff, pattern)
        with counting() as direct:
            direct_zf_matrix(H)
        assert low.mults < direct.mults

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000), M=st.sampled_from([4, 8, 12]), N=st.integers(1, 8))
    def test_inverts_channel(self, seed, M, N):
        ch, eff, pattern, _ = setup(M, N, (0, 1, 3), seed=seed)
        x = crandn(np.random.default_rng(seed), M * N)
        try:
            eq = zf_build(eff, pattern)
        except SingularMatrixError:
            return
        H = eff.dense()
        cond = np.linalg.cond(H)
        assert np.abs(zf_apply(eq, channel_apply(ch, x)) - x).max() < 1e-13 * cond * (1 + np.abs(x).max())


class TestMmse:
    def test_identity_unit_noise(self):
        eff, _ = identity_eff(4, 3)
        W = mmse_build(eff, 1.0).blocks.blocks
        np.testing.assert_allclose(W[0], 0.5 * np.eye(4), atol=1e-15)
        assert np.abs(W[1:]).max() < 1e-15

    def test_zero_noise_is_zf(self):
        _, eff, pattern, _ = setup(6, 4, (0, 2))
        assert np.abs(mmse_build(eff, 0.0, pattern).dense() - zf_build(eff, pattern).dense()).max() < 1e-8

    @pytest.mark.parametrize("sigma2", [0.1, 0.01, 1.0])
    def test_matches_dense(self, sigma2):
        _, eff, pattern, H = setup(4, 4, (0, 1))
        W = mmse_build(eff, sigma2, pattern).dense()
        assert np.abs(W - direct_mmse_matrix(H, sigma2)).max() < 1e-8

    def test_apply_matches_dense_product(self, rng):
        _, eff, pattern, H = setup(8, 4)
        eq = mmse_build(eff, 0.1, pattern)
        y = crandn(rng, 32)
        assert np.abs(mmse_apply(eq, y) - eq.dense() @ y).max() < 1e-10

    def test_identity_apply(self, rng):
        eff, _ = identity_eff(4, 2)
        y = crandn(rng, 8)
        np.testing.assert_allclose(mmse_apply(mmse_build(eff, 1.0), y), y / 2, atol=1e-14)

    def test_zeros(self):
        _, eff, pattern, _ = setup(4, 4, (0, 1))
        assert np.all(mmse_apply(mmse_build(eff, 0.1, pattern), np.zeros(16)) == 0)

    def test_dense_block_path_agrees(self):
        _, eff, pattern, _ = setup(8, 4)
        bare = type(eff)(eff.grid, eff.blocks)  # no tap metadata: generic dense-block path
        assert rel(mmse_build(bare, 0.1).dense(), mmse_build(eff, 0.1, pattern).dense()) < 1e-12

    def test_mirrored_index_is_wrong(self):
        _, eff, pattern, H = setup(8, 4)
        W = mmse_build(eff, 0.1, pattern, flip_index=True).dense()
        assert rel(W, direct_mmse_matrix(H, 0.1)) > 1e-2

    def test_negative_noise(self):
        _, eff, _, _ = setup(4, 2, (0, 1))
        with pytest.raises(ValueError):
            mmse_build(eff, -0.1)

    def test_no_frame_sized_allocation(self, rng):
        _, eff, pattern, _ = setup(16, 8, (0, 1, 9, 13))
        with forbid_dense(128):
            mmse_apply(mmse_build(eff, 0.1, pattern), crandn(rng, 128))


class TestDirect:
    def test_identity(self, rng):
        y = crandn(rng, 6)
        np.testing.assert_allclose(direct_zf_oracle(np.eye(6), y), y)
        np.testing.assert_allclose(direct_mmse_oracle(np.eye(6), 0.25, y), y / 1.25)

    def test_agrees_with_low_complexity(self):
        worst_zf = worst_mmse = 0.0
        for seed in range(20):
            _, eff, pattern, H = setup(8, 4, seed=seed)
            y = crandn(np.random.default_rng(seed), 32)
            worst_zf = max(worst_zf, rel(zf_apply(zf_build(eff, pattern), y), direct_zf_oracle(H, y)))
            worst_mmse = max(worst_mmse, rel(mmse_apply(mmse_build(eff, 0.1, pattern), y), direct_mmse_oracle(H, 0.1, y)))
        assert worst_zf < 1e-8
        assert worst_mmse < 1e-8


class TestIdeal:
    def test_identity(self, rng):
        eff, _ = identity_eff(4, 3)
        mm = heff_ideal_mismatch(eff)
        y = crandn(rng, 12)
        np.testing.assert_allclose(ideal_apply(ideal_zf_build(mm), y), y, atol=1e-14)
        np.testing.assert_allclose(ideal_apply(ideal_mmse_build(mm, 0.5), y), y / 1.5, atol=1e-14)

    def test_matches_dense_inverse(self, rng):
        _, eff, _, _ = setup(4, 3, (0, 1))
        mm = heff_ideal_mismatch(eff)
        y = crandn(rng, 12)
        D = mm.dense()
        assert rel(ideal_apply(ideal_zf_build(mm), y), np.linalg.solve(D, y)) < 1e-10
        ref = np.linalg.solve(D.conj().T @ D + 0.1 * np.eye(12), D.conj().T @ y)
        assert rel(ideal_apply(ideal_mmse_build(mm, 0.1), y), ref) < 1e-10

    def test_zero_eigenvalue(self):
        mm = MismatchChannel(DdGrid(2, 2), np.array([[1.0, 0.0], [1.0, 0.0]], dtype=complex))
        with pytest.raises(SingularMatrixError):
            ideal_zf_build(mm)
