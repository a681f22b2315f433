import numpy as np
import pytest
from conftest import dense_H, dense_N, random_channels, rel
from hypothesis import given, settings
from hypothesis import strategies as st

from privaudio.channel import (
    ChannelOperator,
    ChannelSet,
    MccsOperator,
    NoiseBank,
    adjoint_H,
    adjoint_HN,
    apply_H,
    apply_HN,
    check_mccs_condition,
    check_nullspace_conditions,
    filter_noise,
    relative_delays,
)
from privaudio.signal import ProblemDims, Signal

# (L, K, N, L_h, L_n) -> margin L*L_g - N*K, worked out by hand with
# L_x = N - L_h + 1 and L_g = L_x - L_n + 1.
MCCS_TABLE = [
    ((2, 1, 100, 11, 1), 2 * 90 - 100),
    ((2, 1, 100, 11, 41), 2 * 50 - 100),
    ((2, 1, 100, 11, 42), 2 * 49 - 100),
    ((3, 2, 100, 11, 1), 3 * 90 - 200),
    ((3, 2, 100, 11, 24), 3 * 67 - 200),
    ((3, 2, 100, 11, 25), 3 * 66 - 200),
    ((6, 2, 16000, 2000, 7001), 6 * 7001 - 32000),
    ((6, 2, 16000, 2000, 3668), 6 * 10334 - 32000),
    ((6, 2, 16000, 2000, 8668), 6 * 5334 - 32000),
    ((6, 2, 16000, 2000, 8669), 6 * 5333 - 32000),
    ((4, 4, 64, 16, 1), 4 * 49 - 256),
    ((1, 1, 64, 16, 1), 49 - 64),
]


class TestChannelSet:
    def test_shapes(self, small_channels):
        c = small_channels
        assert (c.K, c.L, c.L_h, c.L_x) == (2, 3, 16, 49)

    def test_rejects_zero_rir(self):
        rirs = np.ones((1, 2, 4))
        rirs[0, 1] = 0
        with pytest.raises(ValueError):
            ChannelSet(rirs, 16)

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            ChannelSet(np.ones((2, 4)), 16)
        with pytest.raises(ValueError):
            ChannelSet(np.ones((1, 1, 20)), 16)

    def test_from_signals(self):
        grid = [[Signal([1.0, 0.5]), Signal([0.2, 1.0])]]
        assert ChannelSet.from_signals(grid, 8).rirs.shape == (1, 2, 2)
        with pytest.raises(ValueError):
            ChannelSet.from_signals([[Signal([1.0]), Signal([1.0, 2.0])]], 8)

    def test_first_arrivals(self):
        rirs = np.zeros((1, 2, 10))
        rirs[0, 0, 3] = 1.0
        rirs[0, 1, 1], rirs[0, 1, 7] = 0.001, 1.0
        c = ChannelSet(rirs, 20)
        assert c.first_arrivals().tolist() == [[3, 7]]
        assert relative_delays(c).tolist() == [4]


class TestOperator:
    @pytest.mark.parametrize("seed,K,L,N,L_h", [(0, 2, 3, 64, 16), (1, 1, 1, 33, 32), (2, 3, 2, 50, 7), (3, 2, 4, 97, 1)])
    def test_matches_dense(self, seed, K, L, N, L_h):
        c = random_channels(seed, K, L, N, L_h)
        D = dense_H(c)
        rng = np.random.default_rng(seed + 100)
        x = rng.standard_normal(L * c.L_x)
        y = rng.standard_normal(K * N)
        assert rel(apply_H(c, x), D @ x) <= 1e-10
        assert rel(adjoint_H(c, y), D.T @ y) <= 1e-10

    def test_adjoint_identity(self, small_channels):
        H = ChannelOperator(small_channels)
        rng = np.random.default_rng(5)
        for _ in range(20):
            x, y = rng.standard_normal(H.shape[1]), rng.standard_normal(H.shape[0])
            lhs, rhs = H.matvec(x) @ y, x @ H.rmatvec(y)
            assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(H.matvec(x)) * np.linalg.norm(y)

    def test_scipy_adjoint(self, small_channels):
        H = ChannelOperator(small_channels)
        y = np.random.default_rng(6).standard_normal(H.shape[0])
        assert np.allclose(H.H.matvec(y), H.rmatvec(y))
        assert np.allclose(H.T.H.matvec(H.H.matvec(y)), H.matvec(H.rmatvec(y)))

    def test_single_tap_is_identity(self):
        c = ChannelSet(np.ones((1, 1, 1)), 12)
        x = np.arange(12.0)
        assert np.allclose(apply_H(c, x), x)

    def test_wrong_length(self, small_channels):
        with pytest.raises(ValueError):
            apply_H(small_channels, np.zeros(5))
        with pytest.raises(ValueError):
            adjoint_H(small_channels, np.zeros(5))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(-5, 5), st.floats(-5, 5))
    def test_linearity(self, seed, a, b):
        c = random_channels(seed % 7, 2, 2, 40, 9)
        rng = np.random.default_rng(seed)
        x1, x2 = rng.standard_normal((2, 2 * c.L_x))
        lhs = apply_H(c, a * x1 + b * x2)
        rhs = a * apply_H(c, x1) + b * apply_H(c, x2)
        assert np.linalg.norm(lhs - rhs) <= 1e-10 * (1 + np.linalg.norm(rhs))


class TestMccsOperator:
    @pytest.mark.parametrize("L_n", [1, 5, 20])
    def test_matches_dense(self, small_channels, L_n):
        c = small_channels
        bank = NoiseBank.draw(c.L, L_n, 1.0, seed=3)
        L_g = c.L_x - L_n + 1
        D = dense_H(c) @ dense_N(bank, L_g)
        rng = np.random.default_rng(L_n)
        g, y = rng.standard_normal(c.L * L_g), rng.standard_normal(c.K * c.N)
        assert rel(apply_HN(c, bank, g), D @ g) <= 1e-10
        assert rel(adjoint_HN(c, bank, y), D.T @ y) <= 1e-10

    def test_filter_noise_consistent(self, small_channels):
        c = small_channels
        bank = NoiseBank.draw(c.L, 10, 1.0, seed=4)
        g = np.random.default_rng(1).standard_normal(c.L * (c.L_x - 9))
        x = filter_noise(bank, g)
        assert x.shape == (c.L, c.L_x)
        assert rel(apply_H(c, x.ravel()), apply_HN(c, bank, g)) <= 1e-10

    def test_unit_bank_reduces_to_H(self, small_channels):
        x = np.random.default_rng(2).standard_normal(small_channels.L * small_channels.L_x)
        assert rel(apply_HN(small_channels, NoiseBank.unit(small_channels.L), x), apply_H(small_channels, x)) <= 1e-12

    def test_mismatched_bank(self, small_channels):
        with pytest.raises(ValueError):
            MccsOperator(small_channels, NoiseBank.draw(2, 5))
        with pytest.raises(ValueError):
            MccsOperator(small_channels, NoiseBank.draw(3, small_channels.L_x + 1))

    def test_draw_deterministic_and_scaled(self):
        a, b = NoiseBank.draw(3, 50, 1.0, 9), NoiseBank.draw(3, 50, 1.0, 9)
        assert np.array_equal(a.noises, b.noises)
        assert np.allclose(NoiseBank.draw(3, 50, 10.0, 9).noises, 10 * a.noises, rtol=0, atol=1e-14)
        assert not np.array_equal(a.noises, NoiseBank.draw(3, 50, 1.0, 10).noises)


class TestConditions:
    @pytest.mark.parametrize("dims,margin", MCCS_TABLE)
    def test_mccs_table(self, dims, margin):
        L, K, N, L_h, L_n = dims
        check = check_mccs_condition(ProblemDims(L, K, N, L_h, L_n=L_n))
        assert check.margin == margin
        assert check.passed == (margin >= 0)

    def test_mccs_needs_split(self):
        with pytest.raises(ValueError):
            check_mccs_condition(ProblemDims(2, 1, 64, 16))

    def test_mccs_rank_agrees(self):
        # Just above and just below the bound on a small random instance.
        c = random_channels(11, 1, 2, 40, 9)
        for L_n, expect in ((13, True), (14, False)):
            bank = NoiseBank.draw(2, L_n, 1.0, 1)
            L_g = c.L_x - L_n + 1
            A = dense_H(c) @ dense_N(bank, L_g)
            full = np.linalg.matrix_rank(A) == c.N * c.K
            assert check_mccs_condition(ProblemDims(2, 1, 40, 9, L_n=L_n)).passed == expect == full

    def test_nullspace_conditions(self):
        d = ProblemDims(6, 2, 16000, 2000)
        chk = check_nullspace_conditions(d)
        assert chk.rows_cover_message and chk.wide_enough and chk.passed
        assert not check_nullspace_conditions(ProblemDims(1, 2, 64, 16)).wide_enough

    def test_delay_spread_condition(self):
        rirs = np.zeros((1, 3, 40))
        rirs[0, 0, 0], rirs[0, 1, 39], rirs[0, 2, 5] = 1.0, 1.0, 1.0
        c = ChannelSet(rirs, 60)  # L_x = 21 < spread 39, 3 * 21 >= 60
        chk = check_nullspace_conditions(c.dims, c)
        assert chk.max_relative_delay == 39
        assert not chk.covers_delay_spread and chk.solvable and not chk.passed

    def test_deterministic(self, small_channels):
        x = np.random.default_rng(0).standard_normal(small_channels.L * small_channels.L_x)
        assert np.array_equal(apply_H(small_channels, x), apply_H(small_channels, x))
