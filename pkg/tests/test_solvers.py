import numpy as np
import pytest
from conftest import dense_H, random_channels, rel
from hypothesis import given, settings
from hypothesis import strategies as st

from privaudio.channel import ChannelOperator
from privaudio.solvers import cg, cgls, gram_operator, least_norm_carrier, row_space_residual


def projector_onto_nullspace(D):
    return np.eye(D.shape[1]) - np.linalg.pinv(D) @ D


class TestCgls:
    def test_least_squares_matches_pinv(self):
        rng = np.random.default_rng(0)
        A = rng.standard_normal((60, 25))
        b = rng.standard_normal(60)
        u, rep = cgls(A, b, tol=1e-12, max_iter=500)
        assert rep.converged
        assert rel(u, np.linalg.pinv(A) @ b) <= 1e-8

    def test_minimum_norm_for_wide_system(self):
        rng = np.random.default_rng(1)
        A = rng.standard_normal((20, 50))
        b = rng.standard_normal(20)
        u, rep = cgls(A, b, tol=1e-12, max_iter=500)
        assert rel(u, np.linalg.pinv(A) @ b) <= 1e-8
        assert rep.relative_residual <= 1e-10

    def test_identity_one_step(self):
        b = np.arange(1.0, 9.0)
        u, rep = cgls(np.eye(8), b)
        assert rep.iterations == 1 and np.allclose(u, b)

    def test_zero_rhs(self):
        u, rep = cgls(np.eye(4), np.zeros(4))
        assert rep.iterations == 0 and rep.converged and not u.any()

    def test_rhs_orthogonal_to_range(self):
        A = np.array([[1.0, 0.0], [0.0, 0.0]])
        u, rep = cgls(A, np.array([0.0, 3.0]))
        assert not u.any() and rep.relative_residual == 1.0

    def test_residual_monotone(self, small_channels):
        b = np.random.default_rng(3).standard_normal(small_channels.K * small_channels.N)
        _, rep = cgls(ChannelOperator(small_channels), b, tol=1e-10, max_iter=300)
        assert rep.monotone
        assert np.all(np.diff(rep.residual_history) <= 1e-10)

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            cgls(np.eye(3), np.ones(3), tol=0)
        with pytest.raises(ValueError):
            cgls(np.eye(3), np.ones(4))

    def test_stops_at_budget(self):
        A = np.diag(np.logspace(0, -6, 200))
        _, rep = cgls(A, np.ones(200), tol=1e-14, max_iter=5)
        assert rep.iterations == 5 and not rep.converged

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 1000), st.floats(1e-3, 1e3))
    def test_scale_equivariance(self, seed, c):
        rng = np.random.default_rng(seed)
        A = rng.standard_normal((15, 10))
        b = rng.standard_normal(15)
        u1, _ = cgls(A, b, tol=1e-12, max_iter=200)
        u2, _ = cgls(A, c * b, tol=1e-12, max_iter=200)
        assert rel(u2, c * u1) <= 1e-7


class TestCg:
    def test_spd(self):
        rng = np.random.default_rng(4)
        M = rng.standard_normal((30, 30))
        A = M @ M.T + 30 * np.eye(30)
        b = rng.standard_normal(30)
        x, rep = cg(A, b, tol=1e-12)
        assert rep.converged and rel(x, np.linalg.solve(A, b)) <= 1e-9

    def test_gram_operator(self, small_channels):
        H = ChannelOperator(small_channels)
        D = dense_H(small_channels)
        z = np.random.default_rng(0).standard_normal(H.shape[0])
        assert rel(gram_operator(H).matvec(z), D @ D.T @ z) <= 1e-10


class TestCarrier:
    def test_matches_pinv(self, small_channels):
        D = dense_H(small_channels)
        y = np.random.default_rng(7).standard_normal(D.shape[0])
        sol = least_norm_carrier(small_channels, y, tol=1e-12, max_iter=2000)
        assert rel(sol.carrier, np.linalg.pinv(D) @ y) <= 1e-8
        assert sol.report.relative_residual <= 1e-9

    def test_carrier_is_adjoint_of_coefficients(self, small_channels):
        H = ChannelOperator(small_channels)
        y = np.random.default_rng(8).standard_normal(H.shape[0])
        sol = least_norm_carrier(H, y, tol=1e-10)
        assert np.array_equal(sol.carrier, H.rmatvec(sol.coefficients))

    def test_orthogonal_to_nullspace(self, small_channels):
        D = dense_H(small_channels)
        y = np.random.default_rng(9).standard_normal(D.shape[0])
        s = least_norm_carrier(small_channels, y, tol=1e-12).carrier
        assert np.linalg.norm(projector_onto_nullspace(D) @ s) <= 1e-8 * np.linalg.norm(s)

    def test_shape_check(self, small_channels):
        with pytest.raises(ValueError):
            least_norm_carrier(small_channels, np.zeros(3))


class TestProjection:
    def test_matches_dense_projector(self, small_channels):
        D = dense_H(small_channels)
        v = np.random.default_rng(10).standard_normal(D.shape[1])
        w = row_space_residual(small_channels, v, tol=1e-12, max_iter=2000).residual
        assert rel(w, projector_onto_nullspace(D) @ v) <= 1e-8

    def test_in_nullspace(self, small_channels):
        H = ChannelOperator(small_channels)
        v = np.random.default_rng(11).standard_normal(H.shape[1])
        proj = row_space_residual(H, v, tol=1e-10)
        assert proj.report.converged
        assert np.linalg.norm(H.matvec(proj.residual)) <= 1e-8 * np.linalg.norm(H.matvec(v))

    def test_idempotent_and_orthogonal(self, small_channels):
        H = ChannelOperator(small_channels)
        rng = np.random.default_rng(12)
        v = rng.standard_normal(H.shape[1])
        w = row_space_residual(H, v, tol=1e-12).residual
        ww = row_space_residual(H, w, tol=1e-12).residual
        assert rel(ww, w) <= 1e-6
        s = H.rmatvec(rng.standard_normal(H.shape[0]))
        assert abs(w @ s) <= 1e-8 * np.linalg.norm(w) * np.linalg.norm(s)

    def test_shape_check(self, small_channels):
        with pytest.raises(ValueError):
            row_space_residual(small_channels, np.zeros(3))

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_property_nullspace(self, seed):
        c = random_channels(seed, K=1, L=3, N=40, L_h=8)
        H = ChannelOperator(c)
        v = np.random.default_rng(seed).standard_normal(H.shape[1])
        w = row_space_residual(H, v, tol=1e-11, max_iter=1000).residual
        assert np.linalg.norm(H.matvec(w)) <= 1e-7 * np.linalg.norm(H.matvec(v))
        assert np.linalg.norm(w) <= np.linalg.norm(v) * (1 + 1e-12)
