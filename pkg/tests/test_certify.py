import numpy as np
import pytest
from hypothesis import given, strategies as st

from phstab.certify import (
    Certificate,
    CertificateInfeasible,
    convexity_bounds,
    envelope,
    lyapunov_value,
    make_certificate,
    max_feasible_epsilon,
    sample_data,
    schur_pd_check,
    upsilon_sym,
)
from phstab.core import State
from phstab.plvcc import CanonicalPHSystem
from phstab.region import Region


def bench(D=1.0):
    return CanonicalPHSystem.quadratic(1.0, D, 4.0)


BOX = Region.uniform(1, 1.0, 1.0)


class TestLyapunov:
    def test_hand_value(self, benchmark_1dof):
        assert lyapunov_value(benchmark_1dof, State([1.0], [1.0]), 0.05) == pytest.approx(2.7)

    def test_zero_at_origin(self, benchmark_1dof):
        assert lyapunov_value(benchmark_1dof, State([0.0], [0.0]), 0.05) == 0.0

    def test_reduces_to_hamiltonian(self, s1_canonical):
        s = State([0.1, -0.2, 0.05], [0.3, 0.1, -0.2])
        assert lyapunov_value(s1_canonical, s, 0.0) == s1_canonical.hamiltonian(s.q, s.p)

    def test_unknown_phi(self, benchmark_1dof):
        with pytest.raises(ValueError, match="phi_choice"):
            lyapunov_value(benchmark_1dof, State([0.0], [0.0]), 0.1, "A")


class TestUpsilon:
    def test_one_dof_blocks(self, benchmark_1dof):
        # (1,1) block is eps A A^T = 0.05; off-diagonal eps D / 2; (2,2) D - eps * 4
        U = upsilon_sym(benchmark_1dof, State([0.3], [0.2]), 0.05)
        assert np.allclose(U, [[0.05, 0.025], [0.025, 0.8]])

    def test_eps_zero(self, benchmark_1dof):
        assert np.allclose(upsilon_sym(benchmark_1dof, State([0.3], [0.2]), 0.0), [[0, 0], [0, 1.0]])

    def test_inverse_phi_agrees_for_identity_A(self, benchmark_1dof):
        s = State([0.3], [0.2])
        assert np.allclose(upsilon_sym(benchmark_1dof, s, 0.05, "A_inverse"), upsilon_sym(benchmark_1dof, s, 0.05))

    def test_identity_along_pera_flow(self, s1_canonical):
        rng = np.random.default_rng(5)
        eps = 1e-3
        for _ in range(10):
            q, p = rng.uniform(-0.3, 0.3, 3), rng.uniform(-0.5, 0.5, 3)
            f = np.r_[s1_canonical.rhs(q, p)]
            g = np.r_[s1_canonical.U.grad(q), p]
            S = lambda x: lyapunov_value(s1_canonical, State.from_vector(x), eps)
            x = np.r_[q, p]
            d = 1e-4 / np.linalg.norm(f)
            fd = (S(x + d * f) - S(x - d * f)) / (2 * d)
            assert -g @ upsilon_sym(s1_canonical, State(q, p), eps) @ g == pytest.approx(fd, rel=1e-6)


class TestSchur:
    @pytest.mark.parametrize("U, ok, margin", [
        ([[0.1, 0.025], [0.025, 0.8]], True, 0.1),
        (np.eye(2), True, 1.0),
        ([[1.0, 2.0], [2.0, 1.0]], False, None),
    ])
    def test_cases(self, U, ok, margin):
        got_ok, got = schur_pd_check(np.array(U))
        assert got_ok == ok
        if margin is not None:
            assert got == pytest.approx(margin)

    def test_delta_shifts_margin(self):
        assert schur_pd_check(np.eye(2), delta=1.0) == (False, 0.0)

    @given(st.integers(0, 10_000))
    def test_agrees_with_eigenvalues(self, seed):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((4, 4))
        U = X @ X.T - rng.uniform(0, 2) * np.eye(4)
        ok, _ = schur_pd_check(U)
        assert ok == (np.linalg.eigvalsh(U).min() > 1e-12) or abs(np.linalg.eigvalsh(U).min()) < 1e-9


class TestEpsilon:
    def test_benchmark_value(self, benchmark_1dof):
        assert max_feasible_epsilon(benchmark_1dof, BOX) == pytest.approx(0.0625, abs=1e-3)

    def test_schur_bound_not_binding(self, benchmark_1dof):
        # analytic: the 2x2 Schur condition eps(1 - 4 eps) > eps^2 / 4 gives eps < 4/17
        e = max_feasible_epsilon(benchmark_1dof, BOX, enforce_k1=False)
        assert e == pytest.approx(4 / 17, rel=2e-4)
        assert e > 0.0625

    def test_heavy_damping_shrinks_epsilon(self):
        base = max_feasible_epsilon(bench(1.0), BOX)
        heavy = max_feasible_epsilon(bench(100.0), BOX)
        assert heavy < base
        # closed form of the Schur bound: eps < 4 d / (d^2 + 16)
        assert heavy == pytest.approx(400 / 10016, rel=2e-4)

    def test_infeasible_when_no_damping(self):
        with pytest.raises(CertificateInfeasible, match="worst sample"):
            max_feasible_epsilon(bench(0.0), BOX, enforce_k1=False)

    def test_convexity_bounds(self, benchmark_1dof):
        assert convexity_bounds(benchmark_1dof, BOX) == (1.0, 4.0)
        half = CanonicalPHSystem.quadratic(np.eye(2), np.eye(2), np.eye(2))
        assert convexity_bounds(half, Region.uniform(2, 1.0, 1.0)) == (1.0, 1.0)

    def test_pera_beta_max(self, s1_canonical, pera_region):
        lo, hi = convexity_bounds(s1_canonical, pera_region)
        assert lo == 1.0 and 350 <= hi < 352

    def test_nonconvex_potential(self):
        from phstab.core import MatrixField, ScalarField
        csys = CanonicalPHSystem(1, MatrixField.constant([[1.0]]),
                                 MatrixField.constant([[0.0]], depends_on_p=True),
                                 MatrixField.constant([[1.0]], depends_on_p=True),
                                 ScalarField(lambda q: 1 - np.cos(q[0])))
        with pytest.raises(CertificateInfeasible, match="strongly convex"):
            make_certificate(csys, Region.uniform(1, 3.2, 1.0))


class TestCertificate:
    def test_benchmark_certificate(self, benchmark_1dof):
        c = make_certificate(benchmark_1dof, BOX)
        assert c.epsilon == pytest.approx(0.5 * c.epsilon_star)
        assert c.rate_paper > 0 and c.rate_sound > 0 and c.global_flag

    def test_k_constants_at_given_epsilon(self, benchmark_1dof):
        c = make_certificate(benchmark_1dof, BOX, epsilon=0.03)
        assert c.k1 == pytest.approx(0.26) and c.k2 == pytest.approx(2.24)

    def test_epsilon_out_of_range(self, benchmark_1dof):
        with pytest.raises(CertificateInfeasible, match="outside"):
            make_certificate(benchmark_1dof, BOX, epsilon=0.2)

    def test_text_round_trip(self, benchmark_1dof):
        c = make_certificate(benchmark_1dof, BOX)
        c.metadata = {"model": "benchmark"}
        text = c.to_text()
        assert text.startswith("# model = benchmark")
        back = Certificate.from_text(text)
        for key in ("epsilon", "mu", "k1", "k2", "rate_paper", "rate_sound"):
            assert getattr(back, key) == getattr(c, key)
        assert back.samples == c.samples and back.global_flag

    def test_text_missing_key(self):
        with pytest.raises(ValueError, match="missing"):
            Certificate.from_text("epsilon = 1\n")

    def test_linear_rates_are_lower_bounds(self):
        for k in (1.0, 4.0):
            for d in (0.5, 1.0, 2.0):
                csys = CanonicalPHSystem.quadratic(np.eye(2), d * np.eye(2), k * np.eye(2))
                c = make_certificate(csys, Region.uniform(2, 1.0, 1.0))
                F = np.block([[np.zeros((2, 2)), np.eye(2)], [-k * np.eye(2), -d * np.eye(2)]])
                assert c.rate_sound <= np.abs(np.linalg.eigvals(F).real).min()

    def test_sample_data_shapes(self, benchmark_1dof):
        data = sample_data(benchmark_1dof, BOX)
        assert data.U0.shape == (data.N, 2, 2) and data.cond3_min == pytest.approx(1.0)


class TestEnvelope:
    def test_initial_value(self, benchmark_1dof):
        c = make_certificate(benchmark_1dof, BOX, epsilon=0.03)
        a, b = envelope(c, 1.0, 0.0)
        assert a == pytest.approx(np.sqrt(2.24 / 0.26)) and b == a

    def test_plug_in_value(self, benchmark_1dof):
        c = make_certificate(benchmark_1dof, BOX, epsilon=0.03)
        _, b = envelope(c, 1.0, 1.0)
        assert b == pytest.approx(np.sqrt(2.24 / 0.26) * np.exp(-c.rate_sound))

    def test_equal_constants(self, benchmark_1dof):
        c = make_certificate(benchmark_1dof, BOX)
        c.k1 = c.k2 = 1.0
        assert envelope(c, 2.0, 3.0)[1] == pytest.approx(2.0 * np.exp(-3 * c.rate_sound))

    def test_negative_time(self, benchmark_1dof):
        with pytest.raises(ValueError):
            envelope(make_certificate(benchmark_1dof, BOX), 1.0, -1.0)
