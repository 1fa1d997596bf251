import numpy as np
import pytest
from scipy.linalg import expm

from phstab.certify import make_certificate
from phstab.core import MatrixField, MechanicalSystem, ScalarField, State
from phstab.pidpbc import GainSet, build_closed_loop
from phstab.plvcc import to_canonical
from phstab.region import Region
from phstab.sim import (
    IntegrationError,
    Trajectory,
    empirical_decay_rate,
    energy_audit,
    rk4_step,
    simulate,
    verify_envelope,
)


def quad_1dof(damping=0.5):
    D = MatrixField.constant([[damping]], depends_on_p=True, symmetric=True, definite="psd")
    U = ScalarField(lambda q: 2.0 * q[0] ** 2, lambda q: np.array([4.0 * q[0]]), lambda q: np.array([[4.0]]))
    return MechanicalSystem(1, 1, MatrixField.constant([[1.0]]), U, D)


def bench_loop():
    return build_closed_loop(quad_1dof(), GainSet(1.0, 2.0, 0.0, [0.0]))


class TestRK4:
    def test_linear_decay_is_taylor_polynomial(self):
        x = rk4_step(lambda x: -x, np.array([1.0]), 0.1)
        assert x[0] == pytest.approx(1 - 0.1 + 0.01 / 2 - 0.001 / 6 + 0.0001 / 24, abs=1e-12)
        assert x[0] == pytest.approx(0.90483750, abs=1e-8)

    def test_fixed_point(self):
        x = np.array([0.3, -2.0])
        assert np.array_equal(rk4_step(lambda x: np.zeros(2), x, 0.5), x)

    def test_oscillator_period(self):
        f = lambda x: np.array([x[1], -x[0]])
        h = 1e-3
        steps = int(round(2 * np.pi / h))
        h = 2 * np.pi / steps
        x = np.array([1.0, 0.0])
        for _ in range(steps):
            x = rk4_step(f, x, h)
        assert np.linalg.norm(x - [1.0, 0.0]) <= 1e-9

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_blow_up(self):
        with pytest.raises(IntegrationError, match="blow-up"):
            rk4_step(lambda x: x * 1e300, np.array([1e10]), 1.0)

    def test_rejects_nonpositive_step(self):
        with pytest.raises(ValueError):
            rk4_step(lambda x: x, np.zeros(1), 0.0)

    def test_step_halving_ratio(self):
        F = np.array([[0.0, 1.0], [-4.0, -0.5]])
        x0 = np.array([1.0, 0.0])
        exact = expm(F * 1.0) @ x0

        def run(h):
            x = x0
            for _ in range(int(round(1.0 / h))):
                x = rk4_step(lambda z: F @ z, x, h)
            return np.linalg.norm(x - exact)
        ratio = run(0.02) / run(0.01)
        assert 12 <= ratio <= 20


class TestSimulate:
    def test_benchmark_converges(self):
        # exact oracle: the closed loop is qdot = p, pdot = -6 q - 1.5 p
        tr = simulate(bench_loop(), State([1.0], [0.0]), horizon=10.0, h=1e-3)
        exact = expm(np.array([[0.0, 1.0], [-6.0, -1.5]]) * 10.0) @ [1.0, 0.0]
        assert np.allclose(np.r_[tr.q[-1], tr.p[-1]], exact, atol=1e-10)
        assert abs(tr.q[-1, 0]) <= 1e-3 and tr.normx[-1] <= 1.5e-3
        assert tr.representation == "closed-loop"

    def test_equilibrium_is_constant(self):
        tr = simulate(bench_loop(), State([0.0], [0.0]), horizon=1.0, h=1e-2)
        assert np.all(tr.q == 0) and np.all(tr.p == 0)

    def test_record_every_keeps_final_step(self):
        tr = simulate(bench_loop(), State([1.0], [0.0]), horizon=1.0, h=0.03, record_every=10)
        full = simulate(bench_loop(), State([1.0], [0.0]), horizon=1.0, h=0.03)
        assert tr.times[-1] == pytest.approx(full.times[-1])
        assert np.array_equal(tr.q[-1], full.q[-1]) and np.array_equal(tr.q[1], full.q[10])

    def test_representations_agree_one_dof(self):
        cl = bench_loop()
        s0 = State([0.8], [-0.2])
        a = simulate(cl.base, s0, horizon=2.0, h=1e-3, gains=cl.gains)
        b = simulate(cl, s0, horizon=2.0, h=1e-3)
        c = simulate(to_canonical(cl), State([0.8], [-0.2]), horizon=2.0, h=1e-3)
        assert a.representation == "open-loop+controller" and a.controls.shape == (a.times.size, 1)
        assert np.allclose(a.q, b.q, atol=1e-12) and np.allclose(b.normx, c.normx, atol=1e-10)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError, match="horizon must be positive"):
            simulate(bench_loop(), State([1.0], [0.0]), horizon=0.0)
        with pytest.raises(ValueError, match="step"):
            simulate(bench_loop(), State([1.0], [0.0]), horizon=1.0, h=-1.0)
        with pytest.raises(TypeError):
            simulate(object(), State([1.0], [0.0]), horizon=1.0)

    def test_csv_format(self, tmp_path):
        cl = bench_loop()
        cert = make_certificate(to_canonical(cl), Region.uniform(1, 1.0, 1.0))
        tr = simulate(cl, State([0.5], [0.0]), horizon=0.05, h=0.01, certificate=cert)
        path = tmp_path / "t.csv"
        tr.to_csv(path)
        raw = path.read_bytes()
        assert b"\r\n" not in raw
        lines = raw.decode().splitlines()
        assert lines[0] == "t,q1,p1,Hd,S,normx" and len(lines) == 7
        assert float(lines[1].split(",")[4]) == pytest.approx(tr.lyapunov[0])

    def test_csv_deterministic(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            simulate(bench_loop(), State([1.0], [0.0]), horizon=0.5, h=1e-2).to_csv(tmp_path / name)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_trajectory_lengths_checked(self):
        with pytest.raises(ValueError, match="inconsistent"):
            Trajectory(np.zeros(3), np.zeros((2, 1)), np.zeros((3, 1)), np.zeros(3), np.zeros(3))


class TestAudit:
    def test_damped_passes(self):
        tr = simulate(bench_loop(), State([1.0], [0.0]), horizon=3.0, h=1e-3)
        assert energy_audit(tr).passed

    def test_conservative_drift_small(self):
        sys = quad_1dof(0.0)
        tr = simulate(sys, State([1.0], [0.0]), horizon=5.0, h=1e-3)
        assert np.max(np.abs(tr.energies - tr.energies[0])) <= 1e-8

    def test_spike_is_located(self):
        tr = simulate(bench_loop(), State([1.0], [0.0]), horizon=1.0, h=1e-2)
        tr.energies[40] += 1.0
        audit = energy_audit(tr)
        assert not audit.passed and audit.worst_index == 40
        assert "FAIL at index 40" in audit.summary()


class TestDecayRate:
    def test_exact_exponential(self):
        t = np.arange(0, 3.0 + 1e-12, 0.01)
        assert empirical_decay_rate((t, np.exp(-2 * t))).rate == pytest.approx(2.0, abs=1e-6)

    def test_oscillating_envelope(self):
        t = np.arange(0, 10.0, 1e-3)
        fit = empirical_decay_rate((t, np.exp(-t) * (1 + 0.5 * np.cos(10 * t))))
        assert fit.used_peaks and fit.rate == pytest.approx(1.0, abs=0.05)

    def test_constant_rejected(self):
        with pytest.raises(ValueError, match="not converging"):
            empirical_decay_rate((np.arange(10.0), np.ones(10)))


class TestEnvelopeCheck:
    def setup_method(self):
        self.cl = bench_loop()
        self.cert = make_certificate(to_canonical(self.cl), Region.uniform(1, 1.0, 1.0))

    def test_sound(self):
        tr = simulate(self.cl, State([0.9], [-0.5]), horizon=5.0, h=1e-3)
        assert verify_envelope(tr, self.cert)

    def test_outside_region(self):
        tr = simulate(self.cl, State([2.0], [0.0]), horizon=0.1, h=1e-2)
        with pytest.raises(ValueError, match="outside certified region"):
            verify_envelope(tr, self.cert)

    def test_tenfold_rate_still_below_true_decay(self):
        # the certified rate is conservative enough that x10 remains sound here
        tr = simulate(self.cl, State([0.9], [-0.5]), horizon=5.0, h=1e-3)
        self.cert.rate_sound *= 10
        assert self.cert.rate_sound < 0.75
        assert verify_envelope(tr, self.cert)

    def test_inflated_rate_caught(self):
        # a rate above the exact |Re lambda| = 0.75 must be rejected
        tr = simulate(self.cl, State([0.9], [-0.5]), horizon=5.0, h=1e-3)
        self.cert.rate_sound = 2 * 0.75
        assert not verify_envelope(tr, self.cert)
