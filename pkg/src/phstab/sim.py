"""Fixed-step RK4 simulation, energy audits and decay-rate estimation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from phstab.certify import Certificate, envelope, lyapunov_value
from phstab.core import MechanicalSystem, State, eval_hamiltonian, eval_open_loop
from phstab.pidpbc import ClosedLoopSystem, GainSet, _controlled_rates, build_closed_loop
from phstab.plvcc import CanonicalPHSystem, map_state, to_canonical
from phstab.region import Region


class IntegrationError(RuntimeError):
    pass


def rk4_step(field: Callable[[np.ndarray], np.ndarray], x, h: float, t: float = 0.0) -> np.ndarray:
    """One classical Runge-Kutta step for the autonomous system ``xdot = field(x)``."""
    if not h > 0:
        raise ValueError("step size must be positive")
    hh = 0.5 * h
    k1 = field(x)
    k2 = field(x + hh * k1)
    k3 = field(x + hh * k2)
    k4 = field(x + h * k3)
    out = x + (h / 6.0) * (k1 + k4 + 2.0 * (k2 + k3))
    if not np.isfinite(out).all():
        raise IntegrationError(f"integration blow-up at t={t:.6g}")
    return out


@dataclass
class Trajectory:
    """Uniformly sampled solution. ``q``/``p`` are in the coordinates of the
    simulated representation; ``normx`` is always the canonical-coordinate
    norm ``|col(q - q_star, T_d^T p)|``."""

    times: np.ndarray
    q: np.ndarray
    p: np.ndarray
    energies: np.ndarray
    normx: np.ndarray
    lyapunov: Optional[np.ndarray] = None
    controls: Optional[np.ndarray] = None
    representation: str = "closed-loop"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = len(self.times)
        for name in ("q", "p", "energies", "normx"):
            if len(getattr(self, name)) != N:
                raise ValueError(f"trajectory field {name} has inconsistent length")

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def n(self) -> int:
        return self.q.shape[1]

    def state(self, k: int) -> State:
        return State(self.q[k], self.p[k])

    def vectors(self) -> np.ndarray:
        return np.hstack([self.q, self.p])

    def to_csv(self, path) -> None:
        """Header ``t,q1..qn,p1..pn,Hd,S,normx``; 17 significant digits, LF endings."""
        n = self.n
        cols = ["t"] + [f"q{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)] + ["Hd", "S", "normx"]
        S = self.lyapunov if self.lyapunov is not None else np.full(len(self.times), np.nan)
        data = np.column_stack([self.times, self.q, self.p, self.energies, S, self.normx])
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(cols) + "\n")
            for row in data:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _field_and_energy(system, gains: Optional[GainSet], compensate_gravity: bool):
    """Vector field on flat states plus the closed loop used for H_d and the canonical norm."""
    if isinstance(system, MechanicalSystem):
        n = system.n
        if gains is None:
            zero = np.zeros(system.m)

            def f(x):
                dq, dp = eval_open_loop(system, State(x[:n], x[n:]), zero)
                return np.concatenate([dq, dp])
            return f, None, "open-loop"
        cl = build_closed_loop(system, gains, compensate_gravity)
        kappa = cl.kappa

        def f(x):
            dq, dp, _, _ = _controlled_rates(system, gains, x[:n], x[n:], compensate_gravity, kappa, False)
            return np.concatenate([dq, dp])
        return f, cl, "open-loop+controller"
    if isinstance(system, ClosedLoopSystem):
        n = system.n

        def f(x):
            dq, dp = system.rhs(x[:n], x[n:])
            return np.concatenate([dq, dp])
        return f, system, "closed-loop"
    if isinstance(system, CanonicalPHSystem):
        n = system.n

        def f(x):
            dq, dp = system.rhs(x[:n], x[n:])
            return np.concatenate([dq, dp])
        return f, getattr(system, "cl", None), "canonical"
    raise TypeError(f"cannot simulate object of type {type(system).__name__}")


def simulate(system, s0, horizon: float = 20.0, h: float = 1e-3, gains: Optional[GainSet] = None,
             certificate: Optional[Certificate] = None, compensate_gravity: bool = False,
             record_every: int = 1) -> Trajectory:
    """Integrate any of the three representations with fixed-step RK4.

    ``system`` may be a :class:`MechanicalSystem` (closed with ``gains`` via
    the control law, or left open when ``gains`` is None), a
    :class:`ClosedLoopSystem`, or a :class:`CanonicalPHSystem`. Energies are
    ``H_d`` for closed loops, ``H`` otherwise. When a certificate is given the
    Lyapunov function is recorded in canonical coordinates. Only every
    ``record_every``-th step is stored (the final step always is).
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    if not h > 0:
        raise ValueError("step size must be positive")
    x0 = s0.vector() if isinstance(s0, State) else np.asarray(s0, dtype=float)
    f, cl, rep = _field_and_energy(system, gains, compensate_gravity)
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    steps = int(round(horizon / h))
    n = x0.size // 2
    idx = np.arange(0, steps + 1, record_every)
    if idx[-1] != steps:
        idx = np.append(idx, steps)
    X = np.empty((idx.size, 2 * n))
    X[0] = x0
    x = x0
    j = 1
    for k in range(steps):
        x = rk4_step(f, x, h, t=k * h)
        if k + 1 == idx[j]:
            X[j] = x
            j += 1
    times = h * idx
    Q, P = X[:, :n], X[:, n:]

    controls = None
    if rep == "open-loop+controller":
        controls = np.array([_controlled_rates(system, gains, q, p, compensate_gravity, cl.kappa)[2]
                             for q, p in zip(Q, P)])

    if rep == "canonical":
        energies = np.array([system.hamiltonian(q, p) for q, p in zip(Q, P)])
        normx = np.linalg.norm(X, axis=1)
        csys = system
        canon = X
    elif cl is not None:
        energies = np.array([cl.hamiltonian(q, p) for q, p in zip(Q, P)])
        canon = np.array([map_state(cl, State(q, p)).vector() for q, p in zip(Q, P)])
        normx = np.linalg.norm(canon, axis=1)
        csys = None
    else:
        energies = np.array([eval_hamiltonian(system, State(q, p)) for q, p in zip(Q, P)])
        normx = np.linalg.norm(X, axis=1)
        canon, csys = None, None

    lyap = None
    if certificate is not None and canon is not None:
        if csys is None:
            csys = to_canonical(cl)
        lyap = np.array([lyapunov_value(csys, State(z[:n], z[n:]), certificate.epsilon, certificate.phi_choice)
                         for z in canon])
    meta = {"h": h, "horizon": horizon, "record_every": record_every}
    if canon is not None:
        meta["canonical_q0"], meta["canonical_p0"] = canon[0, :n].copy(), canon[0, n:].copy()
    return Trajectory(times, Q.copy(), P.copy(), energies, normx, lyap, controls, rep, meta)


@dataclass
class EnergyAudit:
    passed: bool
    max_increase: float
    tolerance: float
    worst_index: int
    worst_time: float

    def summary(self) -> str:
        word = "pass" if self.passed else f"FAIL at index {self.worst_index} (t={self.worst_time:.6g})"
        return f"energy audit {word}: max increase {self.max_increase:.3g} vs tolerance {self.tolerance:.3g}"


def energy_audit(traj: Trajectory, cl=None, rtol: float = 1e-8) -> EnergyAudit:
    """Largest forward difference of ``H_d``; passes iff ``<= rtol (1 + |H_d(0)|)``."""
    E = np.asarray(traj.energies, dtype=float)
    d = np.diff(E)
    k = int(np.argmax(d)) if d.size else 0
    worst = float(d[k]) if d.size else 0.0
    tol = rtol * (1.0 + abs(E[0]))
    return EnergyAudit(worst <= tol, worst, tol, k + 1, float(traj.times[min(k + 1, len(E) - 1)]))


@dataclass
class DecayFit:
    rate: float
    used_peaks: bool
    points: int

    def __float__(self):
        return self.rate


def empirical_decay_rate(traj, floor: float = 1e-12) -> DecayFit:
    """Least-squares slope of ``log |x(t)|`` on ``[0.2 T, 0.9 T]``, negated.

    Only interior local maxima of ``|x|`` are fitted; with fewer than three
    of them all window samples are used and ``used_peaks`` is False. Samples
    below ``floor * |x(0)|`` are treated as numerical noise and dropped.
    ``traj`` may also be a ``(times, norms)`` pair.
    """
    if isinstance(traj, Trajectory):
        t, r = traj.times, traj.normx
    else:
        t, r = (np.asarray(a, dtype=float) for a in traj)
    if not r[-1] < r[0]:
        raise ValueError("trajectory is not converging (final |x| >= initial |x|)")
    T = t[-1] - t[0]
    win = (t >= t[0] + 0.2 * T) & (t <= t[0] + 0.9 * T) & (r > floor * r[0])
    peaks = np.zeros_like(win)
    peaks[1:-1] = (r[1:-1] > r[:-2]) & (r[1:-1] >= r[2:])
    sel = win & peaks
    used_peaks = int(sel.sum()) >= 3
    if not used_peaks:
        sel = win
    if sel.sum() < 2:
        raise ValueError("too few samples above the noise floor in the fitting window")
    slope = np.polyfit(t[sel], np.log(r[sel]), 1)[0]
    return DecayFit(float(-slope), used_peaks, int(sel.sum()))


def verify_envelope(traj: Trajectory, cert: Certificate, rtol: float = 1e-6) -> bool:
    """``|x(t_i)| <= sqrt(k2/k1) |x0| exp(-rate_sound t_i) (1 + rtol)`` at every sample.

    Uses canonical coordinates; the initial state must lie in the certified box.
    """
    if traj.representation == "canonical":
        q0, p0 = traj.q[0], traj.p[0]
    else:
        q0 = traj.meta.get("canonical_q0")
        p0 = traj.meta.get("canonical_p0")
        if q0 is None:
            raise ValueError("envelope needs a canonical-coordinate trajectory")
    box = Region(cert.q_radii, cert.p_radii)
    if not box.contains(q0, p0):
        raise ValueError("envelope not applicable: initial state outside certified region")
    _, bound = envelope(cert, traj.normx[0], traj.times - traj.times[0])
    return bool(np.all(traj.normx <= bound * (1.0 + rtol)))
