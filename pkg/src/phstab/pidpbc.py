"""PID passivity-based control of mechanical systems.

The controller acts on the passive output ``y = G^T M^-1 p``:

    u = -K_P y - K_I (G^T q + kappa) - K_D ydot,
    kappa = -G^T q_star - K_I^-1 G^T grad U(q_star).

Closing the loop gives another mechanical system with shaped inertia
``M_d = M (M + G K_D G^T)^-1 M``, potential
``U_d = (G^T q + kappa)^T K_I (G^T q + kappa) / 2 + U`` and dissipation
``D_d = E^-1 (D + G K_P G^T) E^-T``, ``E = M M_d^-1``; see
:class:`ClosedLoopSystem`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Union

import numpy as np

from phstab.core import (
    MatrixField,
    MechanicalSystem,
    ScalarField,
    State,
    kinetic_gradient,
    solve_inertia,
    spectral_norm,
)
from phstab.region import Region

GAIN_SYM_TOL = 1e-10
GAIN_EIG_TOL = 1e-12


def _as_gain(K, m: int, name: str) -> np.ndarray:
    K = np.asarray(K, dtype=float)
    if K.ndim == 0:
        K = K * np.eye(m)
    elif K.ndim == 1:
        K = np.diag(K)
    if K.shape != (m, m):
        raise ValueError(f"shape error: {name} must be {m}x{m}, got {K.shape}")
    if np.max(np.abs(K - K.T)) > GAIN_SYM_TOL:
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (K + K.T)


@dataclass(frozen=True)
class GainSet:
    """PID-PBC gains plus the desired configuration.

    Scalars and vectors are promoted to ``c I`` and ``diag(v)``.
    """

    K_P: np.ndarray
    K_I: np.ndarray
    K_D: np.ndarray
    q_star: np.ndarray

    def __post_init__(self):
        dims = [np.shape(K)[0] for K in (self.K_I, self.K_P, self.K_D) if np.ndim(K)]
        m = dims[0] if dims else 1
        K_P = _as_gain(self.K_P, m, "K_P")
        K_I = _as_gain(self.K_I, m, "K_I")
        K_D = _as_gain(self.K_D, m, "K_D")
        if np.linalg.eigvalsh(K_I).min() < GAIN_EIG_TOL:
            raise ValueError("K_I must be positive definite")
        for K, name in ((K_P, "K_P"), (K_D, "K_D")):
            if np.linalg.eigvalsh(K).min() < -GAIN_EIG_TOL:
                raise ValueError(f"{name} must be positive semi-definite")
        object.__setattr__(self, "K_P", K_P)
        object.__setattr__(self, "K_I", K_I)
        object.__setattr__(self, "K_D", K_D)
        object.__setattr__(self, "q_star", np.atleast_1d(np.asarray(self.q_star, dtype=float)))

    @property
    def m(self) -> int:
        return self.K_I.shape[0]

    @cached_property
    def has_derivative(self) -> bool:
        return bool(np.any(self.K_D != 0.0))


def _check_gain_dims(sys: MechanicalSystem, gains: GainSet):
    if gains.m != sys.m or gains.q_star.shape != (sys.n,):
        raise ValueError(f"shape error: gains for m={gains.m}, q_star {gains.q_star.shape} "
                         f"do not fit system n={sys.n}, m={sys.m}")


def compute_kappa(sys: MechanicalSystem, gains: GainSet) -> np.ndarray:
    _check_gain_dims(sys, gains)
    G = sys.G
    try:
        corr = np.linalg.solve(gains.K_I, G.T @ sys.potential.grad(gains.q_star))
    except np.linalg.LinAlgError:
        raise ValueError("K_I must be positive definite") from None
    return -G.T @ gains.q_star - corr


def check_assignable(sys: MechanicalSystem, q_star, tol: float = 1e-9) -> bool:
    """True iff the unactuated part of the gravity force vanishes at q_star."""
    if sys.m == sys.n:
        return True
    g = sys.G_perp @ sys.potential.grad(np.asarray(q_star, dtype=float))
    return bool(np.max(np.abs(g)) <= tol)


def check_gain_condition(sys: MechanicalSystem, gains: GainSet) -> tuple[bool, float]:
    """``hess U(q_star) + G K_I G^T > 0``; returns (holds, minimum eigenvalue)."""
    _check_gain_dims(sys, gains)
    H = sys.potential.hess(gains.q_star) + sys.G @ gains.K_I @ sys.G.T
    margin = float(np.linalg.eigvalsh(0.5 * (H + H.T)).min())
    return margin > 0, margin


def passive_output_jacobian(sys: MechanicalSystem, q, p, Minv=None, dM=None) -> np.ndarray:
    """``grad_q y`` as an ``n x m`` matrix whose column j is ``dy_j/dq``.

    Column-wise identity ``dy/dq_i = -G^T M^-1 (dM/dq_i) M^-1 p``.
    """
    Minv = np.linalg.inv(sys.M(q)) if Minv is None else Minv
    dM = sys.dM(q) if dM is None else dM
    v = Minv @ p
    # dy[i] = dy/dq_i, shape (n, m)
    return -(sys.G.T @ Minv @ (dM @ v).T).T


def _compensation_check(sys: MechanicalSystem, compensate_gravity: bool):
    if compensate_gravity and sys.m != sys.n:
        raise ValueError("gravity compensation requires m = n")


def _controlled_rates(sys: MechanicalSystem, gains: GainSet, q, p, compensate_gravity=False,
                      kappa=None, want_ydot: bool = True):
    """Open-loop vector field with the controller plugged in; ydot solved implicitly.

    With ``u = u0 - K_D ydot`` and ``ydot = (grad_q y)^T qdot + G^T M^-1 pdot``,
    the momentum equation becomes ``(I + G K_D G^T M^-1) pdot = f0 - G K_D (grad_q y)^T qdot``.
    Returns (qdot, pdot, u, ydot); ``ydot`` is None for PI gains when
    ``want_ydot`` is False.
    """
    G = sys.G
    M = sys.M(q)
    v = solve_inertia(M, p, q)
    dM = sys.dM(q)
    gradU = sys.potential.grad(q)
    Dn = sys.constant_damping
    if Dn is None:
        Dn = sys.Dn(q, p)
    if sys.fully_actuated:  # G = I; skip the identity products on this hot path
        if compensate_gravity:
            u0 = gradU - gains.K_P @ v - gains.K_I @ (q - gains.q_star)
        else:
            kappa = compute_kappa(sys, gains) if kappa is None else kappa
            u0 = -gains.K_P @ v - gains.K_I @ (q + kappa)
        f0 = u0 - gradU - kinetic_gradient(dM, v) - Dn @ v
    else:
        y = G.T @ v
        if compensate_gravity:
            u0 = G.T @ gradU - gains.K_P @ y - gains.K_I @ (G.T @ q - gains.q_star)
        else:
            kappa = compute_kappa(sys, gains) if kappa is None else kappa
            u0 = -gains.K_P @ y - gains.K_I @ (G.T @ q + kappa)
        f0 = G @ u0 - gradU - kinetic_gradient(dM, v) - Dn @ v
    qdot = v
    if not gains.has_derivative:
        return qdot, f0, u0, (G.T @ solve_inertia(M, f0, q) if want_ydot else None)
    Minv = np.linalg.inv(M)
    gy = passive_output_jacobian(sys, q, p, Minv, dM)
    E = np.eye(sys.n) + G @ gains.K_D @ G.T @ Minv
    pdot = np.linalg.solve(E, f0 - G @ gains.K_D @ (gy.T @ qdot))
    ydot = gy.T @ qdot + G.T @ Minv @ pdot
    return qdot, pdot, u0 - gains.K_D @ ydot, ydot


def control_signal(sys: MechanicalSystem, gains: GainSet, s: State,
                   dy: Union[str, np.ndarray] = "internal", compensate_gravity: bool = False) -> np.ndarray:
    """PID-PBC control input at state ``s``.

    ``dy="internal"`` obtains ``ydot`` from the closed-loop vector field
    (the model-based route); otherwise ``dy`` is used as given. With
    ``compensate_gravity`` the fully actuated variant
    ``u = grad U(q) - K_P y - K_I (q - q_star) - K_D ydot`` is returned.
    """
    _check_gain_dims(sys, gains)
    _compensation_check(sys, compensate_gravity)
    q, p = s.q, s.p
    if isinstance(dy, str):
        if dy != "internal":
            raise ValueError(f"dy must be 'internal' or an m-vector, got {dy!r}")
        return _controlled_rates(sys, gains, q, p, compensate_gravity)[2]
    dy = np.atleast_1d(np.asarray(dy, dtype=float))
    G = sys.G
    y = G.T @ solve_inertia(sys.M(q), p, q)
    if compensate_gravity:
        u = G.T @ sys.potential.grad(q) - gains.K_P @ y - gains.K_I @ (G.T @ q - gains.q_star)
    else:
        u = -gains.K_P @ y - gains.K_I @ (G.T @ q + compute_kappa(sys, gains))
    return u - gains.K_D @ dy


@dataclass
class ClosedLoopSystem:
    """Mechanical system in closed loop with PID-PBC.

    Dynamics ``xdot = F_d grad H_d`` with
    ``F_d = [[0, M^-1 M_d], [-M_d M^-1, J - D_d]]`` and
    ``H_d = p^T M_d^-1 p / 2 + U_d(q)``. Matrix-valued pieces are exposed
    both as methods and as :class:`MatrixField` attributes (``Md``, ``Dd``,
    ``Jmat``, ``Bmat``, ``Emat``; ``Ud`` is a :class:`ScalarField`).
    """

    base: MechanicalSystem
    gains: GainSet
    kappa: np.ndarray
    compensate_gravity: bool = False
    Md: MatrixField = field(init=False, repr=False)
    Ud: ScalarField = field(init=False, repr=False)
    Dd: MatrixField = field(init=False, repr=False)
    Jmat: MatrixField = field(init=False, repr=False)
    Bmat: MatrixField = field(init=False, repr=False)
    Emat: MatrixField = field(init=False, repr=False)

    def __post_init__(self):
        G = self.base.G
        self._GKDG = G @ self.gains.K_D @ G.T
        self._GKPG = G @ self.gains.K_P @ G.T
        self._GKIG = G @ self.gains.K_I @ G.T
        self._fast = not self.gains.has_derivative
        self._identity_G = self.base.fully_actuated
        Dn = self.base.constant_damping
        self._R_const = None if Dn is None else Dn + self._GKPG
        self.Md = MatrixField(self.M_d, self.M_d_partials, symmetric=True, definite="pd", name="M_d")
        self.Ud = ScalarField(self._Ud, self._Ud_grad, self._Ud_hess)
        self.Dd = MatrixField(self.D_d, depends_on_p=True, symmetric=True, definite="psd", name="D_d")
        self.Jmat = MatrixField(self.J, depends_on_p=True, name="J")
        self.Bmat = MatrixField(self.B, depends_on_p=True, name="B")
        self.Emat = MatrixField(self.E, name="E")

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def q_star(self) -> np.ndarray:
        return self.gains.q_star

    # -- shaped potential ---------------------------------------------------
    def _shift(self, q):
        Gq = q if self._identity_G else self.base.G.T @ q
        return Gq - self.gains.q_star if self.compensate_gravity else Gq + self.kappa

    def _Ud(self, q) -> float:
        z = self._shift(q)
        val = 0.5 * float(z @ self.gains.K_I @ z)
        return val if self.compensate_gravity else val + self.base.potential(q)

    def _Ud_grad(self, q) -> np.ndarray:
        g = self.gains.K_I @ self._shift(q)
        if not self._identity_G:
            g = self.base.G @ g
        return g if self.compensate_gravity else g + self.base.potential.grad(q)

    def _Ud_hess(self, q) -> np.ndarray:
        return self._GKIG.copy() if self.compensate_gravity else self._GKIG + self.base.potential.hess(q)

    # -- shaped inertia -----------------------------------------------------
    def M_d(self, q) -> np.ndarray:
        M = self.base.M(q)
        if self._fast:
            return M
        return M @ np.linalg.solve(M + self._GKDG, M)

    def M_d_inv(self, q, Minv=None) -> np.ndarray:
        """``M^-1 (M + G K_D G^T) M^-1 = M^-1 + M^-1 G K_D G^T M^-1``."""
        Minv = np.linalg.inv(self.base.M(q)) if Minv is None else Minv
        if self._fast:
            return Minv
        return Minv + Minv @ self._GKDG @ Minv

    def M_d_inv_partials(self, q, Minv=None, dM=None) -> np.ndarray:
        Minv = np.linalg.inv(self.base.M(q)) if Minv is None else Minv
        dM = self.base.dM(q) if dM is None else dM
        dMinv = -Minv @ dM @ Minv
        if self._fast:
            return dMinv
        K = self._GKDG
        return dMinv + dMinv @ K @ Minv + Minv @ K @ dMinv

    def M_d_partials(self, q) -> np.ndarray:
        Md = self.M_d(q)
        return -Md @ self.M_d_inv_partials(q) @ Md

    # -- interconnection and damping ---------------------------------------
    def E(self, q, Minv=None) -> np.ndarray:
        Minv = np.linalg.inv(self.base.M(q)) if Minv is None else Minv
        return np.eye(self.n) + self._GKDG @ Minv

    def B(self, q, p, Minv=None, dM=None) -> np.ndarray:
        if self._fast:
            return np.zeros((self.n, self.n))
        gy = passive_output_jacobian(self.base, q, p, Minv, dM)
        return self.base.G @ self.gains.K_D @ gy.T

    def _Einv(self, q, Minv=None):
        return np.linalg.solve(self.E(q, Minv), np.eye(self.n))

    def J(self, q, p, Minv=None, dM=None) -> np.ndarray:
        if self._fast:
            return np.zeros((self.n, self.n))
        Einv = self._Einv(q, Minv)
        B = self.B(q, p, Minv, dM)
        return Einv @ (B.T - B) @ Einv.T

    def D_d(self, q, p, Minv=None) -> np.ndarray:
        R = self._R_const if self._R_const is not None else self.base.Dn(q, p) + self._GKPG
        if self._fast:
            return R
        Einv = self._Einv(q, Minv)
        return Einv @ R @ Einv.T

    # -- Hamiltonian structure ---------------------------------------------
    def hamiltonian(self, q, p) -> float:
        return 0.5 * float(p @ self.M_d_inv(q) @ p) + self._Ud(q)

    def grad_hamiltonian(self, q, p) -> tuple[np.ndarray, np.ndarray]:
        Minv = np.linalg.inv(self.base.M(q))
        dS = self.M_d_inv_partials(q, Minv)
        gq = self._Ud_grad(q) + 0.5 * ((dS @ p) @ p)
        return gq, self.M_d_inv(q, Minv) @ p

    def F_d(self, q, p) -> np.ndarray:
        n = self.n
        Minv = np.linalg.inv(self.base.M(q))
        Md = self.M_d(q)
        F = np.zeros((2 * n, 2 * n))
        F[:n, n:] = Minv @ Md
        F[n:, :n] = -Md @ Minv
        F[n:, n:] = self.J(q, p, Minv) - self.D_d(q, p, Minv)
        return F

    def rhs(self, q, p) -> tuple[np.ndarray, np.ndarray]:
        M = self.base.M(q)
        dM = self.base.dM(q)
        if self._fast:
            v = solve_inertia(M, p, q)
            dp = -self._Ud_grad(q) - kinetic_gradient(dM, v) - self.D_d(q, p) @ v
            return v, dp
        Minv = np.linalg.inv(M)
        Md = M @ np.linalg.solve(M + self._GKDG, M)
        Sinv = self.M_d_inv(q, Minv)
        dS = self.M_d_inv_partials(q, Minv, dM)
        gq = self._Ud_grad(q) + 0.5 * ((dS @ p) @ p)
        gp = Sinv @ p
        dq = Minv @ Md @ gp
        dp = -Md @ Minv @ gq + (self.J(q, p, Minv, dM) - self.D_d(q, p, Minv)) @ gp
        return dq, dp

    def assumption_view(self):
        return (self.Ud, self.q_star, lambda q: np.linalg.inv(self.base.M(q)) @ self.M_d(q), self.D_d)


def build_closed_loop(sys: MechanicalSystem, gains: GainSet, compensate_gravity: bool = False) -> ClosedLoopSystem:
    _check_gain_dims(sys, gains)
    _compensation_check(sys, compensate_gravity)
    if compensate_gravity:
        kappa = -sys.G.T @ gains.q_star
    else:
        ok, _ = check_gain_condition(sys, gains)
        if not ok:
            raise ValueError("equilibrium not stabilizable with given K_I")
        kappa = compute_kappa(sys, gains)
    return ClosedLoopSystem(sys, gains, kappa, compensate_gravity)


@dataclass
class ConditionReport:
    """Worst-case sample margins for the exponential-stability conditions."""

    C1_min_hessian_eig: float
    C2_max_norm: float
    C3_min_damping_eig: float
    samples: int
    region: str

    @property
    def C1(self) -> bool:
        return self.C1_min_hessian_eig > 0

    @property
    def C2(self) -> bool:
        return bool(np.isfinite(self.C2_max_norm))

    @property
    def C3(self) -> bool:
        return self.C3_min_damping_eig > 0

    @property
    def passed(self) -> bool:
        return self.C1 and self.C2 and self.C3


def check_C1_C2_C3(cl: ClosedLoopSystem, region: Region) -> ConditionReport:
    """C1 strong convexity of U_d, C2 bounded ``M^-1 M_d``, C3 ``D_d > 0``, on samples.

    ``region`` is centred on q_star when given with the default origin center.
    """
    if np.allclose(region.center, 0) and not np.allclose(cl.q_star, 0):
        region = region.recentered(cl.q_star)
    c1 = min(np.linalg.eigvalsh(cl.Ud.hess(q)).min() for q in region.q_samples())
    c2 = 0.0
    for q in region.q_samples():
        c2 = max(c2, spectral_norm(np.linalg.solve(cl.base.M(q), cl.M_d(q))))
    qs, ps = region.samples()
    c3 = np.inf
    for q, p in zip(qs, ps):
        Dd = cl.D_d(q, p)
        c3 = min(c3, np.linalg.eigvalsh(0.5 * (Dd + Dd.T)).min())
    return ConditionReport(float(c1), float(c2), float(c3), len(qs), region.describe())


def check_underactuated_damping(sys: MechanicalSystem, region: Optional[Region] = None) -> tuple[bool, str]:
    """``G_perp D (G_perp)^T > 0`` at every sample (trivially true when m = n)."""
    if sys.m == sys.n:
        return True, "fully actuated: requires K_P > 0"
    region = region or Region.uniform(sys.n, 1.0, 1.0, grid_points_per_axis=3)
    Gp = sys.G_perp
    qs, ps = region.samples()
    worst = np.inf
    for q, p in zip(qs, ps):
        blk = Gp @ sys.Dn(q, p) @ Gp.T
        worst = min(worst, np.linalg.eigvalsh(0.5 * (blk + blk.T)).min())
    ok = bool(worst > 0)
    return ok, f"unactuated damping block min eigenvalue {worst:.6g} over {len(qs)} samples"
