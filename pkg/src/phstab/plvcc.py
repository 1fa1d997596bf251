"""Partial linearization via change of coordinates.

The momentum transform ``p = T_d(q)^T p_mech`` with ``T_d`` the upper Cholesky
factor of ``M_d^-1`` makes the kinetic energy ``p^T p / 2``. The closed loop
then takes the canonical form

    qdot =  A(q) p
    pdot = -A(q)^T grad U(q) + (J(q, p) - D(q, p)) p

with ``A = M^-1 T_d^-T``, ``D = T_d^T D_d T_d`` and
``J = J_3 + T_d^T J_mech T_d``. ``J_3`` collects the terms produced by the
q-dependence of ``T_d``:

    J_3 = sum_i  v_i a_i^T - a_i v_i^T,   v_i = (dT_d/dq_i)^T T_d^-T p,
                                         a_i = A^T e_i.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg.lapack import dpotrf, dtrtri

from phstab.core import MatrixField, ScalarField, State

SKEW_TOL = 1e-9


def upper_cholesky(S) -> np.ndarray:
    """Upper-triangular ``T`` with positive diagonal and ``T T^T = S``.

    Reversing rows and columns turns this into an ordinary lower Cholesky
    factorisation, which LAPACK does. On failure the column-fill recursion
    locates the offending pivot for the error message.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.ndim != 2 or S.shape != (n, n):
        raise ValueError(f"shape error: expected a square matrix, got {S.shape}")
    L, info = dpotrf(S[::-1, ::-1], lower=1, clean=1)
    if info != 0:
        _column_fill(S)  # raises with the pivot row
        raise ValueError("matrix not positive definite")
    return L[::-1, ::-1]


def _column_fill(S: np.ndarray) -> np.ndarray:
    """Reference recursion, last column first: ``T_ii^2 = S_ii - sum_{k>i} T_ik^2``."""
    n = S.shape[0]
    T = np.zeros((n, n))
    for i in range(n - 1, -1, -1):
        tail = T[i, i + 1:]
        pivot = S[i, i] - tail @ tail
        if not pivot > 0.0:
            raise ValueError(f"matrix not positive definite (pivot <= 0 at row {i})")
        d = np.sqrt(pivot)
        T[i, i] = d
        if i:
            T[:i, i] = (S[:i, i] - T[:i, i + 1:] @ tail) / d
    return T


def _upper_inverse(T: np.ndarray) -> np.ndarray:
    Tinv, info = dtrtri(T, lower=0)
    if info != 0:
        raise ValueError("singular triangular factor")
    return Tinv


_HALF_UPPER: dict = {}


def _half_upper(n: int) -> np.ndarray:
    """Mask with ones above the diagonal and 1/2 on it."""
    mask = _HALF_UPPER.get(n)
    if mask is None:
        mask = _HALF_UPPER[n] = np.triu(np.ones((n, n)), 1) + 0.5 * np.eye(n)
    return mask


def _neg_half_upper(n: int) -> np.ndarray:
    mask = _HALF_UPPER.get(-n)
    if mask is None:
        mask = _HALF_UPPER[-n] = -_half_upper(n)
    return mask


def cholesky_derivative(T: np.ndarray, dS: np.ndarray, Tinv: Optional[np.ndarray] = None) -> np.ndarray:
    """Exact derivative of the upper Cholesky factor.

    Solves ``dT T^T + T dT^T = dS`` for upper-triangular ``dT``. With
    ``X = T^-1 dT`` upper triangular, ``X + X^T = T^-1 dS T^-T`` fixes the
    strict upper part of X and half the diagonal. ``dS`` may be a stack
    ``(k, n, n)``; the result has the same shape.
    """
    Tinv = _upper_inverse(T) if Tinv is None else Tinv
    W = Tinv @ dS @ Tinv.T
    return T @ (W * _half_upper(T.shape[0]))


def cholesky_partials(Minv_d: MatrixField, q) -> np.ndarray:
    """Stacked ``dT_d/dq_i`` for ``T_d = upper_cholesky(Minv_d(q))``, shape ``(n, n, n)``."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    T = upper_cholesky(Minv_d(q))
    return cholesky_derivative(T, Minv_d.partials_at(q))


@dataclass
class CanonicalTerms:
    A: np.ndarray
    J: np.ndarray
    D: np.ndarray
    grad_U: np.ndarray
    hess_U: Optional[np.ndarray] = None
    A_dot: Optional[np.ndarray] = None


@dataclass
class QTerms:
    """Everything at a configuration that does not depend on momentum."""

    q: np.ndarray
    A: np.ndarray
    dA: Optional[np.ndarray]
    grad_U: np.ndarray
    hess_U: Optional[np.ndarray]
    extra: dict = field(default_factory=dict)


@dataclass
class CanonicalPHSystem:
    """``xdot = [[0, A], [-A^T, J - D]] grad H`` with ``H = p^T p / 2 + U(q)``.

    Equilibrium at the origin. ``origin_shift`` records the configuration the
    origin corresponds to in the source coordinates (q_star for a transformed
    closed loop). ``global_flag`` is user-asserted radial unboundedness of U;
    it is carried into certificates, never inferred.
    """

    n: int
    A: MatrixField
    Jfield: MatrixField
    Dfield: MatrixField
    U: ScalarField
    origin_shift: Optional[np.ndarray] = None
    global_flag: bool = False

    def __post_init__(self):
        if self.origin_shift is None:
            self.origin_shift = np.zeros(self.n)

    @classmethod
    def quadratic(cls, A, D, K, J=None, global_flag: bool = True) -> "CanonicalPHSystem":
        """Constant ``A``, ``J``, ``D`` and ``U = q^T K q / 2`` (scalars allowed for n = 1)."""
        A, D, K = (np.atleast_2d(np.asarray(X, dtype=float)) for X in (A, D, K))
        n = A.shape[0]
        J = np.zeros((n, n)) if J is None else np.atleast_2d(np.asarray(J, dtype=float))
        for X, name in ((D, "D"), (K, "K"), (J, "J")):
            if X.shape != (n, n):
                raise ValueError(f"shape error: {name} must be {n}x{n}, got {X.shape}")
        if np.max(np.abs(J + J.T)) > SKEW_TOL:
            raise ValueError("J must be skew-symmetric")
        return cls(
            n=n,
            A=MatrixField.constant(A, name="A"),
            Jfield=MatrixField.constant(J, depends_on_p=True, name="J"),
            Dfield=MatrixField.constant(D, depends_on_p=True, symmetric=True, definite="psd", name="D"),
            U=ScalarField(lambda q: 0.5 * float(q @ K @ q), lambda q: K @ q, lambda q: K),
            global_flag=global_flag,
        )

    def q_terms(self, q, hessian: bool = False, partials: bool = False) -> QTerms:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        return QTerms(
            q=q,
            A=self.A(q),
            dA=self.A.partials_at(q) if partials else None,
            grad_U=self.U.grad(q),
            hess_U=self.U.hess(q) if hessian else None,
        )

    def p_terms(self, qt: QTerms, p) -> CanonicalTerms:
        p = np.atleast_1d(np.asarray(p, dtype=float))
        A_dot = None
        if qt.dA is not None:
            A_dot = np.tensordot(qt.A @ p, qt.dA, axes=1)
        return CanonicalTerms(qt.A, self.Jfield(qt.q, p), self.Dfield(qt.q, p), qt.grad_U, qt.hess_U, A_dot)

    def terms(self, q, p, full: bool = False) -> CanonicalTerms:
        return self.p_terms(self.q_terms(q, hessian=full, partials=full), p)

    def rhs(self, q, p) -> tuple[np.ndarray, np.ndarray]:
        t = self.terms(q, p)
        return t.A @ p, -t.A.T @ t.grad_U + (t.J - t.D) @ p

    def hamiltonian(self, q, p) -> float:
        p = np.asarray(p, dtype=float)
        return 0.5 * float(p @ p) + self.U(q)

    def assumption_view(self):
        return (self.U, np.zeros(self.n), self.A, self.Dfield)


class TransformedSystem(CanonicalPHSystem):
    """Canonical form of a :class:`~phstab.pidpbc.ClosedLoopSystem`.

    All pieces at one q (``M``, ``T_d``, its inverse and partials) are
    computed once per call and shared by A, J, D and ``A_dot``.
    """

    def __init__(self, cl):
        self.cl = cl
        n = cl.n
        super().__init__(
            n=n,
            A=MatrixField(lambda q: self.q_terms(q).A, lambda q: self.q_terms(q, partials=True).dA, name="A"),
            Jfield=MatrixField(lambda q, p: self.terms(q, p).J, depends_on_p=True, name="J"),
            Dfield=MatrixField(lambda q, p: self.terms(q, p).D, depends_on_p=True, symmetric=True, name="D"),
            U=ScalarField(lambda q: cl.Ud(q + cl.q_star),
                          lambda q: cl.Ud.grad(q + cl.q_star),
                          lambda q: cl.Ud.hess(q + cl.q_star)),
            origin_shift=cl.q_star.copy(),
        )

    def q_terms(self, q, hessian: bool = False, partials: bool = False) -> QTerms:
        cl = self.cl
        q = np.atleast_1d(np.asarray(q, dtype=float))
        qm = q + cl.q_star
        M = cl.base.M(qm)
        Minv = np.linalg.inv(M)
        dM = cl.base.dM(qm)
        T = upper_cholesky(cl.M_d_inv(qm, Minv))
        Tinv = _upper_inverse(T)
        dT = cholesky_derivative(T, cl.M_d_inv_partials(qm, Minv, dM), Tinv)
        A = Minv @ Tinv.T
        dA = None
        if partials:
            # d(M^-1)/dq_i T^-T + M^-1 d(T^-T)/dq_i,  d(T^-1) = -T^-1 dT T^-1
            dTinvT = -Tinv.T @ np.swapaxes(dT, 1, 2) @ Tinv.T
            dA = -Minv @ dM @ A + Minv @ dTinvT
        return QTerms(
            q=q, A=A, dA=dA,
            grad_U=cl.Ud.grad(qm),
            hess_U=cl.Ud.hess(qm) if hessian else None,
            extra={"qm": qm, "Minv": Minv, "dM": dM, "T": T, "Tinv": Tinv, "dT": dT},
        )

    def p_terms(self, qt: QTerms, p) -> CanonicalTerms:
        cl = self.cl
        p = np.atleast_1d(np.asarray(p, dtype=float))
        x = qt.extra
        T, Tinv, dT = x["T"], x["Tinv"], x["dT"]
        pm = Tinv.T @ p
        # rows of V are v_i = dT_i^T T^-T p; columns of A^T are a_i
        V = np.swapaxes(dT, 1, 2) @ pm
        AT = qt.A.T
        J3 = V.T @ AT.T - AT @ V
        J = J3
        if not cl._fast:
            J = J3 + T.T @ cl.J(x["qm"], pm, x["Minv"], x["dM"]) @ T
        D = T.T @ cl.D_d(x["qm"], pm, x["Minv"]) @ T
        A_dot = None
        if qt.dA is not None:
            A_dot = np.tensordot(qt.A @ p, qt.dA, axes=1)
        return CanonicalTerms(qt.A, J, D, qt.grad_U, qt.hess_U, A_dot)

    def rhs(self, q, p) -> tuple[np.ndarray, np.ndarray]:
        # same algebra as q_terms/p_terms with the bookkeeping stripped, since
        # this is the inner loop of every canonical simulation
        cl = self.cl
        base = cl.base
        qm = q + cl.q_star
        if cl._fast:
            return self._rhs_pi(qm, p)
        Minv = np.linalg.inv(base.inertia.value(qm))
        dM = base.dM(qm)
        T = upper_cholesky(cl.M_d_inv(qm, Minv))
        Tinv = _upper_inverse(T)
        dT = cholesky_derivative(T, cl.M_d_inv_partials(qm, Minv, dM), Tinv)
        A = Minv @ Tinv.T
        pm = Tinv.T @ p
        V = np.swapaxes(dT, 1, 2) @ pm
        J = V.T @ A - A.T @ V
        if not cl._fast:
            J = J + T.T @ cl.J(qm, pm, Minv, dM) @ T
        D = T.T @ cl.D_d(qm, pm, Minv) @ T
        return A @ p, (J - D) @ p - A.T @ cl._Ud_grad(qm)

    def _rhs_pi(self, qm, p):
        """Vector field when ``K_D = 0``, so ``M_d = M``.

        With ``L L^T = M`` (lower Cholesky), ``T_d = L^-T`` is exactly the
        upper factor of ``M^-1`` and ``A = M^-1 T_d^-T = T_d``. Then
        ``T_d^-1 dS T_d^-T = -T_d^T dM T_d`` and, because ``T_d^T L = I``,
        ``v_i = X_i^T p`` with ``dT_i = T_d X_i``; no general inverse is needed.
        """
        cl = self.cl
        base = cl.base
        L, info = dpotrf(base.M(qm), lower=1, clean=1)
        if info != 0:
            raise ValueError(f"inertia not positive definite at q={qm.tolist()}")
        Linv, _ = dtrtri(L, lower=1)
        T = Linv.T
        n = T.shape[0]
        V = p @ ((T.T @ base.dM(qm) @ T) * _neg_half_upper(n))
        dq = T @ p
        R = cl._R_const if cl._R_const is not None else cl.D_d(qm, L @ p)
        # (J - D) p - A^T grad U  with  J = V^T A - A^T V,  D = T^T R T
        dp = V.T @ dq - T.T @ (V @ p + R @ dq + cl._Ud_grad(qm))
        return dq, dp

    def T(self, q) -> np.ndarray:
        """``T_d`` at canonical configuration q."""
        return self.q_terms(q).extra["T"]


def to_canonical(cl) -> TransformedSystem:
    """Canonical pH form of a closed loop, origin at ``(q_star, 0)``."""
    csys = TransformedSystem(cl)
    A0 = csys.A(np.zeros(cl.n))
    if np.linalg.matrix_rank(A0) < cl.n:
        raise ValueError("transform degenerate at q=q_star")
    return csys


def map_state(cl, s: State) -> State:
    """Mechanical (q, p) to canonical ``(q - q_star, T_d(q)^T p)``."""
    T = upper_cholesky(cl.M_d_inv(s.q))
    return State(s.q - cl.q_star, T.T @ s.p)


def inverse_map_state(cl, s: State) -> State:
    qm = s.q + cl.q_star
    T = upper_cholesky(cl.M_d_inv(qm))
    return State(qm, np.linalg.solve(T.T, s.p))
