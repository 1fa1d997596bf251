"""State, field and mechanical-system types.

Fields carry optional analytic derivatives; anything missing is filled in by
central finite differences (:func:`finite_diff`).
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotrs

from phstab.region import Region

EPS = np.finfo(float).eps
FD_STEP_SCALE = EPS ** (1.0 / 3.0)
SYM_TOL = 1e-10

_debug = os.environ.get("PHSTAB_DEBUG", "") not in ("", "0")


def set_debug(flag: bool) -> None:
    """Toggle re-validation of declared symmetry/definiteness on every field evaluation."""
    global _debug
    _debug = bool(flag)


def debug_enabled() -> bool:
    return _debug


def spectral_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, 2))


@dataclass(frozen=True)
class State:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.ndim != 1 or q.shape != p.shape or q.size < 1:
            raise ValueError(f"shape error: q{q.shape} and p{p.shape} must be equal-length vectors")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("state has non-finite entries")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.size

    def vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vector(cls, x) -> "State":
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(x[:n], x[n:])


def _steps(x: np.ndarray) -> np.ndarray:
    return np.maximum(1.0, np.abs(x)) * FD_STEP_SCALE


def _eval_at(f, x):
    try:
        return np.asarray(f(x), dtype=float)
    except Exception as exc:
        raise RuntimeError(f"evaluator failed inside finite-difference stencil at {x.tolist()}: {exc}") from exc


def finite_diff(f: Callable, x, order: str = "gradient") -> np.ndarray:
    """Central-difference derivative of ``f`` at ``x``.

    ``order`` is one of ``"gradient"`` (scalar ``f``), ``"jacobian"`` (array
    valued ``f``; result stacks ``df/dx_i`` along axis 0) or ``"hessian"``
    (scalar ``f``; symmetrized). Step ``h_i = max(1, |x_i|) * eps**(1/3)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    h = _steps(x)
    n = x.size
    if order in ("gradient", "jacobian"):
        out = []
        for i in range(n):
            e = np.zeros(n)
            e[i] = h[i]
            out.append((_eval_at(f, x + e) - _eval_at(f, x - e)) / (2.0 * h[i]))
        res = np.array(out)
        return res.reshape(n) if order == "gradient" else res
    if order == "hessian":
        f0 = float(_eval_at(f, x))
        H = np.empty((n, n))
        for i in range(n):
            ei = np.zeros(n)
            ei[i] = h[i]
            H[i, i] = (float(_eval_at(f, x + ei)) - 2.0 * f0 + float(_eval_at(f, x - ei))) / h[i] ** 2
            for j in range(i):
                ej = np.zeros(n)
                ej[j] = h[j]
                H[i, j] = (float(_eval_at(f, x + ei + ej)) - float(_eval_at(f, x + ei - ej))
                           - float(_eval_at(f, x - ei + ej)) + float(_eval_at(f, x - ei - ej))) / (4.0 * h[i] * h[j])
                H[j, i] = H[i, j]
        return 0.5 * (H + H.T)
    raise ValueError(f"unknown finite-difference order {order!r}")


def _is_vec(x) -> bool:
    """Already a 1-D float64 array (skips conversions on hot paths)."""
    return type(x) is np.ndarray and x.ndim == 1 and x.dtype == np.float64


@dataclass(frozen=True)
class ScalarField:
    """Scalar function of q with optional analytic gradient and Hessian."""

    value: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, q) -> float:
        return float(self.value(np.asarray(q, dtype=float)))

    def grad(self, q) -> np.ndarray:
        if not _is_vec(q):
            q = np.atleast_1d(np.asarray(q, dtype=float))
        if self.gradient is not None:
            g = self.gradient(q)
            return g if _is_vec(g) else np.atleast_1d(np.asarray(g, dtype=float))
        return finite_diff(self.value, q, "gradient")

    def hess(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if self.hessian is not None:
            return np.atleast_2d(np.asarray(self.hessian(q), dtype=float))
        if self.gradient is not None:
            H = finite_diff(self.gradient, q, "jacobian")
            return 0.5 * (H + H.T)
        return finite_diff(self.value, q, "hessian")


@dataclass(frozen=True)
class MatrixField:
    """Square-matrix-valued function of q, or of (q, p) when ``depends_on_p``.

    ``partials`` (optional) returns the stacked derivatives ``dF/dq_i`` as an
    ``(n, rows, cols)`` array. ``definite`` is ``"pd"``, ``"psd"`` or None.
    """

    value: Callable
    partials: Optional[Callable] = None
    depends_on_p: bool = False
    symmetric: bool = False
    definite: Optional[str] = None
    name: str = "matrix field"
    constant_value: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __call__(self, q, p=None) -> np.ndarray:
        if not _is_vec(q):
            q = np.atleast_1d(np.asarray(q, dtype=float))
        if self.depends_on_p:
            out = self.value(q, np.atleast_1d(np.asarray(p, dtype=float)))
        else:
            out = self.value(q)
        if not (type(out) is np.ndarray and out.ndim == 2 and out.dtype == np.float64):
            out = np.atleast_2d(np.asarray(out, dtype=float))
        if _debug:
            self._check(out, q)
        return out

    def partials_at(self, q, p=None) -> np.ndarray:
        if not _is_vec(q):
            q = np.atleast_1d(np.asarray(q, dtype=float))
        if self.partials is not None:
            return np.asarray(self.partials(q, p) if self.depends_on_p else self.partials(q), dtype=float)
        if self.depends_on_p:
            p = np.atleast_1d(np.asarray(p, dtype=float))
            return finite_diff(lambda z: self.value(z, p), q, "jacobian")
        return finite_diff(self.value, q, "jacobian")

    def _check(self, F: np.ndarray, q) -> None:
        if self.symmetric or self.definite:
            if np.max(np.abs(F - F.T), initial=0.0) > SYM_TOL:
                raise ValueError(f"{self.name} declared symmetric but is not at q={q.tolist()}")
        if self.definite:
            lam = np.linalg.eigvalsh(0.5 * (F + F.T)).min()
            if (self.definite == "pd" and lam <= 0) or (self.definite == "psd" and lam < -SYM_TOL):
                raise ValueError(f"{self.name} declared {self.definite} but has eigenvalue {lam:g} at q={q.tolist()}")

    @classmethod
    def constant(cls, F, **kw) -> "MatrixField":
        F = np.atleast_2d(np.asarray(F, dtype=float))
        n = F.shape[0]
        zeros = np.zeros((n,) + F.shape)
        if kw.get("depends_on_p"):
            return cls(lambda q, p: F, lambda q, p: zeros, constant_value=F, **kw)
        return cls(lambda q: F, lambda q: zeros, constant_value=F, **kw)


def input_matrix(n: int, m: int) -> np.ndarray:
    """``G = [0_{l x m}; I_m]`` with ``l = n - m``."""
    return np.vstack([np.zeros((n - m, m)), np.eye(m)])


@dataclass(frozen=True)
class MechanicalSystem:
    """Mechanical system ``qdot = M^-1 p``, ``pdot = -dH/dq - D M^-1 p + G u``."""

    n: int
    m: int
    inertia: MatrixField
    potential: ScalarField
    damping: Optional[MatrixField] = None
    name: str = "mechanical system"
    G: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise ValueError(f"shape error: need 1 <= m <= n, got m={self.m}, n={self.n}")
        object.__setattr__(self, "G", input_matrix(self.n, self.m))
        if self.damping is None:
            object.__setattr__(self, "damping", MatrixField.constant(np.zeros((self.n, self.n)),
                                                                     depends_on_p=True, symmetric=True,
                                                                     definite="psd", name="damping"))

    @property
    def G_perp(self) -> np.ndarray:
        l = self.n - self.m
        return np.hstack([np.eye(l), np.zeros((l, self.m))])

    def M(self, q) -> np.ndarray:
        return self.inertia(q)

    def dM(self, q) -> np.ndarray:
        return self.inertia.partials_at(q)

    def Dn(self, q, p) -> np.ndarray:
        return self.damping(q, p)

    @property
    def constant_damping(self) -> Optional[np.ndarray]:
        """The damping matrix when it is known to be constant, else None."""
        return self.damping.constant_value

    @property
    def fully_actuated(self) -> bool:
        return self.m == self.n

    def assumption_view(self):
        return (self.potential, np.zeros(self.n), lambda q: np.linalg.inv(self.M(q)), self.Dn)


def _check_dims(sys: MechanicalSystem, s: State, u=None):
    if s.n != sys.n:
        raise ValueError(f"shape error: state has dimension {s.n}, system has n={sys.n}")
    if u is not None and np.shape(u) != (sys.m,):
        raise ValueError(f"shape error: u must have length m={sys.m}, got shape {np.shape(u)}")


def solve_inertia(M: np.ndarray, rhs: np.ndarray, q) -> np.ndarray:
    """``M^-1 rhs`` through a Cholesky solve (M is symmetric positive definite)."""
    L, info = dpotrf(M, lower=1, clean=0)
    if info == 0:
        x, info = dpotrs(L, rhs, lower=1)
        if info == 0:
            return x
    raise ValueError(f"inertia not invertible at q={np.asarray(q).tolist()}")


def kinetic_gradient(dM: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``d/dq (p^T M^-1 p)/2`` given ``v = M^-1 p``: ``-v^T (dM/dq_i) v / 2``."""
    return -0.5 * ((dM @ v) @ v)


def eval_open_loop(sys: MechanicalSystem, s: State, u) -> tuple[np.ndarray, np.ndarray]:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    _check_dims(sys, s, u)
    q, p = s.q, s.p
    v = solve_inertia(sys.M(q), p, q)
    dp = -sys.potential.grad(q) - kinetic_gradient(sys.dM(q), v) - sys.Dn(q, p) @ v + sys.G @ u
    return v, dp


def eval_hamiltonian(sys: MechanicalSystem, s: State) -> float:
    _check_dims(sys, s)
    v = solve_inertia(sys.M(s.q), s.p, s.q)
    return 0.5 * float(s.p @ v) + sys.potential(s.q)


@dataclass
class AssumptionReport:
    region: str
    samples: int
    lambda_min_hessian: float
    grad_at_equilibrium: float
    max_norm_A: float
    max_norm_D: float
    convex_ok: bool
    equilibrium_ok: bool
    bounded_ok: bool
    worst_q: np.ndarray

    @property
    def passed(self) -> bool:
        return self.convex_ok and self.equilibrium_ok and self.bounded_ok

    def summary(self) -> str:
        flag = lambda ok: "pass" if ok else "FAIL"
        return (f"strong convexity: {flag(self.convex_ok)} (min eig Hessian {self.lambda_min_hessian:.6g}); "
                f"equilibrium: {flag(self.equilibrium_ok)} (|grad U| {self.grad_at_equilibrium:.3g}); "
                f"bounded A, D: {flag(self.bounded_ok)} (max |A| {self.max_norm_A:.6g}, max |D| {self.max_norm_D:.6g}) "
                f"over {self.region}")


def validate_assumptions(system, region: Region, grad_tol: float = 1e-8) -> AssumptionReport:
    """Sample-based check of local strong convexity and bounded A, D.

    ``system`` is anything exposing ``assumption_view()`` returning
    ``(potential, equilibrium, A(q), D(q, p))``. For a bare mechanical system
    the coupling matrix ``M^-1`` plays the role of A and the equilibrium is
    the region center. Failures are reported, never raised; the report covers
    the sampled box only.
    """
    potential, eq, A_of, D_of = system.assumption_view()
    if isinstance(system, MechanicalSystem):
        eq = region.center
    elif np.allclose(region.center, 0) and not np.allclose(eq, 0):
        region = region.recentered(eq)
    qs = region.q_samples()
    lam_min = np.inf
    worst = qs[0]
    for q in qs:
        lam = np.linalg.eigvalsh(potential.hess(q)).min()
        if lam < lam_min:
            lam_min, worst = lam, q
    g_eq = float(np.linalg.norm(potential.grad(eq)))
    max_A = 0.0
    max_D = 0.0
    q_all, p_all = region.samples()
    for q in qs:
        max_A = max(max_A, spectral_norm(A_of(q)))
    for q, p in zip(q_all, p_all):
        max_D = max(max_D, spectral_norm(D_of(q, p)))
    return AssumptionReport(
        region=region.describe(),
        samples=len(q_all),
        lambda_min_hessian=float(lam_min),
        grad_at_equilibrium=g_eq,
        max_norm_A=max_A,
        max_norm_D=max_D,
        convex_ok=bool(lam_min > 0),
        equilibrium_ok=g_eq <= grad_tol * max(1.0, abs(potential(eq))),
        bounded_ok=bool(np.isfinite(max_A) and np.isfinite(max_D)),
        worst_q=worst,
    )
