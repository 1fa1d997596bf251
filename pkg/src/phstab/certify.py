"""Sampled exponential-stability certificates for canonical pH systems.

Lyapunov candidate ``S = H + eps p^T Phi(q) grad U(q)`` with ``Phi = A^T``
(default) or ``Phi = A^-1``. Along solutions ``Sdot = -grad H^T Upsilon grad H``
where, with ``grad H = (grad U, p)``,

    Upsilon = [[ eps A Phi,                        0               ],
               [ -eps ((J - D)^T Phi + Phi_dot),   D - eps Phi hess(U) A ]].

The lower-left block equals ``eps (J + D) Phi - eps Phi_dot`` when D is
symmetric. Only the symmetric part enters the quadratic form; for
``Phi = A^T`` its (1,1) block is ``eps A A^T``.

Everything below is evaluated on the samples of a :class:`Region`; the
certificate records the sample set and makes no claim between samples.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from phstab.core import State, spectral_norm
from phstab.region import Region

PHI_CHOICES = ("A_transpose", "A_inverse")
SLACK = 1e-9
EPS_FLOOR = 1e-12
BISECT_RTOL = 1e-4

CERT_KEYS = ("phi_choice", "epsilon", "beta_min", "beta_max", "norm_A_max", "mu", "k1", "k2",
             "rate_paper", "rate_sound", "q_radii", "p_radii", "samples", "margin", "global_flag")


class CertificateInfeasible(Exception):
    """No admissible epsilon on the region (or a standing assumption fails there)."""

    def __init__(self, message: str, worst_q=None, worst_p=None):
        super().__init__(message)
        self.worst_q = worst_q
        self.worst_p = worst_p


def _check_phi(phi_choice: str):
    if phi_choice not in PHI_CHOICES:
        raise ValueError(f"phi_choice must be one of {PHI_CHOICES}, got {phi_choice!r}")


def _phi(A: np.ndarray, A_dot: Optional[np.ndarray], phi_choice: str, q=None):
    if phi_choice == "A_transpose":
        return A.T, None if A_dot is None else A_dot.T
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        raise ValueError(f"Phi = A^-1 undefined at q={np.asarray(q).tolist()}") from None
    return Ainv, None if A_dot is None else -Ainv @ A_dot @ Ainv


def lyapunov_value(csys, s: State, epsilon: float, phi_choice: str = "A_transpose") -> float:
    _check_phi(phi_choice)
    q, p = s.q, s.p
    Phi, _ = _phi(csys.A(q), None, phi_choice, q)
    return csys.hamiltonian(q, p) + epsilon * float(p @ Phi @ csys.U.grad(q))


def upsilon_parts(t, phi_choice: str, q=None) -> tuple[np.ndarray, np.ndarray]:
    """``(Upsilon_0, Upsilon_1)`` with ``Upsilon = Upsilon_0 + eps Upsilon_1`` (not symmetrized)."""
    n = t.A.shape[0]
    Phi, Phi_dot = _phi(t.A, t.A_dot, phi_choice, q)
    U0 = np.zeros((2 * n, 2 * n))
    U1 = np.zeros((2 * n, 2 * n))
    U0[n:, n:] = t.D
    U1[:n, :n] = t.A @ Phi
    U1[n:, :n] = -((t.J - t.D).T @ Phi + Phi_dot)
    U1[n:, n:] = -Phi @ t.hess_U @ t.A
    return U0, U1


def _sym(U: np.ndarray) -> np.ndarray:
    return 0.5 * (U + np.swapaxes(U, -1, -2))


def upsilon_sym(csys, s: State, epsilon: float, phi_choice: str = "A_transpose") -> np.ndarray:
    """Symmetric part of Upsilon at one state (``Phi_dot`` taken along ``qdot = A p``)."""
    _check_phi(phi_choice)
    t = csys.terms(s.q, s.p, full=True)
    U0, U1 = upsilon_parts(t, phi_choice, s.q)
    return _sym(U0 + epsilon * U1)


def schur_blocks(U_sym: np.ndarray):
    """``(X, Y, Z)`` with ``U_sym = [[X, Y], [Y^T, Z]]``; works on stacks."""
    n = U_sym.shape[-1] // 2
    return U_sym[..., :n, :n], U_sym[..., :n, n:], U_sym[..., n:, n:]


def schur_pd_check(U_sym: np.ndarray, delta: float = 0.0) -> tuple[bool, float]:
    """Positive definiteness via ``X > delta I`` and ``Z - Y^T X^-1 Y > delta I``.

    Returns (holds, margin) with margin the smaller of the two minimum
    eigenvalues minus ``delta``. A margin within ``delta`` of zero is
    classified infeasible.
    """
    X, Y, Z = schur_blocks(np.asarray(U_sym, dtype=float))
    lam_x = np.linalg.eigvalsh(X).min()
    if lam_x <= delta:
        return False, float(lam_x - delta)
    S = Z - Y.T @ np.linalg.solve(X, Y)
    lam_s = np.linalg.eigvalsh(_sym(S)).min()
    margin = float(min(lam_x, lam_s) - delta)
    return margin > 0, margin


@dataclass
class SampleData:
    """Per-sample ingredients of the certificate, computed once per region."""

    q: np.ndarray
    p: np.ndarray
    U0: np.ndarray          # (N, 2n, 2n), symmetrized
    U1: np.ndarray          # (N, 2n, 2n), symmetrized
    norm_A: np.ndarray      # per sample
    norm_phi: np.ndarray    # per sample
    cond3_min: float        # min eigenvalue of (A Phi + Phi^T A^T) / 2
    beta_min: float
    beta_max: float
    region: Region
    phi_choice: str

    @property
    def N(self) -> int:
        return self.q.shape[0]

    def upsilon(self, epsilon: float) -> np.ndarray:
        return self.U0 + epsilon * self.U1


def convexity_bounds(csys, region: Region) -> tuple[float, float]:
    """Sandwich constants for ``H``: ``min/max(1, eig hess U)`` over the q samples."""
    lam_lo, lam_hi = np.inf, -np.inf
    for q in _canonical_region(region).q_samples():
        lam = np.linalg.eigvalsh(csys.U.hess(q))
        if lam[0] <= 0:
            raise CertificateInfeasible(f"potential not strongly convex at q={q.tolist()} "
                                        f"(min Hessian eigenvalue {lam[0]:.6g})", worst_q=q)
        lam_lo = min(lam_lo, lam[0])
        lam_hi = max(lam_hi, lam[-1])
    return float(min(1.0, lam_lo)), float(max(1.0, lam_hi))


def _canonical_region(region: Region) -> Region:
    if not np.allclose(region.center, 0):
        return region.recentered(np.zeros(region.n))
    return region


def sample_data(csys, region: Region, phi_choice: str = "A_transpose") -> SampleData:
    _check_phi(phi_choice)
    region = _canonical_region(region)
    beta_min, beta_max = convexity_bounds(csys, region)
    qs, ps = region.samples()
    N, n = qs.shape
    U0 = np.empty((N, 2 * n, 2 * n))
    U1 = np.empty((N, 2 * n, 2 * n))
    norm_A = np.empty(N)
    norm_phi = np.empty(N)
    cond3 = np.inf
    cache_key, qt = None, None
    for k in range(N):
        key = qs[k].tobytes()
        if key != cache_key:
            qt = csys.q_terms(qs[k], hessian=True, partials=True)
            cache_key = key
            Phi, _ = _phi(qt.A, None, phi_choice, qs[k])
            nA, nPhi = spectral_norm(qt.A), spectral_norm(Phi)
            c3 = np.linalg.eigvalsh(_sym(qt.A @ Phi)).min()
            cond3 = min(cond3, c3)
        t = csys.p_terms(qt, ps[k])
        a, b = upsilon_parts(t, phi_choice, qs[k])
        U0[k], U1[k] = _sym(a), _sym(b)
        norm_A[k], norm_phi[k] = nA, nPhi
    return SampleData(qs, ps, U0, U1, norm_A, norm_phi, float(cond3), beta_min, beta_max,
                      region, phi_choice)


def _margins(data: SampleData, epsilon: float) -> np.ndarray:
    """Per-sample Schur margin with slack ``1e-9 * trace/n`` on each block."""
    X, Y, Z = schur_blocks(data.upsilon(epsilon))
    n = X.shape[-1]
    lam_x = np.linalg.eigvalsh(X)[:, 0]
    dx = SLACK * np.abs(np.trace(X, axis1=1, axis2=2)) / n
    out = lam_x - dx
    ok = out > 0
    if np.any(ok):
        S = Z[ok] - np.swapaxes(Y[ok], 1, 2) @ np.linalg.solve(X[ok], Y[ok])
        lam_s = np.linalg.eigvalsh(_sym(S))[:, 0]
        ds = SLACK * np.abs(np.trace(Z[ok], axis1=1, axis2=2)) / n
        out[ok] = np.minimum(out[ok], lam_s - ds)
    return out


def _k1_bound(data: SampleData) -> float:
    return data.beta_min / (float(data.norm_phi.max()) * data.beta_max ** 2)


def max_feasible_epsilon(csys, region: Region, phi_choice: str = "A_transpose",
                         data: Optional[SampleData] = None, enforce_k1: bool = True) -> float:
    """Largest epsilon keeping Upsilon_sym > 0 on every sample and ``k1 > 0``.

    Bisection to ``1e-4`` relative. When the ``k1 > 0`` bound
    ``beta_min / (max|Phi| beta_max^2)`` is itself Schur-feasible it is returned
    as the supremum. ``enforce_k1=False`` gives the Schur-only bound.
    """
    data = data or sample_data(csys, region, phi_choice)
    feasible = lambda e: bool(np.all(_margins(data, e) > 0))
    if enforce_k1:
        hi = _k1_bound(data)
        if feasible(hi):
            return hi
    else:
        hi = 1.0
        while feasible(hi):
            hi *= 2.0
            if hi > 1e12:
                return np.inf
    lo = hi
    while not feasible(lo):
        lo *= 0.5
        if lo < EPS_FLOOR:
            m = _margins(data, EPS_FLOOR)
            k = int(np.argmin(m))
            raise CertificateInfeasible(
                f"certificate infeasible on region: worst sample q={data.q[k].tolist()} "
                f"p={data.p[k].tolist()} margin {m[k]:.3g}", data.q[k], data.p[k])
    hi = min(hi, 2.0 * lo) if lo < hi else hi
    while hi - lo > BISECT_RTOL * lo:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


@dataclass
class Certificate:
    """Sampled exponential-stability certificate.

    ``rate_paper = beta_max mu / (1 + eps |A| beta_max)`` is the classical
    rate formula; ``rate_sound = mu beta_min^2 / (2 k2)`` follows from
    ``|grad H| >= beta_min |x|`` and is the one used in envelope checks.
    """

    phi_choice: str
    epsilon: float
    beta_min: float
    beta_max: float
    norm_A_max: float
    mu: float
    k1: float
    k2: float
    rate_paper: float
    rate_sound: float
    q_radii: np.ndarray
    p_radii: np.ndarray
    samples: int
    margin: float
    global_flag: bool = False
    epsilon_star: float = float("nan")
    norm_phi_max: float = float("nan")
    region: Optional[Region] = field(default=None, repr=False)
    metadata: dict = field(default_factory=dict, repr=False)

    def to_text(self) -> str:
        lines = [f"# {k} = {v}" for k, v in self.metadata.items()]
        if self.region is not None:
            lines.append(f"# sampling = grid {self.region.grid_points_per_axis}/axis (capped), "
                         f"extra {self.region.extra_samples}, seed {self.region.seed}")
        lines.append(f"# epsilon_star = {_fmt(self.epsilon_star)}")
        lines.append("# extrema are sample extrema; no guarantee between samples")
        for key in CERT_KEYS:
            lines.append(f"{key} = {_fmt(getattr(self, key))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Certificate":
        vals = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            vals[key.strip()] = raw.strip()
        missing = [k for k in CERT_KEYS if k not in vals]
        if missing:
            raise ValueError(f"certificate text missing keys {missing}")
        kw = {}
        for key in CERT_KEYS:
            raw = vals[key]
            if key == "phi_choice":
                kw[key] = raw
            elif key == "global_flag":
                kw[key] = raw == "true"
            elif key == "samples":
                kw[key] = int(raw)
            elif key in ("q_radii", "p_radii"):
                kw[key] = np.array([float(v) for v in raw.split(",")])
            else:
                kw[key] = float(raw)
        return cls(**kw)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, np.ndarray):
        return ",".join(f"{float(x):.17g}" for x in v)
    return f"{float(v):.17g}"


def make_certificate(csys, region: Region, phi_choice: str = "A_transpose",
                     epsilon: Optional[float] = None, data: Optional[SampleData] = None) -> Certificate:
    """Search epsilon, then package bounds and both decay rates.

    By default the certified epsilon is half the feasibility boundary. An
    explicit ``epsilon`` must lie in ``(0, eps_star)``.
    """
    data = data or sample_data(csys, region, phi_choice)
    if data.cond3_min <= 0:
        raise CertificateInfeasible(f"A Phi + Phi^T A^T not positive definite on region "
                                    f"(min eigenvalue {data.cond3_min:.3g})")
    eps_star = max_feasible_epsilon(csys, region, phi_choice, data=data)
    if epsilon is None:
        eps = 0.5 * eps_star
    else:
        eps = float(epsilon)
        if not 0 < eps < eps_star or not np.all(_margins(data, eps) > 0):
            raise CertificateInfeasible(f"epsilon={eps:g} outside the feasible range (0, {eps_star:.6g})")
    Ups = data.upsilon(eps)
    mu = float(np.linalg.eigvalsh(Ups)[:, 0].min())
    margin = float(_margins(data, eps).min())
    nA = float(data.norm_A.max())
    nPhi = float(data.norm_phi.max())
    bmin, bmax = data.beta_min, data.beta_max
    k1 = 0.5 * (bmin - eps * nPhi * bmax ** 2)
    k2 = 0.5 * (bmax + eps * nPhi * bmax ** 2)
    if not (mu > 0 and k1 > 0):
        raise CertificateInfeasible(f"degenerate certificate (mu={mu:.3g}, k1={k1:.3g})")
    reg = data.region
    return Certificate(
        phi_choice=phi_choice,
        epsilon=eps,
        beta_min=bmin,
        beta_max=bmax,
        norm_A_max=nA,
        mu=mu,
        k1=k1,
        k2=k2,
        rate_paper=bmax * mu / (1.0 + eps * nA * bmax),
        rate_sound=mu * bmin ** 2 / (2.0 * k2),
        q_radii=reg.q_radii.copy(),
        p_radii=reg.p_radii.copy(),
        samples=data.N,
        margin=margin,
        global_flag=bool(getattr(csys, "global_flag", False)),
        epsilon_star=eps_star,
        norm_phi_max=nPhi,
        region=reg,
    )


def envelope(cert: Certificate, x0_norm: float, t) -> tuple:
    """``sqrt(k2/k1) |x0| exp(-rate t)`` for (rate_paper, rate_sound)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    c = np.sqrt(cert.k2 / cert.k1) * x0_norm
    return c * np.exp(-cert.rate_paper * t), c * np.exp(-cert.rate_sound * t)
