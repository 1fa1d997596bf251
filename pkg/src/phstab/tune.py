"""Gain tuning through the certified decay-rate ingredients.

For each candidate gain set the closed loop is transformed, certified on a
region and summarised by ``beta_max``, ``|A|``, ``mu``, ``epsilon`` and both
rates. Ranking uses ``rate_paper``; ``rate_sound`` is reported alongside.
"""
from __future__ import annotations

import itertools
from functools import cmp_to_key
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from phstab.certify import (
    Certificate,
    CertificateInfeasible,
    make_certificate,
    sample_data,
    schur_blocks,
    upsilon_sym,
)
from phstab.core import MechanicalSystem, State, spectral_norm
from phstab.pidpbc import GainSet, build_closed_loop
from phstab.plvcc import to_canonical
from phstab.region import Region

TIE_RTOL = 1e-9
CSV_HEADER = "label,beta_max,normA,mu,epsilon,rate_paper,rate_sound,certified"


def beta_max_of_gains(gains: GainSet, G: Optional[np.ndarray] = None) -> float:
    """``max(1, lambda_max(G K_I G^T))``."""
    G = np.eye(gains.m) if G is None else G
    return float(max(1.0, np.linalg.eigvalsh(G @ gains.K_I @ G.T)[-1]))


@dataclass
class TuningEntry:
    label: str
    gains: GainSet
    beta_max: float = float("nan")
    normA: float = float("nan")
    mu: float = float("nan")
    epsilon: float = float("nan")
    rate_paper: float = float("nan")
    rate_sound: float = float("nan")
    certified: bool = False
    reason: str = ""
    norm_Tinv_max: float = float("nan")
    certificate: Optional[Certificate] = field(default=None, repr=False)

    def csv_row(self) -> str:
        nums = (self.beta_max, self.normA, self.mu, self.epsilon, self.rate_paper, self.rate_sound)
        return ",".join([self.label] + [f"{v:.17g}" for v in nums] + ["true" if self.certified else "false"])


@dataclass
class TuningReport:
    entries: list
    ordering: list

    def entry(self, label: str) -> TuningEntry:
        return next(e for e in self.entries if e.label == label)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(CSV_HEADER + "\n")
            for e in self.entries:
                fh.write(e.csv_row() + "\n")


def certify_gains(sys: MechanicalSystem, label: str, gains: GainSet, region: Region,
                  phi_choice: str = "A_transpose", epsilon: Optional[float] = None,
                  _prepared=None) -> TuningEntry:
    """Certify one gain set; failures are recorded in ``reason`` rather than raised."""
    entry = TuningEntry(label, gains, beta_max=beta_max_of_gains(gains, sys.G))
    try:
        csys, data = _prepared if _prepared is not None else _prepare(sys, gains, region, phi_choice)
        cert = make_certificate(csys, region, phi_choice, epsilon=epsilon, data=data)
    except (CertificateInfeasible, ValueError) as exc:
        entry.reason = str(exc)
        return entry
    entry.normA = cert.norm_A_max
    entry.mu = cert.mu
    entry.epsilon = cert.epsilon
    entry.rate_paper = cert.rate_paper
    entry.rate_sound = cert.rate_sound
    entry.certified = True
    entry.certificate = cert
    entry.norm_Tinv_max = max(spectral_norm(csys.q_terms(q).extra["Tinv"].T) for q in data.region.q_samples())
    return entry


def _prepare(sys, gains, region, phi_choice):
    csys = to_canonical(build_closed_loop(sys, gains))
    return csys, sample_data(csys, region, phi_choice)


def _rank(entries: Sequence[TuningEntry]) -> list:
    """Certified labels by ``rate_paper`` descending.

    Rates within ``TIE_RTOL`` of each other count as tied and are ordered
    lexicographically by label.
    """
    def cmp(a, b):
        if abs(a.rate_paper - b.rate_paper) <= TIE_RTOL * max(abs(a.rate_paper), abs(b.rate_paper)):
            return (a.label > b.label) - (a.label < b.label)
        return -1 if a.rate_paper > b.rate_paper else 1
    return [e.label for e in sorted((e for e in entries if e.certified), key=cmp_to_key(cmp))]


def predict_ordering(sys: MechanicalSystem, gain_sets: dict, region: Region,
                     phi_choice: str = "A_transpose",
                     common_epsilon: bool = True) -> tuple[list, TuningReport]:
    """Labels sorted by certified ``rate_paper`` (descending).

    With ``common_epsilon`` every set is first certified on its own, then all
    are re-certified at the smallest of those epsilons, so the comparison
    holds epsilon fixed and varies only the gain-dependent factors. Without
    it each set keeps its own epsilon; since the admissible epsilon shrinks
    like ``1 / beta_max^2`` this tends to reverse the beta_max dependence.
    Sets that fail certification are left out and carry the reason.
    """
    prepared, entries = {}, []
    for label, g in gain_sets.items():
        try:
            prepared[label] = _prepare(sys, g, region, phi_choice)
        except (CertificateInfeasible, ValueError) as exc:
            entries.append(TuningEntry(label, g, beta_max=beta_max_of_gains(g, sys.G), reason=str(exc)))
            continue
        entries.append(certify_gains(sys, label, g, region, phi_choice, _prepared=prepared[label]))
    if common_epsilon:
        ok = [e for e in entries if e.certified]
        if ok:
            eps = min(e.epsilon for e in ok)
            entries = [certify_gains(sys, e.label, e.gains, region, phi_choice, epsilon=eps,
                                     _prepared=prepared[e.label]) if e.certified else e
                       for e in entries]
    order = _rank(entries)
    return order, TuningReport(entries, order)


def diagonal_grid(kp_values: Iterable, ki_values: Iterable, kd_values: Iterable, q_star) -> list:
    """Cartesian product of diagonal gains (scalars mean ``c I``), labelled by value."""
    q_star = np.atleast_1d(np.asarray(q_star, dtype=float))
    out = []
    for kp, ki, kd in itertools.product(kp_values, ki_values, kd_values):
        label = f"kp={_lab(kp)};ki={_lab(ki)};kd={_lab(kd)}"
        out.append((label, GainSet(kp, ki, kd, q_star)))
    return out


def _lab(v) -> str:
    v = np.atleast_1d(v)
    return "/".join(f"{x:g}" for x in v)


def grid_search(sys: MechanicalSystem, gain_grid: Sequence, region: Region,
                target_rate: Optional[float] = None,
                phi_choice: str = "A_transpose") -> tuple[str, GainSet, TuningReport]:
    """Best certified candidate by ``rate_paper``, or the first reaching ``target_rate``.

    ``gain_grid`` is a sequence of ``(label, GainSet)``; every candidate is
    certified (each at its own epsilon) and reported. Exact ties go to the
    earlier candidate.
    """
    entries = []
    chosen = None
    for label, gains in gain_grid:
        e = certify_gains(sys, label, gains, region, phi_choice)
        entries.append(e)
        if chosen is None and target_rate is not None and e.certified and e.rate_paper >= target_rate:
            chosen = e
    order = _rank(entries)
    if not order:
        raise CertificateInfeasible("no certifiable gains on grid")
    if chosen is None:
        best = max(e.rate_paper for e in entries if e.certified)
        chosen = next(e for e in entries if e.certified and e.rate_paper == best)
    return chosen.label, chosen.gains, TuningReport(entries, order)


def schur_report_blocks(csys, cert: Certificate, q, p):
    """``(X, Y, Z)`` blocks of the certified Upsilon at one sample."""
    U = upsilon_sym(csys, State(q, p), cert.epsilon, cert.phi_choice)
    return schur_blocks(U)


def inertia_block(cl, q, epsilon: float) -> np.ndarray:
    """``eps M^-1 M_d M^-1`` at canonical q, the inertia form of the (1,1) block."""
    qm = np.asarray(q, dtype=float) + cl.q_star
    Minv = np.linalg.inv(cl.base.M(qm))
    return epsilon * Minv @ cl.M_d(qm) @ Minv
