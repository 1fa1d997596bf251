"""Three-joint reduction of the Philips Experimental Robotic Arm.

Joints: shoulder yaw (q1), elbow pitch (q2), elbow yaw (q3). Only q2 feels
gravity. The joint inertias are not published; the defaults below are
plausible small-arm values and are written into every output.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from phstab.core import MatrixField, MechanicalSystem, ScalarField, State
from phstab.pidpbc import GainSet

Q_STAR = (-1.8, 1.57, 0.78)


@dataclass(frozen=True)
class PeraParams:
    I1: float = 0.02     # kg m^2
    I2: float = 0.01
    I3: float = 0.005
    m2: float = 1.0      # kg
    dc2: float = 0.16    # m
    g: float = 9.81      # m/s^2
    damping: tuple = (0.0, 0.0, 0.0)   # optional viscous diag(d1, d2, d3), N m s
    q_star: tuple = Q_STAR

    def __post_init__(self):
        if min(self.I1, self.I2, self.I3) <= 0:
            raise ValueError("inertia parameters must be positive")

    @property
    def gravity_gain(self) -> float:
        """``m2 dc2 g`` (= 1.5696 with the defaults)."""
        return self.m2 * self.dc2 * self.g

    def as_dict(self) -> dict:
        return asdict(self)


def build_pera(params: PeraParams = PeraParams()) -> MechanicalSystem:
    I1, I2, I3 = params.I1, params.I2, params.I3
    md2 = params.m2 * params.dc2 ** 2
    kg = params.gravity_gain
    Isum = I1 + I2 + I3
    m22 = I2 + I3 + md2

    # scalar trig via math: these run inside every vector-field evaluation
    def M(q):
        s, c = math.sin(q[1]), math.cos(q[1])
        m13 = I3 * c
        return np.array([Isum + md2 * s * s, 0.0, m13,
                         0.0, m22, 0.0,
                         m13, 0.0, I3]).reshape(3, 3)

    def dM(q):
        s, c = math.sin(q[1]), math.cos(q[1])
        out = np.zeros((3, 3, 3))   # only dM/dq2 is nonzero
        out[1, 0, 0] = 2.0 * md2 * s * c
        out[1, 0, 2] = out[1, 2, 0] = -I3 * s
        return out

    potential = ScalarField(
        lambda q: kg * (1.0 - math.cos(q[1])),
        lambda q: np.array([0.0, kg * math.sin(q[1]), 0.0]),
        lambda q: np.diag([0.0, kg * math.cos(q[1]), 0.0]),
    )
    inertia = MatrixField(M, dM, symmetric=True, definite="pd", name="PERA inertia")
    Dn = np.diag(np.asarray(params.damping, dtype=float))
    damping = MatrixField.constant(Dn, depends_on_p=True, symmetric=True, definite="psd", name="PERA damping")

    # M(q) depends on q2 only; check positivity on a dense grid
    for q2 in np.linspace(-np.pi, np.pi, 721):
        if np.linalg.eigvalsh(M(np.array([0.0, q2, 0.0])))[0] <= 0:
            raise ValueError("inertia parameters yield indefinite M")
    return MechanicalSystem(3, 3, inertia, potential, damping, name="pera")


def pera_scenarios(params: PeraParams = PeraParams()) -> tuple[dict, State]:
    """Gain sets S1-S3 (all PI, ``K_D = 0``) and the default initial state (rest at q = 0)."""
    qs = np.asarray(params.q_star, dtype=float)
    zero = np.zeros((3, 3))
    sets = {
        "S1": GainSet(np.diag([5.0, 15.0, 20.0]), np.diag([200.0, 250.0, 350.0]), zero, qs),
        "S2": GainSet(np.diag([5.0, 15.0, 20.0]), np.diag([200.0, 250.0, 200.0]), zero, qs),
        "S3": GainSet(np.diag([5.0, 1.0, 20.0]), np.diag([200.0, 250.0, 350.0]), zero, qs),
    }
    return sets, State(np.zeros(3), np.zeros(3))
