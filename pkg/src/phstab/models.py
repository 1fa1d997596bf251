"""Built-in benchmark systems and expression-defined custom models."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from phstab.core import MatrixField, MechanicalSystem, ScalarField, State
from phstab.expr import Compiled
from phstab.pera import PeraParams, build_pera, pera_scenarios


@dataclass
class ModelBundle:
    """A system plus the defaults the command line needs to run it."""

    system: MechanicalSystem
    q_star: np.ndarray
    initial: State
    default_gains: dict            # keyword arguments for GainSet (without q_star)
    scenarios: dict = field(default_factory=dict)   # named GainSets
    h: float = 1e-3
    meta: dict = field(default_factory=dict)


def pendulum(mass: float = 1.0, l: float = 1.0, g: float = 9.81, damping: float = 0.0) -> MechanicalSystem:
    """Fully actuated pendulum, ``M = m l^2``, ``U = m g l (1 - cos q)``; hanging rest at q = 0."""
    I = mass * l * l
    k = mass * g * l
    return MechanicalSystem(
        1, 1,
        MatrixField.constant([[I]], symmetric=True, definite="pd", name="pendulum inertia"),
        ScalarField(lambda q: k * (1.0 - math.cos(q[0])),
                    lambda q: np.array([k * math.sin(q[0])]),
                    lambda q: np.array([[k * math.cos(q[0])]])),
        MatrixField.constant([[damping]], depends_on_p=True, symmetric=True, definite="psd"),
        name="pendulum",
    )


def mass_spring_damper(mass: float = 1.0, stiffness: float = 4.0, damping: float = 0.5) -> MechanicalSystem:
    """``M = mass``, ``U = stiffness q^2 / 2``, viscous damping; the default is ``U = 2 q^2``."""
    return MechanicalSystem(
        1, 1,
        MatrixField.constant([[mass]], symmetric=True, definite="pd", name="msd inertia"),
        ScalarField(lambda q: 0.5 * stiffness * float(q @ q),
                    lambda q: stiffness * q,
                    lambda q: np.array([[stiffness]])),
        MatrixField.constant([[damping]], depends_on_p=True, symmetric=True, definite="psd"),
        name="msd1",
    )


MSD1_GRID = {"kp": (0.5, 1.0, 2.0), "ki": (2.0, 8.0), "kd": (0.0,)}


def builtin(name: str, params: Optional[dict] = None) -> ModelBundle:
    params = dict(params or {})
    if name in ("pendulum", "msd1") and "damping" in params:
        params["damping"] = float(np.asarray(params["damping"]).reshape(-1)[0])
    if name == "pera":
        damping = params.pop("damping", None)
        if damping is not None:
            params["damping"] = tuple(np.broadcast_to(np.asarray(damping, dtype=float), (3,)))
        p = PeraParams(**params)
        sets, s0 = pera_scenarios(p)
        return ModelBundle(build_pera(p), np.asarray(p.q_star, dtype=float), s0,
                           {"kp": sets["S1"].K_P, "ki": sets["S1"].K_I, "kd": 0.0},
                           {k.lower(): v for k, v in sets.items()}, h=1e-4,
                           meta={"model": "pera", **{k: v for k, v in p.as_dict().items()}})
    if name == "pendulum":
        sys = pendulum(**params)
        return ModelBundle(sys, np.zeros(1), State([0.5], [0.0]), {"kp": 1.0, "ki": 20.0, "kd": 0.0},
                           meta={"model": "pendulum", **params})
    if name == "msd1":
        sys = mass_spring_damper(**params)
        return ModelBundle(sys, np.zeros(1), State([1.0], [0.0]), {"kp": 1.0, "ki": 8.0, "kd": 0.0},
                           meta={"model": "msd1", **params})
    raise ValueError(f"unknown model {name!r}; built-ins are pera, pendulum, msd1")


BUILTIN_MODELS = ("pera", "pendulum", "msd1")


def custom_model(n: int, m: int, inertia: dict, potential: str, damping=None,
                 name: str = "custom") -> MechanicalSystem:
    """Model from expressions.

    ``inertia`` maps ``(i, j)`` (1-based, ``i <= j``) to an expression; missing
    entries are zero and the lower triangle mirrors the upper one.
    ``potential`` is one expression; ``damping`` an optional constant
    diagonal (scalar or length-n).
    """
    entries = {}
    for (i, j), text in inertia.items():
        if not (1 <= i <= n and 1 <= j <= n):
            raise ValueError(f"inertia entry M{i}{j} outside {n}x{n}")
        a, b = min(i, j) - 1, max(i, j) - 1
        entries[(a, b)] = Compiled(text, n)
    for i in range(n):
        if (i, i) not in entries:
            raise ValueError(f"inertia diagonal entry M{i + 1}{i + 1} missing")
    U = Compiled(potential, n)

    def M(q):
        out = np.zeros((n, n))
        for (a, b), e in entries.items():
            out[a, b] = out[b, a] = e(q)
        return out

    def dM(q):
        out = np.zeros((n, n, n))
        for (a, b), e in entries.items():
            g = e.gradient(q)
            out[:, a, b] = g
            out[:, b, a] = g
        return out

    Dn = np.zeros((n, n)) if damping is None else np.diag(np.broadcast_to(np.asarray(damping, dtype=float), (n,)))
    return MechanicalSystem(
        n, m,
        MatrixField(M, dM, symmetric=True, definite="pd", name=f"{name} inertia"),
        ScalarField(U, U.gradient, U.hessian),
        MatrixField.constant(Dn, depends_on_p=True, symmetric=True, definite="psd", name=f"{name} damping"),
        name=name,
    )
