"""Sampled boxes around an equilibrium.

All sample-based checks (assumption validation, C1-C3, certificate search)
draw their points from a :class:`Region`, so the sample set is reproducible
and can be recorded next to whatever it certified.
"""
from __future__ import annotations

from dataclasses import dataclass
import warnings
from typing import Optional

import numpy as np
from scipy.stats import qmc

MAX_GRID_SAMPLES = 20_000


@dataclass(frozen=True)
class Region:
    """Box ``|q - center| <= q_radii``, ``|p| <= p_radii`` (componentwise).

    ``center`` defaults to the origin, which is the equilibrium of a canonical
    system. Sample extrema over this box are what certificates report; nothing
    is claimed between sample points.
    """

    q_radii: np.ndarray
    p_radii: np.ndarray
    grid_points_per_axis: int = 7
    extra_samples: int = 0
    seed: int = 0
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        q_r = np.atleast_1d(np.asarray(self.q_radii, dtype=float))
        p_r = np.atleast_1d(np.asarray(self.p_radii, dtype=float))
        if q_r.shape != p_r.shape:
            raise ValueError("shape error: q_radii and p_radii differ in length")
        if np.any(q_r <= 0) or np.any(p_r <= 0) or not np.all(np.isfinite(np.r_[q_r, p_r])):
            raise ValueError("region radii must be strictly positive and finite")
        if self.grid_points_per_axis < 3:
            raise ValueError("grid_points_per_axis must be >= 3")
        if self.extra_samples < 0:
            raise ValueError("extra_samples must be non-negative")
        center = np.zeros_like(q_r) if self.center is None else np.asarray(self.center, dtype=float)
        if center.shape != q_r.shape:
            raise ValueError("shape error: center does not match radii")
        object.__setattr__(self, "q_radii", q_r)
        object.__setattr__(self, "p_radii", p_r)
        object.__setattr__(self, "center", center)

    @classmethod
    def uniform(cls, n: int, q_radius: float, p_radius: float, **kw) -> "Region":
        return cls(np.full(n, float(q_radius)), np.full(n, float(p_radius)), **kw)

    @property
    def n(self) -> int:
        return self.q_radii.size

    def recentered(self, center) -> "Region":
        return Region(self.q_radii, self.p_radii, self.grid_points_per_axis,
                      self.extra_samples, self.seed, np.asarray(center, dtype=float))

    def points_per_axis(self, dims: int) -> int:
        k = self.grid_points_per_axis
        while k > 3 and k**dims > MAX_GRID_SAMPLES:
            k -= 1
        return k

    def _axis_grid(self, radii: np.ndarray, k: int) -> np.ndarray:
        axes = [np.linspace(-r, r, k) for r in radii]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def q_samples(self) -> np.ndarray:
        """Grid over the configuration box only, shape ``(k**n, n)``."""
        k = self.points_per_axis(self.n)
        pts = self.center + self._axis_grid(self.q_radii, k)
        if self.extra_samples:
            pts = np.vstack([pts, self.center + self._sobol(self.q_radii)])
        return pts

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        """Joint (q, p) samples, returned as two ``(N, n)`` arrays.

        A tensor grid with ``grid_points_per_axis`` points on each of the 2n
        axes, thinned until it fits in ``MAX_GRID_SAMPLES``. When even three
        points per axis exceed the cap, a scrambled Sobol set of ``MAX_GRID_SAMPLES``
        points replaces the grid. ``extra_samples`` Sobol points are appended.
        """
        n = self.n
        radii = np.r_[self.q_radii, self.p_radii]
        k = self.points_per_axis(2 * n)
        if k**(2 * n) <= MAX_GRID_SAMPLES:
            z = self._axis_grid(radii, k)
        else:
            z = self._sobol(radii, MAX_GRID_SAMPLES, salt=1)
        if self.extra_samples:
            z = np.vstack([z, self._sobol(radii)])
        return self.center + z[:, :n], z[:, n:].copy()

    def _sobol(self, radii, count=None, salt=0) -> np.ndarray:
        count = self.extra_samples if count is None else count
        sampler = qmc.Sobol(d=radii.size, scramble=True, seed=self.seed + salt)
        with warnings.catch_warnings():
            # non power-of-two counts are fine here
            warnings.simplefilter("ignore", UserWarning)
            u = sampler.random(count)
        return (2.0 * u - 1.0) * radii

    def contains(self, q, p) -> bool:
        dq = np.abs(np.asarray(q, dtype=float) - self.center)
        return bool(np.all(dq <= self.q_radii * (1 + 1e-12)) and
                    np.all(np.abs(np.asarray(p, dtype=float)) <= self.p_radii * (1 + 1e-12)))

    def inscribed_radius(self) -> float:
        return float(min(self.q_radii.min(), self.p_radii.min()))

    def describe(self) -> str:
        q, p = self.samples()
        return (f"sampled box q_radii={self.q_radii.tolist()} p_radii={self.p_radii.tolist()} "
                f"center={self.center.tolist()} samples={len(q)} seed={self.seed}")
