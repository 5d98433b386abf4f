"""Volume and sphere quadrature rules.

Sphere rules are Lebedev rules indexed by their point count (6, 14, 26, 38,
50, ...); ``SphereGrid.degree`` is the polynomial degree integrated exactly.
Volume rules are products of Gauss-Legendre radial nodes on (0, R_max] and a
sphere rule, with the r^2 Jacobian folded into the weights.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import lebedev_rule

logger = logging.getLogger(__name__)

# Lebedev point count -> degree, as tabulated by scipy
_LEBEDEV_DEGREES = (3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29, 31, 35, 41, 47,
                    53, 59, 65, 71, 77, 83, 89, 95, 101, 107, 113, 119, 125, 131)
_LEBEDEV_POINTS: dict[int, int] = {}


def lebedev_orders() -> dict[int, int]:
    """Supported sphere orders (point counts) mapped to their exact degree."""
    if not _LEBEDEV_POINTS:
        for d in _LEBEDEV_DEGREES:
            _LEBEDEV_POINTS[lebedev_rule(d)[0].shape[1]] = d
    return dict(_LEBEDEV_POINTS)


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Directions (M, 3) on S^2 with positive weights summing to 4 pi."""

    directions: np.ndarray
    weights: np.ndarray
    order: int
    degree: int

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def lmax(self) -> int:
        """Largest l whose products Y_lm Y_l'm' (l, l' <= lmax) are integrated exactly."""
        return self.degree // 2


def build_sphere_grid(order: int) -> SphereGrid:
    """Lebedev rule with ``order`` points."""
    table = lebedev_orders()
    if order not in table:
        raise ValueError(f"unsupported sphere order {order}; choose one of {sorted(table)}")
    deg = table[order]
    x, w = lebedev_rule(deg)
    dirs = np.ascontiguousarray(x.T)
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    return SphereGrid(dirs, np.asarray(w, dtype=float), order, deg)


@dataclass(frozen=True, eq=False)
class VolumeGrid:
    """Product grid. Node index i = a * M + b for radial node a and direction b."""

    radii: np.ndarray
    radial_weights: np.ndarray
    sphere: SphereGrid
    r_max: float

    @property
    def n_r(self) -> int:
        return self.radii.size

    @property
    def n_ang(self) -> int:
        return self.sphere.size

    @property
    def size(self) -> int:
        return self.n_r * self.n_ang

    @property
    def nodes(self) -> np.ndarray:
        return (self.radii[:, None, None] * self.sphere.directions[None]).reshape(-1, 3)

    @property
    def weights(self) -> np.ndarray:
        w = (self.radial_weights * self.radii**2)[:, None] * self.sphere.weights[None]
        return w.ravel()

    def fingerprint(self) -> str:
        h = hashlib.sha1()
        for arr in (self.radii, self.radial_weights, self.sphere.weights):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(f"{self.r_max}:{self.sphere.order}".encode())
        return h.hexdigest()[:16]


def build_volume_grid(r_max: float, n_r: int, sphere_order: int,
                      kappa: float | None = None) -> VolumeGrid:
    """Gauss-Legendre radial nodes mapped affinely to (0, r_max] times a sphere rule.

    If ``kappa`` is given, warns when kappa * r_max exceeds n_r / 2 (radial
    under-resolution of e^{i kappa r}).
    """
    if not r_max > 0:
        raise ValueError("r_max must be positive")
    if n_r < 8:
        raise ValueError("n_r must be at least 8")
    x, w = np.polynomial.legendre.leggauss(n_r)
    radii = 0.5 * r_max * (x + 1.0)
    rw = 0.5 * r_max * w
    if kappa is not None and kappa * r_max > n_r / 2:
        logger.warning("kappa*r_max = %.3g exceeds n_r/2 = %d; radial grid is coarse",
                       kappa * r_max, n_r // 2)
    return VolumeGrid(radii, rw, build_sphere_grid(sphere_order), float(r_max))


def integrate_volume(f, grid: VolumeGrid):
    """Weighted sum of ``f`` over the volume nodes.

    ``f`` is either a callable taking the (N, 3) node array or an array whose
    leading axis runs over nodes.
    """
    vals = f(grid.nodes) if callable(f) else np.asarray(f)
    return np.tensordot(grid.weights, vals, axes=(0, 0))


def integrate_sphere(h, grid: SphereGrid):
    """Weighted sum of ``h`` over the sphere nodes (callable or sampled values)."""
    vals = h(grid.directions) if callable(h) else np.asarray(h)
    return np.tensordot(grid.weights, vals, axes=(0, 0))
