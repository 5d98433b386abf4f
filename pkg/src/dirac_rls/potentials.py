"""Matrix potentials V(r) = -e nu(r) I_4 + e alpha.A(r), their factorisation and diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dirac_algebra import I4, alpha_dot

FAMILIES = ("yukawa", "gaussian", "cutoff-coulomb", "square-well", "matrix-table", "zero")


@dataclass(frozen=True)
class PotentialSpec:
    """A named potential family.

    Scalar part nu(r) for each family (strength g, inverse range mu, cutoff rc):

    - yukawa:          nu = g e^{-mu r} / r
    - gaussian:        nu = g e^{-(mu r)^2}
    - cutoff-coulomb:  nu = g / r for r < cutoff, 0 beyond (pure Coulomb if cutoff is None)
    - square-well:     nu = g for r < rc
    - matrix-table:    V(r) = callable ``table(r)`` returning 4x4 Hermitian matrices
    - zero:            V = 0

    ``vector`` is an optional constant 3-vector A applied where nu's support
    lives (r < cutoff, or everywhere if cutoff is None); V = -e nu I + e alpha.A.
    """

    family: str = "yukawa"
    strength: float = 1.0
    inverse_range: float = 1.0
    cutoff: float | None = None
    charge: float = 1.0
    vector: tuple | None = None
    table: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.family == "matrix-table" and not callable(self.table):
            raise ValueError("matrix-table needs a callable table(r) -> (..., 4, 4)")
        if self.family == "square-well" and not self.cutoff:
            raise ValueError(f"{self.family} needs a cutoff radius")

    @property
    def is_radial(self) -> bool:
        return self.family in ("yukawa", "gaussian", "cutoff-coulomb", "square-well", "zero") \
            and not self.vector

    @property
    def is_scalar(self) -> bool:
        """V is a multiple of I_4 (the case handled by the radial Dirac solver)."""
        return self.family != "matrix-table" and not self.vector

    @property
    def range(self) -> float:
        """Characteristic length used for default grid sizing."""
        if self.family in ("cutoff-coulomb", "square-well") and self.cutoff:
            return float(self.cutoff)
        return 1.0 / self.inverse_range

    def scaled(self, factor: float) -> "PotentialSpec":
        """Same family with the overall strength multiplied by ``factor``."""
        if self.family == "matrix-table":
            tab = self.table
            return PotentialSpec(self.family, table=lambda r: factor * tab(r))
        vec = None if self.vector is None else tuple(factor * c for c in self.vector)
        return PotentialSpec(self.family, self.strength * factor, self.inverse_range,
                             self.cutoff, self.charge, vec)

    def nu(self, rn: np.ndarray) -> np.ndarray:
        """Scalar potential nu at radii ``rn``."""
        rn = np.asarray(rn, dtype=float)
        g, mu = self.strength, self.inverse_range
        if self.family == "yukawa":
            out = g * np.exp(-mu * rn) / rn
        elif self.family == "gaussian":
            out = g * np.exp(-(mu * rn) ** 2)
        elif self.family == "cutoff-coulomb":
            out = g / rn
            if self.cutoff is not None:
                out = np.where(rn < self.cutoff, out, 0.0)
        elif self.family == "square-well":
            out = np.where(rn < self.cutoff, g, 0.0)
        else:
            out = np.zeros_like(rn)
        if self.cutoff is not None and self.family in ("yukawa", "gaussian"):
            out = np.where(rn < self.cutoff, out, 0.0)
        return out

    def radial_profile(self, rn) -> np.ndarray:
        """Scalar function v(r) with V = v(r) I_4 (scalar families only)."""
        if not self.is_scalar:
            raise ValueError("potential is not a multiple of the identity")
        return -self.charge * self.nu(rn)


def potential_matrix(r, spec: PotentialSpec) -> np.ndarray:
    """V(r) for one point (3,) or a stack (..., 3) -> (..., 4, 4)."""
    r = np.asarray(r, dtype=float)
    if spec.family == "matrix-table":
        return np.asarray(spec.table(r), dtype=complex)
    rn = np.linalg.norm(r, axis=-1)
    nu = spec.nu(rn)
    v = (-spec.charge * nu)[..., None, None] * I4
    if spec.vector is not None:
        a = np.asarray(spec.vector, dtype=float)
        support = np.ones_like(rn) if spec.cutoff is None else (rn < spec.cutoff).astype(float)
        v = v + spec.charge * support[..., None, None] * alpha_dot(a)
    return v


def _fix_phases(u: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component of every column real positive."""
    idx = np.argmax(np.abs(u), axis=-2)
    piv = np.take_along_axis(u, idx[..., None, :], axis=-2)
    return u * (np.abs(piv) / piv)


def factorize(v: np.ndarray, atol: float = 1e-12):
    """V = V1 W1 V1 with V1 = U |D|^{1/2} U*, W1 = U sgn(D) U* and sgn(0) := 1.

    Accepts a single 4x4 matrix or a stack (..., 4, 4).
    """
    v = np.asarray(v, dtype=complex)
    herm_err = np.max(np.abs(v - np.conj(np.swapaxes(v, -1, -2))), initial=0.0)
    scale = max(1.0, float(np.max(np.abs(v), initial=0.0)))
    if herm_err > atol * scale * 1e3:
        raise ValueError(f"potential matrix is not Hermitian (defect {herm_err:.3g})")
    d, u = np.linalg.eigh(v)
    u = _fix_phases(u)
    d1 = np.sqrt(np.abs(d))
    sg = np.where(d < 0, -1.0, 1.0)
    uh = np.conj(np.swapaxes(u, -1, -2))
    v1 = (u * d1[..., None, :]) @ uh
    w1 = (u * sg[..., None, :]) @ uh
    return v1, w1


@dataclass(frozen=True, eq=False)
class FactorizedPotential:
    """V, V1 and W1 sampled at grid nodes, shape (N, 4, 4) each."""

    v: np.ndarray
    v1: np.ndarray
    w1: np.ndarray

    @property
    def v1w1(self) -> np.ndarray:
        return self.v1 @ self.w1

    @property
    def is_zero(self) -> bool:
        return not np.any(self.v)


def sample_potential(spec: PotentialSpec, nodes: np.ndarray) -> FactorizedPotential:
    v = potential_matrix(nodes, spec)
    if spec.is_scalar:
        # V = v I: V1 = |v|^{1/2} I, W1 = sgn(v) I, no eigensolver needed
        s = v[:, 0, 0].real
        v1 = np.sqrt(np.abs(s))[:, None, None] * np.eye(4)
        w1 = np.where(s < 0, -1.0, 1.0)[:, None, None] * np.eye(4)
        return FactorizedPotential(v, v1.astype(complex), w1.astype(complex))
    v1, w1 = factorize(v)
    return FactorizedPotential(v, v1, w1)


def rollnik_estimate(spec: PotentialSpec, r_max: float, n_r: int = 64, n_mu: int = 48) -> float:
    """Estimate of int int ||V(r)|| ||V(s)|| / |r - s|^2 dr ds.

    ||V|| is the operator norm, which must depend on |r| only (every family
    except matrix-table). The angular integral of |r - s|^{-2} over the
    relative direction is done in closed form, (2 pi / (r s)) log((r+s)/|r-s|),
    leaving a 2D radial integral with a log singularity on the diagonal that is
    handled by splitting each inner integral at r.
    """
    if spec.family == "matrix-table":
        raise ValueError("rollnik_estimate needs a potential whose norm is radial")
    if spec.family == "zero":
        return 0.0

    def vnorm(rr):
        rr = np.atleast_1d(rr)
        pts = np.zeros((rr.size, 3))
        pts[:, 2] = rr
        return np.linalg.norm(potential_matrix(pts, spec), ord=2, axis=(-2, -1))

    xo, wo = np.polynomial.legendre.leggauss(n_r)
    ro = 0.5 * r_max * (xo + 1)
    wo = 0.5 * r_max * wo
    xi, wi = np.polynomial.legendre.leggauss(n_mu)
    total = 0.0
    for r, w in zip(ro, wo):
        inner = 0.0
        for a, b in ((0.0, r), (r, r_max)):
            # map with a quadratic clustering towards s = r to tame log|r - s|
            t = 0.5 * (xi + 1)
            if b == r:
                s = b - (b - a) * (1 - t) ** 2
                ds = 2 * (b - a) * (1 - t)
            else:
                s = a + (b - a) * t**2
                ds = 2 * (b - a) * t
            ker = 2 * np.pi / (r * s) * np.log((r + s) / np.abs(r - s))
            inner += np.sum(0.5 * wi * ds * vnorm(s) * s * s * ker)
        total += w * r * r * vnorm(r)[0] * 4 * np.pi * inner
    return float(total)


@dataclass
class RollnikReport:
    value: float
    refined: float

    @property
    def diverging(self) -> bool:
        """Estimate more than doubled when the quadrature was refined."""
        return self.refined > 2.0 * self.value

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.refined)) and not self.diverging


def rollnik_report(spec: PotentialSpec, r_max: float, n_r: int = 64, n_mu: int = 48) -> RollnikReport:
    """Rollnik estimate at (n_r, n_mu) and at twice both, with a divergence flag."""
    return RollnikReport(rollnik_estimate(spec, r_max, n_r, n_mu),
                         rollnik_estimate(spec, r_max, 2 * n_r, 2 * n_mu))


@dataclass
class DecayReport:
    v1_bounded: bool
    v_bounded: bool
    v1_ratio_max: float
    v_ratio_max: float
    exponent: float

    @property
    def passed(self) -> bool:
        return self.v1_bounded and self.v_bounded


def decay_check(spec: PotentialSpec, exponent: float = 3.05, r_lo: float = 10.0,
                r_hi: float = 1e3, n: int = 200) -> DecayReport:
    """Check ||V1|| |r|^{3/2} and ||V|| |r|^exponent stay bounded on [r_lo, r_hi].

    "Bounded" is operationalised as: the ratio does not grow from the first
    to the last decade of the sample (max over the last decade <= 1.5 x max
    over the first).
    """
    rr = np.geomspace(r_lo, r_hi, n)
    pts = np.stack([np.zeros_like(rr), np.zeros_like(rr), rr], axis=1)
    v = potential_matrix(pts, spec)
    vn = np.linalg.norm(v, ord=2, axis=(-2, -1))
    v1n = np.sqrt(vn)
    a = v1n * rr**1.5
    b = vn * rr**exponent
    first = rr <= r_lo * 10
    last = rr >= r_hi / 10

    def bounded(x):
        return bool(np.max(x[last]) <= 1.5 * np.max(x[first]) + 1e-300)

    return DecayReport(bounded(a), bounded(b), float(a.max()), float(b.max()), exponent)
