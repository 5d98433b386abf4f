"""Scattering amplitudes from a solved wavefunction.

f(w, w', n) = (lam / 4 pi) int e^{-i kappa w.s} V(s) phi(s) ds, evaluated with
V phi = V1 W1 psi at the volume nodes.

Far field. Expanding the outgoing kernel for |r| -> inf gives

    phi - phi_0 ~ (e^{i kappa_s |r|} / |r|) A(w),   A = -(m beta + alpha.q + lam) f / lam,

with q = kappa w. On the energy shell (m beta + alpha.q + lam) is 2 lam times the
projector onto the on-shell block, so the far field only carries that
block: A = -2 Pi_p(q) f. :func:`asymptotic_check` compares the extracted
coefficient with this relation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dirac_algebra import BETA, I4, Kinematics, alpha_dot, frames, normalized_spinors
from .potentials import PotentialSpec, decay_check
from .rls_solver import DenseOperator, SpinorField, recover_phi, scattered_source

logger = logging.getLogger(__name__)


def _directions(w) -> np.ndarray:
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return w / np.linalg.norm(w, axis=1)[:, None]


def scattering_amplitude(w, psi: SpinorField, op: DenseOperator,
                         spec: PotentialSpec | None = None) -> np.ndarray:
    """f(w, w', n, lam) for outgoing directions ``w`` (Q, 3) -> (Q, 4).

    ``psi`` carries the incident direction w' and channel n. If ``spec`` is
    given its decay is checked and a warning logged when the asymptotic
    expansion is not guaranteed.
    """
    if spec is not None and spec.family != "matrix-table":
        rep = decay_check(spec)
        if not rep.passed:
            logger.warning("potential decays too slowly; far-field amplitude not guaranteed")
    kin = psi.kin
    w = _directions(w)
    if op.potential.is_zero:
        return np.zeros((w.shape[0], 4), dtype=complex)
    F = scattered_source(op, psi.values)
    E = np.exp(-1j * kin.kappa * (w @ op.grid.nodes.T)) * op.grid.weights
    return kin.lam / (4 * np.pi) * (E @ F)


@dataclass
class AmplitudeComponents:
    """f_{s,n} = ghat_s^*(kappa w) f for s = 1..4, split by energy block."""

    w: np.ndarray
    w_prime: np.ndarray
    n: int
    values: np.ndarray  # (Q, 4), column s-1

    @property
    def on_block(self) -> np.ndarray:
        p = 2 if self.n >= 3 else 1
        return self.values[:, 2:] if p == 2 else self.values[:, :2]

    @property
    def off_block(self) -> np.ndarray:
        return self.values[:, :2] if self.n >= 3 else self.values[:, 2:]


def amplitude_components(w, psi: SpinorField, op: DenseOperator) -> AmplitudeComponents:
    kin = psi.kin
    w = _directions(w)
    f = scattering_amplitude(w, psi, op)
    q = kin.kappa * w
    vals = np.stack([np.einsum("qa,qa->q", normalized_spinors(s, q, kin.m).conj(), f)
                     for s in (1, 2, 3, 4)], axis=1)
    return AmplitudeComponents(w, np.asarray(kin.direction), psi.n, vals)


def far_field_coefficient(f: np.ndarray, w, kin: Kinematics) -> np.ndarray:
    """A(w) = -(m beta + alpha.q + lam) f / lam for each row of f."""
    w = _directions(w)
    sym = kin.m * BETA[None] + alpha_dot(kin.kappa * w) + kin.lam * I4[None]
    return -np.einsum("qab,qb->qa", sym, f) / kin.lam


def on_shell_projection(f: np.ndarray, w, kin: Kinematics) -> np.ndarray:
    """Pi_p(kappa w) f with p the on-shell block."""
    w = _directions(w)
    Z = frames(kin.block, kin.kappa * w, kin.m)
    return np.einsum("qas,qbs,qb->qa", Z, Z.conj(), f)


@dataclass
class AsymptoticReport:
    radii: np.ndarray
    deviation: np.ndarray  # relative |r e^{-i kappa_s r}(phi - phi_0) - A| / |A|, max over directions
    literal_deviation: np.ndarray  # same against f itself (coefficient read as f)
    extracted: np.ndarray  # -A/2 at the largest radius, (Q, 4)
    projected_f: np.ndarray  # Pi_p f, (Q, 4)
    beyond_grid: bool

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.deviation) < 0))

    @property
    def two_route_error(self) -> float:
        num = np.linalg.norm(self.extracted - self.projected_f)
        return float(num / max(np.linalg.norm(self.projected_f), 1e-300))


def asymptotic_check(psi: SpinorField, op: DenseOperator, radii, w=None) -> AsymptoticReport:
    """Compare |r| e^{-i kappa_s |r|} (phi - phi_0)(r w) with the far-field coefficient.

    ``radii`` should lie beyond the potential's support; radii beyond 1e3/kappa
    are flagged as unreliable (cancellation in phi - phi_0).
    """
    kin = psi.kin
    if w is None:
        w = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 0.6, -0.8], [-0.48, 0.6, 0.64]])
    w = _directions(w)
    radii = np.asarray(sorted(float(r) for r in radii))
    f = scattering_amplitude(w, psi, op)
    A = far_field_coefficient(f, w, kin)
    ks = kin.sign * kin.kappa
    dev, lit = [], []
    coef = None
    for R in radii:
        pts = R * w
        phi = recover_phi(psi, op, pts)
        phi0 = np.exp(1j * pts @ kin.k)[:, None] * normalized_spinors(psi.n, kin.k[None], kin.m)
        coef = R * np.exp(-1j * ks * R) * (phi - phi0)
        nA = max(np.max(np.linalg.norm(A, axis=1)), 1e-300)
        nf = max(np.max(np.linalg.norm(f, axis=1)), 1e-300)
        dev.append(np.max(np.linalg.norm(coef - A, axis=1)) / nA)
        lit.append(np.max(np.linalg.norm(coef - f, axis=1)) / nf)
    beyond = bool(radii.size and radii[-1] * kin.kappa > 1e3)
    return AsymptoticReport(radii, np.array(dev), np.array(lit), -0.5 * coef,
                            on_shell_projection(f, w, kin), beyond)

