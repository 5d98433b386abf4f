"""Dense Nystrom solution of the modified Lippmann-Schwinger equation.

Unknown: psi = V1 phi sampled at the N volume nodes, flattened node-major
(index 4*i + component). The system is

    (I + K) psi = rhs,   K = V1 [(m beta + lam) P - i alpha.D] V1 W1,

where P and D are the product-integration matrices of
:class:`~dirac_rls.nystrom.HelmholtzOperator`; K is the discrete
(2 pi)^{-3/2} B_+(lam).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .dirac_algebra import ALPHA, BETA, I4, Kinematics, normalized_spinor
from .discretization import VolumeGrid
from .nystrom import HelmholtzOperator
from .potentials import FactorizedPotential, PotentialSpec, sample_potential

logger = logging.getLogger(__name__)

COND_LIMIT = 1e12
RESIDUAL_TOL = 1e-10
EXCEPTIONAL_RATIO = 1e-3


class NearExceptionalError(RuntimeError):
    """The discrete RLS operator is numerically singular at this lambda."""


class GridResolutionError(ValueError):
    """The grid cannot resolve e^{i kappa r} over the support."""


@dataclass(eq=False)
class DenseOperator:
    """The discrete (2 pi)^{-3/2} B_+(lam) acting on psi, plus what built it."""

    matrix: np.ndarray
    kin: Kinematics
    grid: VolumeGrid
    potential: FactorizedPotential
    helmholtz: HelmholtzOperator | None
    fingerprint: str
    cond_limit: float = COND_LIMIT
    residual_tol: float = RESIDUAL_TOL
    _lu: tuple | None = field(default=None, repr=False)
    _cond: float | None = field(default=None, repr=False)
    last_residual: float = field(default=0.0, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def hs_norm(self) -> float:
        """Frobenius norm of K in the sqrt(weight)-scaled basis (discrete Hilbert-Schmidt norm)."""
        sw = np.repeat(np.sqrt(self.grid.weights), 4)
        return float(np.linalg.norm(sw[:, None] * self.matrix / sw[None, :]))

    def system(self) -> np.ndarray:
        return np.eye(self.size, dtype=complex) + self.matrix

    def factor(self):
        """LU of I + K and a 1-norm condition estimate (cached)."""
        if self._lu is None:
            a = self.system()
            anorm = np.max(np.sum(np.abs(a), axis=0))
            lu, piv = linalg.lu_factor(a, overwrite_a=True, check_finite=False)
            rcond, info = linalg.lapack.zgecon(lu, anorm, norm="1")
            self._lu = (lu, piv)
            self._cond = np.inf if rcond == 0 else 1.0 / rcond
        return self._lu

    @property
    def condition(self) -> float:
        self.factor()
        return float(self._cond)

    def solve(self, rhs: np.ndarray, check: bool = True) -> np.ndarray:
        """Solve (I + K) x = rhs for rhs of shape (4N,) or (4N, k)."""
        lu = self.factor()
        if check and self._cond > self.cond_limit:
            raise NearExceptionalError(
                f"lambda={self.kin.lam:g} near exceptional value (condition {self._cond:.3g})")
        x = linalg.lu_solve(lu, rhs, check_finite=False)
        if check:
            r = rhs - (x + self.matrix @ x)
            rel = np.linalg.norm(r) / max(np.linalg.norm(rhs), 1e-300)
            self.last_residual = float(rel)
            if rel > self.residual_tol:
                logger.warning("RLS residual %.3g exceeds %.1g", rel, self.residual_tol)
        return x


def check_resolution(kin: Kinematics, grid: VolumeGrid) -> None:
    if kin.kappa * grid.r_max > grid.n_r / 2:
        raise GridResolutionError(
            f"kappa*r_max = {kin.kappa * grid.r_max:.3g} > n_r/2 = {grid.n_r / 2:g}")


def _dirac_blocks(kin: Kinematics, helm: HelmholtzOperator) -> np.ndarray:
    """(m beta + lam) P - i alpha.D as an (N, 4, N, 4) array."""
    N = helm.P.shape[0]
    M = np.zeros((N, 4, N, 4), dtype=complex)
    scal = kin.m * BETA + kin.lam * I4
    for a in range(4):
        M[:, a, :, a] = scal[a, a] * helm.P
    for s in range(3):
        for a, b in zip(*np.nonzero(ALPHA[s])):
            M[:, a, :, b] += -1j * ALPHA[s][a, b] * helm.D[s]
    return M


def assemble(kin: Kinematics, potential: PotentialSpec | FactorizedPotential,
             grid: VolumeGrid, chunk: int = 256) -> DenseOperator:
    """Discrete (2 pi)^{-3/2} B_+(lam) on ``grid``.

    ``potential`` may be a spec (sampled at the nodes) or pre-sampled factors.
    """
    check_resolution(kin, grid)
    fp = potential if isinstance(potential, FactorizedPotential) else \
        sample_potential(potential, grid.nodes)
    N = grid.size
    if fp.is_zero:
        return DenseOperator(np.zeros((4 * N, 4 * N), dtype=complex), kin, grid, fp,
                             None, grid.fingerprint())
    helm = HelmholtzOperator(grid, kin.sign * kin.kappa)
    K = _dirac_blocks(kin, helm)
    right = fp.v1w1
    for lo in range(0, N, chunk):
        hi = min(lo + chunk, N)
        blk = np.einsum("iab,ibjc->iajc", fp.v1[lo:hi], K[lo:hi])
        K[lo:hi] = np.einsum("iajc,jcd->iajd", blk, right)
    return DenseOperator(K.reshape(4 * N, 4 * N), kin, grid, fp, helm, grid.fingerprint())


def incident_rhs(op: DenseOperator, n: int, direction=None) -> np.ndarray:
    """exp(i k.r_i) V1(r_i) ghat_n(k), flattened (4N,)."""
    kin = op.kin if direction is None else op.kin.with_direction(direction)
    phi0 = incident_field(op.grid.nodes, kin, n)
    return np.einsum("iab,ib->ia", op.potential.v1, phi0).ravel()


def incident_field(points: np.ndarray, kin: Kinematics, n: int) -> np.ndarray:
    g = normalized_spinor(n, kin.k, kin.m)
    return np.exp(1j * (np.asarray(points) @ kin.k))[:, None] * g[None, :]


@dataclass(eq=False)
class SpinorField:
    """Samples (N, 4) of psi or phi at volume nodes."""

    values: np.ndarray
    role: str
    n: int
    kin: Kinematics

    def flat(self) -> np.ndarray:
        return self.values.ravel()


def solve_modified_rls(kin: Kinematics, n: int, potential, grid: VolumeGrid | None = None,
                       op: DenseOperator | None = None) -> SpinorField:
    """psi solving (I + (2 pi)^{-3/2} B_+) psi = e^{ik.r} V1 ghat_n(k).

    Pass an assembled ``op`` to reuse its factorisation (kin must match up to direction).
    """
    if op is None:
        op = assemble(kin, potential, grid)
    rhs = incident_rhs(op, n, kin.direction)
    if op.potential.is_zero:
        return SpinorField(np.zeros((op.grid.size, 4), dtype=complex), "psi", n, kin)
    psi = op.solve(rhs)
    return SpinorField(psi.reshape(-1, 4), "psi", n, kin)


def scattered_source(op: DenseOperator, psi: np.ndarray) -> np.ndarray:
    """F = V1 W1 psi = V phi at the nodes, (N, 4)."""
    return np.einsum("iab,ib->ia", op.potential.v1w1, np.asarray(psi).reshape(-1, 4))


def recover_phi(psi: SpinorField, op: DenseOperator, points: np.ndarray | None = None) -> np.ndarray:
    """phi = phi_0 - (2 pi)^{-3/2} B_+ V1 W1 psi at ``points`` (default: the grid nodes).

    Returns (T, 4). Off-grid points use the same product-integration rule as
    the nodes, so phi is a smooth function of position.
    """
    kin = psi.kin
    pts = op.grid.nodes if points is None else np.atleast_2d(np.asarray(points, dtype=float))
    phi = incident_field(pts, kin, psi.n)
    if op.potential.is_zero or op.helmholtz is None:
        return phi
    F = scattered_source(op, psi.values)
    if points is None:
        P, D = op.helmholtz.P, op.helmholtz.D
    else:
        P, D = op.helmholtz.at(pts)
    u = P @ F
    grad = np.einsum("stj,jb->stb", D, F)
    scal = kin.m * BETA + kin.lam * I4
    field_ = u @ scal.T - 1j * np.einsum("sab,stb->ta", ALPHA, grad)
    return phi - field_


@dataclass
class ExceptionalScanReport:
    """sigma_min over a lambda list plus refined local minima.

    ``minima`` holds (index, lam*, sigma*) for every local minimum of the
    list, with lam* located by a bounded 1-d search between the neighbouring
    list entries. ``flagged`` are the indices whose refined sigma* is below
    ``threshold`` = ratio * median(sigma_min).
    """

    lambdas: np.ndarray
    sigma_min: np.ndarray
    flagged: list = field(default_factory=list)
    threshold: float = 0.0
    minima: list = field(default_factory=list)

    @property
    def dip(self) -> float:
        vals = [float(np.min(self.sigma_min))] + [s for _, _, s in self.minima]
        return float(min(vals))

    @property
    def dip_lambda(self) -> float:
        best_l, best_s = float(self.lambdas[np.argmin(self.sigma_min)]), float(np.min(self.sigma_min))
        for _, l, s in self.minima:
            if s < best_s:
                best_l, best_s = l, s
        return best_l

    def rows(self):
        fl = set(self.flagged)
        return [(float(l), float(s), int(i in fl)) for i, (l, s) in
                enumerate(zip(self.lambdas, self.sigma_min))]


def smallest_singular_value(op: DenseOperator) -> float:
    if op.potential.is_zero:
        return 1.0
    return float(linalg.svdvals(op.system(), check_finite=False)[-1])


def _local_minima(sig: np.ndarray) -> list:
    out = []
    for i, s in enumerate(sig):
        left = sig[i - 1] if i > 0 else np.inf
        right = sig[i + 1] if i + 1 < sig.size else np.inf
        if s <= left and s <= right and (left < np.inf or right < np.inf):
            out.append(i)
    return out


def exceptional_scan(lambdas, m: float, potential, grid: VolumeGrid,
                     ratio: float = EXCEPTIONAL_RATIO, refine: bool = True,
                     xatol: float = 1e-3) -> ExceptionalScanReport:
    """sigma_min(I + (2 pi)^{-3/2} B_+(lam)) over ``lambdas``.

    Resonance dips can be far narrower than the list spacing, so each local
    minimum is refined by a bounded search in u = log(|lam| - m) between its
    neighbours (``xatol`` in u). Minima whose refined value is below
    ``ratio`` times the median of the list values are flagged.
    """
    lams = np.asarray(sorted(float(l) for l in lambdas))
    if np.any(np.abs(lams) <= m):
        raise ValueError("exceptional scan requires |lambda| > m")
    fp = potential if isinstance(potential, FactorizedPotential) else \
        sample_potential(potential, grid.nodes)

    def sigma(lam: float) -> float:
        return smallest_singular_value(assemble(Kinematics(m, lam), fp, grid))

    sig = np.array([sigma(l) for l in lams])
    thr = ratio * float(np.median(sig))
    minima = []
    if not fp.is_zero:
        for i in _local_minima(sig):
            lo = lams[max(i - 1, 0)]
            hi = lams[min(i + 1, lams.size - 1)]
            best = (float(lams[i]), float(sig[i]))
            if refine and np.sign(lo) == np.sign(hi):
                sgn = np.sign(lams[i])
                u_lo, u_hi = sorted((np.log(abs(lo) - m), np.log(abs(hi) - m)))
                res = optimize.minimize_scalar(
                    lambda u: sigma(sgn * (m + np.exp(u))), bounds=(u_lo, u_hi),
                    method="bounded", options={"xatol": xatol})
                if res.fun < best[1]:
                    best = (float(sgn * (m + np.exp(res.x))), float(res.fun))
            minima.append((i, best[0], best[1]))
    flagged = [i for i, _, s in minima if s < thr]
    return ExceptionalScanReport(lams, sig, flagged, thr, minima)


def spectral_radius(op: DenseOperator, iterations: int = 200, seed: int = 0) -> float:
    """Spectral radius of K by power iteration on a fixed random start."""
    if op.potential.is_zero:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(op.size) + 1j * rng.standard_normal(op.size)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iterations):
        y = op.matrix @ x
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0
        prev, est = est, ny
        x = y / ny
        if abs(est - prev) < 1e-10 * est:
            break
    return float(est)


class BornDivergenceError(RuntimeError):
    pass


def born_series(kin: Kinematics, n: int, potential, grid: VolumeGrid | None = None,
                order: int = 2, op: DenseOperator | None = None,
                check_radius: bool = True) -> SpinorField:
    """Truncated Neumann series phi_order = sum_{j<=order} (-G V)^j phi_0 at the nodes.

    Built as phi_0 - G V1 W1 psi_{order-1} with psi_{N} = sum_{j<=N} (-K)^j rhs.
    The series converges iff the spectral radius of K is below 1; this is
    checked first (power iteration) unless ``check_radius`` is False, and
    growing terms are reported as divergence.
    """
    if order < 0:
        raise ValueError("order must be >= 0")
    if op is None:
        op = assemble(kin, potential, grid)
    if order == 0 or op.potential.is_zero:
        return SpinorField(incident_field(op.grid.nodes, kin, n), "phi", n, kin)
    if check_radius:
        rho = spectral_radius(op)
        if rho >= 1.0:
            raise BornDivergenceError(f"spectral radius {rho:.3g} >= 1; Born series diverges")
    rhs = incident_rhs(op, n, kin.direction)
    term = rhs
    total = rhs.copy()
    norms = [np.linalg.norm(rhs)]
    for _ in range(order - 1):
        term = -(op.matrix @ term)
        total += term
        norms.append(np.linalg.norm(term))
    if len(norms) > 3 and norms[-1] > norms[-2] > norms[-3] and norms[-1] > norms[0]:
        warnings.warn("Born terms are growing", RuntimeWarning, stacklevel=2)
    psi = SpinorField(total.reshape(-1, 4), "psi", n, kin)
    return SpinorField(recover_phi(psi, op), "phi", n, kin)
