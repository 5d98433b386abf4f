"""Product-integration Nystrom weights for the free Dirac volume potential.

The discrete operator maps samples F(r_j) of a source on a
:class:`~dirac_rls.discretization.VolumeGrid` to

    (m beta + lam) u(r) - i alpha . grad u(r),    u = G_k * F,

with G_k(r) = e^{i kappa_s |r|} / (4 pi |r|), i.e. (2 pi)^{-3/2} times the
action of B_+. G_k is expanded by the addition theorem; the angular
projection uses the sphere rule and the radial integral is done against the
Lagrange interpolant of s F_lm(s) on the Gauss-Legendre radial nodes, split
at the target radius. Interpolating s F rather than s^2 F keeps the rows for
targets near the origin bounded, and s F stays smooth for 1/r sources. No kernel is ever evaluated at coincident points, so
the weak singularity of B_+ needs no special treatment.
"""
from __future__ import annotations

import numpy as np
from scipy.interpolate import BarycentricInterpolator
from scipy.special import spherical_jn, spherical_yn

from .discretization import VolumeGrid


def _legendre_and_derivative(lmax: int, x: np.ndarray):
    """P_l(x) and P_l'(x) for l = 0..lmax, stacked on the first axis."""
    x = np.clip(x, -1.0, 1.0)
    p = np.empty((lmax + 1,) + x.shape)
    dp = np.empty_like(p)
    p[0] = 1.0
    dp[0] = 0.0
    if lmax >= 1:
        p[1] = x
        dp[1] = 1.0
    for l in range(2, lmax + 1):
        p[l] = ((2 * l - 1) * x * p[l - 1] - (l - 1) * p[l - 2]) / l
        # P_l' = P_{l-2}' + (2l - 1) P_{l-1}
        dp[l] = dp[l - 2] + (2 * l - 1) * p[l - 1]
    return p, dp


def _radial_green(l: np.ndarray, kappa_s: float, rl: np.ndarray, rg: np.ndarray,
                  target_is_greater: np.ndarray):
    """g_l(r, s) = i kappa_s j_l(kappa r<) h_l(kappa r>) and its derivative in r.

    h_l is the outgoing Hankel function for kappa_s > 0 and the incoming one
    for kappa_s < 0 (complex conjugate kernel).
    """
    k = abs(kappa_s)
    sgn = 1.0 if kappa_s > 0 else -1.0
    jl = spherical_jn(l, k * rl)
    djl = spherical_jn(l, k * rl, derivative=True)
    hl = spherical_jn(l, k * rg) + 1j * sgn * spherical_yn(l, k * rg)
    dhl = spherical_jn(l, k * rg, derivative=True) + 1j * sgn * spherical_yn(l, k * rg, derivative=True)
    pref = 1j * sgn * k
    g = pref * jl * hl
    # d/dr acts on whichever factor carries the target radius
    dg = np.where(target_is_greater, pref * k * jl * dhl, pref * k * djl * hl)
    return g, dg


class RadialWeights:
    """W_l[t, b] = int_0^R g_l(r_t, s) L_b(s) ds and the same for d/dr g_l.

    L_b are the Lagrange polynomials on the radial nodes; the interpolated
    quantity is s F_lm(s), so the remaining factor s is carried by the weight.
    """

    def __init__(self, radii: np.ndarray, r_max: float, kappa_s: float, lmax: int,
                 n_fine: int | None = None):
        self.radii = np.asarray(radii, dtype=float)
        self.r_max = float(r_max)
        self.kappa_s = float(kappa_s)
        self.lmax = int(lmax)
        nr = self.radii.size
        self.n_fine = n_fine or max(2 * nr + 16, 48)
        # fixed rng: the weight computation shuffles nodes, which would make runs differ in the last bits
        self._basis = BarycentricInterpolator(self.radii, np.eye(nr), rng=0)
        self._x, self._w = np.polynomial.legendre.leggauss(self.n_fine)

    def __call__(self, targets: np.ndarray):
        targets = np.atleast_1d(np.asarray(targets, dtype=float))
        nl, nt, nr = self.lmax + 1, targets.size, self.radii.size
        W = np.zeros((nl, nt, nr), dtype=complex)
        dW = np.zeros_like(W)
        ls = np.arange(nl)[:, None]
        for t, r in enumerate(targets):
            segs = [(0.0, min(r, self.r_max))]
            if r < self.r_max:
                segs.append((r, self.r_max))
            for a, b in segs:
                if b <= a:
                    continue
                s = 0.5 * (b - a) * (self._x + 1.0) + a
                ws = 0.5 * (b - a) * self._w
                inner = s <= r
                rl = np.where(inner, s, r)
                rg = np.where(inner, r, s)
                g, dg = _radial_green(ls, self.kappa_s, rl[None], rg[None], inner[None])
                basis = self._basis(s) * (s * ws)[:, None]  # (n_fine, nr)
                W[:, t] += g @ basis
                dW[:, t] += dg @ basis
        return W, dW


class HelmholtzOperator:
    """Discrete u = G_k * F and grad u on a volume grid.

    Attributes ``P`` (N, N) and ``D`` (3, N, N) act on node samples of F.
    """

    def __init__(self, grid: VolumeGrid, kappa_s: float, lmax: int | None = None):
        self.grid = grid
        self.kappa_s = float(kappa_s)
        self.lmax = grid.sphere.lmax if lmax is None else int(lmax)
        self._radial = RadialWeights(grid.radii, grid.r_max, kappa_s, self.lmax)
        self.P, self.D = self._assemble_grid()

    def _angular(self, targets_dir: np.ndarray):
        sph = self.grid.sphere
        x = targets_dir @ sph.directions.T  # (T, M)
        p, dp = _legendre_and_derivative(self.lmax, x)
        c = (2 * np.arange(self.lmax + 1) + 1) / (4 * np.pi)
        A = c[:, None, None] * p * sph.weights
        # B_l[t, b, s] = c_l P_l'(x) (omega_b - x omega_t)_s v_b
        tang = sph.directions[None, :, :] - x[:, :, None] * targets_dir[:, None, :]
        B = (c[:, None, None] * dp * sph.weights)[..., None] * tang[None]
        return A, B

    def _assemble_grid(self):
        g = self.grid
        W, dW = self._radial(g.radii)
        W = W * g.radii
        dW = dW * g.radii
        A, B = self._angular(g.sphere.directions)
        nr, M = g.n_r, g.n_ang
        N = nr * M
        P = np.einsum("lab,lxy->axby", W, A).reshape(N, N)
        Wr = W / g.radii[None, :, None]
        D = np.empty((3, N, N), dtype=complex)
        dirs = g.sphere.directions
        for s in range(3):
            term = np.einsum("lab,lxy->axby", dW, A * dirs[None, :, s, None])
            term += np.einsum("lab,lxy->axby", Wr, B[..., s])
            D[s] = term.reshape(N, N)
        return P, D

    def at(self, points: np.ndarray):
        """Rows of P and D for arbitrary target points (T, 3), none at the origin."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        rn = np.linalg.norm(points, axis=1)
        if np.any(rn == 0):
            raise ValueError("target at the origin")
        dirs = points / rn[:, None]
        W, dW = self._radial(rn)
        W = W * self.grid.radii
        dW = dW * self.grid.radii
        A, B = self._angular(dirs)
        T = points.shape[0]
        N = self.grid.size
        P = np.einsum("ltb,lty->tby", W, A).reshape(T, N)
        D = np.empty((3, T, N), dtype=complex)
        for s in range(3):
            term = np.einsum("ltb,lty->tby", dW, A * dirs[None, :, s, None])
            term += np.einsum("ltb,lty->tby", W / rn[None, :, None], B[..., s])
            D[s] = term.reshape(T, N)
        return P, D
