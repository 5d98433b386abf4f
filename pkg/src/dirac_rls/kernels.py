"""Free-Dirac kernels: J_+, Q and the outgoing Green's kernel B_+.

``b_plus`` is the closed form

    B_+(r) = sqrt(pi/2) [m beta + lam + (kappa_s + i/|r|) alpha.rhat] e^{i kappa_s |r|} / |r|,

with kappa_s = sign(lam) * kappa. It equals (2 pi)^{3/2} times the kernel of
(L_0 + lam)(p^2 - kappa^2 -/+ i0)^{-1}, i.e. the resolvent of the free Dirac
operator at lam + i0. :class:`ConvolutionReference` rebuilds the same object
from Q, J_+ and a discrete Fourier convolution, without using the closed form.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import interpolate

from .dirac_algebra import ALPHA, BETA, I4, Kinematics, alpha_dot, normalized_spinor

SQRT_PI_2 = np.sqrt(np.pi / 2.0)
TWO_PI_32 = (2.0 * np.pi) ** 1.5


def _radius(r) -> float:
    rn = float(np.linalg.norm(r))
    if rn == 0.0:
        raise ValueError("kernel evaluated at the singular point r = 0")
    return rn


def j_plus(r, kin: Kinematics) -> complex:
    """Scalar kernel J_+: -sqrt(pi/2) e^{+/- i kappa |r|}/|r| for lam > m / lam < -m."""
    rn = _radius(r)
    return -SQRT_PI_2 * np.exp(1j * kin.sign * kin.kappa * rn) / rn


def q_kernel(r, m: float) -> np.ndarray:
    """Q(r) = sqrt(pi/2) e^{-m|r|} [m beta + i (m + 1/|r|) alpha.r/|r|] / |r|."""
    r = np.asarray(r, dtype=float)
    rn = _radius(r)
    return SQRT_PI_2 * np.exp(-m * rn) / rn * (m * BETA + 1j * (m + 1.0 / rn) * alpha_dot(r / rn))


def b_plus(r, kin: Kinematics) -> np.ndarray:
    """Outgoing free-Dirac Green's kernel B_+(r, lam), closed form."""
    r = np.asarray(r, dtype=float)
    if r.ndim == 1:
        _radius(r)
    return b_plus_batch(r, kin)


def b_plus_batch(r: np.ndarray, kin: Kinematics) -> np.ndarray:
    """B_+ for a stack of displacement vectors (..., 3) -> (..., 4, 4).

    Zero-length displacements are not checked here; callers exclude them.
    """
    r = np.asarray(r, dtype=float)
    rn = np.linalg.norm(r, axis=-1)
    ks = kin.sign * kin.kappa
    phase = np.asarray(SQRT_PI_2 * np.exp(1j * ks * rn) / rn)
    scal = (kin.m * BETA + kin.lam * I4)
    radial = np.asarray((ks + 1j / rn) / rn)
    out = phase[..., None, None] * (
        scal + radial[..., None, None] * alpha_dot(r)
    )
    return out


def plane_wave(r, k, n: int, m: float) -> np.ndarray:
    """phi_0(r, k, n) = exp(i k.r) ghat_n(k); ``r`` may be a stack (..., 3)."""
    r = np.asarray(r, dtype=float)
    g = normalized_spinor(n, k, m)
    return np.exp(1j * (r @ np.asarray(k, dtype=float)))[..., None] * g


def free_residual(field, x0, kin: Kinematics, h: float) -> np.ndarray:
    """(m beta - i alpha.grad - lam) applied to ``field`` at x0 by central differences.

    ``field(x)`` returns a 4-vector or a 4x4 matrix (acted on columnwise).
    """
    x0 = np.asarray(x0, dtype=float)
    val = np.asarray(field(x0))
    out = (kin.m * BETA - kin.lam * I4) @ val
    for s in range(3):
        e = np.zeros(3)
        e[s] = h
        d = (np.asarray(field(x0 + e)) - np.asarray(field(x0 - e))) / (2 * h)
        out = out - 1j * ALPHA[s] @ d
    return out


def _composite_gauss(a: float, b: float, panel: float, order: int = 8):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    npan = max(1, int(np.ceil((b - a) / panel)))
    edges = np.linspace(a, b, npan + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * nodes).ravel()
    w = (half[:, None] * weights).ravel()
    return x, w


def _sph_j1(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < 1e-3
    xs = x[small]
    out[small] = xs / 3.0 - xs**3 / 30.0
    xl = x[~small]
    out[~small] = np.sin(xl) / xl**2 - np.cos(xl) / xl
    return out


# constants multiplying lam^2 (Q * J_+) and lam J_+
CONSISTENT_CONSTANTS = (-(2.0 * np.pi) ** -1.5, -1.0)
PAPER_CONSTANTS = ((2.0 * np.pi) ** 1.5, 1.0)


class ConvolutionReference:
    """B_+ from Q + c1 lam^2 (Q * J_+) + c2 lam J_+, with Q * J_+ by Fourier convolution.

    J_+ is truncated to the ball |v| < box and both kernels are transformed by
    radial Hankel quadrature of their real-space definitions (so the 1/r and
    1/r^2 singularities are integrated exactly rather than sampled). The
    product spectrum is tabulated once on the frequency lattice of a box of
    period 4*box (zero padding against wrap-around) and summed back at the
    requested points. Valid for |r| < box/2.

    ``constants`` selects the prefactors: "consistent" (those for which the
    sum is a Green's function of the free Dirac operator) or "paper" (the
    literal prefactors (2pi)^{3/2} and +1).
    """

    def __init__(self, kin: Kinematics, box: float | None = None, n: int = 64,
                 constants: str = "consistent"):
        if n <= 0 or n & (n - 1):
            raise ValueError("n must be a power of two")
        self.kin = kin
        self.box = float(box) if box is not None else 8.0 / kin.m
        self.n = n
        if constants == "consistent":
            self.c_conv, self.c_lin = CONSISTENT_CONSTANTS
        elif constants == "paper":
            self.c_conv, self.c_lin = PAPER_CONSTANTS
        else:
            raise ValueError(f"unknown constants {constants!r}")
        period = 4.0 * self.box
        nf = 2 * n
        dp = 2.0 * np.pi / period
        ints = np.fft.fftfreq(nf, d=1.0 / nf)
        px, py, pz = np.meshgrid(ints * dp, ints * dp, ints * dp, indexing="ij")
        self._p = np.stack([px.ravel(), py.ravel(), pz.ravel()], axis=1)
        pn = np.linalg.norm(self._p, axis=1)
        qb, q1, jr = self._radial_transforms(pn)
        with np.errstate(invalid="ignore", divide="ignore"):
            phat = np.where(pn[:, None] > 0, self._p / pn[:, None], 0.0)
        # table: spectrum of the beta part and of the three alpha parts
        self._spec_beta = qb * jr / period**3
        self._spec_alpha = (q1 * jr)[:, None] * phat / period**3
        self._period = period

    def _radial_transforms(self, pn):
        m, ks, box = self.kin.m, self.kin.sign * self.kin.kappa, self.box
        grid = np.linspace(0.0, pn.max() * 1.0001, 1500)
        p = grid[:, None]
        # Q is transformed over [0, 40/m] (e^{-40} tail dropped), J_+ over [0, box]
        r, w = _composite_gauss(0.0, 40.0 / m, panel=min(0.05, 0.5 / max(grid[-1], 1.0)))
        pr = p * r
        j0 = np.sinc(pr / np.pi)
        j1 = _sph_j1(pr)
        qb_tab = 4 * np.pi * (j0 * (SQRT_PI_2 * m * np.exp(-m * r) * r)) @ w
        # alpha part of Q is q(r) rhat with r^2 q(r) = sqrt(pi/2) i (m r + 1) e^{-m r};
        # its transform is -4 pi i phat int q j_1(pr) r^2 dr
        q1_tab = -4j * np.pi * (j1 * (SQRT_PI_2 * 1j * (m * r + 1.0) * np.exp(-m * r))) @ w
        rj, wj = _composite_gauss(0.0, box, panel=min(0.05, 0.5 / max(grid[-1], 1.0)))
        j0j = np.sinc(p * rj / np.pi)
        jr_tab = 4 * np.pi * (j0j * (-SQRT_PI_2 * np.exp(1j * ks * rj) * rj)) @ wj

        def spl(tab):
            return interpolate.CubicSpline(grid, tab)(pn)

        return spl(qb_tab), spl(q1_tab), spl(jr_tab)

    def convolution(self, r) -> np.ndarray:
        """(Q * J_+)(r) as a 4x4 matrix."""
        r = np.asarray(r, dtype=float)
        if np.linalg.norm(r) >= self.box / 2:
            raise ValueError("point outside the valid region |r| < box/2")
        e = np.exp(1j * (self._p @ r))
        cb = np.dot(self._spec_beta, e)
        ca = e @ self._spec_alpha
        return cb * BETA + np.tensordot(ca, ALPHA, axes=(0, 0))

    def __call__(self, r) -> np.ndarray:
        lam = self.kin.lam
        return (q_kernel(r, self.kin.m) + self.c_conv * lam**2 * self.convolution(r)
                + self.c_lin * lam * j_plus(r, self.kin) * I4)


def b_plus_convolution_reference(r, kin: Kinematics, box: float | None = None, n: int = 64,
                                 constants: str = "consistent") -> np.ndarray:
    """One-off evaluation of :class:`ConvolutionReference`; reuse the class for many points."""
    return ConvolutionReference(kin, box, n, constants)(r)


@dataclass
class KernelCheckReport:
    points: np.ndarray  # (P, 3)
    rel_diff: np.ndarray  # (P,) ||closed - reference||_F / ||closed||_F
    steps: np.ndarray  # finite-difference steps h, h/2, ...
    residuals: np.ndarray  # (P, H) max-norm of the free residual of B_+ columns
    orders: np.ndarray  # (P, H-1) observed orders log2(res_h / res_{h/2})

    @property
    def max_rel_diff(self) -> float:
        return float(self.rel_diff.max())

    @property
    def min_order(self) -> float:
        return float(self.orders.min())


def sample_points(n: int, r_lo: float, r_hi: float, seed: int = 0) -> np.ndarray:
    """Deterministic points with radii uniform in [r_lo, r_hi] and isotropic directions."""
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * rng.uniform(r_lo, r_hi, n)[:, None]


def kernel_check(kin: Kinematics, n_points: int = 20, seed: int = 0, box: float | None = None,
                 n: int = 64, h0: float = 0.02, halvings: int = 3) -> KernelCheckReport:
    """Closed-form B_+ against the convolution route, plus its free-equation residual.

    Points lie in |r| in [0.3/m, min(3/m, 0.4 box)].
    """
    ref = ConvolutionReference(kin, box, n)
    pts = sample_points(n_points, 0.3 / kin.m, min(3.0 / kin.m, 0.4 * ref.box), seed)
    rel = np.empty(n_points)
    steps = h0 / 2.0 ** np.arange(halvings + 1)
    res = np.empty((n_points, steps.size))
    for i, r in enumerate(pts):
        closed = b_plus(r, kin)
        rel[i] = np.linalg.norm(closed - ref(r)) / np.linalg.norm(closed)
        for j, h in enumerate(steps):
            res[i, j] = np.abs(free_residual(lambda x: b_plus(x, kin), r, kin, h)).max()
    orders = np.log2(res[:, :-1] / res[:, 1:])
    return KernelCheckReport(pts, rel, steps, res, orders)
