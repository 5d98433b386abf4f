"""Radial (central-potential) pipeline: phase shifts, Legendre eigenfunctions, partial-wave series.

Channel labels. A channel is (l, sign) with nu = l + sign/2, where l is the
orbital number of the *lower* spinor components. That is the natural label
here because the free spinors ghat_3, ghat_4 have fixed lower spin states, so
the 2-component functions of H are lower-component spin-angle functions.
In terms of the Dirac quantum number kappa_D (upper orbital l_A, lower l_B):

    nu = l + 1/2  ->  kappa_D = l + 1   (l_A = l + 1, l_B = l)
    nu = l - 1/2  ->  kappa_D = -l      (l_A = l - 1, l_B = l)

Phase factors are S_nu = exp(2 i delta_nu).

The 2-component eigenfunctions are written in the spin basis (up, down) of
the lower components; as elements of H, whose components multiply
(ghat_3, ghat_4), the order is (down, up) because ghat_4 carries spin up.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import spherical_jn, spherical_yn

from .dirac_algebra import Kinematics
from .discretization import SphereGrid
from .potentials import PotentialSpec

logger = logging.getLogger(__name__)


def legendre(l: int, x):
    """P_l(x) by the three-term recurrence."""
    if l < 0:
        raise ValueError("l must be >= 0")
    x = np.asarray(x, dtype=float)
    p0, p1 = np.ones_like(x), x
    if l == 0:
        return p0
    for n in range(2, l + 1):
        p0, p1 = p1, ((2 * n - 1) * x * p1 - (n - 1) * p0) / n
    return p1


def legendre_assoc1(l: int, x):
    """P_l^1(x) = sqrt(1 - x^2) P_l'(x), without the Condon-Shortley sign."""
    if l < 1:
        raise ValueError("P_l^1 needs l >= 1")
    x = np.asarray(x, dtype=float)
    # P_l' from (x^2 - 1) P_l' = l (x P_l - P_{l-1}), written without dividing by x^2-1
    # via the recurrence P_l' = l P_{l-1} + x P_{l-1}'
    p_prev, dp_prev = np.ones_like(x), np.zeros_like(x)
    for n in range(1, l + 1):
        p = legendre(n, x)
        dp = n * p_prev + x * dp_prev
        p_prev, dp_prev = p, dp
    return np.sqrt(np.clip(1.0 - x * x, 0.0, None)) * dp_prev


@dataclass(frozen=True)
class Channel:
    """Partial wave (l, sign): nu = l + sign/2, l the lower-component orbital number."""

    l: int
    sign: int

    def __post_init__(self):
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        if self.l < 0 or (self.sign == -1 and self.l < 1):
            raise ValueError(f"invalid channel l={self.l}, sign={self.sign}")

    @property
    def nu(self) -> float:
        return self.l + 0.5 * self.sign

    @property
    def kappa_dirac(self) -> int:
        return self.l + 1 if self.sign > 0 else -self.l

    @property
    def label(self) -> str:
        return f"{int(2 * self.nu)}/2{'+' if self.sign > 0 else '-'}"


def channels_up_to(l_max: int) -> list[Channel]:
    out = []
    for l in range(l_max + 1):
        out.append(Channel(l, 1))
        if l >= 1:
            out.append(Channel(l, -1))
    return out


def spherical_eigenfunction(channel: Channel, theta, phi) -> np.ndarray:
    """Spin-(up, down) components of G_nu at (theta, phi), shape (..., 2)."""
    l = channel.l
    x = np.cos(np.asarray(theta, dtype=float))
    e = np.exp(1j * np.asarray(phi, dtype=float))
    pl = legendre(l, x)
    p1 = legendre_assoc1(l, x) if l >= 1 else np.zeros_like(x)
    c = (4.0 * np.pi) ** -0.5
    if channel.sign > 0:
        up = c * np.sqrt(l + 1.0) * pl
        dn = -c * p1 * e / np.sqrt(l + 1.0)
    else:
        up = -c * np.sqrt(float(l)) * pl
        dn = -c * p1 * e / np.sqrt(float(l))
    return np.stack([np.asarray(up, dtype=complex), np.asarray(dn, dtype=complex)], axis=-1)


def eigenfunction_on_sphere(channel: Channel, sphere: SphereGrid) -> np.ndarray:
    """G_nu at the sphere nodes as an element of H: (M, 2) ordered (ghat_3, ghat_4) = (down, up)."""
    d = sphere.directions
    theta = np.arccos(np.clip(d[:, 2], -1.0, 1.0))
    phi = np.arctan2(d[:, 1], d[:, 0])
    g = spherical_eigenfunction(channel, theta, phi)
    return g[:, ::-1].copy()


@dataclass
class RadialChannel:
    channel: Channel
    delta: float
    matched_radius: float
    stable: bool

    @property
    def l(self) -> int:
        return self.channel.l

    @property
    def nu(self) -> float:
        return self.channel.nu

    @property
    def phase_factor(self) -> complex:
        return complex(np.exp(2j * self.delta))


def _match_radius(spec: PotentialSpec, kin: Kinematics, floor: float = 1e-10) -> float:
    """Smallest radius beyond which |v| < floor (or the cutoff)."""
    if spec.family in ("square-well", "cutoff-coulomb") and spec.cutoff:
        return float(spec.cutoff) * 1.0001
    r = np.geomspace(1e-3, 1e4, 4000) / max(spec.inverse_range, 1e-12)
    v = np.abs(spec.radial_profile(r))
    above = np.nonzero(v >= floor)[0]
    if above.size == 0:
        return float(r[0])
    return float(r[min(above[-1] + 1, r.size - 1)])


def _phase_shift(kd: int, spec: PotentialSpec, kin: Kinematics, r_match: float,
                 rtol: float = 1e-10) -> tuple[float, float]:
    """delta for Dirac quantum number kd, matched at r_match and at 1.25 r_match."""
    E, m, k = kin.lam, kin.m, kin.kappa

    def v(r):
        return float(spec.radial_profile(np.asarray(r)))

    if spec.family in ("yukawa", "cutoff-coulomb"):
        Z = spec.charge * spec.strength
    else:
        Z = 0.0
    gam2 = kd * kd - Z * Z
    if gam2 <= 0:
        raise ValueError("potential too singular at the origin for this channel")
    gam = np.sqrt(gam2)
    if kd < 0:
        y0 = np.array([1.0, -Z / (gam + abs(kd))])
    else:
        y0 = np.array([Z / (gam + kd), 1.0])
    r0 = 1e-6 * min(1.0, spec.range, 1.0 / k)

    def rhs(r, y):
        G, F = y
        w = v(r)
        return [-(kd / r) * G + (E - w + m) * F, (kd / r) * F - (E - w - m) * G]

    # integrate log-amplitude-free: normalise by r0^gamma implicitly through y0
    r_end = 1.25 * r_match
    sol = solve_ivp(rhs, (r0, r_end), y0, method="DOP853", rtol=rtol, atol=1e-300,
                    first_step=0.1 * r0, dense_output=True)
    if not sol.success:
        raise RuntimeError(f"radial integration failed: {sol.message}")
    la = kd if kd > 0 else -kd - 1
    lb = kd - 1 if kd > 0 else -kd
    sk = 1.0 if kd > 0 else -1.0

    def delta_at(R):
        G, F = sol.sol(R)
        x = k * R
        a11, a12 = x * spherical_jn(la, x), x * spherical_yn(la, x)
        c = sk * k / (E + m)
        a21, a22 = c * x * spherical_jn(lb, x), c * x * spherical_yn(lb, x)
        a, b = np.linalg.solve([[a11, a12], [a21, a22]], [G, F])
        return float(np.arctan(-b / a))

    return delta_at(r_match), delta_at(r_end)


def radial_phase_shifts(spec: PotentialSpec, kin: Kinematics, l_max: int,
                        r_match: float | None = None) -> list[RadialChannel]:
    """Phase shifts delta_nu for every channel with lower orbital l <= l_max (lam > m only)."""
    if not spec.is_radial or not spec.is_scalar:
        raise ValueError("radial_phase_shifts needs a radial scalar potential")
    if kin.lam < 0:
        raise NotImplementedError("radial pipeline is implemented for lam > m")
    out = []
    if spec.family == "zero" or spec.strength == 0:
        return [RadialChannel(c, 0.0, 0.0, True) for c in channels_up_to(l_max)]
    R = r_match or _match_radius(spec, kin)
    for ch in channels_up_to(l_max):
        d1, d2 = _phase_shift(ch.kappa_dirac, spec, kin, R)
        # tan is pi-periodic: compare modulo pi
        diff = abs(np.angle(np.exp(2j * (d1 - d2)))) / 2
        stable = diff <= 1e-6 + 1e-4 * abs(d1)
        if not stable:
            logger.warning("phase shift for %s not converged at R=%.3g (%.2g)", ch.label, R, diff)
        out.append(RadialChannel(ch, d1, R, bool(stable)))
    return out


@dataclass
class AngularAmplitudes:
    theta: np.ndarray
    phi: np.ndarray
    f: np.ndarray
    g: np.ndarray
    converged: bool


def partial_wave_amplitudes(factors: dict, kin: Kinematics, theta, phi=0.0,
                            tail_tol: float = 1e-8) -> AngularAmplitudes:
    """f, g of the classical series from phase factors {Channel: S_nu}.

    Missing channels count as S = 1. ``factors`` may also be a list of
    :class:`RadialChannel`.
    """
    if not isinstance(factors, dict):
        factors = {rc.channel: rc.phase_factor for rc in factors}
    theta = np.asarray(theta, dtype=float)
    phi = np.broadcast_to(np.asarray(phi, dtype=float), theta.shape)
    x = np.cos(theta)
    l_max = max((c.l for c in factors), default=0)
    pref = 1.0 / (2j * kin.kappa)
    f = np.zeros(theta.shape, dtype=complex)
    g = np.zeros(theta.shape, dtype=complex)
    last_f = last_g = 0.0
    for l in range(l_max + 1):
        sp = factors.get(Channel(l, 1), 1.0)
        sm = factors.get(Channel(l, -1), 1.0) if l >= 1 else 1.0
        tf = pref * ((l + 1) * (sp - 1) + l * (sm - 1)) * legendre(l, x)
        f += tf
        last_f = np.max(np.abs(tf), initial=0.0)
        if l >= 1:
            tg = pref * (sm - sp) * legendre_assoc1(l, x) * np.exp(1j * phi)
            g += tg
            last_g = np.max(np.abs(tg), initial=0.0)
    scale = max(np.max(np.abs(f), initial=0.0), np.max(np.abs(g), initial=0.0), 1e-300)
    converged = max(last_f, last_g) <= tail_tol * scale or scale <= 1e-300
    if not converged:
        logger.info("partial-wave series tail %.2g relative to sum", max(last_f, last_g) / scale)
    return AngularAmplitudes(theta, phi, f, g, bool(converged))


@dataclass
class ChannelMatch:
    channel: Channel
    mu: complex
    s_factor: complex
    angle_deg: float
    cluster_size: int

    @property
    def error(self) -> float:
        return abs(self.mu - self.s_factor)


@dataclass
class MuSReport:
    matches: list

    @property
    def max_error(self) -> float:
        return max((c.error for c in self.matches), default=0.0)

    @property
    def max_angle(self) -> float:
        return max((c.angle_deg for c in self.matches), default=0.0)

    def rows(self):
        return [(c.channel.l, c.channel.nu, c.channel.sign, float(np.angle(c.s_factor) / 2),
                 c.s_factor.real, c.s_factor.imag, c.mu.real, c.mu.imag, c.error, c.angle_deg)
                for c in self.matches]


def mu_equals_s_check(spec: PotentialSpec, kin: Kinematics, l_max: int, spectral,
                      cluster_tol: float = 1e-6, cluster_rel: float = 0.1) -> MuSReport:
    """Match eigenvalues of S_2 to channels and compare with exp(2 i delta_nu).

    Covers every channel with nu <= l_max + 1/2 (both parities).

    For each channel, the eigenvector with the largest overlap with G_nu
    selects mu_nu; its eigenvalue cluster (all mu within ``cluster_tol`` +
    ``cluster_rel`` |mu_nu - 1|, since discretisation splits the 2j+1 fold
    multiplets in proportion to the phase shift) spans the eigenspace whose
    principal angle with G_nu is reported.
    """
    if kin.lam <= 0:
        raise ValueError("the radial identity is checked for lam > m (block 2)")
    if spectral.block != 2:
        raise ValueError("spectral data must be for block 2")
    radial = {rc.channel: rc for rc in radial_phase_shifts(spec, kin, l_max + 1)}
    sphere = spectral.sphere
    sw = np.sqrt(sphere.weights)[:, None]
    mu = spectral.mu
    G = spectral.vectors  # (2M, J), columns orthonormal in the weighted embedding
    out = []
    for ch, rc in radial.items():
        if ch.nu > l_max + 0.5:
            continue
        g = (eigenfunction_on_sphere(ch, sphere) * sw).ravel()
        g = g / np.linalg.norm(g)
        ov = np.abs(G.conj().T @ g) ** 2
        j = int(np.argmax(ov))
        tol = cluster_tol + cluster_rel * abs(mu[j] - 1.0)
        cluster = np.nonzero(np.abs(mu - mu[j]) <= tol)[0]
        q, _ = np.linalg.qr(G[:, cluster])
        cosang = min(1.0, float(np.linalg.norm(q.conj().T @ g)))
        out.append(ChannelMatch(ch, complex(mu[j]), rc.phase_factor,
                                float(np.degrees(np.arccos(cosang))), int(cluster.size)))
    return MuSReport(out)
