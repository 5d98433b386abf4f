"""Dirac and Pauli matrices, free spinors and the two-column frames Z_p.

Conventions: Dirac representation, natural units, ``k`` is a real 3-vector.
The free spinors follow the parametrisation in which the lower two
components are a fixed spin state and the upper two carry the momentum
dependence.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

I2 = np.eye(2, dtype=complex)
I4 = np.eye(4, dtype=complex)

_PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
_BETA = np.diag([1.0, 1.0, -1.0, -1.0]).astype(complex)

# |k| below this multiple of m switches the n=3,4 spinors to the directional limit
SMALL_K = 1e-8


def _check_index(s, lo, hi, what):
    if not isinstance(s, (int, np.integer)) or not lo <= s <= hi:
        raise ValueError(f"{what} index must be in {lo}..{hi}, got {s!r}")


def pauli(s: int) -> np.ndarray:
    """Pauli matrix sigma_s for s = 1, 2, 3."""
    _check_index(s, 1, 3, "Pauli")
    return _PAULI[s - 1].copy()


def alpha(s: int) -> np.ndarray:
    """Dirac alpha_s = [[0, sigma_s], [sigma_s, 0]]."""
    _check_index(s, 1, 3, "alpha")
    out = np.zeros((4, 4), dtype=complex)
    out[:2, 2:] = _PAULI[s - 1]
    out[2:, :2] = _PAULI[s - 1]
    return out


def beta() -> np.ndarray:
    return _BETA.copy()


ALPHA = np.stack([alpha(s) for s in (1, 2, 3)])
BETA = beta()


def alpha_dot(v) -> np.ndarray:
    """alpha . v for a 3-vector, or a stack (..., 3) -> (..., 4, 4)."""
    v = np.asarray(v)
    return np.tensordot(v, ALPHA, axes=([-1], [0]))


def dirac_symbol(k, m: float) -> np.ndarray:
    """Momentum-space free Dirac Hamiltonian m*beta + alpha.k."""
    return m * BETA + alpha_dot(np.asarray(k, dtype=float))


def energy(n: int, k, m: float) -> float:
    """lambda_n(k): -sqrt(k^2+m^2) for n = 1, 2 and +sqrt(k^2+m^2) for n = 3, 4."""
    _check_index(n, 1, 4, "spinor")
    e = float(np.sqrt(np.dot(k, k) + m * m))
    return -e if n <= 2 else e


def spinor(n: int, k, m: float) -> np.ndarray:
    """Unnormalised free spinor g_n(k).

    Raises ValueError for n = 3, 4 when |k| is too small for the literal
    formula; use :func:`normalized_spinor` with a direction in that case.
    """
    _check_index(n, 1, 4, "spinor")
    k1, k2, k3 = (float(c) for c in k)
    kk = k1 * k1 + k2 * k2 + k3 * k3
    lam3 = np.sqrt(kk + m * m)
    if n <= 2:
        den = m + lam3
    else:
        if np.sqrt(kk) < SMALL_K * m:
            raise ValueError("|k| ~ 0 for n=3,4: use the directional limit")
        den = m - lam3
    if n in (1, 3):
        return np.array([(-k1 + 1j * k2) / den, k3 / den, 0.0, 1.0], dtype=complex)
    return np.array([-k3 / den, (-k1 - 1j * k2) / den, 1.0, 0.0], dtype=complex)


def normalized_spinor(n: int, k, m: float, direction=None) -> np.ndarray:
    """ghat_n(k) = g_n(k) / |g_n(k)|.

    For n = 3, 4 the spinor is built from (m - lambda_3) g_n with
    m - lambda_3 = -k^2 / (m + lambda_3), which is exact and free of
    cancellation. At k = 0 a ``direction`` gives the directional limit.
    """
    _check_index(n, 1, 4, "spinor")
    k = np.asarray(k, dtype=float)
    if n <= 2:
        g = spinor(n, k, m)
        return g / np.linalg.norm(g)
    kn = float(np.linalg.norm(k))
    if kn < SMALL_K * m:
        if direction is None:
            if kn == 0.0:
                raise ValueError("k = 0 for n=3,4 needs a direction for the limit")
            direction = k / kn
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        k1, k2, k3 = d
        scaled = -kn / (2.0 * m)  # (m - lambda_3) / |k| to leading order
    else:
        k1, k2, k3 = k / kn
        scaled = -kn / (m + np.sqrt(kn * kn + m * m))
    if n == 3:
        h = np.array([-k1 + 1j * k2, k3, 0.0, scaled], dtype=complex)
    else:
        h = np.array([-k3, -k1 - 1j * k2, scaled, 0.0], dtype=complex)
    # (m - lambda_3) < 0, so g_n / |g_n| = -h / |h|
    return -h / np.linalg.norm(h)


def normalized_spinors(n: int, ks: np.ndarray, m: float) -> np.ndarray:
    """Vectorised ghat_n for a stack of momenta (M, 3) -> (M, 4); |k| > 0 for n = 3, 4."""
    _check_index(n, 1, 4, "spinor")
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    kn = np.linalg.norm(ks, axis=1)
    lam3 = np.sqrt(kn * kn + m * m)
    out = np.zeros((ks.shape[0], 4), dtype=complex)
    if n <= 2:
        c = ks / (m + lam3)[:, None]
        if n == 1:
            out[:, 0] = -c[:, 0] + 1j * c[:, 1]
            out[:, 1] = c[:, 2]
            out[:, 3] = 1.0
        else:
            out[:, 0] = -c[:, 2]
            out[:, 1] = -c[:, 0] - 1j * c[:, 1]
            out[:, 2] = 1.0
    else:
        if np.any(kn < SMALL_K * m):
            raise ValueError("|k| ~ 0 for n=3,4 in a vectorised call")
        d = ks / kn[:, None]
        scaled = -kn / (m + lam3)
        if n == 3:
            out[:, 0] = -d[:, 0] + 1j * d[:, 1]
            out[:, 1] = d[:, 2]
            out[:, 3] = scaled
        else:
            out[:, 0] = -d[:, 2]
            out[:, 1] = -d[:, 0] - 1j * d[:, 1]
            out[:, 2] = scaled
        out = -out
    return out / np.linalg.norm(out, axis=1)[:, None]


def block_channels(p: int) -> tuple[int, int]:
    """Spinor indices spanning block p: (1, 2) for p=1, (3, 4) for p=2."""
    _check_index(p, 1, 2, "block")
    return (1, 2) if p == 1 else (3, 4)


def frame(p: int, k, m: float, direction=None) -> np.ndarray:
    """Z_p(k): 4x2 matrix with columns ghat_1, ghat_2 (p=1) or ghat_3, ghat_4 (p=2)."""
    a, b = block_channels(p)
    return np.column_stack(
        [normalized_spinor(a, k, m, direction), normalized_spinor(b, k, m, direction)]
    )


def frames(p: int, ks: np.ndarray, m: float) -> np.ndarray:
    """Vectorised Z_p for a stack of momenta: (M, 3) -> (M, 4, 2)."""
    a, b = block_channels(p)
    return np.stack([normalized_spinors(a, ks, m), normalized_spinors(b, ks, m)], axis=-1)


@dataclass(frozen=True)
class Kinematics:
    """Spectral point: mass m, energy lam with |lam| > m, incident direction.

    ``kappa`` and the momentum ``k`` are derived.
    """

    m: float
    lam: float
    direction: tuple = (0.0, 0.0, 1.0)
    kappa: float = field(init=False)

    def __post_init__(self):
        if self.m <= 0:
            raise ValueError("mass must be positive")
        if abs(self.lam) <= self.m:
            raise ValueError(f"requires |lambda| > m (lambda={self.lam}, m={self.m})")
        d = np.asarray(self.direction, dtype=float)
        nd = np.linalg.norm(d)
        if d.shape != (3,) or nd == 0:
            raise ValueError("direction must be a non-zero 3-vector")
        object.__setattr__(self, "direction", tuple(float(c) for c in d / nd))
        # lam^2 - m^2 factored to keep relative accuracy near threshold
        lam, m = float(self.lam), float(self.m)
        object.__setattr__(self, "kappa", float(np.sqrt((abs(lam) - m) * (abs(lam) + m))))

    @property
    def k(self) -> np.ndarray:
        return self.kappa * np.asarray(self.direction)

    @property
    def sign(self) -> int:
        return 1 if self.lam > 0 else -1

    @property
    def block(self) -> int:
        """Energy block of the on-shell channels: 2 for lam > m, 1 for lam < -m."""
        return 2 if self.lam > 0 else 1

    @property
    def channels(self) -> tuple[int, int]:
        return block_channels(self.block)

    def with_direction(self, direction) -> "Kinematics":
        return Kinematics(self.m, self.lam, tuple(direction))
