import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import spherical_jn, spherical_yn

from dirac_rls.discretization import build_volume_grid
from dirac_rls.nystrom import HelmholtzOperator

KAPPA = 1.118
CENTER = np.array([0.3, -0.2, 0.5])


def source(x):
    return np.exp(-np.sum((x - CENTER) ** 2, axis=-1))


def reference(r, kappa=KAPPA):
    """G_k * F for the shifted Gaussian: radial quadrature about the Gaussian centre."""
    d = np.linalg.norm(r - CENTER)

    def f(t):
        lo, hi = min(d, t), max(d, t)
        h = spherical_jn(0, kappa * hi) + 1j * spherical_yn(0, kappa * hi)
        return 1j * kappa * spherical_jn(0, kappa * lo) * h * np.exp(-t * t) * t * t

    re = quad(lambda t: f(t).real, 0, 8, points=[d], limit=200)[0]
    im = quad(lambda t: f(t).imag, 0, 8, points=[d], limit=200)[0]
    return re + 1j * im


@pytest.fixture(scope="module")
def helm():
    return HelmholtzOperator(build_volume_grid(8.0, 32, 50), KAPPA)


def test_potential_matches_quadrature_at_nodes(helm):
    g = helm.grid
    u = helm.P @ source(g.nodes)
    idx = np.linspace(0, g.size - 1, 12).astype(int)
    ref = np.array([reference(g.nodes[i]) for i in idx])
    assert np.max(np.abs(u[idx] - ref)) / np.max(np.abs(ref)) < 2e-4


def test_off_grid_values_and_gradient(helm):
    pts = np.array([[0.4, 0.1, -0.3], [1.0, 2.0, 0.5]])
    P, D = helm.at(pts)
    F = source(helm.grid.nodes)
    h = 1e-4
    for t, p in enumerate(pts):
        ref = reference(p)
        assert abs(P[t] @ F - ref) / abs(ref) < 2e-4
        grad = np.array([(reference(p + h * e) - reference(p - h * e)) / (2 * h) for e in np.eye(3)])
        assert np.linalg.norm(D[:, t] @ F - grad) / np.linalg.norm(grad) < 5e-3


def test_at_nodes_reproduces_grid_rows(helm):
    g = helm.grid
    P, D = helm.at(g.nodes[[5, 300]])
    assert np.allclose(P, helm.P[[5, 300]], atol=1e-12)
    assert np.allclose(D, helm.D[:, [5, 300]], atol=1e-12)
    with pytest.raises(ValueError):
        helm.at(np.zeros((1, 3)))


def test_incoming_kernel_is_conjugate():
    g = build_volume_grid(3.0, 10, 14)
    out, inc = HelmholtzOperator(g, 1.1), HelmholtzOperator(g, -1.1)
    assert np.allclose(inc.P, out.P.conj(), atol=1e-13)
