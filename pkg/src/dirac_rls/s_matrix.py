"""Energetic representation of the scattering operator on the direction sphere.

T-kernel (per energy block p, 2x2 in the channels of the block):

    T(q, k, p) = (2 pi)^{-3} Z_p^*(q) int e^{-i q.r} V(r) Phi_p(r, k) dr,   q = kappa w, k = kappa w'.

Sphere operators act on 2-component functions sampled at the sphere nodes,
stored in the symmetric embedding x_(a, s) = sqrt(v_a) h_s(w_a), so that the
H inner product is the Euclidean one. T_p = c * [sqrt(v) T sqrt(v)], where the
shell factor c defaults to -2 a(|k|) (the value for which S_p = I + i T_p
is unitary); ``convention="paper"`` uses c = a(|k|).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg

from .dirac_algebra import ALPHA, BETA, I4, Kinematics, frames
from .discretization import SphereGrid, VolumeGrid
from .potentials import FactorizedPotential, sample_potential
from .rls_solver import DenseOperator, assemble

CONVENTIONS = ("unitary", "paper")


def a_factor(kin: Kinematics) -> float:
    """a(|k|) = pi sqrt(k^2 + m^2) |k| = pi |lam| kappa."""
    return float(np.pi * abs(kin.lam) * kin.kappa)


def shell_factor(kin: Kinematics, convention: str = "unitary") -> float:
    """Prefactor c of the sphere integral in T_p: -2 a (unitary) or a (paper)."""
    if convention == "unitary":
        return -2.0 * a_factor(kin)
    if convention == "paper":
        return a_factor(kin)
    raise ValueError(f"unknown convention {convention!r}; choose from {CONVENTIONS}")


def nu_factor(kin: Kinematics) -> float:
    """nu = 2 pi^2 lam."""
    return float(2.0 * np.pi**2 * kin.lam)


def nu1_factor(kin: Kinematics) -> float:
    """nu_1 = nu / a = 2 pi sgn(lam) / |k|."""
    return nu_factor(kin) / a_factor(kin)


@dataclass
class LorentzianReport:
    m: float
    k: float
    deltas: np.ndarray
    values: np.ndarray
    stated: float
    exact_limit: float

    @property
    def rel_error_stated(self) -> np.ndarray:
        return np.abs(self.values - self.stated) / self.stated

    @property
    def rel_error_exact(self) -> np.ndarray:
        return np.abs(self.values - self.exact_limit) / self.exact_limit


def lorentzian_integral(m: float, k: float, delta: float) -> float:
    """int_0^inf 2 delta / (delta^2 + (lam(q) - lam(k))^2) dq, lam(q) = sqrt(q^2 + m^2).

    Substituting t = (lam(q) - lam(k)) / delta gives the smooth integrand
    2 (lam_k + delta t) / (q(t) (1 + t^2)) on [(m - lam_k) / delta, inf).
    """
    lk = np.hypot(k, m)

    def f(t):
        e = lk + delta * t
        q = np.sqrt(max((e - m) * (e + m), 1e-300))
        return 2.0 * e / (q * (1.0 + t * t))

    t0 = (m - lk) / delta
    # the 1/sqrt singularity of dq/dlam at q = 0 sits at t0; quad handles it with weight-free splitting
    pieces = [(t0, min(-1.0, 0.5 * t0)), (min(-1.0, 0.5 * t0), 1.0), (1.0, np.inf)]
    total = 0.0
    for a, b in pieces:
        if b > a:
            total += integrate.quad(f, a, b, limit=400, epsabs=0, epsrel=1e-10)[0]
    return float(total)


def lorentzian_limit_check(m: float, k: float, deltas=(1e-1, 1e-2, 1e-3)) -> LorentzianReport:
    """Evaluate the Lorentzian integral at decreasing delta.

    ``stated`` is pi sqrt(k^2+m^2)/|k|; ``exact_limit`` is the true limit
    2 pi sqrt(k^2+m^2)/|k| (the Lorentzian 2 delta/(delta^2 + x^2) has mass 2 pi).
    """
    d = np.asarray(deltas, dtype=float)
    vals = np.array([lorentzian_integral(m, k, float(x)) for x in d])
    stated = np.pi * np.hypot(k, m) / k
    return LorentzianReport(m, k, d, vals, float(stated), float(2 * stated))


@dataclass(eq=False)
class BlockSolution:
    """V Phi_p sources for incident directions k_dirs: ``sources`` is (N, 4, K, 2)."""

    kin: Kinematics
    p: int
    k_dirs: np.ndarray
    sources: np.ndarray
    op: DenseOperator


def _incident_columns(kin: Kinematics, grid: VolumeGrid, fp: FactorizedPotential, p: int,
                      k_dirs: np.ndarray) -> np.ndarray:
    """e^{i k.r} V1(r) Z_p(k) for every direction: (4N, 2K), columns ordered (b, n)."""
    Z = frames(p, kin.kappa * k_dirs, kin.m)  # (K, 4, 2)
    ph = np.exp(1j * kin.kappa * (grid.nodes @ k_dirs.T))  # (N, K)
    cols = np.einsum("iab,kbn->iakn", fp.v1, Z) * ph[:, None, :, None]
    return cols.reshape(4 * grid.size, -1)


def solve_block(kin: Kinematics, p: int, potential, grid: VolumeGrid, k_dirs: np.ndarray,
                op: DenseOperator | None = None) -> BlockSolution:
    """Solve the modified RLS equation for both channels of block p at every k_dir.

    One LU factorisation serves all right-hand sides.
    """
    if p != kin.block:
        raise ValueError(f"block p={p} is off-shell at lam={kin.lam:g} (on-shell block {kin.block})")
    if op is None:
        op = assemble(kin, potential, grid)
    k_dirs = np.atleast_2d(np.asarray(k_dirs, dtype=float))
    N, K = op.grid.size, k_dirs.shape[0]
    if op.potential.is_zero:
        return BlockSolution(kin, p, k_dirs, np.zeros((N, 4, K, 2), complex), op)
    rhs = _incident_columns(kin, op.grid, op.potential, p, k_dirs)
    psi = op.solve(rhs).reshape(N, 4, K, 2)
    src = np.einsum("iab,ibkn->iakn", op.potential.v1w1, psi)
    return BlockSolution(kin, p, k_dirs, src, op)


def t_kernel(q_dirs: np.ndarray, block: BlockSolution) -> np.ndarray:
    """T_{s,n}(kappa w_q, kappa w'_b) as an array (Q, 2, K, 2) indexed [q, s, b, n]."""
    kin, op = block.kin, block.op
    q_dirs = np.atleast_2d(np.asarray(q_dirs, dtype=float))
    Zq = frames(block.p, kin.kappa * q_dirs, kin.m)  # (Q, 4, 2)
    E = np.exp(-1j * kin.kappa * (q_dirs @ op.grid.nodes.T)) * op.grid.weights  # (Q, N)
    return (2 * np.pi) ** -3 * np.einsum("qas,qi,iakn->qskn", Zq.conj(), E, block.sources)


@dataclass(eq=False)
class SphereOperator:
    """(2M, 2M) matrix on H in the sqrt-weight embedding, index 2*a + s."""

    matrix: np.ndarray
    p: int
    kin: Kinematics
    sphere: SphereGrid
    kind: str
    convention: str = "unitary"
    diagnostics: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def _embed(kernel: np.ndarray, sphere: SphereGrid, c: float) -> np.ndarray:
    M = sphere.size
    sv = np.repeat(np.sqrt(sphere.weights), 2)
    return c * sv[:, None] * kernel.reshape(2 * M, 2 * M) * sv[None, :]


def assemble_t_operator(kin: Kinematics, p: int, potential, grid: VolumeGrid,
                        sphere: SphereGrid, op: DenseOperator | None = None,
                        convention: str = "unitary") -> SphereOperator:
    """T_p from one RLS solve per incident sphere node (shared LU)."""
    c = shell_factor(kin, convention)
    block = solve_block(kin, p, potential, grid, sphere.directions, op)
    T = t_kernel(sphere.directions, block)
    out = SphereOperator(_embed(T, sphere, c), p, kin, sphere, "T", convention)
    out.diagnostics["condition"] = block.op.condition if not block.op.potential.is_zero else 1.0
    return out


def forward_map(kin: Kinematics, grid: VolumeGrid, fp: FactorizedPotential, p: int,
                sphere: SphereGrid) -> np.ndarray:
    """Matrix of F_p (without W1): (2M, 4N), rows (a, s), embedded with sqrt(v_a).

    (F_p f)(w) = (2 pi)^{-3/2} sqrt(a) int e^{-i q.r} Z_p^*(q) V1(r) f(r) dr.
    """
    dirs = sphere.directions
    Z = frames(p, kin.kappa * dirs, kin.m)  # (M, 4, 2)
    E = np.exp(-1j * kin.kappa * (dirs @ grid.nodes.T)) * grid.weights  # (M, N)
    pref = (2 * np.pi) ** -1.5 * np.sqrt(a_factor(kin))
    F = pref * np.einsum("mas,mi,iab->msib", Z.conj(), E, fp.v1)
    F *= np.sqrt(sphere.weights)[:, None, None, None]
    return F.reshape(2 * sphere.size, 4 * grid.size)


def adjoint_map(kin: Kinematics, grid: VolumeGrid, fp: FactorizedPotential, p: int,
                sphere: SphereGrid) -> np.ndarray:
    """Matrix of F_p^*: (4N, 2M), columns (b, n), embedded with sqrt(v_b)."""
    pref = (2 * np.pi) ** -1.5 * np.sqrt(a_factor(kin))
    cols = _incident_columns(kin, grid, fp, p, sphere.directions)
    return pref * cols * np.repeat(np.sqrt(sphere.weights), 2)[None, :]


def t_operator_factorized(kin: Kinematics, p: int, potential, grid: VolumeGrid,
                          sphere: SphereGrid, op: DenseOperator | None = None,
                          convention: str = "unitary") -> SphereOperator:
    """T_p = (c/a) F_p W1 (I + K)^{-1} F_p^*, reusing the LU of the RLS operator."""
    if p != kin.block:
        raise ValueError(f"block p={p} is off-shell at lam={kin.lam:g}")
    if op is None:
        op = assemble(kin, potential, grid)
    M = sphere.size
    if op.potential.is_zero:
        return SphereOperator(np.zeros((2 * M, 2 * M), complex), p, kin, sphere, "T", convention)
    g, fp = op.grid, op.potential
    x = op.solve(adjoint_map(kin, g, fp, p, sphere)).reshape(g.size, 4, -1)
    wx = np.einsum("iab,ibk->iak", fp.w1, x).reshape(4 * g.size, -1)
    Fm = forward_map(kin, g, fp, p, sphere)
    mat = shell_factor(kin, convention) / a_factor(kin) * (Fm @ wx)
    return SphereOperator(mat, p, kin, sphere, "T", convention)


@dataclass
class SincCheck:
    block_sum_error: float
    per_block_error: dict
    paper_constant_ratio: float


def ff_star_check(kin: Kinematics, potential, grid: VolumeGrid, sphere: SphereGrid,
                  n_vectors: int = 3, seed: int = 0) -> SincCheck:
    """Compare F_p^* F_p with direct volume-kernel quadrature on random vectors.

    F_1^*F_1 + F_2^*F_2 has kernel (2 pi)^{-3} a V1(r) 4 pi sinc(kappa|r-s|) V1(s); a single
    block has the projector kernel (2 pi)^{-3} a V1(r) int e^{i q.(r-s)} Z_p Z_p^*(q) dOmega V1(s),
    built here from the closed-form angular integrals. ``sphere`` must resolve
    e^{i kappa w.x} for |x| up to 2 r_max. ``paper_constant_ratio`` is the ratio
    of the sinc-form prefactor written without the (2 pi)^{-3} to the correct one.
    """
    fp = potential if isinstance(potential, FactorizedPotential) else \
        sample_potential(potential, grid.nodes)
    rng = np.random.default_rng(seed)
    N = grid.size
    f = rng.standard_normal((4 * N, n_vectors)) + 1j * rng.standard_normal((4 * N, n_vectors))
    nodes = grid.nodes
    x = nodes[:, None, :] - nodes[None, :, :]
    d = np.linalg.norm(x, axis=-1)
    kd = kin.kappa * d
    j0 = np.sinc(kd / np.pi)
    with np.errstate(invalid="ignore", divide="ignore"):
        j1 = np.where(kd > 1e-8, (np.sin(kd) / kd - np.cos(kd)) / np.maximum(kd, 1e-300), 0.0)
        xhat = np.where(d[..., None] > 0, x / np.maximum(d, 1e-300)[..., None], 0.0)
    lam = abs(kin.lam)
    pref = (2 * np.pi) ** -3 * a_factor(kin) * 4 * np.pi
    v1 = fp.v1
    w = grid.weights

    def apply(kernel4):  # kernel4 (N, 4, N, 4) -> V1 K V1 w f
        g = np.einsum("jab,jbk->jak", v1, f.reshape(N, 4, -1)) * w[:, None, None]
        h = np.einsum("iajb,jbk->iak", kernel4, g)
        return np.einsum("iab,ibk->iak", v1, h).reshape(4 * N, -1)

    sinc4 = j0[:, None, :, None] * I4[None, :, None, :]
    # angular average of e^{i q.x} (lam_3 +/- (m beta + alpha.q)) / (2 lam_3), q = kappa w
    alpha_x = np.einsum("ijs,sab->iajb", xhat, ALPHA)
    proj = {}
    for p in (1, 2):
        sg = 1.0 if p == 2 else -1.0
        proj[p] = 0.5 * (sinc4 + sg * (kin.m / lam) * j0[:, None, :, None] * BETA[None, :, None, :]
                         + sg * 1j * (kin.kappa / lam) * j1[:, None, :, None] * alpha_x)
    errs = {}
    total = np.zeros((4 * N, n_vectors), complex)
    for p in (1, 2):
        F = forward_map(kin, grid, fp, p, sphere)
        Fs = adjoint_map(kin, grid, fp, p, sphere)
        lhs = Fs @ (F @ f)
        total += lhs
        rhs = pref * apply(proj[p])
        errs[p] = float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs))
    ref = pref * apply(sinc4)
    err = float(np.linalg.norm(total - ref) / np.linalg.norm(ref))
    return SincCheck(err, errs, float((2 * np.pi) ** 3))


def s_operator(T: SphereOperator) -> SphereOperator:
    """S_p = I + i T_p, with its unitarity defect ||S^*S - I||_2 recorded."""
    S = np.eye(T.size, dtype=complex) + 1j * T.matrix
    out = SphereOperator(S, T.p, T.kin, T.sphere, "S", T.convention, dict(T.diagnostics))
    out.diagnostics["unitarity_defect"] = unitarity_defect(out)
    return out


def unitarity_defect(S: SphereOperator) -> float:
    m = S.matrix
    return float(np.linalg.norm(m.conj().T @ m - np.eye(S.size), 2))


def hs_norm(T: SphereOperator) -> float:
    """Hilbert-Schmidt norm of T_p in H (Frobenius norm in the embedding)."""
    return float(np.linalg.norm(T.matrix, "fro"))


@dataclass(eq=False)
class SpectralData:
    """Eigenpairs of S_p; ``vectors`` (2M, J) are in the sqrt-weight embedding."""

    mu: np.ndarray
    vectors: np.ndarray
    block: int
    kin: Kinematics
    sphere: SphereGrid
    orthonormality_residual: float
    eigen_residual: float
    convention: str = "unitary"
    schur: bool = False

    def functions(self) -> np.ndarray:
        """G_j at the sphere nodes, (M, 2, J)."""
        M = self.sphere.size
        return self.vectors.reshape(M, 2, -1) / np.sqrt(self.sphere.weights)[:, None, None]


def _phase_fix(v: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(v), axis=0)
    piv = v[idx, np.arange(v.shape[1])]
    return v * (np.abs(piv) / piv)[None, :]


def spectrum(S: SphereOperator, cluster_tol: float = 1e-7) -> SpectralData:
    """Eigen-decomposition of S_p, sorted by descending |mu - 1|.

    Nearly degenerate eigenvalues (within ``cluster_tol``) are grouped and
    their eigenvectors orthonormalised together. If the eigenvector matrix is
    badly conditioned (defective S) Schur vectors are used instead.
    """
    mat = S.matrix
    mu, vec = linalg.eig(mat)
    schur = False
    if np.linalg.cond(vec) > 1e8:
        warnings.warn("S is numerically defective; using Schur vectors", RuntimeWarning)
        R, vec = linalg.schur(mat, output="complex")
        mu = np.diag(R).copy()
        schur = True
    order = np.lexsort((np.angle(mu), -np.round(np.abs(mu - 1.0), 12)))
    mu, vec = mu[order], vec[:, order]
    if not schur:
        used = np.zeros(mu.size, bool)
        for i in range(mu.size):
            if used[i]:
                continue
            grp = np.nonzero((~used) & (np.abs(mu - mu[i]) <= cluster_tol))[0]
            used[grp] = True
            q, _ = np.linalg.qr(vec[:, grp])
            vec[:, grp] = q
        vec /= np.linalg.norm(vec, axis=0)[None, :]
    vec = _phase_fix(vec)
    J = mu.size
    ortho = float(np.max(np.abs(vec.conj().T @ vec - np.eye(J))))
    T = -1j * (mat - np.eye(J))
    res = T @ vec + 1j * (mu - 1.0)[None, :] * vec
    eig_res = float(np.max(np.linalg.norm(res, axis=0)))
    return SpectralData(mu, vec, S.p, S.kin, S.sphere, ortho, eig_res, S.convention, schur)


@dataclass
class ReconstructionResult:
    """f_{s,n}(w_a, w'_b) from eigendata, indexed [a, s, b, n] over sphere nodes."""

    coefficients: np.ndarray  # a_j^*(s, p, w): (J, M, 2)
    f_components: np.ndarray  # (M, 2, M, 2)
    f_full: np.ndarray | None  # (M, 4, M, 2) via H_{j,p}
    rank: int


def reconstruct(spectral: SpectralData, rank: int | None = None, full: bool = False,
                mu_threshold: float | None = None) -> ReconstructionResult:
    """f_{s,n}(w, w') = (nu / (i c)) sum_j (mu_j - 1) G_j^(s)(w) conj(G_j^(n)(w')).

    c is the shell factor of the convention the spectrum was built with, so
    the prefactor is -nu_1/(2i) for the unitary convention and nu_1/i for the
    paper one. ``rank`` keeps the first J eigenpairs (largest |mu - 1| first);
    ``mu_threshold`` keeps those with |mu - 1| above it.
    """
    kin = spectral.kin
    if spectral.block != kin.block:
        raise ValueError("spectral block does not match the sign of lam")
    G = spectral.functions()  # (M, 2, J)
    keep = np.arange(spectral.mu.size)
    if mu_threshold is not None:
        keep = keep[np.abs(spectral.mu - 1.0) > mu_threshold]
    if rank is not None:
        keep = keep[:rank]
    G = G[:, :, keep]
    dm = spectral.mu[keep] - 1.0
    coef = nu_factor(kin) / (1j * shell_factor(kin, spectral.convention))
    # a_j^*(s, p, w) analogue: coef (mu_j - 1) G_j^(s)(w)
    a = coef * dm[:, None, None] * np.moveaxis(G, 2, 0)
    f = np.einsum("asj,bnj->asbn", coef * G * dm[None, None, :], G.conj())
    f_full = None
    if full:
        Z = frames(spectral.block, kin.kappa * spectral.sphere.directions, kin.m)  # (M, 4, 2)
        f_full = np.einsum("mas,msbn->mabn", Z, f)
    return ReconstructionResult(a, f, f_full, int(keep.size))
