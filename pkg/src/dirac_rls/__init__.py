"""Dirac Lippmann-Schwinger scattering with matrix potentials.

Modules:

- ``dirac_algebra``: Dirac/Pauli matrices, free spinors and block frames
- ``kernels``: the free kernels J_+, Q, B_+ and a convolution cross-check
- ``potentials``: potential families, V = V1 W1 V1 factorisation, diagnostics
- ``discretization``: sphere and volume quadrature grids
- ``rls_solver``: Nystrom solve of the modified RLS equation, exceptional scan, Born series
- ``amplitude``: scattering amplitudes and far-field checks
- ``s_matrix``: T_p and S_p on the direction sphere, spectrum, reconstruction
- ``partial_wave``: radial Dirac phase shifts and the partial-wave identities
- ``cli``: batch driver (``dirac-rls``)
"""
from .dirac_algebra import Kinematics
from .discretization import build_sphere_grid, build_volume_grid
from .potentials import PotentialSpec
from .rls_solver import assemble, recover_phi, solve_modified_rls

__all__ = ["Kinematics", "PotentialSpec", "assemble", "build_sphere_grid", "build_volume_grid",
           "recover_phi", "solve_modified_rls"]
__version__ = "0.1.0"
