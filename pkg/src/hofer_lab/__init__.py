"""Numerical laboratory for Hamiltonian flows and Hofer-type length functionals.

Model phase spaces (plane, torus, sphere, cylinder), Hamiltonian algebra,
symplectic integration, displacement-energy certificates, the variational
theory of geodesics of the oscillation norm, growth functionals, flux on the
torus, Lagrangian suspension, an explicit d-bar solution family, and a
finite-dimensional Morse complex over Z2.

All infimum-valued quantities (Hofer distance, displacement energy, ...) are
reported as certified upper bounds with a stored witness, never as infima.
"""

__version__ = "0.1.0"
