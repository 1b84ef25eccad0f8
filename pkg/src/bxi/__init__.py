"""Monte Carlo and discrete-harmonic estimators for planar Brownian intersection exponents."""

from .exponents import U, V, xi_exact, xi_exact_general

__all__ = ["U", "V", "xi_exact", "xi_exact_general"]
__version__ = "0.1.0"
