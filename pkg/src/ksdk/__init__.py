"""Pseudospectral simulation laboratory on the unit two-torus.

The package provides band-limited Fourier calculus, a deterministic
aggregation-diffusion solver, exactly sampled Fourier-mode noise, mild-form
stochastic steppers (linearized and nonlinear), an interacting particle
system, and Monte Carlo experiment harnesses with statistical verdicts.
"""

__version__ = "0.1.0"

from ksdk.spectral import FourierField, from_grid, to_grid

__all__ = ["FourierField", "from_grid", "to_grid", "__version__"]
