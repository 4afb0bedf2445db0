"""difflab, a numerical laboratory for the equilibrium thermodynamics of
generative diffusion on analytically tractable targets"""

__version__ = '0.3.0'
