"""Monte Carlo and spectral tooling for repulsive Gibbs point processes.

The package samples finite-volume Gibbs configurations, assembles random
Schrodinger landscapes over them, and measures how the low-energy integrated
density of states decays, together with the combinatorial constants that
govern that decay.
"""

__version__ = "0.1.0"
