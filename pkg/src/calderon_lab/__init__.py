"""Finite-space laboratory for multiscale reproducing identities.

Builds quasi-metric measure spaces, nested dyadic cube systems, and ladders of
averaging/detail operators, then assembles and audits exact and approximate
reproducing formulae with certified Neumann inversion.
"""

__version__ = "1.0.0"
