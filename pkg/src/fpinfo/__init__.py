"""Numerical laboratory for information functionals along the
Fokker-Planck flow: deterministic and stochastic solvers, entropy and
Fisher-information functionals, and convexity diagnostics for the mutual
information between the initial and evolved states."""

__version__ = "0.1.0"
