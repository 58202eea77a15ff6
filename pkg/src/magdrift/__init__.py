"""Magnetized-plasma kinetics and its strong-field drift-fluid limit.

Simulation and verification suite: a stochastic-particle solver for the
scaled kinetic system on R^2 x T^1, a semi-Lagrangian solver for its
drift-fluid limit (full slab and reduced plane forms), the elliptic
machinery they share, flow-averaging operators, and the relative-entropy
diagnostics that confront the two across the scaling parameter.
"""

__version__ = "0.1.0"
