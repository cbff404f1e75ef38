"""Bidirectional-thrust quadrotor inversion toolkit.

Simulation, Hopf-chart geometric control, box-constrained control
allocation, reference trajectories, and learned reference-modulation
policies, plus an evaluation harness exposed as a service and CLI.
"""

__version__ = "0.1.0"
