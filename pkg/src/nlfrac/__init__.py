"""Forward solvers, linearization and inverse recovery for fractional Schroedinger equations with local nonlinearities."""

__version__ = "0.1.0"
