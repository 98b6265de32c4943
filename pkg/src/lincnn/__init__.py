"""Learning dynamics of two-layer linear CNNs: simulation, closed-form theory and diagnostics."""

__version__ = "0.1.0"
