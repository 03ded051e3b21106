"""Neural nonlinear opinion dynamics for automatic cost tuning of dynamic games."""

__version__ = "0.1.0"
