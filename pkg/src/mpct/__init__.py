"""Embedded MPC for tracking with an ADMM solver, CSTR benchmark and probabilistic validation."""

__version__ = "0.1.0"
