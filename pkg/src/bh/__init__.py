"""Numerical homogenization of two-phase conduction with dynamic
Laplace-Beltrami interface conditions: cell correctors, effective tensors
with memory kernels, macroscopic and microscale solvers, and the study
harnesses comparing them."""

__version__ = "0.1.0"
