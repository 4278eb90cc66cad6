"""Numerical almost-Kähler geometry and symplectic curvature flow."""
