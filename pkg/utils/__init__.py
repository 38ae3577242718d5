"""Numerical core of glpin: grid, solvers, construction, energy and I/O helpers."""
