"""Numerical solver and checks for log-determinant conformal Schouten equations.

Submodules are imported explicitly (``schouten.solver``, ``schouten.grid``, ...);
the top-level package stays import-light so the CLI can pin BLAS thread counts
before numpy is loaded.
"""

__version__ = "0.1.0"
