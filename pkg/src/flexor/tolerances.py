"""Numerical tolerances shared across the package.

Every comparison threshold lives here so that one file is the tuning surface.
"""

# Feasibility of LP optimizers and of H-polyhedron rows.
FEAS_TOL = 1e-9
# Slack allowed before an inequality is declared non-redundant; thin regions
# amplify it, so it sits near LP round-off.
REDUNDANCY_TOL = 1e-12
# Membership test for projected polyhedra.
MEMBERSHIP_TOL = 1e-7
# Coefficients below this magnitude are zeroed during canonicalization.
ZERO_TOL = 1e-12
# Rows closer than this (after normalization) are merged.
DUPLICATE_TOL = 1e-10
# Halfplane vertices in 2D shadows satisfy all rows to this.
VERTEX_TOL = 1e-8

# Simplex internals.
PIVOT_TOL = 1e-9
OPTIMALITY_TOL = 1e-10

# Power-flow solves.
NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 30
# Certified AC samples.
AC_MISMATCH_TOL = 1e-8
AC_CONSTRAINT_TOL = 1e-6
