"""Numerical laboratory for the degenerate/singular parabolic normalized
p-Laplacian ``u_t = |Du|^gamma [Lap u + (p-2) <D^2u Du/|Du|, Du/|Du|>] + f``."""

from .analytic import BarrierSpec, FlatnessConfig, barrier_upper, blowup_field, manufactured, normalize
from .errors import (BoundaryNode, ComputeError, ConfigError, DegenerateTimeStep, DomainTooSmall,
                     EmptyCylinder, FirstSlice, OutOfDomain, ParlabError, UnstableStep,
                     UnsupportedKind)
from .lattice import GridSpec, IntrinsicCylinder, ScalarField, nodes_in_cylinder, sample
from .operators import (DeviationParams, EquationParams, degeneracy, deviation_residual, gradient,
                        normalized_p_laplacian, residual)
from .probe import (best_plane, doubling_certificate, flatness_iteration, oscillation, q_sweep,
                    seminorms)
from .solver import ProblemSpec, solve, solve_deviation, stable_dt, step

__version__ = "0.1.0"
