"""Time-optimal selective and robust rotations of spin-1/2 ensembles with offset inhomogeneity."""
from .so3 import (AxisAngle, Rotation, compose, compose_axis_angle, fidelity, hat, rot_exp,
                  so3_generator, x_rotation)
from .propagation import (ControlField, FidelityProfile, FieldError, SpinEnsemble, bang_bang_discretize,
                          ensemble_cost, fidelity_profile, profile_derivative, propagate)
from .pmp import (LiftState, SingularSetError, SwitchParam, is_singular_arc, lift_evolve,
                  next_bang_duration, singular_crossing_times, singular_exit_lx)
from .design import (DesignError, DesignReport, PairSolveError, RobustFamilyParams, SelectiveDesign,
                     curvature_at_resonance, delta0, design_locally_robust_pair, design_robust,
                     design_selective, heuristic_time_bound, identity_offsets, landscape_guides,
                     min_time_regular_candidates, regular_candidates, symmetric_bang_solutions)
from .grape import GrapeConfig, LandscapeGrid, ensemble_template, gradient_check, grape_optimize, landscape_scan

__version__ = "0.1.0"
