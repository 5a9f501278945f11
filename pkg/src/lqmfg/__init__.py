"""Quadratic-Gaussian solutions of ergodic linear-quadratic N-player and mean-field games."""

from .errors import (ConditionsFail, Defective, DimensionMismatch, HypothesisViolation, IllConditioned,
                     LQGameError, NonSymmetric, NotNearlyIdentical, NotPD, NotSPD, NumericalBlowup,
                     SpecError, StructureMismatch, Unstable)
from .games import (MeanFieldGame, MeasureMoments, NearlyIdenticalGame, NPersonGame, ScalingFamily,
                    ScalingRule, build_consensus_game, consensus_limit, eval_Vhat, monotonicity_gap,
                    reduce_to_nearly_identical, scaled_family, validate_H)
from .riccati import AREProblem, closed_form_sigma, solve_are_spd, sylvester_residual
from .synthesis import (EquilibriumSolution, check_conditions, family_member, hjb_kfp_residual, solve,
                        solve_mean_field, solve_n_person, solve_nearly_identical)

__version__ = "0.1.0"
