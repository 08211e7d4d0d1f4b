"""qnsplit: variable-metric forward-backward splitting with a low-rank
resolvent calculus, quasi-Newton PDHG, and an imaging benchmark harness."""

from .linops import (BlockOperator, Convolution2D, DenseOperator,
                     DiagonalOperator, ForwardDifference2D, LinearOperator,
                     ScaledIdentityOperator, ShapeError, as_vector, identity,
                     power_norm)
from .prox import (CocoerciveMap, InvalidBoxError, MonotoneOperator,
                   box_operator, grad_quadratic, group_l21_operator,
                   l1_shrinkage_operator, pair_norms, pairwise_ball_operator,
                   project_pairwise_l2_ball, prox_box, prox_group_l21,
                   quadratic_gradient_map, soft_shrink, zero_operator)
from .metrics import (AssumptionReport, DenseMetric, DiagonalMetric,
                      MetricAssumptionError, MetricScheduleState,
                      QuasiNewtonMetric, ScaledIdentityMetric, SpdBase,
                      assumption_report, build_metric, default_eta_schedule,
                      metric_apply, osr1_direction, safeguard_gamma_minus,
                      safeguard_gamma_summable, secant_gamma)
from .resolvent import (RootBracketError, RootConfig, RootContext,
                        RootConvergenceError, RootSolveReport, bisection_root,
                        certified_bracket, eval_root_l, fb_step_perturbed,
                        hybrid_root, inclusion_residual, newton_root,
                        resolve_perturbed)
from .solvers import (InclusionProblem, IterateRecord, SolvedSignal,
                      SolveResult, SolverConfig, alpha_schedule, inertial_step,
                      relaxation_coefficient, run_inertial_qnfbs,
                      run_relaxed_qnfbs, run_solver)
from .pdhg import (PdhgBlockMetric, SaddleProblem, build_pdhg_metric,
                   pdhg_fb_step, run_iqn_pdhg, run_plain_pdhg, run_rqn_pdhg)
from .imaging import (GapReport, ImageProblem, add_noise, build_blur_op,
                      build_deconvolution, build_denoising, build_gradient_op,
                      build_infconv, dual_value, edge_weights, gaussian_kernel,
                      pd_gap, phantom, primal_value)
from .experiment import (ALGORITHMS, CSV_HEADER, AlgorithmSummary, ConfigError,
                         ExperimentConfig, ProblemSpec, ReferenceValue,
                         RunSummary, build_problem, fit_linear_rate,
                         iterations_to_gap, parse_config, problem_hash,
                         reference_gap, run_algorithm, run_experiment,
                         solver_config_for, write_csv)
from .io import PgmError, read_pgm, write_pgm

__version__ = "0.1.0"
