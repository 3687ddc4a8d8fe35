"""Robust disturbance-feedback MPC for pump scheduling in water networks."""
from .model import (ContinuousTankModel, LinearTankModel, PumpPressureModel, TrajectoryDataset,
                    fit_edge_surrogate, assemble_continuous_model, discretize_rk4, predict_nominal,
                    stage_cost, randers_paper_model, synthetic_pressure_model)
from .uncertainty import (DisturbanceSet, ScalarDemandSet, GeneratorBox, BOX_PRESETS,
                          quantify_from_residuals, combine_sets, sample_generator,
                          elementwise_max_disturbance)
from .formulation import (ConstraintSpec, AffinePolicy, build_stacked, build_dense, build_sparse,
                          cost_terms, extract_policy)
from .solver import QpProblem, SolveReport, SolverOptions, solve_sparse_ipm, solve_dense_reference, convexify
from .controllers import (ControllerConfig, ControlProblem, Controller, ControlDecision, Window,
                          InfeasibleConfiguration)
from .sim import (ScenarioSpec, ClosedLoopTrace, run_closed_loop, run_experiment_matrix, summary_table,
                  count_violations, daily_cost, diurnal_demand, two_level_tariff, problem_factory)

__version__ = "0.1.0"
