//! Sensor placement: weighting field, planning rollout with its adjoint,
//! penalties and the receding-horizon optimizer.

pub mod adjoint;
pub mod descent;
pub mod horizon;
pub mod penalty;
pub mod rollout;
pub mod weighting;

pub use adjoint::{parameter_gradient, rollout, solve_adjoint, AdjointSolution, Rollout, SteppedSystem};
pub use descent::{descend, initial_positions, DescentConfig, DescentResult, Objective};
pub use horizon::{
    plan_chain, plan_receding_horizon, write_waypoints_csv, ChainResult, CostBreakdown, HorizonPlan, PlannerConfig,
    PlanningProblem, PlanningScenario, WAYPOINT_CSV_HEADER,
};
pub use penalty::{PenaltyContext, PenaltyTerms};
pub use rollout::{footprint_slope, footprint_weight, mean_weighted_uncertainty, PlanningModel};
pub use weighting::{weighting_field, WeightingConfig};
