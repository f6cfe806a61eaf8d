use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{
    check_feasibility, objective, Allocation, FeasibilityReport, ProblemInstance, Tolerances,
};
use crate::waterfill::DualPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Power-only optimum that already meets every floor.
    OptimalUnconstrained,
    /// Power-only optimum that misses at least one floor.
    FloorsViolated,
    /// Certified optimum of the rate-constrained problem.
    Optimal,
    /// Feasible point with every floor met with equality.
    FeasibleOnBounds,
    HeuristicFeasible,
    HeuristicInfeasible,
    /// The floors cannot be met within the budget.
    Infeasible,
    OracleUnconverged,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::OptimalUnconstrained => "optimal_unconstrained",
            Self::FloorsViolated => "floors_violated",
            Self::Optimal => "optimal",
            Self::FeasibleOnBounds => "feasible_on_bounds",
            Self::HeuristicFeasible => "heuristic_feasible",
            Self::HeuristicInfeasible => "heuristic_infeasible",
            Self::Infeasible => "infeasible",
            Self::OracleUnconverged => "oracle_unconverged",
        }
    }

    /// Whether the status claims a point satisfying every constraint.
    pub fn claims_feasible(self) -> bool {
        matches!(
            self,
            Self::OptimalUnconstrained
                | Self::Optimal
                | Self::FeasibleOnBounds
                | Self::HeuristicFeasible
        )
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Solution, status and cost of one solver call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub allocation: Allocation,
    pub dual: DualPoint,
    pub objective: f64,
    pub power_used: f64,
    /// Largest `floor - rate` over users, clamped at zero.
    pub max_rate_deficit: f64,
    pub iterations: usize,
    pub wall_time_ns: u64,
}

impl SolveReport {
    pub(crate) fn new(
        inst: &ProblemInstance,
        status: SolveStatus,
        dual: DualPoint,
        allocation: Allocation,
        iterations: usize,
    ) -> Result<Self> {
        Self::assess(inst, dual, allocation, iterations, |_| status)
    }

    /// Like [`SolveReport::new`], with the status chosen from the feasibility check.
    pub(crate) fn assess(
        inst: &ProblemInstance,
        dual: DualPoint,
        allocation: Allocation,
        iterations: usize,
        status: impl FnOnce(&FeasibilityReport) -> SolveStatus,
    ) -> Result<Self> {
        let feas = check_feasibility(inst, &allocation, Tolerances::default())?;
        Ok(Self {
            status: status(&feas),
            objective: objective(inst, &allocation)?,
            power_used: feas.power_used,
            max_rate_deficit: feas.max_deficit(),
            allocation,
            dual,
            iterations,
            wall_time_ns: 0,
        })
    }
}
