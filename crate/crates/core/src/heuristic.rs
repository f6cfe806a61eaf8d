//! One-shot heuristic in the dual space.
//!
//! Starting from the power-only optimum `theta1`, jump right to
//! `theta_bar = W * theta1`, put every unsatisfied real-time user on its rate
//! boundary there, and recompute `theta` once from the closed form. No
//! iteration over `theta` is performed, so the result can miss a floor (jump
//! too short). The final `theta` is computed from the active sets at
//! `theta_bar`; power is spent only on those sets, which keeps the budget
//! exact unless some of their entries would go negative at `theta2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_feasibility, user_rates, ProblemInstance, Tolerances};
use crate::report::{SolveReport, SolveStatus};
use crate::unconstrained::{solve_unconstrained, FallbackPolicy};
use crate::waterfill::{
    active_mask, closed_form_from_sums, delta_for_floor, level_for_rate, mask_sums,
    primal_from_dual, primal_on_mask, rate_at_level, raw_power, sorted_user_gains, water_level,
    DualPoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicParams {
    /// Step exponent: `W_k = 2^(epsilon * (floor_k - rate_k))`.
    pub epsilon: f64,
    /// Real-time users within this relative margin above their floor are
    /// treated as unsatisfied.
    pub guard_margin: f64,
    /// Re-solve `theta` exactly at the final rate prices.
    pub refine: bool,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            guard_margin: 0.05,
            refine: false,
        }
    }
}

impl HeuristicParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.guard_margin >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "epsilon ({}) and guard margin ({}) must be nonnegative",
                self.epsilon, self.guard_margin
            )));
        }
        Ok(())
    }
}

/// Intermediate values of one heuristic run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicTrace {
    pub theta1: f64,
    /// Users put on their rate boundary, after repair.
    pub unsatisfied: Vec<usize>,
    /// The unsatisfied set before any repair round.
    pub initial_unsatisfied: Vec<usize>,
    pub w: f64,
    pub theta_bar: f64,
    pub deltas2: Vec<f64>,
    pub theta2: f64,
    pub succeeded: bool,
    pub repair_rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    /// `theta_bar` was left of the intersection of the power and rate boundaries.
    UndershootThetaBar,
    /// Floors met but the budget is exceeded: the sets at `theta_bar` differ
    /// from those at `theta2`.
    StaleActiveSets,
    /// A real-time user that started satisfied lost its floor.
    CollateralRtUser,
    None,
}

/// Step factor `W` and the unsatisfied set from the power-only rates.
///
/// `W` never drops below one, so the jump is always to the right.
pub fn step_factor(
    inst: &ProblemInstance,
    rates: &[f64],
    params: &HeuristicParams,
) -> (f64, Vec<usize>) {
    let unsatisfied: Vec<usize> = inst
        .constrained_users()
        .filter(|&k| rates[k] < inst.rate_floors[k] * (1.0 + params.guard_margin))
        .collect();
    let w = unsatisfied
        .iter()
        .map(|&k| (params.epsilon * (inst.rate_floors[k] - rates[k])).exp2())
        .fold(1.0, f64::max);
    (w, unsatisfied)
}

/// Active set of user `k` on its rate boundary, grown from its power-only set
/// at water level `level` one subcarrier at a time until it is consistent.
///
/// Returns the set (ascending) and its log-gain sum.
fn boundary_set(inst: &ProblemInstance, k: usize, level: f64) -> Result<(Vec<usize>, f64)> {
    let gains = sorted_user_gains(inst, k);
    if gains.is_empty() {
        return Err(Error::FloorUnreachable { user: k });
    }
    let start = gains
        .iter()
        .filter(|(_, b)| raw_power(level, *b) > 0.0)
        .count();
    let logs: Vec<f64> = gains.iter().map(|(_, b)| b.log2()).collect();
    let (_, count) = level_for_rate(&logs, inst.rate_floors[k], start);
    let mut set: Vec<usize> = gains[..count].iter().map(|(n, _)| *n).collect();
    set.sort_unstable();
    let log_sum = set.iter().map(|&n| inst.gain(n, k).log2()).sum();
    Ok((set, log_sum))
}

/// Runs the heuristic; failure to reach a feasible point is a status, not an error.
pub fn run_heuristic(
    inst: &ProblemInstance,
    params: &HeuristicParams,
) -> Result<(SolveReport, HeuristicTrace)> {
    params.check()?;
    let tol = Tolerances::default();
    let k_users = inst.num_users;
    let zero = vec![0.0; k_users];
    let theta1 = solve_unconstrained(inst, &zero, FallbackPolicy::default())?.theta_star;
    let mut rates1 = vec![0.0; k_users];
    for k in inst.constrained_users() {
        rates1[k] = rate_at_level(inst, k, water_level(inst.weights[k], theta1));
    }

    let meets =
        |k: usize, r: f64| inst.rate_floors[k] - r <= tol.rate * inst.rate_floors[k].max(1.0);
    if inst.constrained_users().all(|k| meets(k, rates1[k])) {
        let trace = HeuristicTrace {
            theta1,
            unsatisfied: Vec::new(),
            initial_unsatisfied: Vec::new(),
            w: 1.0,
            theta_bar: theta1,
            deltas2: zero.clone(),
            theta2: theta1,
            succeeded: true,
            repair_rounds: 0,
        };
        let dual1 = DualPoint::new(theta1, zero);
        let alloc1 = primal_from_dual(inst, &dual1)?;
        let report = SolveReport::new(inst, SolveStatus::OptimalUnconstrained, dual1, alloc1, 1)?;
        return Ok((report, trace));
    }

    let (w, mut unsatisfied) = step_factor(inst, &rates1, params);
    let initial_unsatisfied = unsatisfied.clone();
    let max_repairs = inst.rt_users.len();
    let mut repair_rounds = 0;
    let theta_bar = w * theta1;

    loop {
        // rate prices that put each unsatisfied user on its boundary at theta_bar
        let mut deltas2 = vec![0.0; k_users];
        for &k in &unsatisfied {
            let level = water_level(inst.weights[k], theta_bar);
            if let Ok((set, log_sum)) = boundary_set(inst, k, level) {
                deltas2[k] = delta_for_floor(inst, k, theta_bar, set.len(), log_sum)?;
            }
        }

        let frozen = active_mask(inst, theta_bar, &deltas2);
        let (sizes, gain_sums) = mask_sums(inst, &frozen);
        let mut theta2 =
            closed_form_from_sums(inst, &deltas2, &sizes, &gain_sums).unwrap_or(theta_bar);
        let dual;
        let alloc;
        if params.refine {
            theta2 = solve_unconstrained(inst, &deltas2, FallbackPolicy::default())?.theta_star;
            dual = DualPoint::new(theta2, deltas2.clone());
            alloc = primal_from_dual(inst, &dual)?;
        } else {
            // power goes only where theta2 was computed to put it
            dual = DualPoint::new(theta2, deltas2.clone());
            alloc = primal_on_mask(inst, &dual, &frozen)?;
        }
        let rates = user_rates(inst, &alloc)?;

        let collateral: Vec<usize> = inst
            .constrained_users()
            .filter(|k| !unsatisfied.contains(k) && !meets(*k, rates[*k]))
            .collect();
        if !collateral.is_empty() && repair_rounds < max_repairs {
            unsatisfied.extend(collateral);
            unsatisfied.sort_unstable();
            repair_rounds += 1;
            continue;
        }

        let report = SolveReport::assess(inst, dual, alloc, 1 + repair_rounds, |feas| {
            if feas.feasible {
                SolveStatus::HeuristicFeasible
            } else {
                SolveStatus::HeuristicInfeasible
            }
        })?;
        let succeeded = report.status == SolveStatus::HeuristicFeasible;
        let trace = HeuristicTrace {
            theta1,
            unsatisfied,
            initial_unsatisfied,
            w,
            theta_bar,
            deltas2,
            theta2,
            succeeded,
            repair_rounds,
        };
        return Ok((report, trace));
    }
}

/// Names the reason a run failed, from its trace and report.
pub fn classify_failure(
    inst: &ProblemInstance,
    trace: &HeuristicTrace,
    report: &SolveReport,
) -> Result<FailureKind> {
    if trace.succeeded {
        return Ok(FailureKind::None);
    }
    let tol = Tolerances::default();
    let feas = check_feasibility(inst, &report.allocation, tol)?;
    let short: Vec<usize> = feas
        .rate_deficits
        .iter()
        .enumerate()
        .filter(|(k, def)| **def > tol.rate * inst.rate_floors[*k].max(1.0))
        .map(|(k, _)| k)
        .collect();
    Ok(
        if short.iter().any(|k| trace.initial_unsatisfied.contains(k)) {
            FailureKind::UndershootThetaBar
        } else if !short.is_empty() {
            FailureKind::CollateralRtUser
        } else if !feas.feasible {
            FailureKind::StaleActiveSets
        } else {
            FailureKind::None
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::objective;

    fn two_user(budget: f64) -> ProblemInstance {
        ProblemInstance::new(
            2,
            1,
            2,
            budget,
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.5, 0.0],
            vec![0],
        )
        .unwrap()
    }

    #[test]
    fn step_factor_trivial_cases() {
        let inst = two_user(2.0);
        let p = HeuristicParams::with_epsilon(0.2);
        assert_eq!(step_factor(&inst, &[2.0, 1.0], &p), (1.0, vec![]));

        let (w, t) = step_factor(&inst, &[0.5, 1.0], &p);
        assert_eq!(t, vec![0]);
        assert!((w - 2f64.powf(0.2)).abs() < 1e-15);
        assert!((w - 1.14870).abs() < 1e-5);

        let (w, t) = step_factor(&inst, &[0.5, 1.0], &HeuristicParams::with_epsilon(0.0));
        assert_eq!((w, t), (1.0, vec![0]));
    }

    #[test]
    fn guard_margin_adds_near_boundary_users() {
        let inst = two_user(2.0);
        let (w, t) = step_factor(&inst, &[1.52, 1.0], &HeuristicParams::default());
        assert_eq!(t, vec![0]);
        assert_eq!(w, 1.0);
    }

    #[test]
    fn satisfied_floors_return_the_unconstrained_optimum() {
        let inst = two_user(2.0).with_floors(vec![0.5, 0.0]).unwrap();
        let (rep, trace) = run_heuristic(&inst, &HeuristicParams::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::OptimalUnconstrained);
        assert_eq!(trace.theta2, trace.theta1);
        assert!(trace.deltas2.iter().all(|&d| d == 0.0));
        assert_eq!(
            classify_failure(&inst, &trace, &rep).unwrap(),
            FailureKind::None
        );
    }

    #[test]
    fn two_user_success_and_failure() {
        let inst = two_user(2.0);
        // the optimum sits at theta = 1.2314 = 1.707 * theta1, so a half-bit
        // deficit needs epsilon above 2 log2(1.707) = 1.543
        let (rep, trace) = run_heuristic(&inst, &HeuristicParams::with_epsilon(2.0)).unwrap();
        assert!(trace.succeeded, "{trace:?}");
        assert!(trace.theta2 <= trace.theta_bar);
        assert_eq!(rep.status, SolveStatus::HeuristicFeasible);
        // optimum of this instance is the boundary solution
        let best = crate::boundary::solve_bounds(&inst).unwrap().objective;
        assert!(rep.objective <= best + 1e-9);
        assert!(rep.objective >= 0.9 * best);

        let (rep, trace) = run_heuristic(&inst, &HeuristicParams::with_epsilon(0.2)).unwrap();
        assert!(!trace.succeeded);
        assert!(trace.theta2 > trace.theta_bar);
        assert_eq!(rep.status, SolveStatus::HeuristicInfeasible);
        assert!(rep.max_rate_deficit > 0.0);
        assert_eq!(
            classify_failure(&inst, &trace, &rep).unwrap(),
            FailureKind::UndershootThetaBar
        );
    }

    #[test]
    fn trace_invariants() {
        let inst = two_user(2.0);
        let (_, trace) = run_heuristic(&inst, &HeuristicParams::with_epsilon(0.5)).unwrap();
        assert_eq!(trace.theta_bar, trace.w * trace.theta1);
        for k in 0..2 {
            if !trace.unsatisfied.contains(&k) {
                assert_eq!(trace.deltas2[k], 0.0);
            }
        }
    }

    #[test]
    fn rejects_negative_epsilon() {
        let inst = two_user(2.0);
        assert!(run_heuristic(&inst, &HeuristicParams::with_epsilon(-1.0)).is_err());
    }

    #[test]
    fn refine_lands_on_the_power_boundary() {
        let inst = two_user(2.0);
        let p = HeuristicParams {
            refine: true,
            ..HeuristicParams::with_epsilon(2.0)
        };
        let (rep, _) = run_heuristic(&inst, &p).unwrap();
        assert!((rep.power_used - 2.0).abs() < 1e-9);
        assert!(objective(&inst, &rep.allocation).unwrap() > 0.0);
    }

    #[test]
    fn epsilon_threshold_on_hand_instance() {
        let inst = two_user(2.0);
        let fail = run_heuristic(&inst, &HeuristicParams::with_epsilon(1.5))
            .unwrap()
            .1;
        let pass = run_heuristic(&inst, &HeuristicParams::with_epsilon(1.6))
            .unwrap()
            .1;
        assert!(!fail.succeeded);
        assert!(pass.succeeded);
    }

    #[test]
    fn budget_excess_with_floors_met_is_stale_sets() {
        let inst = two_user(2.0);
        let (rep, mut trace) = run_heuristic(&inst, &HeuristicParams::with_epsilon(2.0)).unwrap();
        let powers = rep
            .allocation
            .powers
            .iter()
            .map(|p| p * (1.0 + 1e-6))
            .collect();
        let alloc = crate::model::Allocation::from_powers(1, 2, powers).unwrap();
        let bad = SolveReport::new(
            &inst,
            SolveStatus::HeuristicInfeasible,
            rep.dual.clone(),
            alloc,
            1,
        )
        .unwrap();
        trace.succeeded = false;
        assert_eq!(
            classify_failure(&inst, &trace, &bad).unwrap(),
            FailureKind::StaleActiveSets
        );
    }
}
