//! Feasible solution with every rate floor met with equality.
//!
//! In the `(theta, delta_k)` plane the set where user `k` gets exactly its
//! floor is a straight line `delta_k = m_k * theta - c_k`: along it the user's
//! water level `(c_k + delta_k) / (theta ln 2) = m_k / ln 2` does not move, so
//! its powers and active set do not move either. Pinning every real-time user
//! on its line leaves a one-dimensional problem in `theta`, solved by
//! bracketing bisection on the total power `P(theta) = budget`.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{total_power, user_rates, ProblemInstance, Tolerances};
use crate::report::{SolveReport, SolveStatus};
use crate::unconstrained::{solve_unconstrained, FallbackPolicy};
use crate::waterfill::{min_power_fill, primal_from_dual, spent_power, DualPoint};

const MAX_BISECTIONS: usize = 200;
const MAX_BRACKET_STEPS: usize = 200;

/// Rate-boundary lines of the real-time users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryModel {
    /// Power price the model was built around (the power-only optimum).
    pub theta_ref: f64,
    /// `m_k`; zero for users without a positive floor.
    pub slopes: Vec<f64>,
    /// `c_k / m_k`, where the line crosses `delta = 0`; infinite without a floor.
    pub thresholds: Vec<f64>,
    /// Active set along each line.
    pub frozen_sets: Vec<Vec<usize>>,
    /// Power each pinned user spends, independent of `theta`.
    pub pinned_powers: Vec<f64>,
}

impl BoundaryModel {
    /// `delta_k` placing user `k` on its line at `theta`.
    ///
    /// Nonnegative for `theta >= thresholds[k]`. Below the threshold the value
    /// is negative: the user is held at its floor even though the power-only
    /// water level would give it more.
    pub fn delta_at(&self, inst: &ProblemInstance, k: usize, theta: f64) -> f64 {
        if self.slopes[k] > 0.0 {
            self.slopes[k] * theta - inst.weights[k]
        } else {
            0.0
        }
    }

    pub fn dual_at(&self, inst: &ProblemInstance, theta: f64) -> DualPoint {
        DualPoint::new(
            theta,
            (0..inst.num_users)
                .map(|k| self.delta_at(inst, k, theta))
                .collect(),
        )
    }

    pub fn is_pinned(&self, k: usize) -> bool {
        self.slopes[k] > 0.0
    }

    /// Total power of the pinned users; the limit of `P(theta)` as `theta` grows.
    pub fn pinned_power(&self) -> f64 {
        self.pinned_powers.iter().sum()
    }

    /// Entry powers of user `k` on its frozen set at `theta`, without clamping.
    pub fn frozen_powers(&self, inst: &ProblemInstance, k: usize, theta: f64) -> Vec<f64> {
        let level = (inst.weights[k] + self.delta_at(inst, k, theta)) / (theta * LN_2);
        self.frozen_sets[k]
            .iter()
            .map(|&n| level / inst.gain(n, k) - 1.0)
            .collect()
    }

    /// Rate of user `k` evaluated on its frozen set.
    pub fn frozen_rate(&self, inst: &ProblemInstance, k: usize, theta: f64) -> f64 {
        self.frozen_powers(inst, k, theta)
            .iter()
            .map(|p| (1.0 + p).log2())
            .sum()
    }

    /// Weighted power of user `k` evaluated on its frozen set.
    pub fn frozen_power(&self, inst: &ProblemInstance, k: usize, theta: f64) -> f64 {
        self.frozen_powers(inst, k, theta)
            .iter()
            .zip(&self.frozen_sets[k])
            .map(|(p, &n)| p * inst.gain(n, k))
            .sum()
    }
}

/// Slopes and thresholds of the rate boundaries.
///
/// The line of user `k` sits at the water level that meets its floor with the
/// least power, which is the level the user keeps for every `theta` past its
/// threshold.
pub fn build_boundary(inst: &ProblemInstance, theta_ref: f64) -> Result<BoundaryModel> {
    if !(theta_ref > 0.0 && theta_ref.is_finite()) {
        return Err(Error::NonPositiveTheta(theta_ref));
    }
    let k_users = inst.num_users;
    let mut slopes = vec![0.0; k_users];
    let mut thresholds = vec![f64::INFINITY; k_users];
    let mut frozen_sets = vec![Vec::new(); k_users];
    let mut pinned_powers = vec![0.0; k_users];
    for k in inst.constrained_users() {
        let fill = min_power_fill(inst, k, inst.rate_floors[k])?;
        slopes[k] = LN_2 * fill.level;
        thresholds[k] = inst.weights[k] / slopes[k];
        frozen_sets[k] = fill.set;
        pinned_powers[k] = fill.power;
    }
    Ok(BoundaryModel {
        theta_ref,
        slopes,
        thresholds,
        frozen_sets,
        pinned_powers,
    })
}

/// Deltas that switch the pinned users off, leaving only the free users' power.
fn pinned_out(inst: &ProblemInstance, model: &BoundaryModel) -> Vec<f64> {
    (0..inst.num_users)
        .map(|k| {
            if model.is_pinned(k) {
                -inst.weights[k]
            } else {
                0.0
            }
        })
        .collect()
}

/// Power price at which the free users spend exactly `leftover`, if that
/// problem is well posed.
fn free_theta(
    inst: &ProblemInstance,
    model: &BoundaryModel,
    leftover: f64,
    tol: Tolerances,
) -> Option<f64> {
    if leftover <= tol.power * inst.power_budget {
        return None;
    }
    let mut free = inst.clone();
    free.power_budget = leftover;
    let deltas = pinned_out(inst, model);
    solve_unconstrained(&free, &deltas, FallbackPolicy::default())
        .ok()
        .map(|r| r.theta_star)
        .filter(|t| t.is_finite() && *t > 0.0)
}

/// `P(theta)`: total power with every real-time user on its boundary.
pub fn power_on_boundary(inst: &ProblemInstance, model: &BoundaryModel, theta: f64) -> Result<f64> {
    let alloc = primal_from_dual(inst, &model.dual_at(inst, theta))?;
    total_power(inst, &alloc)
}

/// Per-user rates with every real-time user on its boundary.
pub fn rate_on_boundary(
    inst: &ProblemInstance,
    model: &BoundaryModel,
    theta: f64,
) -> Result<Vec<f64>> {
    let alloc = primal_from_dual(inst, &model.dual_at(inst, theta))?;
    user_rates(inst, &alloc)
}

/// Bisection on `P(theta) = budget` along the rate boundaries.
pub fn solve_bounds(inst: &ProblemInstance) -> Result<SolveReport> {
    solve_bounds_with(inst, Tolerances::default())
}

pub fn solve_bounds_with(inst: &ProblemInstance, tol: Tolerances) -> Result<SolveReport> {
    let zero = vec![0.0; inst.num_users];
    let theta1 = solve_unconstrained(inst, &zero, FallbackPolicy::default())?.theta_star;
    bounds_from(inst, theta1, tol)
}

/// The power-only optimum when it already meets every floor, the bounds
/// solution otherwise.
pub fn solve_staged(inst: &ProblemInstance) -> Result<SolveReport> {
    let tol = Tolerances::default();
    let zero = vec![0.0; inst.num_users];
    let theta1 = solve_unconstrained(inst, &zero, FallbackPolicy::default())?.theta_star;
    let dual = DualPoint::new(theta1, zero);
    let alloc = primal_from_dual(inst, &dual)?;
    let report = SolveReport::assess(inst, dual, alloc, 1, |feas| {
        if feas.feasible {
            SolveStatus::OptimalUnconstrained
        } else {
            SolveStatus::FloorsViolated
        }
    })?;
    if report.status == SolveStatus::OptimalUnconstrained {
        return Ok(report);
    }
    bounds_from(inst, theta1, tol)
}

fn bounds_from(inst: &ProblemInstance, theta1: f64, tol: Tolerances) -> Result<SolveReport> {
    let zero = vec![0.0; inst.num_users];
    let unconstrained = |status| {
        let dual = DualPoint::new(theta1, zero.clone());
        let alloc = primal_from_dual(inst, &dual)?;
        SolveReport::new(inst, status, dual, alloc, 0)
    };

    let model = match build_boundary(inst, theta1) {
        Ok(m) => m,
        Err(Error::FloorUnreachable { .. }) => return unconstrained(SolveStatus::Infeasible),
        Err(e) => return Err(e),
    };
    let budget = inst.power_budget;
    let pinned = model.pinned_power();
    if pinned > budget * (1.0 + tol.power) {
        return unconstrained(SolveStatus::Infeasible);
    }

    // With the pinned users frozen the rest is a power-only problem on the
    // leftover budget, which the exact solver handles directly.
    if let Some(theta) = free_theta(inst, &model, budget - pinned, tol) {
        let dual = model.dual_at(inst, theta);
        let alloc = primal_from_dual(inst, &dual)?;
        let p = total_power(inst, &alloc)?;
        if p <= budget * (1.0 + tol.power) {
            return SolveReport::new(inst, SolveStatus::FeasibleOnBounds, dual, alloc, 1);
        }
    }

    let free_deltas = pinned_out(inst, &model);
    let total = |theta: f64| pinned + spent_power(inst, theta, &free_deltas);
    let within = |p: f64| (p - budget).abs() <= tol.power * budget;

    let (mut lo, mut hi) = (theta1, theta1);
    let p1 = total(theta1);
    let mut iterations = 0;
    let theta = if within(p1) {
        theta1
    } else {
        let mut p_hi = p1;
        if p1 > budget {
            for _ in 0..MAX_BRACKET_STEPS {
                hi *= 2.0;
                iterations += 1;
                p_hi = total(hi);
                if p_hi <= budget || within(p_hi) {
                    break;
                }
            }
        } else {
            for _ in 0..MAX_BRACKET_STEPS {
                lo *= 0.5;
                iterations += 1;
                if total(lo) >= budget {
                    break;
                }
            }
        }
        // invariant: total(lo) >= budget >= total(hi); the result is taken
        // from the `hi` side so the budget is exceeded by at most the tolerance
        for _ in 0..MAX_BISECTIONS {
            if within(p_hi) || hi - lo <= f64::EPSILON * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            iterations += 1;
            let p = total(mid);
            if p > budget {
                lo = mid;
            } else {
                hi = mid;
                p_hi = p;
            }
        }
        hi
    };

    let dual = model.dual_at(inst, theta);
    let alloc = primal_from_dual(inst, &dual)?;
    SolveReport::new(inst, SolveStatus::FeasibleOnBounds, dual, alloc, iterations)
}
