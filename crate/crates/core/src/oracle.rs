//! Exact reference solver with KKT certificates.
//!
//! Dual coordinate descent: each rate price `delta_k` is moved until user `k`
//! is complementary (price zero with the floor met, or rate equal to the
//! floor), with `theta` re-solved exactly after every move. A projected
//! subgradient phase takes over when the sweeps stop making progress. By
//! default the sweeps start from the point where each RT user plays its best
//! response to `theta`, which is usually already optimal; optimality is only
//! ever declared from the KKT residuals. Slow compared to the other solvers,
//! but every answer comes with its residuals.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{total_power, user_rates, Allocation, ProblemInstance};
use crate::report::{SolveReport, SolveStatus};
use crate::unconstrained::{
    solve_unconstrained, FallbackPolicy, UnconstrainedMethod, UnconstrainedResult,
};
use crate::waterfill::{
    corner_points, min_power_fill, primal_from_dual, spent_power, water_level, DualPoint,
};

/// Diminishing step `a / ceil(t / period)` of the subgradient phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub a: f64,
    pub period: usize,
    /// Subgradient steps per fallback phase.
    pub steps: usize,
}

impl Default for StepRule {
    fn default() -> Self {
        Self {
            a: 0.5,
            period: 10,
            steps: 200,
        }
    }
}

impl StepRule {
    fn size(&self, t: usize) -> f64 {
        self.a / t.div_ceil(self.period.max(1)).max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    pub tol_kkt: f64,
    pub max_outer: usize,
    pub step_rule: StepRule,
    /// Start the sweeps from the best-response point instead of zero prices.
    pub warm_start: bool,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            tol_kkt: 1e-8,
            max_outer: 10_000,
            step_rule: StepRule::default(),
            warm_start: true,
        }
    }
}

/// Relative KKT residuals of a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Largest `|(c+delta)/((1+p) ln2) - theta beta| / (theta beta)` over positive powers.
    pub stationarity: f64,
    /// Largest violation of `(c+delta)/ln2 <= theta beta` over zero powers.
    pub dual_feasibility: f64,
    /// Power over budget, relative to the budget.
    pub power_violation: f64,
    /// Largest rate shortfall, relative to `max(floor, 1)`.
    pub rate_violation: f64,
    /// `|budget - power| / budget`; `theta` is always positive.
    pub power_complementarity: f64,
    /// Largest `delta_k |rate_k - floor_k| / ((c_k + delta_k) max(floor_k, 1))`.
    pub rate_complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        [
            self.stationarity,
            self.dual_feasibility,
            self.power_violation,
            self.rate_violation,
            self.power_complementarity,
            self.rate_complementarity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn kkt_residuals(
    inst: &ProblemInstance,
    dual: &DualPoint,
    alloc: &Allocation,
) -> Result<KktResiduals> {
    if dual.deltas.len() != inst.num_users {
        return Err(Error::DimensionMismatch(format!(
            "{} deltas for {} users",
            dual.deltas.len(),
            inst.num_users
        )));
    }
    let mut res = KktResiduals::default();
    for n in 0..inst.num_subcarriers {
        for k in 0..inst.num_users {
            let b = inst.gain(n, k);
            if b <= 0.0 {
                continue;
            }
            let lhs = (inst.weights[k] + dual.deltas[k]) / LN_2;
            let rhs = dual.theta * b;
            let p = alloc.power(n, k);
            if p > 0.0 {
                res.stationarity = res.stationarity.max((lhs / (1.0 + p) - rhs).abs() / rhs);
            } else {
                res.dual_feasibility = res.dual_feasibility.max((lhs - rhs).max(0.0) / rhs);
            }
        }
    }
    let budget = inst.power_budget;
    let power = total_power(inst, alloc)?;
    res.power_violation = (power - budget).max(0.0) / budget;
    res.power_complementarity = (budget - power).abs() / budget;
    let rates = user_rates(inst, alloc)?;
    for (k, &rate) in rates.iter().enumerate() {
        let floor = inst.rate_floors[k];
        let scale = floor.max(1.0);
        res.rate_violation = res.rate_violation.max((floor - rate).max(0.0) / scale);
        let d = dual.deltas[k];
        if d != 0.0 {
            let comp = d * (rate - floor).abs() / ((inst.weights[k] + d) * scale);
            res.rate_complementarity = res.rate_complementarity.max(comp);
        }
    }
    Ok(res)
}

/// Rate of user `k` alone at `theta` with price `delta`.
fn user_rate(inst: &ProblemInstance, k: usize, theta: f64, delta: f64) -> f64 {
    let level = water_level(inst.weights[k] + delta, theta);
    inst.user_gains(k)
        .map(|(_, b)| (level / b).max(1.0).log2())
        .sum()
}

fn exact_theta(inst: &ProblemInstance, deltas: &[f64]) -> Result<f64> {
    Ok(solve_unconstrained(inst, deltas, FallbackPolicy::default())?.theta_star)
}

/// Moves `deltas[k]` so that user `k` is complementary; returns the new `theta`.
///
/// The user's rate at the re-solved `theta` increases with its price, so the
/// root is bracketed and refined by regula falsi with the Illinois fix.
fn update_user(inst: &ProblemInstance, deltas: &mut [f64], k: usize, theta: f64) -> Result<f64> {
    let floor = inst.rate_floors[k];
    let eval = |x: f64, deltas: &mut [f64]| -> Result<(f64, f64)> {
        deltas[k] = x;
        let th = exact_theta(inst, deltas)?;
        Ok((user_rate(inst, k, th, x) - floor, th))
    };

    let (f0, th0) = eval(0.0, deltas)?;
    if f0 >= 0.0 {
        return Ok(th0);
    }
    // the floor level at the current theta is a good first guess
    let fill = min_power_fill(inst, k, floor)?;
    let mut hi = (theta * LN_2 * fill.level - inst.weights[k]).max(inst.weights[k] * 1e-3);
    let (mut f_hi, mut th_hi) = eval(hi, deltas)?;
    let (mut lo, mut f_lo) = (0.0, f0);
    let mut doublings = 0;
    while f_hi < 0.0 {
        (lo, f_lo) = (hi, f_hi);
        hi = 2.0 * hi + inst.weights[k];
        (f_hi, th_hi) = eval(hi, deltas)?;
        doublings += 1;
        if doublings > 200 {
            return Err(Error::FloorUnreachable { user: k });
        }
    }

    // w_lo, w_hi: secant weights, halved on repeated sides (Illinois)
    let tol = 1e-14 * floor.max(1.0);
    let (mut w_lo, mut w_hi) = (f_lo, f_hi);
    let mut side = 0i8;
    for _ in 0..200 {
        if f_hi <= tol || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let x = (lo * w_hi - hi * w_lo) / (w_hi - w_lo);
        let x = if x > lo && x < hi { x } else { 0.5 * (lo + hi) };
        let (fx, thx) = eval(x, deltas)?;
        if fx >= 0.0 {
            (hi, f_hi, w_hi, th_hi) = (x, fx, fx, thx);
            if side == 1 {
                w_lo *= 0.5;
            }
            side = 1;
        } else {
            (lo, w_lo) = (x, fx);
            if side == -1 {
                w_hi *= 0.5;
            }
            side = -1;
        }
    }
    // keep the side that meets the floor
    deltas[k] = hi;
    Ok(th_hi)
}

/// One projected subgradient step on the dual, in place.
fn subgradient_step(
    inst: &ProblemInstance,
    dual: &mut DualPoint,
    step: f64,
    weight_scale: f64,
) -> Result<()> {
    let alloc = primal_from_dual(inst, dual)?;
    let rates = user_rates(inst, &alloc)?;
    let power = total_power(inst, &alloc)?;
    for k in inst.constrained_users() {
        let g = inst.rate_floors[k] - rates[k];
        dual.deltas[k] = (dual.deltas[k] + step * weight_scale * g).max(0.0);
    }
    let g_theta = (power - inst.power_budget) / inst.power_budget;
    dual.theta = (dual.theta * (1.0 + step * g_theta)).max(dual.theta * 0.5);
    Ok(())
}

fn report(
    inst: &ProblemInstance,
    status: SolveStatus,
    dual: DualPoint,
    iterations: usize,
) -> Result<SolveReport> {
    let alloc = primal_from_dual(inst, &dual)?;
    SolveReport::new(inst, status, dual, alloc, iterations)
}

pub fn solve_exact(inst: &ProblemInstance, settings: &OracleSettings) -> Result<SolveReport> {
    if !(settings.tol_kkt.is_finite() && settings.tol_kkt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tol_kkt must be positive, got {}",
            settings.tol_kkt
        )));
    }
    let mut deltas = vec![0.0; inst.num_users];
    let mut theta = exact_theta(inst, &deltas)?;

    let mut needed = 0.0;
    let mut levels = vec![0.0; inst.num_users];
    for k in inst.constrained_users() {
        match min_power_fill(inst, k, inst.rate_floors[k]) {
            Ok(fill) => {
                needed += fill.power;
                levels[k] = fill.level;
            }
            Err(Error::FloorUnreachable { .. }) => {
                return report(
                    inst,
                    SolveStatus::Infeasible,
                    DualPoint::new(theta, deltas),
                    0,
                )
            }
            Err(e) => return Err(e),
        }
    }
    // floors generated at the feasibility limit land a rounding error away
    if needed > inst.power_budget * (1.0 + settings.tol_kkt) {
        return report(
            inst,
            SolveStatus::Infeasible,
            DualPoint::new(theta, deltas),
            0,
        );
    }

    if settings.warm_start {
        (theta, deltas) = best_response_start(inst, &levels, theta);
    }
    let users: Vec<usize> = inst.constrained_users().collect();
    let weight_scale = inst.weights.iter().sum::<f64>() / inst.num_users as f64;
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut outer = 0;
    while outer < settings.max_outer {
        let dual = DualPoint::new(theta, deltas.clone());
        let alloc = primal_from_dual(inst, &dual)?;
        let res = kkt_residuals(inst, &dual, &alloc)?.max();
        if res <= settings.tol_kkt {
            return SolveReport::new(inst, SolveStatus::Optimal, dual, alloc, outer);
        }
        if res < 0.5 * best {
            best = res;
            since_best = 0;
        } else {
            since_best += 1;
        }

        if since_best >= 50 {
            // stalled: subgradient steps from here, then back to sweeping
            let mut dual = dual;
            for t in 1..=settings.step_rule.steps {
                subgradient_step(inst, &mut dual, settings.step_rule.size(t), weight_scale)?;
                outer += 1;
            }
            deltas = dual.deltas;
            theta = exact_theta(inst, &deltas)?;
            best = f64::INFINITY;
            since_best = 0;
            continue;
        }

        for &k in &users {
            theta = update_user(inst, &mut deltas, k, theta)?;
        }
        outer += 1;
    }
    report(
        inst,
        SolveStatus::OracleUnconverged,
        DualPoint::new(theta, deltas),
        outer,
    )
}

/// Starting point where every RT user plays its best response to `theta`:
/// free while its floor is slack, at its minimum-power level otherwise.
/// Total power then falls with `theta`, so bisection finds the budget.
fn best_response_start(inst: &ProblemInstance, levels: &[f64], theta1: f64) -> (f64, Vec<f64>) {
    let deltas_at = |theta: f64| -> Vec<f64> {
        (0..inst.num_users)
            .map(|k| {
                if levels[k] > 0.0 {
                    (theta * LN_2 * levels[k] - inst.weights[k]).max(0.0)
                } else {
                    0.0
                }
            })
            .collect()
    };
    let budget = inst.power_budget;
    let power = |theta: f64| spent_power(inst, theta, &deltas_at(theta));
    let (mut lo, mut hi) = (theta1, theta1);
    for _ in 0..200 {
        if power(hi) <= budget {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 4.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        if power(mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (hi, deltas_at(hi))
}

/// Plain bisection on the power residual in `theta`.
///
/// Reference for the power-only problem: no use of the piecewise structure
/// beyond the bracket given by the largest corner.
pub fn solve_theta_bisection(
    inst: &ProblemInstance,
    deltas: &[f64],
    rel_tol: f64,
) -> Result<UnconstrainedResult> {
    let corners = corner_points(inst, deltas)?;
    let mut hi = corners.largest().ok_or(Error::NoGains)?;
    let mut lo = hi;
    let budget = inst.power_budget;
    let mut iterations = 0;
    while spent_power(inst, lo, deltas) < budget {
        lo *= 0.5;
        iterations += 1;
        if lo < f64::MIN_POSITIVE {
            return Err(Error::InvalidInstance("power residual has no root".into()));
        }
    }
    while (hi - lo) > rel_tol * hi {
        let mid = 0.5 * (lo + hi);
        if spent_power(inst, mid, deltas) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(UnconstrainedResult {
        theta_star: 0.5 * (lo + hi),
        method: UnconstrainedMethod::Binary,
        iterations,
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::solve_bounds;
    use crate::model::{check_feasibility, objective, Tolerances};

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
    fn single_variable() {
        let inst =
            ProblemInstance::new(1, 1, 1, 3.0, vec![1.0], vec![1.0], vec![0.0], vec![]).unwrap();
        let rep = solve_exact(&inst, &OracleSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Optimal);
        assert!((rep.allocation.power(0, 0) - 3.0).abs() < 1e-10);
        assert!((rep.objective - 2.0).abs() < 1e-10);
    }

    fn both_starts() -> [OracleSettings; 2] {
        let warm = OracleSettings::default();
        let cold = OracleSettings {
            warm_start: false,
            ..warm
        };
        [warm, cold]
    }

    #[test]
    fn hand_instance_matches_boundary_solution() {
        for settings in both_starts() {
            let inst = two_user(2.0);
            let rep = solve_exact(&inst, &settings).unwrap();
            assert_eq!(rep.status, SolveStatus::Optimal);
            let be_power = 3.0 - 2f64.powf(1.5);
            assert!((rep.allocation.power(0, 1) - be_power).abs() < 1e-7);
            assert!((rep.objective - (1.5 + (1.0 + be_power).log2())).abs() < 1e-8);
            // the bounds solver stops at a 1e-8 relative power gap
            let bounds = solve_bounds(&inst).unwrap();
            assert!((rep.objective - bounds.objective).abs() < 1e-7);
        }
    }

    #[test]
    fn loose_floors_reduce_to_unconstrained() {
        let inst = crate::model::tests::small_instance();
        let mut floors = vec![0.0; inst.num_users];
        for &k in &inst.rt_users {
            floors[k] = 1e-3;
        }
        let inst = inst.with_floors(floors).unwrap();
        let free =
            solve_unconstrained(&inst, &vec![0.0; inst.num_users], FallbackPolicy::default())
                .unwrap();
        let rep = solve_exact(&inst, &OracleSettings::default()).unwrap();
        let base =
            primal_from_dual(&inst, &DualPoint::unconstrained(&inst, free.theta_star)).unwrap();
        for (a, b) in rep.allocation.powers.iter().zip(&base.powers) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn infeasible_floors() {
        let rep = solve_exact(&two_user(1.0), &OracleSettings::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Infeasible);
    }

    #[test]
    fn cap_reports_unconverged() {
        let settings = OracleSettings {
            max_outer: 0,
            ..OracleSettings::default()
        };
        let rep = solve_exact(&two_user(2.0), &settings).unwrap();
        assert_eq!(rep.status, SolveStatus::OracleUnconverged);
    }

    #[test]
    fn residual_audit_and_perturbation() {
        let inst = two_user(2.0);
        let rep = solve_exact(&inst, &OracleSettings::default()).unwrap();
        let res = kkt_residuals(&inst, &rep.dual, &rep.allocation).unwrap();
        assert!(res.max() <= 1e-8, "{res:?}");
        assert!(
            check_feasibility(&inst, &rep.allocation, Tolerances::uniform(1e-7))
                .unwrap()
                .feasible
        );

        let mut bumped = rep.dual.clone();
        bumped.deltas[0] *= 1.1;
        assert!(
            kkt_residuals(&inst, &bumped, &rep.allocation)
                .unwrap()
                .max()
                > 1e-8
        );
        let realloc = primal_from_dual(&inst, &bumped).unwrap();
        let res = kkt_residuals(&inst, &bumped, &realloc).unwrap();
        assert!(res.rate_complementarity > 1e-8 || res.power_complementarity > 1e-8);
    }

    #[test]
    fn slack_floors_have_zero_rate_complementarity() {
        let inst = two_user(2.0).with_floors(vec![0.5, 0.0]).unwrap();
        let rep = solve_exact(&inst, &OracleSettings::default()).unwrap();
        let res = kkt_residuals(&inst, &rep.dual, &rep.allocation).unwrap();
        assert_eq!(res.rate_complementarity, 0.0);
        assert_eq!(rep.iterations, 0);
    }

    /// Grid search over the powers of a 2x2 instance.
    fn brute_force(inst: &ProblemInstance, step: f64) -> f64 {
        let budget = inst.power_budget;
        let mut best = f64::NEG_INFINITY;
        let betas: Vec<f64> = inst.gains.clone();
        // spend the whole budget: the last entry takes what is left
        let last = betas.iter().rposition(|&b| b > 0.0).unwrap();
        let free: Vec<usize> = (0..betas.len())
            .filter(|&i| betas[i] > 0.0 && i != last)
            .collect();
        let steps = (budget / step).floor() as usize;
        let mut idx = vec![0usize; free.len()];
        loop {
            let mut p = vec![0.0; betas.len()];
            let mut used = 0.0;
            for (j, &i) in free.iter().enumerate() {
                p[i] = idx[j] as f64 * step / betas[i];
                used += idx[j] as f64 * step;
            }
            if used <= budget {
                p[last] = (budget - used) / betas[last];
                let alloc =
                    Allocation::from_powers(inst.num_subcarriers, inst.num_users, p).unwrap();
                if check_feasibility(inst, &alloc, Tolerances::uniform(1e-9))
                    .unwrap()
                    .feasible
                {
                    best = best.max(objective(inst, &alloc).unwrap());
                }
            }
            let mut j = 0;
            loop {
                if j == idx.len() {
                    return best;
                }
                idx[j] += 1;
                if idx[j] <= steps {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
        }
    }

    #[test]
    fn grid_never_beats_oracle() {
        let cases = [
            // one unselected entry keeps the grid two-dimensional
            (
                vec![1.0, 0.5, 2.0, 0.0],
                vec![1.0, 2.0],
                vec![1.0, 0.0],
                2.0,
            ),
            (
                vec![0.3, 1.5, 0.0, 0.9],
                vec![1.0, 1.0],
                vec![0.8, 0.6],
                3.0,
            ),
            (
                vec![1.0, 0.0, 1.0, 1.0],
                vec![2.0, 1.0],
                vec![0.0, 1.2],
                2.5,
            ),
        ];
        for (gains, weights, floors, budget) in cases {
            let rt = (0..2).filter(|&k| floors[k] > 0.0).collect();
            let inst =
                ProblemInstance::new(2, 2, 2, budget, weights.clone(), gains, floors, rt).unwrap();
            let rep = solve_exact(&inst, &OracleSettings::default()).unwrap();
            assert_eq!(rep.status, SolveStatus::Optimal);
            let cold = solve_exact(&inst, &both_starts()[1]).unwrap();
            assert_eq!(cold.status, SolveStatus::Optimal);
            assert!((cold.objective - rep.objective).abs() < 1e-8 * rep.objective);
            let step = 1e-3;
            let grid = brute_force(&inst, step);
            // Lipschitz bound: each coordinate is off by at most one step in beta*p
            let max_c = weights.iter().cloned().fold(0.0, f64::max);
            let min_beta = inst
                .gains
                .iter()
                .cloned()
                .filter(|&b| b > 0.0)
                .fold(f64::INFINITY, f64::min);
            let bound = 4.0 * max_c * step / (min_beta * LN_2);
            assert!(grid <= rep.objective + bound, "{grid} vs {}", rep.objective);
            assert!(grid >= rep.objective - bound, "{grid} vs {}", rep.objective);
        }
    }

    #[test]
    fn bisection_reference_matches_exact_theta() {
        let inst = crate::model::tests::small_instance();
        let zero = vec![0.0; inst.num_users];
        let exact = solve_unconstrained(&inst, &zero, FallbackPolicy::default()).unwrap();
        let bis = solve_theta_bisection(&inst, &zero, 1e-13).unwrap();
        assert!((exact.theta_star - bis.theta_star).abs() < 1e-11 * exact.theta_star);
    }
}
