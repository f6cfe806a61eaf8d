//! Exact power price for fixed rate prices.
//!
//! Both solvers end the same way: once the active sets are known, `theta`
//! follows from the closed form in [`theta_closed_form`]. They differ only in
//! how they find the sets. The corner search brackets the root between two
//! adjacent corner points in at most `ceil(log2(#corners))` halvings; the
//! fixed-point iteration substitutes `theta` back into the closed form until
//! the sets repeat.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemInstance;
use crate::waterfill::{
    closed_form_from_sums, corner_points, mask_sums, raw_power, spent_power, water_level,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnconstrainedMethod {
    Binary,
    FixedPoint,
    FixedPointFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedResult {
    pub theta_star: f64,
    pub method: UnconstrainedMethod,
    pub iterations: usize,
    pub converged: bool,
}

/// Fixed point first, corner search if it has not settled within the cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FallbackPolicy {
    pub fp_iter_cap: usize,
}

impl Default for FallbackPolicy {
    fn default() -> Self {
        Self { fp_iter_cap: 10 }
    }
}

fn check_deltas(inst: &ProblemInstance, deltas: &[f64]) -> Result<()> {
    if deltas.len() != inst.num_users {
        return Err(Error::DimensionMismatch(format!(
            "{} deltas for {} users",
            deltas.len(),
            inst.num_users
        )));
    }
    Ok(())
}

/// Largest corner point; the allocation is identically zero from there on.
fn largest_corner(inst: &ProblemInstance, deltas: &[f64]) -> Result<f64> {
    corner_points(inst, deltas)?.largest().ok_or(Error::NoGains)
}

/// Closed form on a membership mask. Both methods go through here, so equal
/// masks give bit-identical `theta`.
fn closed_form(inst: &ProblemInstance, deltas: &[f64], mask: &[bool]) -> Result<f64> {
    let (sizes, gain_sums) = mask_sums(inst, mask);
    closed_form_from_sums(inst, deltas, &sizes, &gain_sums).ok_or(Error::EmptyActiveSets)
}

/// Binary search over the sorted corner points, then the closed form.
pub fn solve_binary(inst: &ProblemInstance, deltas: &[f64]) -> Result<UnconstrainedResult> {
    check_deltas(inst, deltas)?;
    let corners = corner_points(inst, deltas)?;
    if corners.is_empty() {
        return Err(Error::NoGains);
    }
    let budget = inst.power_budget;
    if budget <= 0.0 {
        return Ok(UnconstrainedResult {
            theta_star: corners.largest().unwrap_or_default(),
            method: UnconstrainedMethod::Binary,
            iterations: 0,
            converged: true,
        });
    }

    let spent = |i: usize| spent_power(inst, corners.corners[i].theta, deltas);
    let mut iterations = 0;
    // first corner index whose entries stay active in the root's interval
    let first_active = if spent(0) <= budget {
        0
    } else {
        // invariant: spent(lo) > budget >= spent(hi)
        let (mut lo, mut hi) = (0, corners.len() - 1);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            iterations += 1;
            if spent(mid) > budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };

    let mut mask = vec![false; inst.num_users * inst.num_subcarriers];
    for c in &corners.corners[first_active..] {
        mask[inst.index(c.subcarrier, c.user)] = true;
    }
    let theta_star = closed_form(inst, deltas, &mask)?;
    Ok(UnconstrainedResult {
        theta_star,
        method: UnconstrainedMethod::Binary,
        iterations,
        converged: true,
    })
}

/// Starting point: the corner of an "average" entry, with means taken over
/// selected entries only.
fn initial_theta(inst: &ProblemInstance, deltas: &[f64]) -> Option<f64> {
    let (mut count, mut weight, mut gain) = (0usize, 0.0, 0.0);
    for n in 0..inst.num_subcarriers {
        for k in inst.selected_users(n) {
            count += 1;
            weight += inst.weights[k] + deltas[k];
            gain += inst.gain(n, k);
        }
    }
    (count > 0).then(|| (weight / count as f64) / ((gain / count as f64) * std::f64::consts::LN_2))
}

/// Repeated substitution of `theta` into the closed form.
///
/// Stops when the active sets repeat, which makes the next `theta` equal to
/// the current one. A two-cycle or hitting `max_iter` returns
/// `converged = false`.
pub fn solve_fixed_point(
    inst: &ProblemInstance,
    deltas: &[f64],
    max_iter: usize,
) -> Result<UnconstrainedResult> {
    check_deltas(inst, deltas)?;
    let mut theta = initial_theta(inst, deltas).ok_or(Error::NoGains)?;
    if inst.power_budget <= 0.0 {
        return Ok(UnconstrainedResult {
            theta_star: largest_corner(inst, deltas)?,
            method: UnconstrainedMethod::FixedPoint,
            iterations: 0,
            converged: true,
        });
    }
    let done = |theta_star, iterations, converged| -> Result<UnconstrainedResult> {
        Ok(UnconstrainedResult {
            theta_star,
            method: UnconstrainedMethod::FixedPoint,
            iterations,
            converged,
        })
    };

    // selected entries in row-major order, the order the sums are taken in
    let entries: Vec<(usize, f64)> = inst
        .gains
        .iter()
        .enumerate()
        .filter(|(_, &b)| b > 0.0)
        .map(|(i, &b)| (i % inst.num_users, b))
        .collect();
    let mut levels = vec![0.0; inst.num_users];
    let mut active = vec![false; entries.len()];
    let mut fill = |theta: f64, active: &mut Vec<bool>| {
        for (lvl, (c, d)) in levels.iter_mut().zip(inst.weights.iter().zip(deltas)) {
            *lvl = water_level(c + d, theta);
        }
        for (a, &(k, b)) in active.iter_mut().zip(&entries) {
            *a = raw_power(levels[k], b) > 0.0;
        }
    };
    let mut sizes = vec![0usize; inst.num_users];
    let mut gain_sums = vec![0.0; inst.num_users];
    let mut closed_form = |active: &[bool]| {
        sizes.fill(0);
        gain_sums.fill(0.0);
        for (&(k, b), _) in entries.iter().zip(active).filter(|(_, &a)| a) {
            sizes[k] += 1;
            gain_sums[k] += b;
        }
        closed_form_from_sums(inst, deltas, &sizes, &gain_sums).ok_or(Error::EmptyActiveSets)
    };

    fill(theta, &mut active);
    while !active.iter().any(|&a| a) {
        theta *= 0.5;
        fill(theta, &mut active);
    }
    let mut last = vec![false; entries.len()];
    let mut before: Option<f64> = None;
    for iter in 0..max_iter {
        if iter > 0 {
            fill(theta, &mut active);
            if active == last {
                return done(theta, iter, true);
            }
        }
        let next = closed_form(&active)?;
        if before == Some(next) && next != theta {
            return done(next, iter + 1, false);
        }
        before = Some(theta);
        theta = next;
        std::mem::swap(&mut last, &mut active);
    }
    fill(theta, &mut active);
    let settled = active == last;
    done(theta, max_iter, settled)
}

/// Fixed point with the corner search as a fallback.
pub fn solve_unconstrained(
    inst: &ProblemInstance,
    deltas: &[f64],
    policy: FallbackPolicy,
) -> Result<UnconstrainedResult> {
    let mut fp_iterations = 0;
    if policy.fp_iter_cap > 0 {
        let fp = solve_fixed_point(inst, deltas, policy.fp_iter_cap)?;
        if fp.converged {
            return Ok(fp);
        }
        fp_iterations = fp.iterations;
    }
    let bin = solve_binary(inst, deltas)?;
    Ok(UnconstrainedResult {
        method: UnconstrainedMethod::FixedPointFallback,
        iterations: fp_iterations + bin.iterations,
        ..bin
    })
}
