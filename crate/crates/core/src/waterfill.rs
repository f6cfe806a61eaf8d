//! Primal recovery from the dual variables.
//!
//! For a power price `theta` and per-user rate prices `deltas`, every selected
//! entry receives the multi-level water-filling power
//! `p = [(c_k + delta_k) / (theta * beta * ln 2) - 1]^+`. Everything the
//! solvers need (active sets, corner points, the power residual and the two
//! closed-form multiplier updates) derives from that map.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Allocation, ProblemInstance};

/// Multiplier pair parameterizing a candidate solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    /// Price of the total power constraint.
    pub theta: f64,
    /// Price of each user's rate floor.
    pub deltas: Vec<f64>,
}

impl DualPoint {
    pub fn new(theta: f64, deltas: Vec<f64>) -> Self {
        Self { theta, deltas }
    }

    /// `theta` with every rate price at zero.
    pub fn unconstrained(inst: &ProblemInstance, theta: f64) -> Self {
        Self {
            theta,
            deltas: vec![0.0; inst.num_users],
        }
    }
}

/// Water level `(c + delta) / (theta ln 2)`; the entry power is `level / beta - 1`.
#[inline]
pub(crate) fn water_level(weight_plus_delta: f64, theta: f64) -> f64 {
    weight_plus_delta / (theta * LN_2)
}

#[inline]
pub(crate) fn raw_power(level: f64, beta: f64) -> f64 {
    level / beta - 1.0
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveTheta(theta))
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

/// Water-filling powers and rates at a dual point.
pub fn primal_from_dual(inst: &ProblemInstance, dual: &DualPoint) -> Result<Allocation> {
    check_theta(dual.theta)?;
    check_deltas(inst, &dual.deltas)?;
    let levels: Vec<f64> = inst
        .weights
        .iter()
        .zip(&dual.deltas)
        .map(|(c, d)| water_level(c + d, dual.theta))
        .collect();
    let powers = inst
        .gains
        .chunks(inst.num_users)
        .flat_map(|row| {
            row.iter().zip(&levels).map(|(&b, &lvl)| {
                if b > 0.0 {
                    raw_power(lvl, b).max(0.0)
                } else {
                    0.0
                }
            })
        })
        .collect();
    Allocation::from_powers(inst.num_subcarriers, inst.num_users, powers)
}

/// Water-filling powers at a dual point, restricted to a membership mask.
///
/// Entries outside the mask get no power. With the sets used to compute `theta`
/// in [`theta_closed_form`] the total power is exactly the budget, as long as
/// no entry inside the sets goes negative.
pub fn primal_on_mask(
    inst: &ProblemInstance,
    dual: &DualPoint,
    mask: &[bool],
) -> Result<Allocation> {
    check_theta(dual.theta)?;
    check_deltas(inst, &dual.deltas)?;
    if mask.len() != inst.gains.len() {
        return Err(Error::DimensionMismatch(format!(
            "mask of {} entries for {} gains",
            mask.len(),
            inst.gains.len()
        )));
    }
    let levels: Vec<f64> = inst
        .weights
        .iter()
        .zip(&dual.deltas)
        .map(|(c, d)| water_level(c + d, dual.theta))
        .collect();
    let k_users = inst.num_users;
    let powers = inst
        .gains
        .iter()
        .zip(mask)
        .enumerate()
        .map(|(i, (&b, &m))| {
            if m {
                raw_power(levels[i % k_users], b).max(0.0)
            } else {
                0.0
            }
        })
        .collect();
    Allocation::from_powers(inst.num_subcarriers, k_users, powers)
}

/// Subcarriers with strictly positive power, per user.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSets {
    pub sets: Vec<Vec<usize>>,
    pub sizes: Vec<usize>,
    /// Sum of gains over each user's set.
    pub gain_sums: Vec<f64>,
}

impl ActiveSets {
    /// Builds the sets from a row-major membership mask.
    ///
    /// Sums are accumulated per user in increasing subcarrier order, so two
    /// identical masks always produce bit-identical sums.
    pub fn from_mask(inst: &ProblemInstance, mask: &[bool]) -> Self {
        let k_users = inst.num_users;
        let mut sets = vec![Vec::new(); k_users];
        for (n, row) in mask.chunks(k_users).enumerate() {
            for (k, _) in row.iter().enumerate().filter(|(_, &m)| m) {
                sets[k].push(n);
            }
        }
        let (sizes, gain_sums) = mask_sums(inst, mask);
        Self {
            sets,
            sizes,
            gain_sums,
        }
    }

    /// Sum of `log2(gain)` over user `k`'s set.
    pub fn log_gain_sum(&self, inst: &ProblemInstance, k: usize) -> f64 {
        Self::user_stats(inst, k, &self.sets[k]).1
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.iter().all(|&s| s == 0)
    }

    pub fn total_size(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Membership mask in the instance layout.
    pub fn mask(&self, inst: &ProblemInstance) -> Vec<bool> {
        let mut mask = vec![false; inst.num_users * inst.num_subcarriers];
        for (k, set) in self.sets.iter().enumerate() {
            for &n in set {
                mask[inst.index(n, k)] = true;
            }
        }
        mask
    }

    /// Statistics of user `k` restricted to the given subcarriers.
    pub(crate) fn user_stats(inst: &ProblemInstance, k: usize, set: &[usize]) -> (f64, f64) {
        set.iter().fold((0.0, 0.0), |(s, l), &n| {
            let b = inst.gain(n, k);
            (s + b, l + b.log2())
        })
    }
}

/// Per-user set sizes and gain sums of a mask, without building the sets.
pub(crate) fn mask_sums(inst: &ProblemInstance, mask: &[bool]) -> (Vec<usize>, Vec<f64>) {
    let k_users = inst.num_users;
    let mut sizes = vec![0; k_users];
    let mut gain_sums = vec![0.0; k_users];
    for (n, row) in mask.chunks(k_users).enumerate() {
        for (k, _) in row.iter().enumerate().filter(|(_, &m)| m) {
            sizes[k] += 1;
            gain_sums[k] += inst.gain(n, k);
        }
    }
    (sizes, gain_sums)
}

/// Closed form from set sizes and gain sums; `None` when every set is empty.
pub(crate) fn closed_form_from_sums(
    inst: &ProblemInstance,
    deltas: &[f64],
    sizes: &[usize],
    gain_sums: &[f64],
) -> Option<f64> {
    let mut num = 0.0;
    let mut gains = 0.0;
    for k in 0..inst.num_users {
        if sizes[k] > 0 {
            num += sizes[k] as f64 * (inst.weights[k] + deltas[k]);
            gains += gain_sums[k];
        }
    }
    sizes
        .iter()
        .any(|&s| s > 0)
        .then(|| num / ((inst.power_budget + gains) * LN_2))
}

pub(crate) fn active_mask(inst: &ProblemInstance, theta: f64, deltas: &[f64]) -> Vec<bool> {
    let levels: Vec<f64> = inst
        .weights
        .iter()
        .zip(deltas)
        .map(|(c, d)| water_level(c + d, theta))
        .collect();
    inst.gains
        .chunks(inst.num_users)
        .flat_map(|row| {
            row.iter()
                .zip(&levels)
                .map(|(&b, &lvl)| b > 0.0 && raw_power(lvl, b) > 0.0)
        })
        .collect()
}

/// Active sets at a dual point.
///
/// An entry whose corner equals `theta` gets zero power and is excluded, so
/// membership always agrees with [`primal_from_dual`].
pub fn active_sets(inst: &ProblemInstance, dual: &DualPoint) -> Result<ActiveSets> {
    check_theta(dual.theta)?;
    check_deltas(inst, &dual.deltas)?;
    Ok(ActiveSets::from_mask(
        inst,
        &active_mask(inst, dual.theta, &dual.deltas),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    pub theta: f64,
    pub user: usize,
    pub subcarrier: usize,
}

/// Corner points `(c_k + delta_k) / (beta ln 2)`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerList {
    pub corners: Vec<Corner>,
}

impl CornerList {
    pub fn len(&self) -> usize {
        self.corners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corners.is_empty()
    }

    pub fn largest(&self) -> Option<f64> {
        self.corners.last().map(|c| c.theta)
    }
}

/// Sorted corner points; ties are ordered by user, then subcarrier.
pub fn corner_points(inst: &ProblemInstance, deltas: &[f64]) -> Result<CornerList> {
    check_deltas(inst, deltas)?;
    let mut corners = Vec::with_capacity(inst.num_selected());
    for n in 0..inst.num_subcarriers {
        for k in inst.selected_users(n) {
            corners.push(Corner {
                theta: (inst.weights[k] + deltas[k]) / (inst.gain(n, k) * LN_2),
                user: k,
                subcarrier: n,
            });
        }
    }
    corners.sort_by(|a, b| {
        a.theta
            .total_cmp(&b.theta)
            .then(a.user.cmp(&b.user))
            .then(a.subcarrier.cmp(&b.subcarrier))
    });
    Ok(CornerList { corners })
}

/// Power spent by the water-filling allocation at `(theta, deltas)`.
pub(crate) fn spent_power(inst: &ProblemInstance, theta: f64, deltas: &[f64]) -> f64 {
    let k_users = inst.num_users;
    let mut levels = Vec::with_capacity(k_users);
    levels.extend(
        inst.weights
            .iter()
            .zip(deltas)
            .map(|(c, d)| water_level(c + d, theta)),
    );
    let mut total = 0.0;
    for row in inst.gains.chunks(k_users) {
        for (&b, &lvl) in row.iter().zip(&levels) {
            if b > 0.0 {
                total += b * raw_power(lvl, b).max(0.0);
            }
        }
    }
    total
}

/// `g1(theta) - P`: power spent at `(theta, deltas)` minus the budget.
///
/// Continuous and nonincreasing in `theta`, with kinks at the corner points.
pub fn power_residual(inst: &ProblemInstance, dual: &DualPoint) -> Result<f64> {
    check_theta(dual.theta)?;
    check_deltas(inst, &dual.deltas)?;
    Ok(spent_power(inst, dual.theta, &dual.deltas) - inst.power_budget)
}

/// The power-equality solution for `theta` when the active sets are held fixed.
pub fn theta_closed_form(
    inst: &ProblemInstance,
    deltas: &[f64],
    active: &ActiveSets,
) -> Result<f64> {
    check_deltas(inst, deltas)?;
    closed_form_from_sums(inst, deltas, &active.sizes, &active.gain_sums)
        .ok_or(Error::EmptyActiveSets)
}

/// Smallest `delta_k` that brings user `k` exactly to its floor on the given set.
///
/// Evaluated in log space: `[theta ln2 * 2^((d_k + sum log2 beta) / sigma) - c_k]^+`.
pub fn delta_from_rate_floor(
    inst: &ProblemInstance,
    k: usize,
    theta: f64,
    active: &ActiveSets,
) -> Result<f64> {
    check_theta(theta)?;
    delta_for_floor(
        inst,
        k,
        theta,
        active.sizes[k],
        active.log_gain_sum(inst, k),
    )
}

/// [`delta_from_rate_floor`] from the size and log-gain sum of the user's set.
pub(crate) fn delta_for_floor(
    inst: &ProblemInstance,
    k: usize,
    theta: f64,
    sigma: usize,
    log_gain_sum: f64,
) -> Result<f64> {
    let floor = inst.rate_floors[k];
    if sigma == 0 {
        return if floor > 0.0 {
            Err(Error::FloorUnreachable { user: k })
        } else {
            Ok(0.0)
        };
    }
    let log_level = (floor + log_gain_sum) / sigma as f64;
    Ok((theta * LN_2 * log_level.exp2() - inst.weights[k]).max(0.0))
}

/// Rate of user `k` at water level `level`, matching [`primal_from_dual`] bit for bit.
pub(crate) fn rate_at_level(inst: &ProblemInstance, k: usize, level: f64) -> f64 {
    inst.user_gains(k)
        .map(|(_, b)| raw_power(level, b))
        .filter(|&p| p > 0.0)
        .map(|p| (1.0 + p).log2())
        .sum()
}

/// Minimum-power allocation reaching a target rate for a single user.
#[derive(Debug, Clone, PartialEq)]
pub struct MinPowerFill {
    /// Water level: each member subcarrier gets `level / beta - 1`.
    pub level: f64,
    /// Total weighted power `sum (level - beta)`.
    pub power: f64,
    /// Member subcarriers, ascending.
    pub set: Vec<usize>,
}

/// Level-search over a user's gains sorted ascending.
///
/// Returns `(log2 level, count)` such that the `count` best subcarriers filled
/// to that level carry exactly `rate` bits. The scan starts at `start`
/// subcarriers (at least one).
pub(crate) fn level_for_rate(sorted_log_gains: &[f64], rate: f64, start: usize) -> (f64, usize) {
    debug_assert!(!sorted_log_gains.is_empty());
    let n = sorted_log_gains.len();
    let start = start.clamp(1, n);
    let mut sum: f64 = sorted_log_gains[..start].iter().sum();
    let mut j = start;
    loop {
        let level = (rate + sum) / j as f64;
        if j == n || level <= sorted_log_gains[j] {
            return (level, j);
        }
        sum += sorted_log_gains[j];
        j += 1;
    }
}

/// Sorted `(subcarrier, gain)` pairs of user `k`: best channel (smallest gain) first.
pub(crate) fn sorted_user_gains(inst: &ProblemInstance, k: usize) -> Vec<(usize, f64)> {
    let mut g: Vec<(usize, f64)> = inst.user_gains(k).collect();
    g.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    g
}

/// Single-user water-filling that meets `rate` with the least power.
pub fn min_power_fill(inst: &ProblemInstance, k: usize, rate: f64) -> Result<MinPowerFill> {
    if rate <= 0.0 {
        return Ok(MinPowerFill {
            level: 0.0,
            power: 0.0,
            set: Vec::new(),
        });
    }
    let gains = sorted_user_gains(inst, k);
    if gains.is_empty() {
        return Err(Error::FloorUnreachable { user: k });
    }
    let logs: Vec<f64> = gains.iter().map(|(_, b)| b.log2()).collect();
    let (log_level, count) = level_for_rate(&logs, rate, 1);
    let level = log_level.exp2();
    let power = gains[..count].iter().map(|(_, b)| level - b).sum();
    let mut set: Vec<usize> = gains[..count].iter().map(|(n, _)| *n).collect();
    set.sort_unstable();
    Ok(MinPowerFill { level, power, set })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::user_rates;

    fn single(beta: f64, budget: f64, floor: f64) -> ProblemInstance {
        let rt = if floor > 0.0 { vec![0] } else { vec![] };
        ProblemInstance::new(1, 1, 1, budget, vec![1.0], vec![beta], vec![floor], rt).unwrap()
    }

    fn random_instance(seed: u64, k: usize, n: usize) -> ProblemInstance {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let gains = (0..n * k)
            .map(|_| {
                if rng.random::<f64>() < 0.4 {
                    rng.random_range(0.05..3.0)
                } else {
                    0.0
                }
            })
            .collect();
        let weights = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        ProblemInstance::new(k, n, k, 4.0, weights, gains, vec![0.0; k], vec![]).unwrap()
    }

    #[test]
    fn allocation_vanishes_at_the_corner() {
        let inst = single(1.0, 1.0, 0.0);
        let a = primal_from_dual(&inst, &DualPoint::new(1.0 / LN_2, vec![0.0])).unwrap();
        assert!(a.powers[0].abs() < 1e-15);
    }

    #[test]
    fn unit_power_at_half_corner() {
        let inst = single(1.0, 1.0, 0.0);
        let a = primal_from_dual(&inst, &DualPoint::new(1.0 / (2.0 * LN_2), vec![0.0])).unwrap();
        assert!((a.powers[0] - 1.0).abs() < 1e-15);
        assert!((a.rates[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn negative_raw_power_is_clamped() {
        let inst = single(2.0, 1.0, 0.0);
        let a = primal_from_dual(&inst, &DualPoint::new(1.0 / LN_2, vec![0.0])).unwrap();
        assert_eq!(a.powers[0], 0.0);
    }

    #[test]
    fn theta_must_be_positive() {
        let inst = single(1.0, 1.0, 0.0);
        for theta in [0.0, -1.0, f64::NAN] {
            assert!(matches!(
                primal_from_dual(&inst, &DualPoint::new(theta, vec![0.0])),
                Err(Error::NonPositiveTheta(_))
            ));
        }
    }

    #[test]
    fn active_sets_extremes() {
        let inst = random_instance(3, 5, 7);
        let corners = corner_points(&inst, &[0.0; 5]).unwrap();
        let low = corners.corners[0].theta * 0.5;
        let all = active_sets(&inst, &DualPoint::unconstrained(&inst, low)).unwrap();
        for k in 0..5 {
            assert_eq!(all.sizes[k], inst.user_gains(k).count());
        }
        let high = corners.largest().unwrap() * 1.01;
        let none = active_sets(&inst, &DualPoint::unconstrained(&inst, high)).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn corners_two_gains() {
        let inst = ProblemInstance::new(1, 2, 1, 1.0, vec![1.0], vec![1.0, 2.0], vec![0.0], vec![])
            .unwrap();
        let c = corner_points(&inst, &[0.0]).unwrap();
        assert_eq!(c.len(), 2);
        assert!((c.corners[0].theta - 1.0 / (2.0 * LN_2)).abs() < 1e-15);
        assert!((c.corners[1].theta - 1.0 / LN_2).abs() < 1e-15);
    }

    #[test]
    fn corner_ties_break_by_user_then_subcarrier() {
        let inst = ProblemInstance::new(
            2,
            2,
            2,
            1.0,
            vec![1.0, 1.0],
            vec![1.0; 4],
            vec![0.0; 2],
            vec![],
        )
        .unwrap();
        let c = corner_points(&inst, &[0.0, 0.0]).unwrap();
        let order: Vec<(usize, usize)> = c.corners.iter().map(|c| (c.user, c.subcarrier)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn residual_analytic_root_and_tail() {
        let inst = single(1.0, 1.0, 0.0);
        let r = power_residual(&inst, &DualPoint::new(1.0 / (2.0 * LN_2), vec![0.0])).unwrap();
        assert!(r.abs() < 1e-15);
        let r = power_residual(&inst, &DualPoint::new(2.0, vec![0.0])).unwrap();
        assert_eq!(r, -1.0);
    }

    #[test]
    fn closed_form_theta_examples() {
        let inst = single(1.0, 1.0, 0.0);
        let act = active_sets(&inst, &DualPoint::new(0.1, vec![0.0])).unwrap();
        let t = theta_closed_form(&inst, &[0.0], &act).unwrap();
        assert!((t - 1.0 / (2.0 * LN_2)).abs() < 1e-15);

        let two = ProblemInstance::new(
            2,
            1,
            2,
            2.0,
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![0.0; 2],
            vec![],
        )
        .unwrap();
        let act = active_sets(&two, &DualPoint::new(0.1, vec![0.0, 0.0])).unwrap();
        let t = theta_closed_form(&two, &[0.0, 0.0], &act).unwrap();
        assert!((t - 2.0 / (4.0 * LN_2)).abs() < 1e-15);

        let empty = ActiveSets::from_mask(&two, &[false, false]);
        assert_eq!(
            theta_closed_form(&two, &[0.0, 0.0], &empty),
            Err(Error::EmptyActiveSets)
        );
    }

    #[test]
    fn delta_examples() {
        // floor 0 and theta below the corner: no price needed
        let inst = single(1.0, 1.0, 0.0);
        let act = active_sets(&inst, &DualPoint::new(0.5, vec![0.0])).unwrap();
        assert_eq!(delta_from_rate_floor(&inst, 0, 0.5, &act).unwrap(), 0.0);

        let inst = single(1.0, 1.0, 1.0);
        let act = ActiveSets::from_mask(&inst, &[true]);
        let d = delta_from_rate_floor(&inst, 0, 1.0 / LN_2, &act).unwrap();
        assert!((d - 1.0).abs() < 1e-14);

        let empty = ActiveSets::from_mask(&inst, &[false]);
        assert_eq!(
            delta_from_rate_floor(&inst, 0, 1.0, &empty),
            Err(Error::FloorUnreachable { user: 0 })
        );
    }

    #[test]
    fn delta_round_trip_single_user() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..12);
            let gains: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..4.0)).collect();
            let floor = rng.random_range(0.5..20.0);
            let inst =
                ProblemInstance::new(1, n, 1, 5.0, vec![1.0], gains, vec![floor], vec![0]).unwrap();
            let theta = rng.random_range(0.2..2.0);
            // grow the set until consistent (all gains enter at a high enough level)
            let mut mask = active_mask(&inst, theta, &[0.0]);
            if !mask.iter().any(|&m| m) {
                let best = (0..n)
                    .min_by(|&a, &b| inst.gain(a, 0).total_cmp(&inst.gain(b, 0)))
                    .unwrap();
                mask[best] = true;
            }
            let delta = loop {
                let act = ActiveSets::from_mask(&inst, &mask);
                let d = delta_from_rate_floor(&inst, 0, theta, &act).unwrap();
                let next = active_mask(&inst, theta, &[d]);
                if next == mask {
                    break d;
                }
                mask = next;
            };
            let a = primal_from_dual(&inst, &DualPoint::new(theta, vec![delta])).unwrap();
            let r = user_rates(&inst, &a).unwrap()[0];
            if delta > 0.0 {
                assert!((r - floor).abs() < 1e-9, "rate {r} vs floor {floor}");
            } else {
                assert!(r >= floor - 1e-9);
            }
        }
    }

    #[test]
    fn active_sets_match_positive_powers() {
        for seed in 0..20 {
            let inst = random_instance(seed, 6, 9);
            let dual = DualPoint::new(
                0.3 + 0.1 * seed as f64,
                (0..6).map(|k| 0.1 * k as f64).collect(),
            );
            let a = primal_from_dual(&inst, &dual).unwrap();
            let act = active_sets(&inst, &dual).unwrap();
            let from_powers: Vec<bool> = a.powers.iter().map(|&p| p > 0.0).collect();
            assert_eq!(act.mask(&inst), from_powers);
            for k in 0..6 {
                let (s, _) = ActiveSets::user_stats(&inst, k, &act.sets[k]);
                assert_eq!(s, act.gain_sums[k]);
            }
        }
    }

    #[test]
    fn residual_nonincreasing_on_grid() {
        for seed in 0..10 {
            let inst = random_instance(100 + seed, 5, 8);
            let mut prev = f64::INFINITY;
            for i in 1..400 {
                let theta = 0.01 * i as f64;
                let r = power_residual(&inst, &DualPoint::unconstrained(&inst, theta)).unwrap();
                assert!(r <= prev);
                prev = r;
            }
        }
    }

    #[test]
    fn closed_form_self_consistent() {
        for seed in 0..20 {
            let inst = random_instance(200 + seed, 6, 10);
            let deltas = vec![0.0; 6];
            // iterate until the sets settle, then check the residual
            let mut theta = 1.0;
            for _ in 0..100 {
                let act = active_sets(&inst, &DualPoint::new(theta, deltas.clone())).unwrap();
                if act.is_empty() {
                    theta *= 0.5;
                    continue;
                }
                let next = theta_closed_form(&inst, &deltas, &act).unwrap();
                if next == theta {
                    break;
                }
                theta = next;
            }
            let r = power_residual(&inst, &DualPoint::new(theta, deltas)).unwrap();
            assert!(r.abs() < 1e-10 * inst.power_budget, "residual {r}");
        }
    }

    #[test]
    fn min_power_fill_matches_brute_force_prefix() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(1..10);
            let gains: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..5.0)).collect();
            let floor = rng.random_range(0.1..15.0);
            let inst =
                ProblemInstance::new(1, n, 1, 5.0, vec![1.0], gains.clone(), vec![floor], vec![0])
                    .unwrap();
            let fill = min_power_fill(&inst, 0, floor).unwrap();
            // rate at the level equals the target
            let rate: f64 = gains.iter().map(|b| (fill.level / b).log2().max(0.0)).sum();
            assert!((rate - floor).abs() < 1e-9);
            let power: f64 = gains.iter().map(|b| (fill.level - b).max(0.0)).sum();
            assert!((power - fill.power).abs() < 1e-9 * power.max(1.0));
        }
    }
}
