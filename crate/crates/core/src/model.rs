//! Problem data and the evaluation primitives shared by every solver.
//!
//! An instance describes one downlink frame: `K` users, `N` subcarriers and
//! `M` base-station antennas. The zero-forcing precoder turns each selected
//! (subcarrier, user) pair into an interference-free channel whose power cost
//! is the effective gain `beta[n][k]`; a zero gain means the user is not
//! scheduled on that subcarrier. Rates are in bits per OFDM symbol.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerances used when judging feasibility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Power overshoot allowed, relative to the budget.
    pub power: f64,
    /// Rate deficit allowed, relative to `max(floor, 1)`.
    pub rate: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            power: 1e-8,
            rate: 1e-8,
        }
    }
}

impl Tolerances {
    pub fn uniform(tol: f64) -> Self {
        Self {
            power: tol,
            rate: tol,
        }
    }
}

/// All fixed data of one power allocation problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "InstanceWire", try_from = "InstanceWire")]
pub struct ProblemInstance {
    pub num_users: usize,
    pub num_subcarriers: usize,
    pub num_antennas: usize,
    /// Total transmit power budget (linear units).
    pub power_budget: f64,
    /// Scheduling weight per user.
    pub weights: Vec<f64>,
    /// Effective gains, row-major `N x K`.
    pub gains: Vec<f64>,
    /// Minimum rate per user; zero for best-effort users.
    pub rate_floors: Vec<f64>,
    /// Real-time users, sorted and 0-based.
    pub rt_users: Vec<usize>,
}

impl ProblemInstance {
    /// Builds an instance from row-major gains and checks shapes.
    ///
    /// Shape errors fail here; value-level problems (too many users on a
    /// subcarrier, floors on best-effort users, ...) are left to
    /// [`ProblemInstance::validate`].
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        num_users: usize,
        num_subcarriers: usize,
        num_antennas: usize,
        power_budget: f64,
        weights: Vec<f64>,
        gains: Vec<f64>,
        rate_floors: Vec<f64>,
        mut rt_users: Vec<usize>,
    ) -> Result<Self> {
        if num_users == 0 || num_subcarriers == 0 || num_antennas == 0 {
            return Err(Error::DimensionMismatch(
                "K, N and M must all be positive".into(),
            ));
        }
        if weights.len() != num_users {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} users",
                weights.len(),
                num_users
            )));
        }
        if rate_floors.len() != num_users {
            return Err(Error::DimensionMismatch(format!(
                "{} rate floors for {} users",
                rate_floors.len(),
                num_users
            )));
        }
        if gains.len() != num_users * num_subcarriers {
            return Err(Error::DimensionMismatch(format!(
                "{} gains for a {}x{} grid",
                gains.len(),
                num_subcarriers,
                num_users
            )));
        }
        rt_users.sort_unstable();
        Ok(Self {
            num_users,
            num_subcarriers,
            num_antennas,
            power_budget,
            weights,
            gains,
            rate_floors,
            rt_users,
        })
    }

    #[inline]
    pub fn index(&self, n: usize, k: usize) -> usize {
        n * self.num_users + k
    }

    #[inline]
    pub fn gain(&self, n: usize, k: usize) -> f64 {
        self.gains[n * self.num_users + k]
    }

    pub fn is_rt(&self, k: usize) -> bool {
        self.rt_users.binary_search(&k).is_ok()
    }

    /// Users scheduled on subcarrier `n` (positive gain).
    pub fn selected_users(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.gains[n * self.num_users..(n + 1) * self.num_users];
        row.iter()
            .enumerate()
            .filter(|(_, &b)| b > 0.0)
            .map(|(k, _)| k)
    }

    /// Positive gains of user `k` as `(subcarrier, gain)` pairs.
    pub fn user_gains(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.num_subcarriers).filter_map(move |n| {
            let b = self.gain(n, k);
            (b > 0.0).then_some((n, b))
        })
    }

    /// Number of selected (subcarrier, user) pairs.
    pub fn num_selected(&self) -> usize {
        self.gains.iter().filter(|&&b| b > 0.0).count()
    }

    /// Real-time users whose floor is strictly positive.
    pub fn constrained_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.rt_users
            .iter()
            .copied()
            .filter(|&k| self.rate_floors.get(k).is_some_and(|&d| d > 0.0))
    }

    /// Copy of the instance with new rate floors.
    pub fn with_floors(&self, rate_floors: Vec<f64>) -> Result<Self> {
        if rate_floors.len() != self.num_users {
            return Err(Error::DimensionMismatch(format!(
                "{} rate floors for {} users",
                rate_floors.len(),
                self.num_users
            )));
        }
        Ok(Self {
            rate_floors,
            ..self.clone()
        })
    }

    /// Reports every invariant violation; an empty list means well-formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (k_users, n_sub) = (self.num_users, self.num_subcarriers);

        if !(self.power_budget.is_finite() && self.power_budget > 0.0) {
            out.push(Violation::NonPositiveBudget(self.power_budget));
        }
        for (k, &c) in self.weights.iter().enumerate() {
            if !(c.is_finite() && c > 0.0) {
                out.push(Violation::NonPositiveWeight { user: k, weight: c });
            }
        }
        for n in 0..n_sub {
            let mut count = 0;
            for k in 0..k_users {
                let b = self.gain(n, k);
                if !b.is_finite() || b < 0.0 {
                    out.push(Violation::BadGain {
                        subcarrier: n,
                        user: k,
                        gain: b,
                    });
                } else if b > 0.0 {
                    count += 1;
                }
            }
            if count > self.num_antennas {
                out.push(Violation::TooManyUsers {
                    subcarrier: n,
                    selected: count,
                    antennas: self.num_antennas,
                });
            }
        }
        let mut prev = None;
        for &k in &self.rt_users {
            if k >= k_users {
                out.push(Violation::RtUserOutOfRange { user: k });
            }
            if prev == Some(k) {
                out.push(Violation::DuplicateRtUser { user: k });
            }
            prev = Some(k);
        }
        for (k, &d) in self.rate_floors.iter().enumerate() {
            if !(d.is_finite() && d >= 0.0) {
                out.push(Violation::BadFloor { user: k, floor: d });
            } else if d > 0.0 && !self.is_rt(k) {
                out.push(Violation::FloorOnBestEffortUser { user: k, floor: d });
            }
        }
        out
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInstance(e.to_string()))
    }

    fn check_shape(&self, alloc: &Allocation) -> Result<()> {
        if alloc.num_users != self.num_users || alloc.num_subcarriers != self.num_subcarriers {
            return Err(Error::DimensionMismatch(format!(
                "allocation is {}x{}, instance is {}x{}",
                alloc.num_subcarriers, alloc.num_users, self.num_subcarriers, self.num_users
            )));
        }
        Ok(())
    }
}

/// One broken instance invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveBudget(f64),
    NonPositiveWeight {
        user: usize,
        weight: f64,
    },
    BadGain {
        subcarrier: usize,
        user: usize,
        gain: f64,
    },
    TooManyUsers {
        subcarrier: usize,
        selected: usize,
        antennas: usize,
    },
    RtUserOutOfRange {
        user: usize,
    },
    DuplicateRtUser {
        user: usize,
    },
    BadFloor {
        user: usize,
        floor: f64,
    },
    FloorOnBestEffortUser {
        user: usize,
        floor: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonPositiveBudget(p) => write!(f, "power budget {p} is not positive"),
            Self::NonPositiveWeight { user, weight } => {
                write!(f, "weight of user {user} is {weight}, must be positive")
            }
            Self::BadGain {
                subcarrier,
                user,
                gain,
            } => {
                write!(
                    f,
                    "gain ({subcarrier},{user}) = {gain} is negative or not finite"
                )
            }
            Self::TooManyUsers {
                subcarrier,
                selected,
                antennas,
            } => write!(
                f,
                "g_n exceeds M on subcarrier {subcarrier}: {selected} users for {antennas} antennas"
            ),
            Self::RtUserOutOfRange { user } => write!(f, "real-time user {user} out of range"),
            Self::DuplicateRtUser { user } => write!(f, "real-time user {user} listed twice"),
            Self::BadFloor { user, floor } => {
                write!(
                    f,
                    "rate floor of user {user} is {floor}, must be finite and >= 0"
                )
            }
            Self::FloorOnBestEffortUser { user, floor } => {
                write!(f, "floor on non-RT user {user} ({floor} bits)")
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceWire {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "P")]
    p: f64,
    c: Vec<f64>,
    beta: Vec<Vec<f64>>,
    d: Vec<f64>,
    rt: Vec<usize>,
}

impl From<ProblemInstance> for InstanceWire {
    fn from(inst: ProblemInstance) -> Self {
        let beta = inst
            .gains
            .chunks(inst.num_users)
            .map(<[f64]>::to_vec)
            .collect();
        Self {
            k: inst.num_users,
            n: inst.num_subcarriers,
            m: inst.num_antennas,
            p: inst.power_budget,
            c: inst.weights,
            beta,
            d: inst.rate_floors,
            rt: inst.rt_users,
        }
    }
}

impl TryFrom<InstanceWire> for ProblemInstance {
    type Error = Error;

    fn try_from(w: InstanceWire) -> Result<Self> {
        if w.beta.len() != w.n || w.beta.iter().any(|row| row.len() != w.k) {
            return Err(Error::DimensionMismatch(format!(
                "beta must be {} rows of {} entries",
                w.n, w.k
            )));
        }
        let gains = w.beta.into_iter().flatten().collect();
        ProblemInstance::new(w.k, w.n, w.m, w.p, w.c, gains, w.d, w.rt)
    }
}

/// Primal powers and the per-entry rates they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub num_users: usize,
    pub num_subcarriers: usize,
    /// Row-major `N x K`.
    pub powers: Vec<f64>,
    /// `log2(1 + power)` per entry.
    pub rates: Vec<f64>,
}

impl Allocation {
    pub fn zeros(inst: &ProblemInstance) -> Self {
        let len = inst.num_users * inst.num_subcarriers;
        Self {
            num_users: inst.num_users,
            num_subcarriers: inst.num_subcarriers,
            powers: vec![0.0; len],
            rates: vec![0.0; len],
        }
    }

    pub fn from_powers(num_subcarriers: usize, num_users: usize, powers: Vec<f64>) -> Result<Self> {
        if powers.len() != num_users * num_subcarriers {
            return Err(Error::DimensionMismatch(format!(
                "{} powers for a {}x{} grid",
                powers.len(),
                num_subcarriers,
                num_users
            )));
        }
        let rates = powers
            .iter()
            .map(|&p| if p == 0.0 { 0.0 } else { (1.0 + p).log2() })
            .collect();
        Ok(Self {
            num_users,
            num_subcarriers,
            powers,
            rates,
        })
    }

    #[inline]
    pub fn power(&self, n: usize, k: usize) -> f64 {
        self.powers[n * self.num_users + k]
    }

    #[inline]
    pub fn rate(&self, n: usize, k: usize) -> f64 {
        self.rates[n * self.num_users + k]
    }
}

/// Total weighted power `sum beta * p`.
pub fn total_power(inst: &ProblemInstance, alloc: &Allocation) -> Result<f64> {
    inst.check_shape(alloc)?;
    Ok(inst
        .gains
        .iter()
        .zip(&alloc.powers)
        .map(|(b, p)| b * p)
        .sum())
}

/// Per-user rate, summed over subcarriers.
pub fn user_rates(inst: &ProblemInstance, alloc: &Allocation) -> Result<Vec<f64>> {
    inst.check_shape(alloc)?;
    let mut rates = vec![0.0; inst.num_users];
    for row in alloc.rates.chunks(inst.num_users) {
        for (acc, r) in rates.iter_mut().zip(row) {
            *acc += r;
        }
    }
    Ok(rates)
}

/// Weighted sum rate.
pub fn objective(inst: &ProblemInstance, alloc: &Allocation) -> Result<f64> {
    Ok(user_rates(inst, alloc)?
        .iter()
        .zip(&inst.weights)
        .map(|(r, c)| c * r)
        .sum())
}

/// Outcome of checking an allocation against the power and rate constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub power_used: f64,
    /// Budget minus power used; negative when the budget is exceeded.
    pub power_slack: f64,
    /// `max(floor - rate, 0)` per user.
    pub rate_deficits: Vec<f64>,
    pub feasible: bool,
}

impl FeasibilityReport {
    /// Largest deficit relative to `max(floor, 1)`.
    pub fn max_relative_deficit(&self, inst: &ProblemInstance) -> f64 {
        self.rate_deficits
            .iter()
            .zip(&inst.rate_floors)
            .map(|(def, d)| def / d.max(1.0))
            .fold(0.0, f64::max)
    }

    pub fn max_deficit(&self) -> f64 {
        self.rate_deficits.iter().copied().fold(0.0, f64::max)
    }
}

pub fn check_feasibility(
    inst: &ProblemInstance,
    alloc: &Allocation,
    tol: Tolerances,
) -> Result<FeasibilityReport> {
    let power_used = total_power(inst, alloc)?;
    let rates = user_rates(inst, alloc)?;
    let power_slack = inst.power_budget - power_used;
    let rate_deficits: Vec<f64> = inst
        .rate_floors
        .iter()
        .zip(&rates)
        .map(|(d, r)| (d - r).max(0.0))
        .collect();
    let power_ok = power_slack >= -tol.power * inst.power_budget;
    let rates_ok = rate_deficits
        .iter()
        .zip(&inst.rate_floors)
        .all(|(def, d)| *def <= tol.rate * d.max(1.0));
    Ok(FeasibilityReport {
        power_used,
        power_slack,
        rate_deficits,
        feasible: power_ok && rates_ok,
    })
}
