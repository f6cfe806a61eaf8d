//! Rayleigh test cases: channels, user selection, gains and rate floors.
//!
//! Every random draw comes from a ChaCha stream keyed by `(n, k)`, so changing
//! `K` or `N` leaves the channels of the remaining pairs untouched.

use nalgebra::{Complex, DMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ProblemInstance;
use crate::unconstrained::{solve_unconstrained, FallbackPolicy};
use crate::waterfill::{min_power_fill, primal_from_dual, DualPoint};

type C64 = Complex<f64>;

/// Gram matrices with a larger condition number are re-drawn.
pub const MAX_CONDITION: f64 = 1e12;
const MAX_REDRAWS: u64 = 32;

/// Channels and per-subcarrier selections.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub num_subcarriers: usize,
    pub num_users: usize,
    pub num_antennas: usize,
    /// `h_{n,k}` at `[(n * K + k) * M ..][..M]`.
    pub channels: Vec<C64>,
    /// Selected users per subcarrier, in selection order.
    pub selections: Vec<Vec<usize>>,
    pub seed: u64,
}

impl ChannelSet {
    pub fn channel(&self, n: usize, k: usize) -> &[C64] {
        let m = self.num_antennas;
        let start = (n * self.num_users + k) * m;
        &self.channels[start..start + m]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    /// Floors are a fraction of what each RT user gets when only RT users are served.
    Scaled,
    /// Floors in fixed ratios across groups, scaled to the feasibility limit.
    FixedRatio,
}

impl BoundMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Scaled => "scaled",
            Self::FixedRatio => "fixed_ratio",
        }
    }
}

fn default_ratios() -> Vec<u32> {
    vec![1, 4, 16]
}

fn default_alpha() -> f64 {
    0.3
}

/// Parameters of one generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(rename = "K")]
    pub num_users: usize,
    #[serde(rename = "N")]
    pub num_subcarriers: usize,
    #[serde(rename = "M")]
    pub num_antennas: usize,
    #[serde(rename = "P")]
    pub power_budget: f64,
    /// Users `0..R` are real-time.
    #[serde(rename = "R")]
    pub num_rt: usize,
    pub mode: BoundMode,
    pub scale: f64,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<u32>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioSpec {
    /// Shape `(K, N, M, P, R)` with scaled floors at `scale`.
    pub fn scaled(shape: (usize, usize, usize, f64, usize), scale: f64, seed: u64) -> Self {
        let (k, n, m, p, r) = shape;
        Self {
            num_users: k,
            num_subcarriers: n,
            num_antennas: m,
            power_budget: p,
            num_rt: r,
            mode: BoundMode::Scaled,
            scale,
            ratios: default_ratios(),
            alpha: default_alpha(),
            seed,
        }
    }

    pub fn fixed_ratio(shape: (usize, usize, usize, f64, usize), scale: f64, seed: u64) -> Self {
        Self {
            mode: BoundMode::FixedRatio,
            ..Self::scaled(shape, scale, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.num_users == 0 || self.num_subcarriers == 0 || self.num_antennas == 0 {
            return bad("K, N and M must be positive".into());
        }
        if !(self.power_budget > 0.0 && self.power_budget.is_finite()) {
            return bad(format!(
                "power budget {} must be positive",
                self.power_budget
            ));
        }
        if self.num_rt > self.num_users {
            return bad(format!(
                "R = {} exceeds K = {}",
                self.num_rt, self.num_users
            ));
        }
        if !(0.0..=1.0).contains(&self.scale) {
            return bad(format!("scale {} outside [0, 1]", self.scale));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if self.mode == BoundMode::FixedRatio
            && (self.ratios.is_empty() || self.ratios.contains(&0))
        {
            return bad("ratios must be nonempty and positive".into());
        }
        Ok(())
    }
}

/// Provenance written next to each generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub alpha: f64,
    pub mode: BoundMode,
    pub scale: f64,
    /// Largest feasible multiplier of the base floors (fixed-ratio mode only).
    pub gamma: Option<f64>,
    /// RT users per floor group.
    pub groups: Vec<Vec<usize>>,
}

fn draw_channel(seed: u64, attempt: u64, n: usize, k: usize, m: usize) -> Vec<C64> {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
    rng.set_stream(((n as u64) << 32) | k as u64);
    let sd = std::f64::consts::FRAC_1_SQRT_2;
    (0..m)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            C64::new(sd * re, sd * im)
        })
        .collect()
}

fn draw_subcarrier(set: &mut ChannelSet, n: usize, attempt: u64) {
    let m = set.num_antennas;
    for k in 0..set.num_users {
        let h = draw_channel(set.seed, attempt, n, k, m);
        let start = (n * set.num_users + k) * m;
        set.channels[start..start + m].copy_from_slice(&h);
    }
}

/// CN(0, 1) channels for every (subcarrier, user, antenna); no selection yet.
pub fn gen_channels(spec: &ScenarioSpec) -> Result<ChannelSet> {
    spec.validate()?;
    let mut set = ChannelSet {
        num_subcarriers: spec.num_subcarriers,
        num_users: spec.num_users,
        num_antennas: spec.num_antennas,
        channels: vec![
            C64::new(0.0, 0.0);
            spec.num_subcarriers * spec.num_users * spec.num_antennas
        ],
        selections: vec![Vec::new(); spec.num_subcarriers],
        seed: spec.seed,
    };
    for n in 0..spec.num_subcarriers {
        draw_subcarrier(&mut set, n, 0);
    }
    Ok(set)
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `a^H b`.
fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Normalized correlation `|a^H b| / (|a| |b|)`.
pub fn correlation(a: &[C64], b: &[C64]) -> f64 {
    inner(a, b).norm() / (norm_sqr(a) * norm_sqr(b)).sqrt()
}

/// Greedy semiorthogonal selection on one subcarrier.
fn sus_subcarrier(set: &ChannelSet, n: usize, alpha: f64) -> Vec<usize> {
    let m = set.num_antennas;
    let mut basis: Vec<Vec<C64>> = Vec::new();
    let mut selected = Vec::new();
    let mut candidates: Vec<usize> = (0..set.num_users).collect();
    while selected.len() < m && !candidates.is_empty() {
        let mut best: Option<(usize, f64, Vec<C64>)> = None;
        let mut survivors = Vec::with_capacity(candidates.len());
        for &k in &candidates {
            let h = set.channel(n, k);
            let total = norm_sqr(h);
            if total == 0.0 {
                continue;
            }
            let mut g = h.to_vec();
            for q in &basis {
                let c = inner(q, h);
                for (gi, qi) in g.iter_mut().zip(q) {
                    *gi -= c * qi;
                }
            }
            let residual = norm_sqr(&g);
            // correlation with the selected span, from the projection
            let corr = (1.0 - residual / total).max(0.0).sqrt();
            if !basis.is_empty() && corr > alpha {
                continue;
            }
            survivors.push(k);
            if best.as_ref().is_none_or(|(_, r, _)| residual > *r) {
                best = Some((k, residual, g));
            }
        }
        let Some((k, residual, g)) = best else { break };
        let scale = 1.0 / residual.sqrt();
        basis.push(g.into_iter().map(|z| z * scale).collect());
        selected.push(k);
        candidates = survivors.into_iter().filter(|&c| c != k).collect();
    }
    selected
}

/// Runs the selection on every subcarrier.
pub fn sus_select(set: &ChannelSet, alpha: f64) -> Result<Vec<Vec<usize>>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha {alpha} outside (0, 1]"
        )));
    }
    Ok((0..set.num_subcarriers)
        .map(|n| sus_subcarrier(set, n, alpha))
        .collect())
}

/// Rows are the selected users' channels.
fn channel_matrix(set: &ChannelSet, n: usize, users: &[usize]) -> DMatrix<C64> {
    let m = set.num_antennas;
    DMatrix::from_fn(users.len(), m, |j, a| set.channel(n, users[j])[a])
}

/// `diag((H H^H)^-1)` for one subcarrier, via the Hermitian eigendecomposition.
pub fn zf_gains(h: &DMatrix<C64>, subcarrier: usize) -> Result<Vec<f64>> {
    let gram = h * h.adjoint();
    let eig = gram.symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition > MAX_CONDITION {
        return Err(Error::SingularGram {
            subcarrier,
            condition,
        });
    }
    let g = h.nrows();
    Ok((0..g)
        .map(|j| {
            (0..g)
                .map(|i| eig.eigenvectors[(j, i)].norm_sqr() / eig.eigenvalues[i])
                .sum()
        })
        .collect())
}

/// `diag((H^+)^H H^+)` from the SVD pseudo-inverse; the definition the
/// closed form in [`zf_gains`] simplifies.
pub fn zf_gains_pinv(h: &DMatrix<C64>) -> Result<Vec<f64>> {
    let pinv = h
        .clone()
        .pseudo_inverse(1e-14)
        .map_err(|e| Error::InvalidInstance(e.to_string()))?;
    let prod = pinv.adjoint() * &pinv;
    Ok((0..h.nrows()).map(|j| prod[(j, j)].re).collect())
}

/// Row-major `N x K` gains; zero for users not selected on a subcarrier.
pub fn gains_from_selection(set: &ChannelSet, selections: &[Vec<usize>]) -> Result<Vec<f64>> {
    let k_users = set.num_users;
    let mut gains = vec![0.0; set.num_subcarriers * k_users];
    for (n, users) in selections.iter().enumerate() {
        if users.is_empty() {
            continue;
        }
        let betas = zf_gains(&channel_matrix(set, n, users), n)?;
        for (&k, b) in users.iter().zip(betas) {
            gains[n * k_users + k] = b;
        }
    }
    Ok(gains)
}

/// Channels, selections and gains, re-drawing subcarriers with a singular Gram matrix.
pub fn gen_gains(spec: &ScenarioSpec) -> Result<(ChannelSet, Vec<f64>)> {
    let mut set = gen_channels(spec)?;
    let k_users = spec.num_users;
    let mut gains = vec![0.0; spec.num_subcarriers * k_users];
    for n in 0..spec.num_subcarriers {
        let mut attempt = 0;
        loop {
            let users = sus_subcarrier(&set, n, spec.alpha);
            match zf_gains(&channel_matrix(&set, n, &users), n) {
                Ok(betas) => {
                    for (&k, b) in users.iter().zip(betas) {
                        gains[n * k_users + k] = b;
                    }
                    set.selections[n] = users;
                    break;
                }
                Err(e @ Error::SingularGram { .. }) if attempt >= MAX_REDRAWS => return Err(e),
                Err(Error::SingularGram { .. }) => {
                    attempt += 1;
                    draw_subcarrier(&mut set, n, attempt);
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((set, gains))
}

/// Floors `s * r0_k`, where `r0` is the power-only optimum with only the RT
/// users served (unit weights).
pub fn gen_bounds_scaled(inst: &ProblemInstance, rt_users: &[usize], s: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::InvalidParameter(format!("scale {s} outside [0, 1]")));
    }
    let mut floors = vec![0.0; inst.num_users];
    let k_users = inst.num_users;
    let mut gains = vec![0.0; inst.gains.len()];
    for n in 0..inst.num_subcarriers {
        for &k in rt_users {
            gains[n * k_users + k] = inst.gain(n, k);
        }
    }
    if s == 0.0 || gains.iter().all(|&b| b == 0.0) {
        return Ok(floors);
    }
    let rt_only = ProblemInstance::new(
        k_users,
        inst.num_subcarriers,
        inst.num_antennas,
        inst.power_budget,
        vec![1.0; k_users],
        gains,
        vec![0.0; k_users],
        Vec::new(),
    )?;
    let zero = vec![0.0; k_users];
    let theta = solve_unconstrained(&rt_only, &zero, FallbackPolicy::default())?.theta_star;
    let alloc = primal_from_dual(&rt_only, &DualPoint::new(theta, zero))?;
    let rates = crate::model::user_rates(&rt_only, &alloc)?;
    for &k in rt_users {
        floors[k] = s * rates[k];
    }
    Ok(floors)
}

/// Splits `users` into `groups` consecutive runs; the remainder goes to the last.
pub fn split_groups(users: &[usize], groups: usize) -> Vec<Vec<usize>> {
    if groups == 0 {
        return Vec::new();
    }
    let size = users.len() / groups;
    (0..groups)
        .map(|g| {
            let end = if g + 1 == groups {
                users.len()
            } else {
                (g + 1) * size
            };
            users[g * size..end].to_vec()
        })
        .collect()
}

/// Least total power that grants every user its floor, each on its own subcarriers.
pub fn min_total_power(inst: &ProblemInstance, floors: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (k, &f) in floors.iter().enumerate() {
        if f > 0.0 {
            total += min_power_fill(inst, k, f)?.power;
        }
    }
    Ok(total)
}

/// Floors in the given ratios across groups, times `scale * gamma`, where
/// `gamma` is the largest multiplier that fits the budget.
///
/// RT users with no selected subcarrier cannot carry a floor and get zero.
/// Returns `(floors, gamma, groups)`.
pub fn gen_bounds_fixed_ratio(
    inst: &ProblemInstance,
    rt_users: &[usize],
    ratios: &[u32],
    scale: f64,
) -> Result<(Vec<f64>, f64, Vec<Vec<usize>>)> {
    if !(0.0..=1.0).contains(&scale) {
        return Err(Error::InvalidParameter(format!(
            "scale {scale} outside [0, 1]"
        )));
    }
    let groups = split_groups(rt_users, ratios.len());
    let mut base = vec![0.0; inst.num_users];
    for (group, &ratio) in groups.iter().zip(ratios) {
        for &k in group {
            if inst.user_gains(k).next().is_some() {
                base[k] = f64::from(ratio);
            }
        }
    }
    if base.iter().all(|&b| b == 0.0) {
        return Err(Error::InvalidParameter("all base floors are zero".into()));
    }
    let floors_at = |g: f64| base.iter().map(|b| b * g).collect::<Vec<_>>();
    let fits =
        |g: f64| -> Result<bool> { Ok(min_total_power(inst, &floors_at(g))? <= inst.power_budget) };

    let (mut lo, mut hi) = (0.0, 1.0);
    while fits(hi)? {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((floors_at(scale * lo), lo, groups))
}

/// Builds the full instance (unit weights) and its provenance record.
pub fn build_instance(spec: &ScenarioSpec) -> Result<(ProblemInstance, Sidecar)> {
    spec.validate()?;
    let (_, gains) = gen_gains(spec)?;
    let k_users = spec.num_users;
    let rt: Vec<usize> = (0..spec.num_rt).collect();
    let bare = ProblemInstance::new(
        k_users,
        spec.num_subcarriers,
        spec.num_antennas,
        spec.power_budget,
        vec![1.0; k_users],
        gains,
        vec![0.0; k_users],
        rt.clone(),
    )?;
    let (floors, gamma, groups) = if rt.is_empty() {
        (vec![0.0; k_users], None, Vec::new())
    } else {
        match spec.mode {
            BoundMode::Scaled => (
                gen_bounds_scaled(&bare, &rt, spec.scale)?,
                None,
                vec![rt.clone()],
            ),
            BoundMode::FixedRatio => {
                let (f, g, groups) = gen_bounds_fixed_ratio(&bare, &rt, &spec.ratios, spec.scale)?;
                (f, Some(g), groups)
            }
        }
    };
    let inst = bare.with_floors(floors)?;
    let sidecar = Sidecar {
        seed: spec.seed,
        alpha: spec.alpha,
        mode: spec.mode,
        scale: spec.scale,
        gamma,
        groups,
    };
    Ok((inst, sidecar))
}
