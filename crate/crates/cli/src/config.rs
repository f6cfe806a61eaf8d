use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use zfpa::batch::SolverKind;
use zfpa::heuristic::HeuristicParams;
use zfpa::scenario::ScenarioSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Scale,
    RtCount,
    Epsilon,
}

fn default_epsilon() -> f64 {
    HeuristicParams::default().epsilon
}

fn default_repeats() -> usize {
    100
}

/// One sweep: a scenario template, the axis varied over it, and the solvers to run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub scenario: ScenarioSpec,
    pub sweep_axis: Axis,
    pub axis_values: Vec<f64>,
    pub solvers: Vec<SolverKind>,
    pub repetitions: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub refine: bool,
    /// Timed solves per record, after one untimed warm-up.
    #[serde(default = "default_repeats")]
    pub timing_repeats: usize,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

/// One point of the sweep grid.
#[derive(Debug, Clone)]
pub struct Point {
    pub name: String,
    pub axis_index: usize,
    pub axis_value: f64,
    pub spec: ScenarioSpec,
    pub epsilon: f64,
}

impl SweepConfig {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("parsing sweep config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.axis_values.is_empty(), "axis_values is empty");
        ensure!(!self.solvers.is_empty(), "solvers is empty");
        ensure!(self.repetitions >= 1, "repetitions must be at least 1");
        ensure!(
            self.timing_repeats >= 1,
            "timing_repeats must be at least 1"
        );
        for p in self.points()? {
            p.spec.validate()?;
            HeuristicParams::with_epsilon(p.epsilon).check()?;
        }
        Ok(())
    }

    /// The grid, axis-major then repetition.
    pub fn points(&self) -> Result<Vec<Point>> {
        let mut out = Vec::new();
        for (i, &v) in self.axis_values.iter().enumerate() {
            for rep in 0..self.repetitions {
                let mut spec = self.scenario.clone();
                let mut epsilon = self.epsilon;
                // an epsilon sweep reruns the same instances at every value
                let seed_index = match self.sweep_axis {
                    Axis::Scale => {
                        spec.scale = v;
                        i
                    }
                    Axis::RtCount => {
                        if !(v >= 0.0 && v.fract() == 0.0) {
                            bail!("rt_count value {v} is not a nonnegative integer");
                        }
                        spec.num_rt = v as usize;
                        i
                    }
                    Axis::Epsilon => {
                        epsilon = v;
                        0
                    }
                };
                spec.seed = child_seed(self.scenario.seed, seed_index, rep);
                out.push(Point {
                    name: format!("inst-{i:03}-{rep:03}"),
                    axis_index: i,
                    axis_value: v,
                    spec,
                    epsilon,
                });
            }
        }
        Ok(out)
    }
}

/// `seed ^ h(axis_index, rep)` with a splitmix64 finalizer as `h`.
pub fn child_seed(seed: u64, axis_index: usize, rep: usize) -> u64 {
    let mut z = ((axis_index as u64) << 32 | rep as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    seed ^ (z ^ (z >> 31))
}

pub fn parse_solvers(list: &str) -> Result<Vec<SolverKind>> {
    let solvers = list
        .split(',')
        .map(|s| s.trim().parse::<SolverKind>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    ensure!(!solvers.is_empty(), "no solvers given");
    Ok(solvers)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(axis: Axis, values: Vec<f64>) -> SweepConfig {
        SweepConfig {
            scenario: ScenarioSpec::scaled((20, 25, 2, 5.0, 3), 0.5, 7),
            sweep_axis: axis,
            axis_values: values,
            solvers: vec![SolverKind::Bounds],
            repetitions: 2,
            epsilon: 0.2,
            refine: false,
            timing_repeats: 1,
            output_path: None,
        }
    }

    #[test]
    fn child_seeds_differ_and_repeat() {
        assert_eq!(child_seed(5, 1, 2), child_seed(5, 1, 2));
        assert_ne!(child_seed(5, 1, 2), child_seed(5, 2, 1));
        assert_ne!(child_seed(5, 0, 0), child_seed(6, 0, 0));
    }

    #[test]
    fn epsilon_axis_reuses_instances() {
        let pts = config(Axis::Epsilon, vec![0.1, 1.0]).points().unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0].spec, pts[2].spec);
        assert_eq!(pts[2].epsilon, 1.0);
        let pts = config(Axis::Scale, vec![0.1, 1.0]).points().unwrap();
        assert_ne!(pts[0].spec.seed, pts[2].spec.seed);
        assert_eq!(pts[3].spec.scale, 1.0);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(config(Axis::Scale, vec![]).validate().is_err());
        assert!(config(Axis::RtCount, vec![1.5]).validate().is_err());
        assert!(config(Axis::RtCount, vec![30.0]).validate().is_err());
        assert!(config(Axis::Epsilon, vec![-1.0]).validate().is_err());
        let mut c = config(Axis::Scale, vec![0.5]);
        c.repetitions = 0;
        assert!(c.validate().is_err());
        assert!(config(Axis::RtCount, vec![0.0, 3.0]).validate().is_ok());
    }

    #[test]
    fn solver_lists() {
        assert_eq!(
            parse_solvers("exact, heuristic").unwrap(),
            vec![SolverKind::Exact, SolverKind::Heuristic]
        );
        assert!(parse_solvers("exact,minos").is_err());
    }
}
