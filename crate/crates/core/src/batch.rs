//! Running solvers over many instances.
//!
//! Jobs are `(instance, solver)` pairs. With the `parallel` feature they are
//! spread over the rayon pool; otherwise, or when `serial` is requested, they
//! run one after another on the calling thread. Results always come back in
//! job order, so output does not depend on scheduling.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::boundary::solve_staged;
use crate::error::{Error, Result};
use crate::heuristic::{run_heuristic, HeuristicParams};
use crate::model::ProblemInstance;
use crate::oracle::{solve_exact, OracleSettings};
use crate::report::{SolveReport, SolveStatus};
use crate::unconstrained::{solve_unconstrained, FallbackPolicy};
use crate::waterfill::{primal_from_dual, DualPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Exact,
    Bounds,
    Heuristic,
    Unconstrained,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [
        SolverKind::Exact,
        SolverKind::Bounds,
        SolverKind::Heuristic,
        SolverKind::Unconstrained,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Exact => "exact",
            Self::Bounds => "bounds",
            Self::Heuristic => "heuristic",
            Self::Unconstrained => "unconstrained",
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown solver `{s}`")))
    }
}

/// Knobs shared by every solver in a batch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub heuristic: HeuristicParams,
    pub oracle: OracleSettings,
}

/// Power-only optimum, with a status saying whether it happens to meet the floors.
pub fn solve_unconstrained_report(inst: &ProblemInstance) -> Result<SolveReport> {
    let zero = vec![0.0; inst.num_users];
    let res = solve_unconstrained(inst, &zero, FallbackPolicy::default())?;
    let dual = DualPoint::new(res.theta_star, zero);
    let alloc = primal_from_dual(inst, &dual)?;
    SolveReport::assess(inst, dual, alloc, res.iterations, |feas| {
        if feas.feasible {
            SolveStatus::OptimalUnconstrained
        } else {
            SolveStatus::FloorsViolated
        }
    })
}

/// One untimed solve.
pub fn solve(
    inst: &ProblemInstance,
    kind: SolverKind,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    match kind {
        SolverKind::Exact => solve_exact(inst, &opts.oracle),
        SolverKind::Bounds => solve_staged(inst),
        SolverKind::Heuristic => run_heuristic(inst, &opts.heuristic).map(|(r, _)| r),
        SolverKind::Unconstrained => solve_unconstrained_report(inst),
    }
}

/// Solves `repeats` times after one discarded warm-up and stores the median
/// wall time of the timed runs in the report.
pub fn timed_solve(
    inst: &ProblemInstance,
    kind: SolverKind,
    opts: &SolverOptions,
    repeats: usize,
) -> Result<SolveReport> {
    let mut report = solve(inst, kind, opts)?;
    let mut times = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        report = solve(inst, kind, opts)?;
        times.push(start.elapsed().as_nanos() as u64);
    }
    times.sort_unstable();
    report.wall_time_ns = times[times.len() / 2];
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub instance: usize,
    pub solver: SolverKind,
}

/// Every instance crossed with every solver, instance-major.
pub fn jobs(num_instances: usize, solvers: &[SolverKind]) -> Vec<Job> {
    (0..num_instances)
        .flat_map(|instance| solvers.iter().map(move |&solver| Job { instance, solver }))
        .collect()
}

#[derive(Debug)]
pub struct JobResult {
    pub job: Job,
    pub report: Result<SolveReport>,
}

/// Runs the jobs and returns one result per job, in job order.
pub fn run_jobs(
    instances: &[ProblemInstance],
    jobs: &[Job],
    opts: &SolverOptions,
    repeats: usize,
    serial: bool,
) -> Vec<JobResult> {
    let run = |job: &Job| JobResult {
        job: *job,
        report: timed_solve(&instances[job.instance], job.solver, opts, repeats),
    };
    if serial {
        return jobs.iter().map(run).collect();
    }
    map_jobs(jobs, run)
}

#[cfg(feature = "parallel")]
fn map_jobs<F>(jobs: &[Job], f: F) -> Vec<JobResult>
where
    F: Fn(&Job) -> JobResult + Sync + Send,
{
    use rayon::prelude::*;
    jobs.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_jobs<F>(jobs: &[Job], f: F) -> Vec<JobResult>
where
    F: Fn(&Job) -> JobResult,
{
    jobs.iter().map(f).collect()
}

/// Median of a sample; `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_instance, ScenarioSpec};

    fn small(seed: u64) -> ProblemInstance {
        build_instance(&ScenarioSpec::scaled((20, 25, 2, 5.0, 3), 0.5, seed))
            .unwrap()
            .0
    }

    #[test]
    fn solver_names_round_trip() {
        for k in SolverKind::ALL {
            assert_eq!(k.as_str().parse::<SolverKind>().unwrap(), k);
        }
        assert!("minos".parse::<SolverKind>().is_err());
    }

    #[test]
    fn jobs_are_instance_major() {
        let j = jobs(2, &[SolverKind::Bounds, SolverKind::Exact]);
        let pairs: Vec<_> = j.iter().map(|j| (j.instance, j.solver)).collect();
        assert_eq!(
            pairs,
            vec![
                (0, SolverKind::Bounds),
                (0, SolverKind::Exact),
                (1, SolverKind::Bounds),
                (1, SolverKind::Exact)
            ]
        );
    }

    #[test]
    fn serial_and_pooled_runs_agree() {
        let insts: Vec<_> = (0..3).map(small).collect();
        let j = jobs(insts.len(), &SolverKind::ALL);
        let opts = SolverOptions::default();
        let a = run_jobs(&insts, &j, &opts, 1, true);
        let b = run_jobs(&insts, &j, &opts, 1, false);
        assert_eq!(a.len(), j.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.job, y.job);
            let (rx, ry) = (x.report.as_ref().unwrap(), y.report.as_ref().unwrap());
            assert_eq!(rx.status, ry.status);
            assert_eq!(rx.objective.to_bits(), ry.objective.to_bits());
        }
    }

    #[test]
    fn unconstrained_status_tracks_floors() {
        let inst = small(4);
        let slack = inst.with_floors(vec![0.0; inst.num_users]).unwrap();
        let r = solve_unconstrained_report(&slack).unwrap();
        assert_eq!(r.status, SolveStatus::OptimalUnconstrained);
        let mut floors = vec![0.0; inst.num_users];
        floors[inst.rt_users[0]] = 1e3;
        let tight = inst.with_floors(floors).unwrap();
        let r = solve_unconstrained_report(&tight).unwrap();
        assert_eq!(r.status, SolveStatus::FloorsViolated);
    }

    #[test]
    fn timed_solve_records_time() {
        let r = timed_solve(&small(1), SolverKind::Bounds, &SolverOptions::default(), 3).unwrap();
        assert!(r.wall_time_ns > 0);
    }

    #[test]
    fn median_basics() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }
}
