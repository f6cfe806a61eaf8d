use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use zfpa::batch::{median, SolverKind};
use zfpa::{SolveReport, SolveStatus};

/// One solver run on one instance; field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: String,
    pub axis: Option<f64>,
    pub solver: SolverKind,
    pub status: SolveStatus,
    pub objective: f64,
    #[serde(rename = "power")]
    pub power_used: f64,
    #[serde(rename = "max_deficit")]
    pub max_rate_deficit: f64,
    #[serde(rename = "iters")]
    pub iterations: usize,
    #[serde(rename = "time_ns")]
    pub wall_time_ns: u64,
    pub seed: Option<u64>,
}

impl RunRecord {
    pub fn new(
        instance: String,
        axis: Option<f64>,
        solver: SolverKind,
        seed: Option<u64>,
        report: &SolveReport,
    ) -> Self {
        Self {
            instance,
            axis,
            solver,
            status: report.status,
            objective: report.objective,
            power_used: report.power_used,
            max_rate_deficit: report.max_rate_deficit,
            iterations: report.iterations,
            wall_time_ns: report.wall_time_ns,
            seed,
        }
    }
}

/// Relative slack allowed by the dominance audit.
const DOMINANCE_TOL: f64 = 1e-6;

/// Human-readable digest of a sweep: timing per axis point, overall medians,
/// the heuristic < bounds < exact ordering and the dominance audit.
pub fn summarize(records: &[RunRecord]) -> String {
    let mut out = String::new();
    let mut by_point: BTreeMap<(u64, SolverKind), Vec<f64>> = BTreeMap::new();
    let mut by_solver: BTreeMap<SolverKind, Vec<f64>> = BTreeMap::new();
    for r in records {
        let t = r.wall_time_ns as f64;
        let axis = r.axis.unwrap_or(f64::NAN).to_bits();
        by_point.entry((axis, r.solver)).or_default().push(t);
        by_solver.entry(r.solver).or_default().push(t);
    }

    let mut points: Vec<_> = by_point.into_iter().collect();
    points.sort_by(|a, b| {
        f64::from_bits(a.0 .0)
            .total_cmp(&f64::from_bits(b.0 .0))
            .then(a.0 .1.cmp(&b.0 .1))
    });
    let _ = writeln!(out, "axis\tsolver\tmean_us\tmin_us\tmax_us");
    for ((axis, solver), times) in &points {
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let min = times.iter().copied().fold(f64::INFINITY, f64::min);
        let max = times.iter().copied().fold(0.0, f64::max);
        let _ = writeln!(
            out,
            "{}\t{}\t{:.1}\t{:.1}\t{:.1}",
            f64::from_bits(*axis),
            solver,
            mean / 1e3,
            min / 1e3,
            max / 1e3
        );
    }

    let med = |k: SolverKind| by_solver.get(&k).and_then(|t| median(t));
    for (k, times) in &by_solver {
        let _ = writeln!(
            out,
            "median time {k}: {:.1} us over {} runs",
            median(times).unwrap_or(0.0) / 1e3,
            times.len()
        );
    }
    if let (Some(h), Some(b), Some(e)) = (
        med(SolverKind::Heuristic),
        med(SolverKind::Bounds),
        med(SolverKind::Exact),
    ) {
        let ordered = h < b && b < e;
        let _ = writeln!(
            out,
            "timing order heuristic < bounds < exact: {} (bounds/heuristic {:.2}x, exact/bounds {:.2}x)",
            if ordered { "yes" } else { "no" },
            b / h,
            e / b
        );
    }

    let violations = dominance_violations(records);
    let _ = writeln!(out, "dominance violations: {}", violations.len());
    for v in violations.iter().take(10) {
        let _ = writeln!(out, "  {v}");
    }
    out
}

/// Rows where a feasible approximation beats a certified exact optimum.
pub fn dominance_violations(records: &[RunRecord]) -> Vec<String> {
    let mut by_instance: BTreeMap<(&str, u64), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let axis = r.axis.unwrap_or(f64::NAN).to_bits();
        by_instance.entry((&r.instance, axis)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((name, _), rows) in by_instance {
        let Some(exact) = rows
            .iter()
            .find(|r| r.solver == SolverKind::Exact && r.status == SolveStatus::Optimal)
        else {
            continue;
        };
        for r in &rows {
            let checked = matches!(r.solver, SolverKind::Bounds | SolverKind::Heuristic);
            if !checked || !r.status.claims_feasible() {
                continue;
            }
            let limit = exact.objective + DOMINANCE_TOL * exact.objective.abs().max(1.0);
            if r.objective > limit {
                out.push(format!(
                    "{name}: {} {} > exact {}",
                    r.solver, r.objective, exact.objective
                ));
            }
        }
    }
    out
}
