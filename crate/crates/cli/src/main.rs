//! `zfpa`: generate test instances, run solvers on them and tabulate results.

mod config;
mod record;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use zfpa::batch::{jobs, run_jobs, timed_solve, SolverKind, SolverOptions};
use zfpa::heuristic::HeuristicParams;
use zfpa::scenario::{build_instance, Sidecar};
use zfpa::{user_rates, ProblemInstance};

use config::{parse_solvers, SweepConfig};
use record::{summarize, RunRecord};

#[derive(Parser)]
#[command(
    name = "zfpa",
    version,
    about = "Power allocation experiments for ZF OFDMA-SDMA downlinks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one instance file per (axis value, repetition) of a sweep config.
    Gen {
        config: PathBuf,
        #[command(flatten)]
        scenario: ScenarioFlags,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Solve one instance and print the record as JSON.
    Solve {
        instance: PathBuf,
        solver: SolverKind,
        #[command(flatten)]
        heuristic: HeuristicFlags,
        /// Timed repetitions after one warm-up.
        #[arg(long, default_value_t = 100)]
        repeats: usize,
    },
    /// Run every solver on every instance of a sweep and write CSV.
    Sweep {
        config: PathBuf,
        #[command(flatten)]
        scenario: ScenarioFlags,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        refine: bool,
        /// Comma-separated subset of exact,bounds,heuristic,unconstrained.
        #[arg(long)]
        solvers: Option<String>,
        /// Overrides the config's timed repetitions per record.
        #[arg(long)]
        repeats: Option<usize>,
        /// Run jobs one at a time to reduce timing noise.
        #[arg(long)]
        serial_timing: bool,
        /// CSV path; defaults to the config's output_path, then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-RT-user rate minus floor for two solvers.
    Diff {
        instance: PathBuf,
        solver_a: SolverKind,
        solver_b: SolverKind,
        #[command(flatten)]
        heuristic: HeuristicFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioFlags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
}

impl ScenarioFlags {
    fn apply(&self, cfg: &mut SweepConfig) {
        if let Some(seed) = self.seed {
            cfg.scenario.seed = seed;
        }
        if let Some(alpha) = self.alpha {
            cfg.scenario.alpha = alpha;
        }
    }
}

#[derive(Args)]
struct HeuristicFlags {
    #[arg(long, default_value_t = HeuristicParams::default().epsilon)]
    epsilon: f64,
    #[arg(long)]
    refine: bool,
}

impl HeuristicFlags {
    fn options(&self) -> SolverOptions {
        options(self.epsilon, self.refine)
    }
}

fn options(epsilon: f64, refine: bool) -> SolverOptions {
    SolverOptions {
        heuristic: HeuristicParams {
            refine,
            ..HeuristicParams::with_epsilon(epsilon)
        },
        ..Default::default()
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            config,
            scenario,
            out,
        } => {
            let mut cfg = SweepConfig::load(&config)?;
            scenario.apply(&mut cfg);
            cmd_gen(&cfg, &out)
        }
        Command::Solve {
            instance,
            solver,
            heuristic,
            repeats,
        } => cmd_solve(&instance, solver, &heuristic.options(), repeats),
        Command::Sweep {
            config,
            scenario,
            epsilon,
            refine,
            solvers,
            repeats,
            serial_timing,
            out,
        } => {
            let mut cfg = SweepConfig::load(&config)?;
            scenario.apply(&mut cfg);
            if let Some(e) = epsilon {
                cfg.epsilon = e;
            }
            cfg.refine |= refine;
            if let Some(list) = solvers {
                cfg.solvers = parse_solvers(&list)?;
            }
            if let Some(r) = repeats {
                cfg.timing_repeats = r;
            }
            if out.is_some() {
                cfg.output_path = out;
            }
            cmd_sweep(&cfg, serial_timing)
        }
        Command::Diff {
            instance,
            solver_a,
            solver_b,
            heuristic,
            out,
        } => cmd_diff(
            &instance,
            solver_a,
            solver_b,
            &heuristic.options(),
            out.as_deref(),
        ),
    }
}

fn write_json(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_gen(cfg: &SweepConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for p in cfg.points()? {
        let (inst, sidecar) = build_instance(&p.spec)
            .with_context(|| format!("generating {} (seed {})", p.name, p.spec.seed))?;
        write_json(&out.join(format!("{}.json", p.name)), &inst.to_json())?;
        write_json(
            &out.join(format!("{}.meta.json", p.name)),
            &serde_json::to_string_pretty(&sidecar)?,
        )?;
    }
    Ok(())
}

fn load_instance(path: &Path) -> Result<(ProblemInstance, Option<Sidecar>)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let inst = ProblemInstance::from_json(&text)
        .with_context(|| format!("parsing instance {}", path.display()))?;
    // provenance is optional; a missing or foreign sidecar just drops the seed
    let sidecar = std::fs::read_to_string(path.with_extension("meta.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    Ok((inst, sidecar))
}

fn instance_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn cmd_solve(path: &Path, solver: SolverKind, opts: &SolverOptions, repeats: usize) -> Result<()> {
    let (inst, sidecar) = load_instance(path)?;
    let report = timed_solve(&inst, solver, opts, repeats)?;
    let rec = RunRecord::new(
        instance_name(path),
        None,
        solver,
        sidecar.map(|s| s.seed),
        &report,
    );
    println!("{}", serde_json::to_string_pretty(&rec)?);
    Ok(())
}

fn cmd_sweep(cfg: &SweepConfig, serial: bool) -> Result<()> {
    cfg.validate()?;
    let points = cfg.points()?;
    let instances = points
        .iter()
        .map(|p| {
            build_instance(&p.spec)
                .map(|(inst, _)| inst)
                .with_context(|| format!("generating {} (seed {})", p.name, p.spec.seed))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(points.len() * cfg.solvers.len());
    // points sharing an axis value share solver options, so each group is one batch
    for group in points.chunk_by(|a, b| a.axis_index == b.axis_index) {
        let first = group[0].axis_index * cfg.repetitions;
        let insts = &instances[first..first + group.len()];
        let opts = options(group[0].epsilon, cfg.refine);
        let work = jobs(insts.len(), &cfg.solvers);
        for res in run_jobs(insts, &work, &opts, cfg.timing_repeats, serial) {
            let p = &group[res.job.instance];
            let report = res
                .report
                .with_context(|| format!("{} on {}", res.job.solver, p.name))?;
            records.push(RunRecord::new(
                p.name.clone(),
                Some(p.axis_value),
                res.job.solver,
                Some(p.spec.seed),
                &report,
            ));
        }
    }

    let sink: Box<dyn Write> = match &cfg.output_path {
        Some(path) => Box::new(
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        ),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    for r in &records {
        w.serialize(r)?;
    }
    w.flush()?;
    eprint!("{}", summarize(&records));
    Ok(())
}

fn cmd_diff(
    path: &Path,
    a: SolverKind,
    b: SolverKind,
    opts: &SolverOptions,
    out: Option<&Path>,
) -> Result<()> {
    let (inst, _) = load_instance(path)?;
    let rates = |kind| -> Result<Vec<f64>> {
        let report = zfpa::batch::solve(&inst, kind, opts)?;
        Ok(user_rates(&inst, &report.allocation)?)
    };
    let (ra, rb) = (rates(a)?, rates(b)?);

    let sink: Box<dyn Write> = match out {
        Some(p) => {
            Box::new(std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["user", "floor", "rate_a", "rate_b", "diff_a", "diff_b"])?;
    for &k in &inst.rt_users {
        let floor = inst.rate_floors[k];
        w.serialize((k, floor, ra[k], rb[k], ra[k] - floor, rb[k] - floor))?;
    }
    w.flush()?;
    Ok(())
}
