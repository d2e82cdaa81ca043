//! Command-line front end: experiment runs, ad-hoc geometry queries, and
//! one-shot estimation on a CSV dataset.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numeric failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use cmest::error::Error;
use cmest::experiments::{run_config, ExperimentConfig, MetricSpec};
use cmest::geometry::{dproj, dproj_fd, project, ConvexSet};
use cmest::losses::Loss;
use cmest::metric::SpdMetric;
use cmest::solver::{minimize, EmpiricalRisk, SolverConfig};

#[derive(Parser)]
#[command(name = "cmest", version, about = "Constrained convex M-/U-estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config; writes rows.csv and summary.json.
    Run {
        /// Experiment JSON config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if absent).
        #[arg(long)]
        out: PathBuf,
        /// Override the config's master_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Metric projection of a point onto a set.
    Project {
        #[command(flatten)]
        geo: GeoArgs,
    },
    /// Directional derivative of the metric projection.
    Dproj {
        #[command(flatten)]
        geo: GeoArgs,
        /// Direction, comma-separated decimals.
        #[arg(long, allow_hyphen_values = true)]
        z: String,
        /// Use the finite-difference quotient instead of the closed dispatch.
        #[arg(long)]
        fd: bool,
        /// Step for --fd.
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
    },
    /// Estimate on a dataset: CSV of data rows, config supplies loss,
    /// constraint, metric and solver settings.
    Estimate {
        /// JSON config with "loss", "constraint", and optional
        /// "metric"/"solver" fields.
        #[arg(long)]
        config: PathBuf,
        /// CSV of data rows (no header), one datum per line.
        #[arg(long)]
        data: PathBuf,
    },
    /// Quick built-in checks.
    Selftest {
        /// geometry | losses | ustat | all
        #[arg(long, default_value = "all")]
        suite: String,
    },
}

#[derive(Args)]
struct GeoArgs {
    /// JSON file describing the set ({"type": "ball", ...}).
    #[arg(long)]
    set: PathBuf,
    /// Point, comma-separated decimals.
    #[arg(long, allow_hyphen_values = true)]
    x: String,
    /// Optional JSON file with the metric ("identity" or {"s": [[...]]}).
    #[arg(long)]
    metric: Option<PathBuf>,
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Io(_) => 1,
        Error::NumericFailure { .. }
        | Error::InfeasibleSet
        | Error::UnsupportedCase(_)
        | Error::DegenerateHessian(_)
        | Error::ResourceLimit(_) => 2,
    }
}

fn dispatch() -> Result<(), Error> {
    match Cli::parse().command {
        Command::Run { config, out, seed } => {
            let text = fs::read_to_string(&config)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let output = run_config(&cfg, &out)?;
            println!("{}", output.summary_json.display());
            Ok(())
        }
        Command::Project { geo } => {
            let (set, x, m) = geo.load()?;
            let y = project(&set, &x, &m, 1e-10)?;
            print_vector(&y);
            Ok(())
        }
        Command::Dproj { geo, z, fd, eps } => {
            let (set, x, m) = geo.load()?;
            let z = parse_vector(&z)?;
            let d = if fd { dproj_fd(&set, &x, &z, &m, eps)? } else { dproj(&set, &x, &z, &m)? };
            print_vector(&d);
            Ok(())
        }
        Command::Estimate { config, data } => {
            let text = fs::read_to_string(&config)?;
            let cfg: EstimateConfig = serde_json::from_str(&text)
                .map_err(|e| Error::invalid(format!("config: {e}")))?;
            let loss = cfg.loss.validated()?;
            let rows = read_csv_data(&data)?;
            let risk = EmpiricalRisk::new(&loss, &rows)?;
            let dim = loss.param_dim(rows[0].len())?;
            let metric = cfg.metric.build(dim)?;
            let out = minimize(&risk, &cfg.constraint, &metric, &cfg.solver)?;
            println!("{}", serde_json::to_string_pretty(&out).expect("result serializes"));
            Ok(())
        }
        Command::Selftest { suite } => selftest(&suite),
    }
}

#[derive(serde::Deserialize)]
struct EstimateConfig {
    #[serde(flatten)]
    loss: Loss,
    constraint: ConvexSet,
    #[serde(default)]
    metric: MetricSpec,
    #[serde(default)]
    solver: SolverConfig,
}

impl GeoArgs {
    fn load(&self) -> Result<(ConvexSet, DVector<f64>, SpdMetric), Error> {
        let set: ConvexSet = serde_json::from_str(&fs::read_to_string(&self.set)?)
            .map_err(|e| Error::invalid(format!("set file: {e}")))?;
        let x = parse_vector(&self.x)?;
        if x.len() != set.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {}, set expects {}",
                x.len(),
                set.dim()
            )));
        }
        let m = match &self.metric {
            None => SpdMetric::identity(set.dim()),
            Some(path) => {
                let spec: MetricSpec = serde_json::from_str(&fs::read_to_string(path)?)
                    .map_err(|e| Error::invalid(format!("metric file: {e}")))?;
                spec.build(set.dim())?
            }
        };
        Ok((set, x, m))
    }
}

fn parse_vector(text: &str) -> Result<DVector<f64>, Error> {
    let vals: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| Error::invalid(format!("vector {text:?}: {e}")))?;
    if vals.is_empty() {
        return Err(Error::invalid("empty vector"));
    }
    Ok(DVector::from_vec(vals))
}

fn print_vector(v: &DVector<f64>) {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    println!("[{}]", parts.join(", "));
}

fn read_csv_data(path: &PathBuf) -> Result<Vec<DVector<f64>>, Error> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = parse_vector(line)
            .map_err(|e| Error::invalid(format!("data line {}: {e}", lineno + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid("data file is empty"));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("data rows have inconsistent dimensions"));
    }
    Ok(rows)
}

fn selftest(suite: &str) -> Result<(), Error> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("[{}] {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };
    let run_geometry = suite == "geometry" || suite == "all";
    let run_losses = suite == "losses" || suite == "all";
    let run_ustat = suite == "ustat" || suite == "all";
    if !(run_geometry || run_losses || run_ustat) {
        return Err(Error::invalid(format!(
            "unknown suite {suite:?}; expected geometry|losses|ustat|all"
        )));
    }

    if run_geometry {
        let m = SpdMetric::identity(2);
        let ball = ConvexSet::ball(DVector::zeros(2), 1.0)?;
        let x = DVector::from_vec(vec![2.0, 0.0]);
        let p = project(&ball, &x, &m, 1e-10)?;
        check("geometry: ball projection", (p - DVector::from_vec(vec![1.0, 0.0])).norm() < 1e-9);
        let d = dproj(&ball, &x, &DVector::from_vec(vec![0.0, 1.0]), &m)?;
        check(
            "geometry: ball projection derivative",
            (d - DVector::from_vec(vec![0.0, 0.5])).norm() < 1e-9,
        );
        let f = dproj_fd(&ball, &x, &DVector::from_vec(vec![0.0, 1.0]), &m, 1e-6)?;
        check(
            "geometry: finite-difference agreement",
            (f - DVector::from_vec(vec![0.0, 0.5])).norm() < 1e-4,
        );
    }
    if run_losses {
        let loss = Loss::Huber { c: 1.0 };
        let v = loss.eval(&DVector::from_vec(vec![0.0, 0.0]), &DVector::from_vec(vec![3.0, 0.0]))?;
        check("losses: huber tail value", (v - 5.0).abs() < 1e-12);
        let g = loss.subgrad(&DVector::zeros(2), &DVector::zeros(2))?;
        check("losses: huber kink subgradient", g.norm() == 0.0);
    }
    if run_ustat {
        use cmest::ustat::{u_statistic, Budget};
        let data: Vec<DVector<f64>> =
            [0.0, 1.0, 2.0].iter().map(|&v| DVector::from_vec(vec![v])).collect();
        let u = u_statistic(&data, 2, Budget::All, 0, |t| Ok((t[0][0] - t[1][0]).abs()))?;
        check("ustat: pairwise mean", (u.value - 4.0 / 3.0).abs() < 1e-12 && u.complete);
    }

    if failures > 0 {
        Err(Error::NumericFailure { what: "selftest", residual: failures as f64 })
    } else {
        Ok(())
    }
}
