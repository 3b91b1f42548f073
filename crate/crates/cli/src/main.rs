//! `approx-attn`: generate workloads, run experiments, sweep budgets, check invariants.
//!
//! Exit codes: 0 success, 2 input error, 3 contract violation, 4 a check failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use approx_attn::harness::{
    gen_synthetic, load_matrix, run_checks, run_experiment, write_matrix, Budget, ExperimentConfig,
    Shape, Workload,
};
use approx_attn::{Error, ErrorCategory, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "approx-attn",
    version,
    about = "Approximate attention simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic workload (key.csv, value.csv, queries.csv, planted.json).
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment and emit a JSON report.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFiles,
        /// Report file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of budget fractions and thresholds, one report per cell.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataFiles,
        /// Budget fractions of n.
        #[arg(long, value_delimiter = ',', default_values_t = [0.125, 0.25, 0.5, 1.0])]
        fractions: Vec<f64>,
        /// Threshold percentages.
        #[arg(long = "t-values", value_delimiter = ',', default_values_t = [1.0, 5.0, 10.0, 50.0])]
        t_values: Vec<f64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant and oracle checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DataFiles {
    #[arg(long)]
    key: Option<PathBuf>,
    #[arg(long)]
    value: Option<PathBuf>,
    #[arg(long)]
    queries: Option<PathBuf>,
}

impl DataFiles {
    /// Loads all three files, or generates synthetic data when none is given.
    fn workload(&self, cfg: &ExperimentConfig) -> Result<Workload> {
        match (&self.key, &self.value, &self.queries) {
            (None, None, None) => gen_synthetic(cfg.n, cfg.d, cfg.planted, cfg.queries, cfg.seed),
            (Some(k), Some(v), Some(q)) => Ok(Workload {
                key: load_matrix(k, Shape::exact(cfg.n, cfg.d))?,
                value: load_matrix(v, Shape::exact(cfg.n, cfg.d))?,
                queries: load_matrix(q, Shape::cols(cfg.d))?,
                planted: Vec::new(),
            }),
            _ => Err(Error::Config(
                "--key, --value and --queries must be given together".into(),
            )),
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn gen(common: &Common, out: &Path) -> Result<()> {
    let cfg = common.resolve()?;
    let w = gen_synthetic(cfg.n, cfg.d, cfg.planted, cfg.queries, cfg.seed)?;
    create_dir(out)?;
    write_matrix(&out.join("key.csv"), &w.key)?;
    write_matrix(&out.join("value.csv"), &w.value)?;
    write_matrix(&out.join("queries.csv"), &w.queries)?;
    let planted = serde_json::to_string_pretty(&w.planted).expect("planted sets serialize");
    write_text(&out.join("planted.json"), &(planted + "\n"))?;
    eprintln!(
        "wrote {}x{} workload with {} queries to {}",
        cfg.n,
        cfg.d,
        cfg.queries,
        out.display()
    );
    Ok(())
}

fn run(common: &Common, data: &DataFiles, out: Option<&Path>) -> Result<()> {
    let cfg = common.resolve()?;
    let report = run_experiment(&cfg, &data.workload(&cfg)?)?;
    let json = report.to_json();
    match out {
        Some(p) => write_text(p, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn sweep(
    common: &Common,
    data: &DataFiles,
    fractions: &[f64],
    ts: &[f64],
    out: &Path,
) -> Result<()> {
    let base = common.resolve()?;
    let workload = data.workload(&base)?;
    create_dir(out)?;
    for &fraction in fractions {
        for &t in ts {
            let cfg = ExperimentConfig {
                m: Budget::Fraction { fraction },
                t_percent: t,
                ..base.clone()
            };
            let report = run_experiment(&cfg, &workload)?;
            let path = out.join(format!("m{fraction}_t{t}.json"));
            write_text(&path, &report.to_json())?;
            let a = &report.aggregate;
            println!(
                "M={:<5} T={:<4} C={:.1} K={:.1} recall={:.3} speedup={:.2} -> {}",
                report.resolved_m,
                t,
                a.mean_candidates,
                a.mean_survivors,
                a.mean_recall,
                a.latency_speedup,
                path.display()
            );
        }
    }
    Ok(())
}

fn check(seed: u64) -> ExitCode {
    let outcomes = run_checks(seed);
    for c in &outcomes {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {:<24} {}", c.name, c.detail);
    }
    if outcomes.iter().all(|c| c.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Gen { common, out } => gen(common, out),
        Command::Run { common, data, out } => run(common, data, out.as_deref()),
        Command::Sweep {
            common,
            data,
            fractions,
            t_values,
            out,
        } => sweep(common, data, fractions, t_values, out),
        Command::Check { seed } => return check(*seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.category() {
                ErrorCategory::Input => ExitCode::from(2),
                ErrorCategory::Contract => ExitCode::from(3),
            }
        }
    }
}
