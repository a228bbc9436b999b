use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use ensemble_core::worldfunc::GapRule;
use ensemble_lab::compare::{compare_runs, load_run};
use ensemble_lab::config::{ConfigError, ExperimentConfig};
use ensemble_lab::output::{write_atomic, Check};
use ensemble_lab::scenarios::{identity_run, read_pairs, worldfunc_params, worldfunc_table};
use ensemble_lab::{output_root, run_config};

const EXIT_PASS: u8 = 0;
const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "ensemble-lab", version, about = "Experiment runner for the ensemble-core solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Run {
        config: PathBuf,
        /// Directory for run outputs; overrides ENSEMBLE_LAB_OUTPUT_ROOT (default ./runs).
        #[arg(long)]
        output_root: Option<PathBuf>,
    },
    /// Per-time L1, L2 and max distances between the densities of finished runs.
    Compare {
        #[arg(required = true, num_args = 2..)]
        manifests: Vec<PathBuf>,
        /// Write the table here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the Jacobian identities on random smooth maps.
    VerifyIdentities {
        /// Space dimension; both 2 and 3 when omitted.
        #[arg(long, value_parser = clap::value_parser!(u8).range(2..=3))]
        n: Option<u8>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Minkowski and distorted world function for pairs of spacetime points.
    Worldfunc {
        /// CSV with columns t1,x1,y1,z1,t2,x2,y2,z2.
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        sigma0: Option<f64>,
        #[arg(long, value_enum, default_value_t = Gap::Ramp)]
        gap: Gap,
        /// Unit system; CGS unless `canonical` (hbar = b = c = 1).
        #[arg(long, value_enum, default_value_t = Units::Cgs)]
        units: Units,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Gap {
    Ramp,
    Step,
}

#[derive(Clone, Copy, ValueEnum)]
enum Units {
    Cgs,
    Canonical,
}

fn report(checks: &[Check], to: &mut dyn Write) -> bool {
    for c in checks {
        let _ = writeln!(
            to,
            "{} {}: {:e} {} {:e}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.relation,
            c.tolerance
        );
    }
    checks.iter().all(|c| c.passed)
}

fn exit_for(passed: bool) -> ExitCode {
    ExitCode::from(if passed { EXIT_PASS } else { EXIT_CHECK })
}

fn run(config: PathBuf, root: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = ExperimentConfig::from_file(&config)?;
    let done = run_config(&cfg, &output_root(root.as_deref()))?;
    let passed = report(&done.manifest.checks, &mut std::io::stdout());
    println!("wrote {}", done.dir.display());
    Ok(exit_for(passed))
}

fn compare(manifests: Vec<PathBuf>, out: Option<PathBuf>) -> Result<ExitCode> {
    let runs = manifests.iter().map(|m| load_run(m)).collect::<Result<Vec<_>>>()?;
    let bytes = compare_runs(&runs)?.to_csv()?;
    match out {
        Some(path) => write_atomic(&path, &bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(ExitCode::from(EXIT_PASS))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let is_run = matches!(cli.command, Command::Run { .. });
    let result = match cli.command {
        Command::Run { config, output_root } => run(config, output_root),
        Command::Compare { manifests, out } => compare(manifests, out),
        Command::VerifyIdentities { n, trials, h, seed } => {
            let dims: Vec<usize> = n.map_or(vec![2, 3], |n| vec![n as usize]);
            identity_run(&dims, trials, h, seed).and_then(|out| {
                std::io::stdout().write_all(&out.tables[0].1.to_csv()?)?;
                Ok(exit_for(report(&out.checks, &mut std::io::stderr())))
            })
        }
        Command::Worldfunc {
            points,
            sigma0,
            gap,
            units,
        } => {
            let gap = match gap {
                Gap::Ramp => GapRule::LinearRamp,
                Gap::Step => GapRule::Step,
            };
            worldfunc_params(sigma0, matches!(units, Units::Canonical), gap).and_then(|params| {
                let pairs = read_pairs(&points)?;
                eprintln!("d = {:e}, sqrt(d) = {:e}", params.d(), params.d().sqrt());
                std::io::stdout().write_all(&worldfunc_table(&params, &pairs).to_csv()?)?;
                Ok(ExitCode::from(EXIT_PASS))
            })
        }
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            // A run that starts and then fails is a failed check; anything rejected
            // before that is an input error.
            let input = !is_run || err.downcast_ref::<ConfigError>().is_some();
            ExitCode::from(if input { EXIT_CONFIG } else { EXIT_CHECK })
        }
    }
}
