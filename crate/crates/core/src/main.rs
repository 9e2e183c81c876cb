use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use aidgn::bench::{
    evaluate_all, load_dataset_files, parse_seeds, print_manifest, run_compare, run_training,
    write_dataset_files, RunConfig, CHECKPOINT_FILE, COMPARE_HEADER,
};
use aidgn::model::checkpoint::read_checkpoint;
use aidgn::verify::{Bound, Suite, Verifier};
use aidgn::Error;

#[derive(Parser)]
#[command(
    name = "aidgn",
    version,
    about = "Angular-invariance domain generalization benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    All,
    Geometry,
    Distributions,
    Maxent,
    Gradients,
}

#[derive(Subcommand)]
enum Command {
    /// Run numerical checks against independent oracles.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        /// Override a check tolerance, e.g. `--tol polar_jacobian=1e-3`.
        #[arg(long = "tol", value_name = "NAME=VALUE")]
        tolerances: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write one dataset file per domain plus a manifest.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: the configured data directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one run on the configured dataset files.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (default: `io.out_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on every dataset file.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path (default: `<io.out_dir>/checkpoint.bin`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Paired AIDGN vs ERM runs over a list of seeds.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds (default: `train.seed`).
        #[arg(long)]
        seeds: Option<String>,
        /// CSV path (default: `<io.out_dir>/compare.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, Error> {
    match path {
        Some(p) => RunConfig::load(p),
        None => RunConfig::from_toml_str(""),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::InvalidParameter { .. } => 2,
        _ => 1,
    }
}

fn verify(suite: SuiteArg, tolerances: &[String], seed: Option<u64>) -> Result<u8, Error> {
    let mut verifier = seed.map_or_else(Verifier::default, Verifier::with_seed);
    for t in tolerances {
        let (name, value) = t
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--tol expects NAME=VALUE, got {t:?}")))?;
        let value: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("--tol value {value:?} is not a number")))?;
        verifier.set_tolerance(name, value)?;
    }
    let suites: Vec<Suite> = match suite {
        SuiteArg::All => Suite::ALL.to_vec(),
        SuiteArg::Geometry => vec![Suite::Geometry],
        SuiteArg::Distributions => vec![Suite::Distributions],
        SuiteArg::Maxent => vec![Suite::Maxent],
        SuiteArg::Gradients => vec![Suite::Gradients],
    };
    println!(
        "{:<28} {:>12}  {:>12}  {:<6} detail",
        "check", "measured", "tolerance", "result"
    );
    let mut failed = 0;
    for s in suites {
        for r in verifier.run(s)? {
            let op = match r.bound {
                Bound::AtMost => "<=",
                Bound::AtLeast => ">=",
            };
            let verdict = if r.passed() { "pass" } else { "FAIL" };
            if !r.passed() {
                failed += 1;
            }
            println!(
                "{:<28} {:>12.3e}  {} {:>9.1e}  {:<6} {}",
                r.name, r.measured, op, r.tolerance, verdict, r.detail
            );
        }
    }
    Ok(if failed == 0 { 0 } else { 1 })
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Verify {
            suite,
            tolerances,
            seed,
        } => verify(suite, &tolerances, seed),
        Command::Gen { config, out } => {
            let cfg = load_config(&config)?;
            let dir = out.unwrap_or_else(|| cfg.data_dir());
            let manifest = write_dataset_files(&cfg.task, &dir)?;
            print_manifest(&manifest, &mut std::io::stdout())?;
            Ok(0)
        }
        Command::Train { config, out } => {
            let mut cfg = load_config(&config)?;
            let data_dir = cfg.data_dir();
            if let Some(o) = out {
                cfg.io.out_dir = o;
            }
            let data = load_dataset_files(&data_dir)?;
            let summary = run_training(&cfg, &data, cfg.loss.mode, &cfg.io.out_dir)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(0)
        }
        Command::Eval { config, checkpoint } => {
            let cfg = load_config(&config)?;
            let path = checkpoint.unwrap_or_else(|| cfg.io.out_dir.join(CHECKPOINT_FILE));
            let state = read_checkpoint(&path)?;
            let data = load_dataset_files(&cfg.data_dir())?;
            for row in evaluate_all(&state.model, &data, cfg.loss.kappa)? {
                println!("{}", serde_json::to_string(&row)?);
            }
            Ok(0)
        }
        Command::Compare { config, seeds, out } => {
            let cfg = load_config(&config)?;
            let seeds = match seeds {
                Some(s) => parse_seeds(&s)?,
                None => vec![cfg.train.seed],
            };
            let csv_path = out.unwrap_or_else(|| cfg.io.out_dir.join("compare.csv"));
            let root = cfg.io.out_dir.join("compare");
            let report = run_compare(&cfg, &seeds, &csv_path, &root)?;
            println!("{}", COMPARE_HEADER[..6].join("\t"));
            for s in &report.stats {
                println!(
                    "summary\t\t{}\t{:.4}±{:.4}\t{:.4}±{:.4}\t{:.4}±{:.4}",
                    s.arm,
                    s.validation_accuracy.0,
                    s.validation_accuracy.1,
                    s.target_accuracy.0,
                    s.target_accuracy.1,
                    s.mean_entropy.0,
                    s.mean_entropy.1
                );
            }
            println!("wins or ties: {}/{}", report.wins_or_ties, seeds.len());
            println!("csv: {}", csv_path.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
