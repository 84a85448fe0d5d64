use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use isospec::pipeline::{self, Outcome, RunConfig};
use isospec::IsoError;

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_UPSTREAM: u8 = 3;

/// Isospectral deformations of metrics on balls and spheres.
///
/// Stages read upstream artifacts from the output directory and write
/// JSON reports there. Exit status: 0 PASS, 1 FAIL, 2 usage error,
/// 3 missing or inconsistent upstream artifact.
#[derive(Debug, Parser)]
#[command(name = "isospec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; flags override its fields
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// output directory for artifacts
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// main sample count of the stage: suite points (verify), volume and
    /// scalar-curvature samples (invariants), scan points (curvature),
    /// equivalence restarts (deform)
    #[arg(long, global = true, value_name = "N")]
    samples: Option<usize>,

    /// tolerance override, repeatable
    #[arg(long = "tol", global = true, value_name = "NAME=VAL")]
    tol: Vec<String>,

    /// also estimate the experimental curvature-squared integrals
    #[arg(long, global = true)]
    experimental: bool,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// draw a generic j-map and report its tangent excess
    Gen,
    /// build the certified isospectral family
    Deform,
    /// run the hypothesis suite and the non-isometry evidence
    Verify,
    /// paired heat-invariant comparisons
    Invariants,
    /// curvature scans over the c-list
    Curvature,
    /// aggregate stage verdicts after checking artifact integrity
    Report,
    /// every stage in order
    All,
}

fn build_config(cli: &Cli) -> Result<RunConfig, IsoError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(n) = cli.samples {
        let s = &mut cfg.samples;
        match cli.command {
            Command::Deform => s.restarts = n,
            Command::Verify => s.suite = n,
            Command::Invariants => {
                s.volume = n;
                s.scalar = n;
            }
            Command::Curvature => s.scan_points = n,
            Command::Gen | Command::Report | Command::All => {}
        }
    }
    for spec in &cli.tol {
        cfg.tolerances.apply_override(spec)?;
    }
    cfg.experimental |= cli.experimental;
    cfg.validate()?;
    Ok(cfg)
}

fn print_outcome(name: &str, o: &Outcome) {
    for line in &o.summary {
        println!("  {line}");
    }
    if let Some(path) = &o.path {
        println!("  wrote {}", path.display());
    }
    println!("{name}: {}", o.verdict.label());
}

fn error_code(e: &IsoError) -> u8 {
    match e {
        IsoError::Config(_) => EXIT_USAGE,
        IsoError::Integrity { .. } | IsoError::Io(_) => EXIT_UPSTREAM,
        _ => EXIT_FAIL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    for w in cfg.warnings() {
        eprintln!("warning: {w}");
    }
    let stages: Vec<(&str, fn(&RunConfig) -> isospec::Result<Outcome>)> = match cli.command {
        Command::Gen => vec![("gen", pipeline::run_gen)],
        Command::Deform => vec![("deform", pipeline::run_deform)],
        Command::Verify => vec![("verify", pipeline::run_verify)],
        Command::Invariants => vec![("invariants", pipeline::run_invariants)],
        Command::Curvature => vec![("curvature", pipeline::run_curvature)],
        Command::Report => vec![("report", pipeline::run_report)],
        Command::All => vec![
            ("gen", pipeline::run_gen),
            ("deform", pipeline::run_deform),
            ("verify", pipeline::run_verify),
            ("invariants", pipeline::run_invariants),
            ("curvature", pipeline::run_curvature),
            ("report", pipeline::run_report),
        ],
    };
    let mut all_pass = true;
    for (name, stage) in stages {
        match stage(&cfg) {
            Ok(o) => {
                print_outcome(name, &o);
                all_pass &= o.verdict.is_pass();
                if o.path.is_none() {
                    break;
                }
            }
            Err(e) => {
                eprintln!("{name}: error: {e}");
                return ExitCode::from(error_code(&e));
            }
        }
    }
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAIL)
    }
}
