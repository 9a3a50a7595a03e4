use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ecc_core::gradcheck::{Component, Fault};
use ecc_core::{generate, SyntheticSpec};

use crate::error::LabError;
use crate::gradcheck::{run_grad_check, GradCheckOptions, DEFAULT_SEED, DEFAULT_TRIALS};
use crate::inspect::inspect;
use crate::io::{read_json, write_dataset_dir};
use crate::run::run_train;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_GRAD_CHECK: i32 = 4;
pub const EXIT_MISSING: i32 = 5;

pub const THREADS_ENV: &str = "ECC_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ecc-lab", version, about = "Class-center loss experiments on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train/test CSVs and a spec sidecar from a JSON spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train per a JSON run config and write the run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients with central finite differences.
    GradCheck {
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TRIALS as u64, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
        /// Corrupt one component's analytic gradient (negative control).
        #[arg(long, hide = true)]
        inject_fault: Option<Component>,
    },
    /// Rebuild reports from a run directory and print a summary.
    Inspect { run_dir: PathBuf },
}

fn threads() -> Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(format!("{THREADS_ENV} must be a positive integer, got {v:?}")),
        },
    }
}

fn gen_data(spec_path: &Path, out: &Path) -> i32 {
    let spec: SyntheticSpec = match read_json(spec_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    let (train, test) = match generate(&spec) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: invalid spec: {e}");
            return EXIT_BAD_INPUT;
        }
    };
    match write_dataset_dir(out, &train, &test) {
        Ok(()) => {
            eprintln!("wrote {} train and {} test rows to {}", train.len(), test.len(), out.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_IO
        }
    }
}

fn train(config: &Path, out: &Path) -> i32 {
    match run_train(config, out, true) {
        Ok(s) => {
            println!("test_accuracy={}", s.test_accuracy);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                LabError::Numeric(_) => EXIT_NUMERIC,
                LabError::Io { .. } => EXIT_IO,
                _ => EXIT_BAD_INPUT,
            }
        }
    }
}

fn grad_check(seed: u64, trials: usize, fault: Option<Component>, threads: usize) -> i32 {
    let opts = GradCheckOptions {
        seed,
        trials,
        threads,
        fault: fault.map(|component| Fault { component, scale: 1.5 }),
    };
    let summaries = match run_grad_check(&opts) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_GRAD_CHECK;
        }
    };
    let mut out = std::io::stdout().lock();
    let mut ok = true;
    for s in &summaries {
        let verdict = if s.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "{:<8} trials={} entries={} max_rel_err={:e} max_small_abs_err={:e} tol={:e} {verdict}",
            s.component.name(),
            s.trials,
            s.combined.entries,
            s.combined.max_relative_error,
            s.combined.max_small_abs_error,
            s.tolerance,
        );
        if !s.passed {
            ok = false;
            let _ = writeln!(out, "{:<8} worst_seed={}", s.component.name(), s.worst_seed);
        }
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_GRAD_CHECK
    }
}

fn inspect_cmd(run_dir: &Path) -> i32 {
    match inspect(run_dir) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                LabError::Io { .. } => EXIT_IO,
                _ => EXIT_MISSING,
            }
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_BAD_INPUT } else { EXIT_OK };
        }
    };
    let threads = match threads() {
        Ok(t) => t,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_BAD_INPUT;
        }
    };
    match cli.command {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::Train { config, out } => train(&config, &out),
        Command::GradCheck {
            seed,
            trials,
            inject_fault,
        } => grad_check(seed, trials as usize, inject_fault, threads),
        Command::Inspect { run_dir } => inspect_cmd(&run_dir),
    }
}
