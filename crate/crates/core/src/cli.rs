//! Command-line interface: `run`, `verify` and `bench`.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

use crate::bench::{parse_sizes, run_bench, write_rows};
use crate::error::Error;
use crate::scenarios::{parse_run_config, run_scenario, ScenarioKind};
use crate::verify::run_suite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_TOLERANCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "structured-kfe", version, about = "Structure-exploiting Kalman filter extensions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario from a JSON config and write CSV records plus a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Record wall-clock times (otherwise written as 0 so output is reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Run randomized equivalence checks against reference computations.
    Verify {
        /// partial-linear, conditional, static-deferral, block-update, woodbury or all.
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tabulate work counts of naive and structured modes.
    Bench {
        #[arg(long)]
        scenario: String,
        /// Comma-separated sizes: microphone counts (tdoa) or iteration counts (ruf).
        #[arg(long, default_value = "")]
        sizes: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
}

fn fail(err: &Error) -> i32 {
    if err.is_numerical() {
        eprintln!("numerical failure: {err}");
        EXIT_NUMERICAL
    } else {
        eprintln!("error: {err}");
        EXIT_VALIDATION
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    // read the jitter override up front so a bad value is reported once
    crate::linalg::jitter_factor();
    match cli.command {
        Command::Run { config, out, timing } => cmd_run(config, out, timing),
        Command::Verify { suite, seed } => cmd_verify(&suite, seed),
        Command::Bench { scenario, sizes, seed, out, timing } => cmd_bench(&scenario, &sizes, seed, out, timing),
    }
}

fn cmd_run(config: PathBuf, out: PathBuf, timing: bool) -> i32 {
    let text = match fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", config.display());
            return EXIT_VALIDATION;
        }
    };
    let cfg = match parse_run_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", config.display());
            return EXIT_VALIDATION;
        }
    };
    let run = match run_scenario(&cfg, timing) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if let Err(e) = fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return EXIT_VALIDATION;
    }
    let name = cfg.scenario.name();
    let csv_path = out.join(format!("{name}.csv"));
    let json_path = out.join(format!("{name}.summary.json"));
    let mut csv = Vec::new();
    run.write_csv(&mut csv).expect("writing to memory");
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let summary = serde_json::json!({
        "generated_at_unix": created,
        "config": cfg,
        "summary": run.summary,
    });
    let written = fs::write(&csv_path, csv)
        .and_then(|_| fs::write(&json_path, serde_json::to_string_pretty(&summary).expect("serializable summary")));
    if let Err(e) = written {
        eprintln!("error: cannot write output in {}: {e}", out.display());
        return EXIT_VALIDATION;
    }
    for m in &run.summary.modes {
        println!(
            "{name} {:<26} steps {:>4}  evals {:>8}  flops {:>12}  final position error {:.4}",
            m.mode, m.steps, m.total_evals, m.total_flops, m.final_position_error
        );
    }
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    EXIT_OK
}

fn cmd_verify(suite: &str, seed: u64) -> i32 {
    let reports = match run_suite(suite, seed) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let mut ok = true;
    for r in &reports {
        print!("{r}");
        ok &= r.passed();
    }
    if ok {
        EXIT_OK
    } else {
        EXIT_TOLERANCE
    }
}

fn cmd_bench(scenario: &str, sizes: &str, seed: u64, out: Option<PathBuf>, timing: bool) -> i32 {
    let parsed = ScenarioKind::parse(scenario).and_then(|s| Ok((s, parse_sizes(sizes)?)));
    let (kind, sizes) = match parsed {
        Ok(p) => p,
        Err(e) => return fail(&e),
    };
    if sizes.is_empty() && kind != ScenarioKind::Pdr {
        eprintln!("error: --sizes is required for scenario {scenario}");
        return EXIT_VALIDATION;
    }
    let rows = match run_bench(kind, &sizes, seed, timing) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let mut table = Vec::new();
    write_rows(&rows, &mut table).expect("writing to memory");
    print!("{}", String::from_utf8_lossy(&table));
    if let Some(path) = out {
        if let Err(e) = fs::write(&path, &table) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return EXIT_VALIDATION;
        }
    }
    EXIT_OK
}
