//! `aniso`: solve, verify and sweep scenario files.
//!
//! Exit status: 0 when every pass/fail check passes, 1 when one fails,
//! 2 for malformed input and 3 when a solve does not converge.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use aniso_core::scenario::{self, SweepAxis};
use aniso_core::{Error, Scenario};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aniso", version, about = "Anisotropic minimal graphs with a free boundary on a wall")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and write solution.csv, geometry.csv and solve_report.json.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve, run the scenario's checks and write report.jsonl and summary.csv.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeat `verify` over values of one parameter and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// theta, resolution or domain_size
        #[arg(long)]
        axis: String,
        /// Comma separated; multiples of pi are accepted, e.g. `pi/6,3pi/4`.
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses a number or `a*pi/b` written as `api/b`, `pi/b`, `api` or `pi`.
fn parse_value(s: &str) -> Result<f64, Error> {
    let t = s.trim();
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let bad = || Error::Config(format!("cannot parse sweep value `{s}`"));
    let (num, den) = match t.split_once('/') {
        Some((a, b)) => (a, b.trim().parse::<f64>().map_err(|_| bad())?),
        None => (t, 1.0),
    };
    let coeff = num.trim().strip_suffix("pi").ok_or_else(bad)?.trim_end_matches('*');
    let coeff = if coeff.is_empty() { 1.0 } else { coeff.parse::<f64>().map_err(|_| bad())? };
    Ok(coeff * std::f64::consts::PI / den)
}

fn configure_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("ANISO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("ANISO_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

struct Log {
    lines: Vec<String>,
    start: Instant,
}

impl Log {
    fn new(command: &str, config: &Path) -> Self {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            lines: vec![
                format!("started_unix={stamp}"),
                format!("command={command}"),
                format!("config={}", config.display()),
                format!("threads={}", rayon::current_num_threads()),
            ],
            start: Instant::now(),
        }
    }

    fn note(&mut self, line: String) {
        self.lines.push(line);
    }

    fn write(mut self, out: &Path) -> Result<(), Error> {
        self.lines.push(format!("elapsed_s={:.3}", self.start.elapsed().as_secs_f64()));
        fs::create_dir_all(out)?;
        fs::write(out.join("run.log"), self.lines.join("\n") + "\n")?;
        Ok(())
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    configure_threads()?;
    match cli.command {
        Command::Solve { config, out } => {
            let s = Scenario::load(&config)?;
            let mut log = Log::new("solve", &config);
            let solved = scenario::solve_scenario(&s)?;
            scenario::write_solution(&out, &solved)?;
            log.note(format!("iterations={}", solved.report.iterations));
            log.write(&out)?;
            println!(
                "{}: converged in {} iterations, residual {:e}",
                s.name, solved.report.iterations, solved.report.final_residual_norm
            );
            Ok(0)
        }
        Command::Verify { config, out } => {
            let s = Scenario::load(&config)?;
            let mut log = Log::new("verify", &config);
            let solved = scenario::solve_scenario(&s)?;
            let reports = scenario::run_checks(&s, &solved)?;
            scenario::write_solution(&out, &solved)?;
            scenario::write_reports(&out, &reports)?;
            log.note(format!("iterations={}", solved.report.iterations));
            log.write(&out)?;
            for r in &reports {
                println!("{:<24} {:<13} {:e}", r.check_name, r.status.as_str(), r.worst_residual);
            }
            Ok(if scenario::all_passed(&reports) { 0 } else { 1 })
        }
        Command::Sweep { config, axis, values, out } => {
            let s = Scenario::load(&config)?;
            let axis: SweepAxis = axis.parse()?;
            let values = values.iter().map(|v| parse_value(v)).collect::<Result<Vec<_>, _>>()?;
            let mut log = Log::new("sweep", &config);
            let rows = scenario::sweep(&s, axis, &values)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("sweep.csv"), scenario::sweep_csv(axis, &rows))?;
            log.note(format!("rows={}", rows.len()));
            log.write(&out)?;
            let passed = rows.iter().all(|r| scenario::all_passed(&r.reports));
            println!("{} rows written to {}", rows.len(), out.join("sweep.csv").display());
            Ok(if passed { 0 } else { 1 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn values() {
        assert_eq!(parse_value("0.5").unwrap(), 0.5);
        assert_eq!(parse_value("pi/6").unwrap(), PI / 6.0);
        assert_eq!(parse_value("3pi/4").unwrap(), 3.0 * PI / 4.0);
        assert_eq!(parse_value("2*pi").unwrap(), 2.0 * PI);
        assert!(parse_value("tau").is_err());
        assert!(parse_value("pi/x").is_err());
    }
}
