//! `bandcast`: estimate a VAR, produce conditional forecasts under a
//! scenario file, or run the sampler benchmark grid. Exit codes: 0 success,
//! 2 validation error, 3 numerical failure; failures print one JSON error
//! record to stderr.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use bandcast::{Error, Result};
use clap::{Parser, Subcommand};

use bandcast_cli::config::parse_config;
use bandcast_cli::data::ingest;
use bandcast_cli::run::{
    run_bench, run_estimate, run_forecast, BenchSuite, ForecastOptions,
};
use bandcast_cli::scenario::parse_scenario;

#[derive(Parser)]
#[command(name = "bandcast", version, about = "Banded-precision conditional forecasting for VARs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate the model and write posterior-mean tables.
    Estimate {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_name = "CSV")]
        data: PathBuf,
        /// Prior backend: acp or niw.
        #[arg(long, default_value = "acp")]
        prior: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long = "burn-in")]
        burn_in: Option<usize>,
        #[arg(long = "output-dir", value_name = "DIR")]
        output_dir: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Forecast under the constraints of a scenario file.
    Forecast {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long, value_name = "CSV")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long = "burn-in")]
        burn_in: Option<usize>,
        #[arg(long = "output-dir", value_name = "DIR")]
        output_dir: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        /// Also write every raw forecast draw.
        #[arg(long = "emit-draws")]
        emit_draws: bool,
        /// Also write conditional-minus-unconditional difference quantiles.
        #[arg(long)]
        difference: bool,
    },
    /// Time the sampler backends on the simulation grid.
    Bench {
        /// Grid: equality, inequality, or both.
        #[arg(long, default_value = "both")]
        suite: String,
        /// Forecast draws per timed cell.
        #[arg(long, default_value_t = 1_000)]
        draws: usize,
        /// Timed repetitions per cell (median reported).
        #[arg(long = "timing-runs", default_value_t = 5)]
        timing_runs: usize,
        #[arg(long = "output-dir", value_name = "DIR")]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::DimensionMismatch(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn write_output(dir: &PathBuf, name: &str, content: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), content)?;
    Ok(())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Estimate {
            config,
            data,
            prior,
            seed,
            draws,
            burn_in,
            output_dir,
            threads,
        } => {
            set_threads(threads)?;
            let cfg = parse_config(&config)?;
            let dataset = ingest(&data, &cfg.series, cfg.start, cfg.end)?;
            let prior = match prior.as_str() {
                "acp" => bandcast_cli::scenario::PriorChoice::Acp,
                "niw" => bandcast_cli::scenario::PriorChoice::Niw,
                other => {
                    return Err(Error::Parse {
                        line: 0,
                        message: format!("unknown prior '{other}' (use acp or niw)"),
                    })
                }
            };
            let mut est = bandcast_cli::scenario::EstimationSettings {
                prior,
                ..Default::default()
            };
            if let Some(s) = seed {
                est.seed = s;
            }
            if let Some(d) = draws {
                est.draws = d;
            }
            if let Some(b) = burn_in {
                est.burn_in = b;
            }
            let out = run_estimate(&dataset, cfg.lags, &est)?;
            write_output(&output_dir, "estimation_summary.txt", &out.summary)?;
            write_output(&output_dir, "estimates.csv", &out.estimates_csv)?;
            println!("{}", out.summary.trim_end());
            Ok(())
        }
        Cmd::Forecast {
            config,
            data,
            scenario,
            seed,
            draws,
            burn_in,
            output_dir,
            threads,
            emit_draws,
            difference,
        } => {
            set_threads(threads)?;
            let cfg = parse_config(&config)?;
            let dataset = ingest(&data, &cfg.series, cfg.start, cfg.end)?;
            let mut sc = parse_scenario(&scenario)?;
            if let Some(s) = seed {
                sc.estimation.seed = s;
            }
            if let Some(d) = draws {
                sc.estimation.draws = d;
            }
            if let Some(b) = burn_in {
                sc.estimation.burn_in = b;
            }
            let out = run_forecast(
                &dataset,
                cfg.lags,
                &sc,
                ForecastOptions {
                    emit_draws,
                    emit_difference: difference,
                },
            )?;
            write_output(&output_dir, "forecast_summary.txt", &out.summary)?;
            write_output(&output_dir, "forecast_quantiles.csv", &out.quantiles_csv)?;
            if let Some(diff) = &out.difference_csv {
                write_output(&output_dir, "difference_quantiles.csv", diff)?;
            }
            if let Some(draws) = &out.draws_csv {
                write_output(&output_dir, "forecast_draws.csv", draws)?;
            }
            println!("{}", out.summary.trim_end());
            Ok(())
        }
        Cmd::Bench {
            suite,
            draws,
            timing_runs,
            output_dir,
            threads,
        } => {
            set_threads(threads)?;
            let table = run_bench(BenchSuite::parse(&suite)?, draws, timing_runs)?;
            if let Some(dir) = &output_dir {
                write_output(dir, "bench_table.csv", &table)?;
            }
            print!("{table}");
            Ok(())
        }
    }
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "{{\"error\":\"{}\",\"message\":\"{}\"}}",
                e.kind(),
                json_escape(&e.to_string())
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
