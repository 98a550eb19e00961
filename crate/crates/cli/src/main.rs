//! Command-line front-end for the spectrum-market solver: equilibrium
//! solves, capacity sweeps, bundled scenario reproduction, configuration
//! validation, and oracle certification.
//!
//! Exit codes: 0 success, 1 validation or reproduction failure, 2 solver or
//! usage error. Outputs are deterministic: identical inputs give identical
//! bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use spectrum_market::model::Severity;
use spectrum_market::oracle::GridSpec;
use spectrum_market::sweep::{csv_header, csv_row, default_grid};
use spectrum_market::{
    certify_equilibrium, divided_capacity_sweep, presets, solve, sweep_capacity, validate_market,
    MarketConfig, SweepResult,
};

mod reproduce;

#[derive(Parser)]
#[command(
    name = "spectrum-market",
    version,
    about = "Price-competition equilibria for markets with a shared congestible band"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the pricing equilibrium of one market configuration.
    Solve {
        /// Market configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the unlicensed capacity from the configuration.
        #[arg(long)]
        capacity: Option<f64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Sweep the equilibrium over a grid of unlicensed capacities.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// CSV output path; the breakpoint sidecar lands next to it.
        #[arg(long)]
        output: PathBuf,
        /// Breakpoint/threshold sidecar path (default: <output>.breakpoints.json).
        #[arg(long)]
        breakpoints: Option<PathBuf>,
        /// Smallest positive capacity of the log-spaced grid.
        #[arg(long, default_value_t = 1e-3)]
        grid_min: f64,
        /// Largest capacity of the grid.
        #[arg(long, default_value_t = 10.0)]
        grid_max: f64,
        /// Number of log-spaced points (plus the C = 0 sample).
        #[arg(long, default_value_t = 400)]
        grid_points: usize,
        /// Absolute floor for flagging a price step as a jump.
        #[arg(long, default_value_t = spectrum_market::JUMP_TOL)]
        jump_tol: f64,
        /// Discrete welfare slopes below this count as flat.
        #[arg(long, default_value_t = spectrum_market::SLOPE_TOL)]
        slope_tol: f64,
        /// Also sweep the divided-capacity counterfactual among N incumbents,
        /// writing a second CSV with suffix `.divided.csv`.
        #[arg(long)]
        divided: Option<usize>,
    },
    /// Re-run a bundled scenario and compare against its reference values.
    Reproduce {
        /// One of: b1-w1, b1-w2, b2-symmetric, b3-heterogeneous.
        #[arg(long)]
        preset: String,
        /// Optional JSON report of the comparison rows.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Check a market configuration and report violations.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Solve and certify the equilibrium against grid deviations.
    Certify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        capacity: Option<f64>,
        /// Points of the deviation grid per price axis.
        #[arg(long, default_value_t = 2001)]
        grid_points: usize,
        /// Refinement passes around the best deviation.
        #[arg(long, default_value_t = 1)]
        refine: usize,
        /// Largest deviation gain still counted as an equilibrium.
        #[arg(long, default_value_t = spectrum_market::DEVIATION_GAIN_TOL)]
        gain_tol: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_market(path: &Path) -> Result<MarketConfig, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut deserializer = serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(&mut deserializer).map_err(|e| {
        format!(
            "{} at JSON path '{}': {}",
            path.display(),
            e.path(),
            e.inner()
        )
    })
}

fn write_or_print(output: &Option<PathBuf>, content: &str) -> Result<(), String> {
    match output {
        Some(path) => {
            fs::write(path, content).map_err(|e| format!("cannot write {}: {e}", path.display()))
        }
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Solve {
            config,
            capacity,
            output,
            format,
        } => {
            let market = match load_market(&config) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(1));
                }
            };
            let market = match capacity {
                Some(c) => market.with_capacity(c),
                None => market,
            };
            let result = solve(&market).map_err(|e| e.to_string())?;
            let content = match format {
                Format::Json => {
                    let wrapped = serde_json::json!({
                        "providers": market.providers.iter().map(|p| p.id.clone()).collect::<Vec<_>>(),
                        "result": result,
                    });
                    serde_json::to_string_pretty(&wrapped).unwrap()
                }
                Format::Csv => {
                    let mut text = csv_header(&market).join(",");
                    text.push('\n');
                    text.push_str(&csv_row(&market, market.unlicensed.capacity, &result).join(","));
                    text
                }
            };
            write_or_print(&output, &content)?;
            Ok(ExitCode::SUCCESS)
        }

        Command::Sweep {
            config,
            output,
            breakpoints,
            grid_min,
            grid_max,
            grid_points,
            jump_tol,
            slope_tol,
            divided,
        } => {
            let market = match load_market(&config) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(1));
                }
            };
            let grid = default_grid(grid_min, grid_max, grid_points);
            let mut sweep = sweep_capacity(&market, &grid).map_err(|e| e.to_string())?;
            sweep.breakpoints =
                spectrum_market::detect_breakpoints(&market, &sweep.samples, jump_tol, slope_tol);
            write_sweep_csv(&market, &sweep, &output)?;
            let sidecar = breakpoints.unwrap_or_else(|| {
                let mut p = output.clone();
                p.set_extension("breakpoints.json");
                p
            });
            let side = serde_json::json!({
                "thresholds": sweep.thresholds,
                "breakpoints": sweep.breakpoints,
                "errors": sweep
                    .samples
                    .iter()
                    .filter_map(|s| s.error.as_ref().map(|e| serde_json::json!({"C": s.capacity, "error": e})))
                    .collect::<Vec<_>>(),
            });
            fs::write(&sidecar, serde_json::to_string_pretty(&side).unwrap())
                .map_err(|e| format!("cannot write {}: {e}", sidecar.display()))?;

            if let Some(n) = divided {
                let div = divided_capacity_sweep(&market, &grid, n).map_err(|e| e.to_string())?;
                let mut path = output.clone();
                path.set_extension("divided.csv");
                write_sweep_csv(&market, &div, &path)?;
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Reproduce { preset, output } => {
            let Some(report) = reproduce::run(&preset) else {
                return Err(format!(
                    "unknown preset '{preset}' (expected one of {})",
                    presets::PRESET_NAMES.join(", ")
                ));
            };
            print!("{}", report.render());
            if let Some(path) = output {
                fs::write(&path, serde_json::to_string_pretty(&report.rows).unwrap())
                    .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            }
            Ok(if report.all_pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }

        Command::Validate { config } => {
            let market = match load_market(&config) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(1));
                }
            };
            let report = validate_market(&market);
            for v in &report.violations {
                let tag = match v.severity {
                    Severity::Error => "error",
                    Severity::Warning => "warning",
                    Severity::Note => "note",
                };
                println!("{tag}: {}: {}", v.field, v.message);
            }
            if report.is_structurally_valid() {
                println!("configuration is structurally valid");
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }

        Command::Certify {
            config,
            capacity,
            grid_points,
            refine,
            gain_tol,
            output,
        } => {
            let market = match load_market(&config) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(1));
                }
            };
            let market = match capacity {
                Some(c) => market.with_capacity(c),
                None => market,
            };
            let mut result = solve(&market).map_err(|e| e.to_string())?;
            let hi = market
                .classes
                .iter()
                .map(|c| c.demand.choke_price())
                .fold(0.0, f64::max);
            let grid = GridSpec::new(0.0, hi, grid_points, refine).map_err(|e| e.to_string())?;
            let cert = certify_equilibrium(&market, &result, &grid).map_err(|e| e.to_string())?;
            result.attach_certificate(cert.clone());
            let content = serde_json::to_string_pretty(&serde_json::json!({
                "equilibrium": result,
            }))
            .unwrap();
            write_or_print(&output, &content)?;
            if cert.max_gain <= gain_tol {
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "certification failed: {:?} gains {:.3e}",
                    cert.worst_deviator, cert.max_gain
                );
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn write_sweep_csv(market: &MarketConfig, sweep: &SweepResult, path: &Path) -> Result<(), String> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    writer
        .write_record(csv_header(market))
        .map_err(|e| e.to_string())?;
    for sample in &sweep.samples {
        if let Some(result) = &sample.result {
            writer
                .write_record(csv_row(market, sample.capacity, result))
                .map_err(|e| e.to_string())?;
        }
    }
    writer.flush().map_err(|e| e.to_string())?;
    Ok(())
}
