//! Command line front end: run scenarios, compare policies, check files.
//!
//! Exit codes: 0 success, 1 validation violations, 2 unusable input
//! (arguments, config, or file grammar), 3 numerical divergence.

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use spillway::controllers::CONTROLLER_NAMES;
use spillway::env::{builtin_names, load_scenario, EnvError};
use spillway::hydro::{EngineConfig, EngineError};
use spillway::inp::{parse_inp, InpError};
use spillway::runner::{compare, run_spec, RunError, RunOptions, RunResult};

#[derive(Parser)]
#[command(name = "spillway", version, about = "Stormwater control simulation sandbox")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one controller and print its score.
    Run {
        /// Built-in scenario name or path to a scenario YAML file.
        scenario: String,
        /// Controller to drive the scenario with.
        #[arg(long, default_value = "uncontrolled")]
        controller: String,
        /// Total release budget for policies that take one, m³/s.
        #[arg(long)]
        release_goal_m3s: Option<f64>,
        /// Write the full step trace to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the scenario duration, s.
        #[arg(long)]
        duration_s: Option<f64>,
        /// Override the control timestep, s.
        #[arg(long)]
        timestep_s: Option<f64>,
        /// Upper bound on the integration substep, s.
        #[arg(long)]
        max_substep_s: Option<f64>,
    },
    /// Run one scenario under several controllers and tabulate the results.
    Compare {
        /// Built-in scenario name or path to a scenario YAML file.
        scenario: String,
        /// Comma-separated controller names.
        #[arg(long, value_delimiter = ',', default_values_t = CONTROLLER_NAMES.map(String::from))]
        controllers: Vec<String>,
        #[arg(long)]
        release_goal_m3s: Option<f64>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        #[arg(long)]
        max_substep_s: Option<f64>,
    },
    /// Check a scenario YAML or a network .inp file without running it.
    Validate {
        /// Built-in scenario name, scenario YAML path, or .inp path.
        target: String,
    },
    /// List the scenarios compiled into this binary.
    Scenarios,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

fn main() {
    // Die silently on a closed pipe like any other filter would; the
    // default Rust behaviour is a panic from println!.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run {
            scenario,
            controller,
            release_goal_m3s,
            out,
            duration_s,
            timestep_s,
            max_substep_s,
        } => cmd_run(
            &scenario,
            controller,
            release_goal_m3s,
            out,
            duration_s,
            timestep_s,
            max_substep_s,
        ),
        Command::Compare {
            scenario,
            controllers,
            release_goal_m3s,
            format,
            max_substep_s,
        } => cmd_compare(&scenario, &controllers, release_goal_m3s, format, max_substep_s),
        Command::Validate { target } => cmd_validate(&target),
        Command::Scenarios => {
            for name in builtin_names() {
                println!("{name}");
            }
            0
        }
    };
    std::process::exit(code);
}

fn engine_config(max_substep_s: Option<f64>) -> EngineConfig {
    let mut config = EngineConfig::default();
    if let Some(s) = max_substep_s {
        config.max_substep_s = s;
    }
    config
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario: &str,
    controller: String,
    release_goal_m3s: Option<f64>,
    out: Option<PathBuf>,
    duration_s: Option<f64>,
    timestep_s: Option<f64>,
    max_substep_s: Option<f64>,
) -> i32 {
    let loaded = match load_scenario(scenario) {
        Ok(l) => l,
        Err(e) => return report_env(&e),
    };
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let mut spec = loaded.spec;
    if let Some(d) = duration_s {
        spec.duration_s = d;
    }
    if let Some(t) = timestep_s {
        spec.control_timestep_s = t;
    }
    let options = RunOptions {
        controller,
        release_goal_m3s,
        engine: engine_config(max_substep_s),
    };
    let result = match run_spec(spec, &options) {
        Ok(r) => r,
        Err(e) => return report_run(&e),
    };
    println!(
        "scenario={} controller={} steps={}",
        result.scenario,
        result.controller,
        result.trace.records.len()
    );
    println!("performance={}", result.performance());
    println!("peak_outfall_m3s={}", result.trace.peak_outfall_m3s());
    println!("total_flood_m3={}", result.trace.total_flood_m3());
    if let Some(path) = out {
        if let Err(e) = fs::write(&path, result.trace.to_csv()) {
            eprintln!("error: cannot write {}: {e}", path.display());
            return 2;
        }
        eprintln!("trace written to {}", path.display());
    }
    0
}

fn cmd_compare(
    scenario: &str,
    controllers: &[String],
    release_goal_m3s: Option<f64>,
    format: Format,
    max_substep_s: Option<f64>,
) -> i32 {
    let loaded = match load_scenario(scenario) {
        Ok(l) => l,
        Err(e) => return report_env(&e),
    };
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let results = match compare(
        &loaded.spec,
        controllers,
        release_goal_m3s,
        engine_config(max_substep_s),
    ) {
        Ok(r) => r,
        Err(e) => return report_run(&e),
    };
    let rows: Vec<[String; 4]> = results.iter().map(summary_row).collect();
    let header = ["controller", "performance", "peak_outfall_m3s", "total_flood_m3"];
    match format {
        Format::Csv => {
            println!("{}", header.join(","));
            for row in rows {
                println!("{}", row.join(","));
            }
        }
        Format::Table => {
            let mut widths = header.map(str::len);
            for row in &rows {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.len());
                }
            }
            let line = |cells: [&str; 4]| {
                cells
                    .iter()
                    .zip(widths)
                    .map(|(c, w)| format!("{c:<w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            println!("{}", line(header));
            for row in &rows {
                println!("{}", line([&row[0], &row[1], &row[2], &row[3]]));
            }
        }
    }
    0
}

fn summary_row(result: &RunResult) -> [String; 4] {
    [
        result.controller.clone(),
        format!("{}", result.performance()),
        format!("{}", result.trace.peak_outfall_m3s()),
        format!("{}", result.trace.total_flood_m3()),
    ]
}

fn cmd_validate(target: &str) -> i32 {
    if target.ends_with(".inp") {
        let text = match fs::read_to_string(target) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {target}: {e}");
                return 2;
            }
        };
        match parse_inp(&text) {
            Ok(parsed) => {
                for w in &parsed.warnings {
                    eprintln!("warning: {w}");
                }
                println!(
                    "ok: {} nodes, {} links, {} subcatchments",
                    parsed.network.nodes().len(),
                    parsed.network.links().len(),
                    parsed.network.subcatchments().len()
                );
                0
            }
            Err(InpError::Invalid(violations)) => {
                for v in &violations {
                    println!("violation: {v}");
                }
                1
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        }
    } else {
        match load_scenario(target) {
            Ok(loaded) => {
                for w in &loaded.warnings {
                    eprintln!("warning: {w}");
                }
                let spec = &loaded.spec;
                println!(
                    "ok: scenario {} ({} nodes, {} links, {} steps of {} s)",
                    spec.name,
                    spec.network.nodes().len(),
                    spec.network.links().len(),
                    spec.steps(),
                    spec.control_timestep_s
                );
                0
            }
            Err(EnvError::Inp(InpError::Invalid(violations))) => {
                for v in &violations {
                    println!("violation: {v}");
                }
                1
            }
            Err(e @ (EnvError::InvalidNetwork(_) | EnvError::Spec(_))) => {
                println!("violation: {e}");
                1
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        }
    }
}

fn report_env(err: &EnvError) -> i32 {
    eprintln!("error: {err}");
    env_exit_code(err)
}

fn report_run(err: &RunError) -> i32 {
    eprintln!("error: {err}");
    match err {
        RunError::Env(e) => env_exit_code(e),
        RunError::Controller(_) => 2,
    }
}

fn env_exit_code(err: &EnvError) -> i32 {
    match err {
        EnvError::Inp(InpError::Invalid(_)) | EnvError::InvalidNetwork(_) | EnvError::Spec(_) => 1,
        EnvError::Engine(EngineError::NonFinite { .. }) => 3,
        EnvError::Engine(EngineError::BadNetwork(_)) => 1,
        _ => 2,
    }
}
