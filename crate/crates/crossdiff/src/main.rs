//! crossdiff command-line interface.

use clap::{Parser, Subcommand};
use crossdiff::cli::{
    emit_plotdata, parse_config, preset_config, run_experiment, ExperimentConfig, PRESET_NAMES,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "crossdiff", version, about = "Numerical laboratory for degenerate cross-diffusion systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides `out` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a built-in preset.
    Preset {
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Seed for the samplers.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Flatten a report directory into plot-ready CSV files.
    Plotdata { dir: PathBuf },
    /// Structure checks only, against the model in the config.
    Check { config: PathBuf },
}

fn init_threads() {
    if let Ok(v) = std::env::var("CROSSDIFF_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, crossdiff::CrossDiffError> {
    let text = std::fs::read_to_string(path)?;
    let parsed = parse_config(&text)?;
    // A preset name pulls in the preset defaults; explicit sections override them.
    if let Some(name) = &parsed.preset {
        let mut resolved = preset_config(name)?;
        resolved.seed = parsed.seed;
        resolved.verbosity = parsed.verbosity;
        if parsed.out.is_some() {
            resolved.out = parsed.out.clone();
        }
        if parsed.grid.is_some() {
            resolved.grid = parsed.grid.clone();
        }
        if parsed.model.is_some() {
            resolved.model = parsed.model.clone();
        }
        if parsed.reaction.is_some() {
            resolved.reaction = parsed.reaction.clone();
        }
        if parsed.solver.is_some() {
            resolved.solver = parsed.solver.clone();
        }
        if parsed.cascade.is_some() {
            resolved.cascade = parsed.cascade.clone();
        }
        if parsed.monitors.is_some() {
            resolved.monitors = parsed.monitors.clone();
        }
        Ok(resolved)
    } else {
        Ok(parsed)
    }
}

fn run() -> Result<bool, crossdiff::CrossDiffError> {
    let cli = Cli::parse();
    init_threads();
    match cli.command {
        Command::Run { config, out } => {
            let resolved = load_config(&config)?;
            let out_dir = out
                .or_else(|| resolved.out.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("crossdiff-out"));
            let outcome = run_experiment(&resolved, &out_dir)?;
            for (name, verdict) in &outcome.verdicts {
                println!("{verdict}  {name}");
            }
            println!("report: {}", outcome.report_path.display());
            Ok(outcome.all_pass)
        }
        Command::Preset { name, out, seed } => {
            if !PRESET_NAMES.contains(&name.as_str()) {
                eprintln!("unknown preset `{name}`; available: {PRESET_NAMES:?}");
                return Ok(false);
            }
            let mut config = preset_config(&name)?;
            config.seed = seed;
            let outcome = run_experiment(&config, &out)?;
            for (vname, verdict) in &outcome.verdicts {
                println!("{verdict}  {vname}");
            }
            println!("report: {}", outcome.report_path.display());
            Ok(outcome.all_pass)
        }
        Command::Plotdata { dir } => {
            let written = emit_plotdata(&dir)?;
            for path in written {
                println!("{}", path.display());
            }
            Ok(true)
        }
        Command::Check { config } => {
            let mut resolved = load_config(&config)?;
            resolved.preset = Some("structure_check".into());
            if resolved.model.is_none() {
                eprintln!("check needs a [model] section");
                return Ok(false);
            }
            let out_dir = resolved
                .out
                .clone()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("crossdiff-check"));
            let outcome = run_experiment(&resolved, &out_dir)?;
            for (name, verdict) in &outcome.verdicts {
                println!("{verdict}  {name}");
            }
            Ok(outcome.all_pass)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
