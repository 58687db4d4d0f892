use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use commands::{Artifacts, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "cfs", version, about = "Contextual factor selection for linear rankers")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the actor-critic policy on the training part.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit one baseline, e.g. `--method lasso:0.05`. Without `--method`,
    /// fits every configured baseline into the masks directory.
    Baseline {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exhaustive oracle masks on the test part.
    Oracle {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare policies on the test part.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Mask files produced by `baseline` (repeatable).
        #[arg(long = "masks")]
        masks: Vec<PathBuf>,
        #[arg(long)]
        oracle: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render report.json files as one table.
    Report {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<String> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    }
    .with_seed(cli.seed);
    let paths = cfg.paths.clone();
    let or = |p: Option<PathBuf>, d: &PathBuf| p.unwrap_or_else(|| d.clone());
    match cli.command {
        Command::GenData { out } => commands::gen_data(&cfg, &or(out, &paths.dataset)),
        Command::Train { dataset, out, checkpoint } => commands::train(
            &cfg,
            &or(dataset, &paths.dataset),
            &or(out, &paths.checkpoint),
            checkpoint.as_deref(),
        ),
        Command::Baseline { dataset, method, out } => {
            let dataset = or(dataset, &paths.dataset);
            match method {
                Some(m) => {
                    let out = out.unwrap_or_else(|| {
                        paths.masks_dir.join(m.parse().map_or_else(|_| m.clone(), |s| commands::mask_file_name(&s)))
                    });
                    commands::baseline(&cfg, &dataset, &m, &out)
                }
                None => {
                    let dir = or(out, &paths.masks_dir);
                    let mut lines = Vec::new();
                    for spec in cfg.baseline_specs() {
                        let out = dir.join(commands::mask_file_name(&spec));
                        lines.push(commands::baseline(&cfg, &dataset, &spec.to_string(), &out)?);
                    }
                    Ok(lines.join("\n"))
                }
            }
        }
        Command::Oracle { dataset, out } => {
            commands::oracle(&cfg, &or(dataset, &paths.dataset), &or(out, &paths.oracle))
        }
        Command::Evaluate { dataset, checkpoint, masks, oracle, out } => {
            let artifacts = Artifacts { checkpoint, masks, oracle };
            commands::evaluate(&cfg, &or(dataset, &paths.dataset), &artifacts, &or(out, &paths.report_dir))
        }
        Command::Report { inputs, out } => {
            let inputs = if inputs.is_empty() { vec![paths.report_dir.join("report.json")] } else { inputs };
            let text = commands::report(&inputs)?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &text)
                        .map_err(|e| commands::CliError::new("io", format!("{}: {e}", path.display())))?;
                    Ok(format!("wrote {}", path.display()))
                }
                None => {
                    print!("{text}");
                    Ok(String::new())
                }
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(summary) => {
            if !summary.is_empty() {
                eprintln!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
