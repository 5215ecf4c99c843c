//! `centripetal`: encode scenes into target maps, detect boxes from map
//! directories, evaluate detections and run the synthetic benchmark.

mod commands;
mod config;
mod error;
mod maps;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use crate::commands::DcnPlot;
use crate::config::RunConfig;
use crate::error::{Classify, CmdResult};

#[derive(Debug, Parser)]
#[command(name = "centripetal", version, about = "Corner-pair detection pipeline tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON file setting any of the shared flags; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(flatten)]
    run: RunConfig,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Scene JSON to target tensors plus manifest.json.
    Encode {
        scene: PathBuf,
        out_dir: PathBuf,
        /// Fixed Gaussian radius in cells instead of the overlap rule.
        #[arg(long)]
        radius: Option<u32>,
    },
    /// Map directory to detections JSON.
    Detect {
        maps_dir: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Detections against a scene file, or a detection directory against a
    /// scene directory matched by file name.
    Eval {
        detections: PathBuf,
        ground_truth: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Runs a benchmark config and writes the report.
    Bench {
        config_file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// CTSR offset field to draw as a sampling-point scatter (needs --plot).
        #[arg(long)]
        dcn_offsets: Option<PathBuf>,
        /// Cells to draw, as `row,col`; defaults to the center cell.
        #[arg(long = "dcn-cell", value_parser = parse_cell)]
        dcn_cells: Vec<(usize, usize)>,
    },
}

fn parse_cell(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected row,col, got {s:?}"))?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((n(a)?, n(b)?))
}

fn run(cli: Cli) -> CmdResult<()> {
    let file = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cli.run.over(file);
    cfg.validate()?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("cannot start {n} threads: {e}"))
            .config()?;
    }
    match &cli.command {
        Command::Encode { scene, out_dir, radius } => commands::cmd_encode(scene, out_dir, *radius, &cfg),
        Command::Detect { maps_dir, output } => commands::cmd_detect(maps_dir, output.as_deref(), &cfg),
        Command::Eval { detections, ground_truth, output } => {
            commands::cmd_eval(detections, ground_truth, output.as_deref())
        }
        Command::Bench { config_file, output, dcn_offsets, dcn_cells } => {
            let dcn = dcn_offsets.as_deref().map(|offsets| DcnPlot { offsets, cells: dcn_cells });
            commands::cmd_bench(config_file, output.as_deref(), dcn, &cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
