//! `pushxfer`: train push models on one object, transfer them to others,
//! evaluate against the simulator.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pushxfer::pipeline::{Predictor, Scale};

#[derive(Parser, Debug)]
#[command(name = "pushxfer", version, about = "Contact-based transferable push forward models")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Line-oriented `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Preset the config starts from; overrides the config.
    #[arg(long, global = true)]
    pub scale: Option<Scale>,
    /// Predictor variants (repeatable or comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    pub predictor: Vec<Predictor>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample point clouds of shapes (config: `shape = kind dims...` lines).
    GenShapes {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate training pushes and learn contact and motion models.
    Train {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a query density for a point cloud and draw link poses from it.
    Query {
        /// Contact model JSON.
        #[arg(long)]
        model: PathBuf,
        /// Point cloud (.ply or .csv).
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        /// Keep only poses feasible for this link (front or side).
        #[arg(long)]
        link: Option<String>,
        /// Also write the query density JSON here.
        #[arg(long)]
        density_out: Option<PathBuf>,
    },
    /// Predict pushes of one object from a trained model directory.
    Predict {
        #[arg(long)]
        models: PathBuf,
        /// Shape spec, e.g. "cylinder 0.1 0.2".
        #[arg(long, default_value = "cylinder 0.1 0.2")]
        object: String,
        #[arg(long, default_value = "front")]
        link: String,
        /// Restrict to one action (linear, left, right).
        #[arg(long)]
        action: Option<String>,
        /// Training pushes per motion model; defaults to the largest trained size.
        #[arg(long)]
        size: Option<usize>,
        /// Query pose index.
        #[arg(long, default_value_t = 0)]
        query: usize,
    },
    /// Run the test protocol and write per-push and summary reports.
    Evaluate {
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Training-set sizes (repeatable); defaults to every trained size.
        #[arg(long, value_delimiter = ',')]
        size: Vec<usize>,
        /// Also grid-search bandwidth factors {0.5, 1, 2} on a validation set.
        #[arg(long)]
        grid_search: bool,
    },
    /// Recompute summary and plot data from a per-push CSV.
    Report {
        /// pushes-N.csv written by `evaluate`.
        #[arg(long)]
        input: PathBuf,
        /// Output directory; defaults to the input's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(code: &str, message: &str) -> String {
    serde_json::json!({ "error": code, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help, --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", fail("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", fail(e.code(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
