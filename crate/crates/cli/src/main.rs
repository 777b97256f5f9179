mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gridlife", version, about = "Life-cycle-aware microgrid battery dispatch")]
struct Cli {
    /// Seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output artifact (a directory for `report`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    #[arg(long)]
    model_cyc: PathBuf,
    #[arg(long)]
    model_cal: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Turn per-cell cycler logs into degradation samples.
    ProcessData {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Draw a synthetic labelled fleet, or raw cell logs with `--raw-cells`.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write per-cell logs into the `--out` directory instead.
        #[arg(long)]
        raw_cells: bool,
    },
    /// Fit one quantile ensemble for an aging mode.
    Train {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long, default_value = "cyclic")]
        mode: String,
        /// Hyperparameter JSON; defaults apply to absent keys.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        quantiles: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
        split: Vec<f64>,
    },
    /// Predict sorted rate quantiles for a feature CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
    },
    /// Solve one day, single shot or rolling.
    Dispatch {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        battery: PathBuf,
        #[arg(long, default_value = "0,0,0,0")]
        theta: String,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        /// Run the rolling dispatch with this relative forecast error.
        #[arg(long)]
        forecast_sigma: Option<f64>,
    },
    /// Worst-case life-cycle simulation for one θ.
    Simulate {
        #[arg(long)]
        theta: String,
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        models: ModelArgs,
    },
    /// Tune θ with particle swarm optimisation.
    Tune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pso: Option<PathBuf>,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long, default_value = "ro")]
        policy: String,
    },
    /// Tune and evaluate policies side by side.
    Compare {
        #[arg(long, value_delimiter = ',', default_value = "benchmark,sp,ro,nousage")]
        policies: Vec<String>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pso: Option<PathBuf>,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        mc_paths: Option<usize>,
    },
    /// Re-tune the robust policy along one parameter.
    Sweep {
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pso: Option<PathBuf>,
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        mc_paths: Option<usize>,
    },
    /// Figure-ready CSVs from earlier artifacts.
    Report {
        /// Samples file; the test split is recomputed from `--seed`.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        model_cyc: Option<PathBuf>,
        #[arg(long)]
        model_cal: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.6,0.2,0.2")]
        split: Vec<f64>,
        /// JSON written next to a `compare` table.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        traces: Vec<PathBuf>,
        #[arg(long, default_value_t = 30)]
        bins: usize,
    },
    /// Check a bundle of inputs before a long run.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        battery: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        pso: Option<PathBuf>,
        #[arg(long)]
        model_cyc: Option<PathBuf>,
        #[arg(long)]
        model_cal: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
}

fn init_threads() -> Result<(), String> {
    if let Ok(v) = std::env::var("GRIDLIFE_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| format!("GRIDLIFE_THREADS must be a positive integer, got '{v}'"))?;
        if n == 0 {
            return Err("GRIDLIFE_THREADS must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).format_timestamp(None).init();
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let result = std::panic::catch_unwind(|| commands::run(&cli));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(5),
    }
}
