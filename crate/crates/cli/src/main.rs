//! `fsnet`: data generation, MESTOR encoding, training, verification and
//! energy replay from the command line.
//!
//! Settings resolve in this order, later wins: built-in defaults, the
//! `--config` file, `--seed`, then subcommand flags.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fsnet_core::network::Task;

#[derive(Parser)]
#[command(name = "fsnet", version, about = "Few-spikes neuron networks on event-camera data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON run configuration (sections data, mestor, network, train, loss, energy)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for data, initialization and shuffling; overrides the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic EVT1 clips and a labels manifest
    GenData {
        #[command(flatten)]
        common: Common,
        /// Scene spec JSON; every clip reuses it with a derived seed
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of clips (overrides data.clips)
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode one event file into ST, S and T channels
    Encode {
        #[command(flatten)]
        common: Common,
        /// EVT1 or CSV (by extension) event file
        #[arg(long)]
        input: PathBuf,
        /// Sensor width, required for CSV input
        #[arg(long)]
        width: Option<u32>,
        #[arg(long)]
        height: Option<u32>,
        /// Accept timestamps up to this many µs behind the latest one
        #[arg(long, default_value_t = 0)]
        reorder_window: u64,
        /// Number of time bins (overrides mestor.N)
        #[arg(long)]
        bins: Option<usize>,
        /// Bin length in µs (overrides mestor.dt_us)
        #[arg(long)]
        dt_us: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network and write its checkpoint and metrics log
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory written by gen-data (overrides data.dir)
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check spike/surrogate agreement and analytic gradients
    Verify {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to verify; a fresh network from the config otherwise
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Random inputs for the agreement check
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Random inputs for the gradient check
        #[arg(long, default_value_t = 1)]
        grad_samples: usize,
        /// Upper bound on parameters compared per gradient-check input
        /// (evenly strided); 0 checks all
        #[arg(long, default_value_t = 1000)]
        grad_params: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay energy tables and optionally measure a trained network
    Energy {
        #[command(flatten)]
        common: Common,
        /// JSON rows (an array or a single row); the bundled tables otherwise
        #[arg(long)]
        rows: Option<PathBuf>,
        /// Also count operations of this checkpoint on generated clips
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "classification" => Ok(Task::Classification),
        "box-regression" => Ok(Task::BoxRegression),
        _ => Err(format!("unknown task {s:?} (classification | box-regression)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            common,
            spec,
            count,
            task,
            out,
        } => commands::gen_data(&common, spec.as_deref(), count, task, &out),
        Command::Encode {
            common,
            input,
            width,
            height,
            reorder_window,
            bins,
            dt_us,
            out,
        } => commands::encode(
            &common,
            &commands::EncodeArgs {
                input,
                geometry: width.zip(height),
                reorder_window,
                bins,
                dt_us,
                out,
            },
        ),
        Command::Train {
            common,
            data,
            epochs,
            lr,
            task,
            out,
        } => commands::train(&common, data, epochs, lr, task, &out),
        Command::Verify {
            common,
            checkpoint,
            samples,
            grad_samples,
            grad_params,
            out,
        } => commands::verify(
            &common,
            checkpoint.as_deref(),
            &commands::VerifyArgs {
                samples,
                grad_samples,
                grad_params,
            },
            out.as_deref(),
        ),
        Command::Energy {
            common,
            rows,
            checkpoint,
            tolerance,
            out,
        } => commands::energy(&common, rows.as_deref(), checkpoint.as_deref(), tolerance, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
