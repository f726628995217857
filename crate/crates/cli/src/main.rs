//! `swarm-sar`: training, evaluation, model selection, mission simulation,
//! the allocation server and plot-data export.

mod commands;
mod load;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use load::Fatal;

#[derive(Parser)]
#[command(name = "swarm-sar", version, about = "Cooperative indoor UAV stack: training, evaluation and missions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Serialize)]
pub struct Common {
    /// Global seed.
    #[arg(long, env = "SWARM_SAR_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory (defaults to runs/<command>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Mapping,
    Delivery,
}

#[derive(Subcommand)]
enum Command {
    /// Train a guidance actor with TD3 on the world's loop course.
    TrainGuidance(commands::TrainGuidanceArgs),
    /// Train the GAT task allocator.
    TrainAlloc(commands::TrainAllocArgs),
    /// Evaluate guidance checkpoints and keep those above the goal threshold.
    SelectModels(commands::SelectModelsArgs),
    /// Fly seeded loop episodes with one guidance policy.
    EvalGuidance(commands::EvalGuidanceArgs),
    /// Run one allocation policy on one graph against greedy and the oracle.
    EvalAlloc(commands::EvalAllocArgs),
    /// Benchmark an allocation policy on seeded random graphs.
    BenchAlloc(commands::BenchAllocArgs),
    /// Run the altitude fuser on synthetic or recorded odometry.
    FuseAltitude(commands::FuseAltitudeArgs),
    /// Run the allocation server over TCP.
    Serve(commands::ServeArgs),
    /// Simulate a mapping or delivery mission, or fly one UAV against a server.
    Mission(commands::MissionArgs),
    /// Turn a trajectory or path CSV into x/y/z-versus-time plot data.
    Replay(commands::ReplayArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::TrainGuidance(a) => commands::train_guidance(a),
        Command::TrainAlloc(a) => commands::train_alloc(a),
        Command::SelectModels(a) => commands::select_models(a),
        Command::EvalGuidance(a) => commands::eval_guidance(a),
        Command::EvalAlloc(a) => commands::eval_alloc(a),
        Command::BenchAlloc(a) => commands::bench_alloc(a),
        Command::FuseAltitude(a) => commands::fuse_altitude(a),
        Command::Serve(a) => commands::serve(a),
        Command::Mission(a) => commands::mission(a),
        Command::Replay(a) => commands::replay(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<Fatal>() {
                Some(Fatal::World { .. }) => ExitCode::from(2),
                Some(Fatal::MissingCheckpoint(_)) => ExitCode::from(3),
                None => ExitCode::FAILURE,
            }
        }
    }
}
