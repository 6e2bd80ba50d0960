mod args;
mod commands;
mod dataset;

use std::process::ExitCode;

use clap::Parser;
use surfel_slam::Error;

use crate::args::{Cli, Command};

/// Exit status for a failed command: 1 usage or configuration, 2 data,
/// 3 tracking failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Tracking { .. }) => 3,
        Some(Error::Config(_) | Error::InvalidInput(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SURFSLAM_LOG", "info")).init();
    surfel_slam::par::init_thread_pool(cli.threads);

    let result = match &cli.command {
        Command::Run(a) => commands::run(a),
        Command::EvalAte(a) => commands::eval_ate(a),
        Command::EvalGeom(a) => commands::eval_geom(a),
        Command::Basin(a) => commands::basin(a),
        Command::RenderDebug(a) => commands::render_debug(a),
        Command::MakeSynthetic(a) => commands::make_synthetic(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
