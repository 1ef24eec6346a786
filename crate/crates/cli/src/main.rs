//! `vpn`: train, evaluate and visualize variational positive-incentive
//! noise generators.

mod commands;
mod data;
mod settings;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::Overrides;

#[derive(Parser)]
#[command(name = "vpn", version, about = "Variational positive-incentive noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train in baseline, random, joint or fixed_base mode.
    Train(Overrides),
    /// Test accuracy of saved checkpoints, with or without noise.
    Eval(Overrides),
    /// Export variance heatmaps, noise and noisy composites for test samples.
    Visualize(Overrides),
}

pub enum Failure {
    /// Bad configuration, missing data or incompatible inputs.
    Usage(anyhow::Error),
    Diverged(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Diverged(e) | Failure::Runtime(e) => e,
        }
    }
}

pub trait OrUsage<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrUsage<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(o) => commands::train(o),
        Command::Eval(o) => commands::eval(o),
        Command::Visualize(o) => commands::visualize(o),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.exit_code())
        }
    }
}
