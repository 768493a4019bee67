use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ristopo::scenario::{self, LoadedConfig, Scenario, ScenarioConfig, Stage};

#[derive(Parser, Debug)]
#[command(name = "ristopo", version, about = "Topology planning, RIS control and delayed-consensus experiments")]
struct Cli {
    /// Scenario file (TOML with dotted keys). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Laplacian spectrum, delay bound and Cheeger quantities.
    Spectrum,
    /// Topology-criteria audit of the configured graph.
    Audit,
    /// Plan constructive and deconstructive links.
    Plan,
    /// Delayed-consensus stability sweep.
    Consensus,
    /// Train the DDPG phase-shift controller.
    TrainRis,
    /// Evaluate a trained controller on held-out channel draws.
    EvalRis,
    /// Federated-learning benchmark across sharing modes.
    Fl,
    /// Summarize artifacts in the output directory.
    Report,
    /// Run the stages listed in the config's `stages` key.
    Run,
}

fn load(cli: &Cli) -> ristopo::Result<LoadedConfig> {
    let mut loaded = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::parse("")?,
    };
    if let Some(seed) = cli.seed {
        loaded.config.seed = seed;
        loaded.explicit_keys.insert("seed".into());
        loaded.config.validate()?;
    }
    Ok(loaded)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let loaded = match load(&cli) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };

    if let Command::Report = cli.command {
        return match scenario::report(&cli.out) {
            Ok(r) => {
                print!("{}", r.summary);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("report failed: {e}");
                ExitCode::from(1)
            }
        };
    }

    let stages = match cli.command {
        Command::Spectrum => vec![Stage::Spectrum],
        Command::Audit => vec![Stage::Audit],
        Command::Plan => vec![Stage::Plan],
        Command::Consensus => vec![Stage::ConsensusSweep],
        Command::TrainRis => vec![Stage::TrainRis],
        Command::EvalRis => vec![Stage::EvaluateRis],
        Command::Fl => vec![Stage::FlBench],
        Command::Run => loaded.config.stages.clone(),
        Command::Report => unreachable!(),
    };
    let run = Scenario::new(loaded, &cli.out);
    match run.run(&stages) {
        Ok(files) => {
            for f in files {
                println!("{}", cli.out.join(f).display());
            }
            println!("{}", cli.out.join("manifest.txt").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(1)
        }
    }
}
