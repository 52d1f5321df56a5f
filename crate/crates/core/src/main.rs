use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bilex_core::pipeline::{
    cmd_lexicon, cmd_probe, cmd_report, cmd_stats, cmd_tokenize, cmd_train, write_demo, ConditionSelector, Run,
    RunOptions,
};
use bilex_core::synthetic::SyntheticConfig;
use bilex_core::{Error, Result};

#[derive(Parser)]
#[command(name = "bilex", version = bilex_core::pipeline::VERSION, about = "Bilingual vocabulary-sharing workbench")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Condition to run: A, B, C, D or all.
    #[arg(long, global = true, value_parser = parse_condition)]
    condition: Option<ConditionSelector>,
    /// Output root; the run directory is <out>/<config hash>.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces the model, data-order and probe seeds.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single worker thread.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Frequency tables, overlap classes and condition manifests.
    Lexicon,
    /// Tokenizer models for each condition.
    Tokenize,
    /// Model checkpoints and loss logs.
    Train,
    /// Surprisal and similarity CSVs.
    Probe,
    /// Mixed-effects fits and the per-study summary.
    Stats,
    /// Markdown report over all stage outputs.
    Report,
    /// Writes a synthetic data set and a config for it.
    Synth {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_condition(s: &str) -> std::result::Result<ConditionSelector, String> {
    ConditionSelector::parse(s).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    if let Command::Synth { dir, seed } = &cli.command {
        let path = write_demo(dir, &SyntheticConfig { seed: *seed, ..Default::default() })?;
        println!("{}", path.display());
        return Ok(());
    }
    let config = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let opts = RunOptions {
        condition: cli.condition,
        out: cli.out.clone(),
        seed_override: cli.seed_override,
    };
    let run = Run::load(config, &opts)?;
    log::info!("run directory {}", run.dir.display());
    let written = match cli.command {
        Command::Lexicon => cmd_lexicon(&run)?,
        Command::Tokenize => cmd_tokenize(&run)?,
        Command::Train => cmd_train(&run)?,
        Command::Probe => cmd_probe(&run)?,
        Command::Stats => cmd_stats(&run)?,
        Command::Report => vec![cmd_report(&run)?],
        Command::Synth { .. } => unreachable!("handled above"),
    };
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
