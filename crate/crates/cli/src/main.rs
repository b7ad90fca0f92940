use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use cltlab::report::Format;
use cltlab::runner::{self, Command, ErrorRecord, ExperimentConfig};
use cltlab::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliCommand {
    Spectral,
    Poisson,
    Martingale,
    Charfn,
    Rate,
    Integral,
    Doeblin,
    ConditionStar,
    Models,
}

impl From<CliCommand> for Command {
    fn from(c: CliCommand) -> Self {
        match c {
            CliCommand::Spectral => Command::Spectral,
            CliCommand::Poisson => Command::Poisson,
            CliCommand::Martingale => Command::Martingale,
            CliCommand::Charfn => Command::Charfn,
            CliCommand::Rate => Command::Rate,
            CliCommand::Integral => Command::Integral,
            CliCommand::Doeblin => Command::Doeblin,
            CliCommand::ConditionStar => Command::ConditionStar,
            CliCommand::Models => Command::Models,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutFormat {
    Csv,
    Json,
}

/// Berry-Esseen experiments for strongly ergodic Markov chains.
#[derive(Debug, Parser)]
#[command(name = "cltlab", version)]
struct Cli {
    command: CliCommand,
    /// JSON experiment configuration (optional for `models`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for Monte Carlo runs; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; CLTLAB_OUT takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write only this format instead of the configured ones.
    #[arg(long, value_enum)]
    format: Option<OutFormat>,
    /// Also write an SVG plot when the command has one.
    #[arg(long)]
    svg: bool,
    /// Upper bound on worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

fn out_dir(cli: &Cli, config: Option<&ExperimentConfig>) -> PathBuf {
    if let Some(dir) = std::env::var_os("CLTLAB_OUT").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    cli.out
        .clone()
        .or_else(|| config.and_then(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn load(cli: &Cli, command: Command) -> Result<ExperimentConfig, Error> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if command == Command::Models => ExperimentConfig::default(),
        None => return Err(Error::ConfigInvalid(format!("{command} needs --config"))),
    };
    if let Some(seed) = cli.seed {
        config.params.master_seed = Some(seed);
    }
    if let Some(f) = cli.format {
        config.output.formats = vec![match f {
            OutFormat::Csv => Format::Csv,
            OutFormat::Json => Format::Json,
        }];
    }
    config.output.svg |= cli.svg;
    Ok(config)
}

fn execute(cli: &Cli) -> Result<Vec<PathBuf>, (Error, PathBuf)> {
    let command = Command::from(cli.command);
    let config = load(cli, command).map_err(|e| (e, out_dir(cli, None)))?;
    let dir = out_dir(cli, Some(&config));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(k) = cli.workers {
        if k == 0 {
            return Err((Error::ConfigInvalid("--workers must be positive".into()), dir));
        }
        pool = pool.num_threads(k);
    }
    let pool = pool
        .build()
        .map_err(|e| (Error::InvalidArgument(e.to_string()), dir.clone()))?;
    pool.install(|| runner::execute(command, &config, &dir))
        .map_err(|e| (e, dir))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let record = ErrorRecord::new(&Error::ConfigInvalid(e.kind().to_string()));
            eprint!("{}", e.render());
            eprintln!("{}", record.to_json());
            return ExitCode::from(record.exit_code as u8);
        }
    };
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err((err, dir)) => {
            let record = ErrorRecord::new(&err);
            eprintln!("{}", record.to_json());
            runner::write_error_record(&record, &dir);
            ExitCode::from(record.exit_code as u8)
        }
    }
}
