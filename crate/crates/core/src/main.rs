use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use emergent_qm::experiment::{parse_config, run_experiment, ConfigIssue, ExperimentError, TOOL, VERSION};

#[derive(Parser)]
#[command(name = "emergent-qm", version, about = "Run declarative classical/quantum moment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output directory; overrides `output_dir` in the config (default `out`).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only errors on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run { config: PathBuf },
    /// Parse and validate a config without running it.
    Validate { config: PathBuf },
    /// Print the tool version.
    Version,
}

fn load(path: &PathBuf, seed: Option<u64>) -> Result<(emergent_qm::experiment::ExperimentConfig, String), ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ExperimentError::Invalid(vec![ConfigIssue { path: String::new(), line: None, message: format!("cannot read {}: {e}", path.display()) }])
    })?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok((cfg, text))
}

fn execute(cli: &Cli) -> Result<(), ExperimentError> {
    match &cli.command {
        Command::Version => println!("{TOOL} {VERSION}"),
        Command::Validate { config } => {
            let (cfg, _) = load(config, cli.seed)?;
            if !cli.quiet {
                println!("{}: valid {} experiment", config.display(), cfg.experiment);
            }
        }
        Command::Run { config } => {
            let (cfg, text) = load(config, cli.seed)?;
            let out = cli
                .output_dir
                .clone()
                .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out"));
            let run = || run_experiment(&cfg, &text, &out);
            let written = match cli.threads {
                Some(n) => rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| ExperimentError::Io { path: "<thread pool>".into(), message: e.to_string() })?
                    .install(run)?,
                None => run()?,
            };
            for path in written {
                log::info!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e.to_json()).expect("json value"));
            if !cli.quiet {
                eprintln!("{e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
