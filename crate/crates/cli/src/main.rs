use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use stimkit::ErrorKind;
use stimkit_cli::{run, PipelineConfig, DEFAULT_CONFIG};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Simulate,
    Match,
    Did,
    Forest,
    Ale,
    Incidence,
    Welfare,
    Target,
    Tree,
    Hybrid,
    All,
}

/// Evaluation and targeting pipeline for threshold-coupon stimulus programs.
#[derive(Debug, Parser)]
#[command(name = "stimkit", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Key-value config file, or a run manifest to replay.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "stimkit_out")]
    out: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = if args.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let cfg = match &args.config {
        Some(p) => PipelineConfig::load(p, args.seed),
        None => PipelineConfig::from_text(DEFAULT_CONFIG, args.seed),
    };
    let name = args
        .command
        .to_possible_value()
        .expect("subcommands have names")
        .get_name()
        .to_string();
    match cfg.and_then(|c| run(&name, &c, &args.out)) {
        Ok(m) => {
            if !args.quiet {
                let n: usize = m.stages.iter().map(|s| s.outputs.len()).sum();
                println!("{name}: wrote {n} artifacts to {}", args.out.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Estimation => 4,
            })
        }
    }
}
