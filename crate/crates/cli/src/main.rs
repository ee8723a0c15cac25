use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use latentctl_cli::{parse_config, run, CliError, THREADS_ENV};

/// Runs one pipeline stage described by a TOML config file.
#[derive(Parser, Debug)]
#[command(name = "latentctl", version)]
struct Args {
    /// Stage configuration.
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `paths.output`.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    generator: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    trajectories: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
}

fn execute(args: Args) -> Result<String, CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        // false only when the sequential build ignores it
        latentctl::parallel::set_worker_count(n);
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", args.config.display())),
        other => other,
    })?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    let p = &mut cfg.paths;
    for (slot, flag) in [
        (&mut p.output, args.output),
        (&mut p.generator, args.generator),
        (&mut p.data, args.data),
        (&mut p.trajectories, args.trajectories),
        (&mut p.model, args.model),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    Ok(run(&cfg)?.to_string())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(args) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
