use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use chainbench::clock::ClockMode;
use chainbench::runner::{
    self, output::f2, presets, ExperimentConfig, HeatmapFormat, ResultRow, RunnerError,
};

#[derive(Parser, Debug)]
#[command(name = "chainbench", version, about = "Blockchain benchmark runner over simulated backends")]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// wall or virtual.
    #[arg(long, global = true)]
    clock: Option<ClockMode>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    repetitions: Option<u32>,
    /// Heatmap format: svg or csv.
    #[arg(long, global = true, default_value = "svg")]
    format: HeatmapFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the base point of a config.
    Run { config: PathBuf },
    /// Run every point of the config's sweep grid.
    Sweep { config: PathBuf },
    /// Rebuild aggregate.csv and the heatmap from results.csv.
    Report { dir: PathBuf },
    /// Re-run one recorded row and compare its events.
    Replay {
        dir: PathBuf,
        #[arg(long)]
        row: u64,
    },
    /// Built-in system profiles.
    Profiles {
        #[command(subcommand)]
        action: ProfilesCommand,
    },
}

#[derive(Subcommand, Debug)]
enum ProfilesCommand {
    List,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<RunnerError> for Failure {
    fn from(e: RunnerError) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(path: &Path, cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut config = ExperimentConfig::from_toml(&text).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = cli.seed {
        config.experiment.seed = seed;
    }
    if let Some(clock) = cli.clock {
        config.experiment.clock = clock;
    }
    if let Some(r) = cli.repetitions {
        config.plan.repetitions = Some(r);
    }
    if let Some(out) = &cli.out {
        config.experiment.out = out.clone();
    } else if let Some(out) = std::env::var_os(runner::OUT_ENV) {
        config.experiment.out = PathBuf::from(out);
    }
    Ok(config)
}

fn print_summary(rows: &[ResultRow]) {
    println!("{:<12} {:<26} {:>5} {:>20} {:>16} {:>10}", "profile", "benchmark", "point", "MTPS", "MFLS", "received");
    for a in runner::aggregate_rows(rows) {
        println!(
            "{:<12} {:<26} {:>5} {:>20} {:>16} {:>10}",
            a.profile,
            a.benchmark,
            a.grid_index,
            format!("{} ±{}", a.mtps, if a.mtps_ci95.is_empty() { "-" } else { &a.mtps_ci95 }),
            format!("{} ±{}", a.mfls, if a.mfls_ci95.is_empty() { "-" } else { &a.mfls_ci95 }),
            a.received
        );
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Run { config } | Command::Sweep { config } => {
            let full = matches!(cli.command, Command::Sweep { .. });
            let config = load_config(config, cli)?;
            let result = runner::run_experiment(&config, full, cli.format)?;
            print_summary(&result.rows);
            let failed = result.rows.iter().filter(|r| r.status == runner::RowStatus::Failed).count();
            println!(
                "{} rows ({} failed) written to {}",
                result.rows.len(),
                failed,
                config.experiment.out.display()
            );
        }
        Command::Report { dir } => {
            let rows = runner::report(dir, cli.format)?;
            print_summary(&rows);
        }
        Command::Replay { dir, row } => {
            let outcome = runner::replay(dir, *row)?;
            let path = dir.join(format!("replay-row-{row}.jsonl"));
            let mut body = outcome.replayed.join("\n");
            body.push('\n');
            std::fs::write(&path, body)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
            if !outcome.identical {
                return Err(Failure::Runtime(format!(
                    "row {row}: replay differs ({} recorded events, {} replayed)",
                    outcome.original.len(),
                    outcome.replayed.len()
                )));
            }
            println!("row {row}: identical ({} events)", outcome.replayed.len());
        }
        Command::Profiles { action: ProfilesCommand::List } => {
            for name in presets::names() {
                let p = presets::get(name).expect("preset");
                println!(
                    "{:<10} {:<18} nodes={:<3} stabilization={}s",
                    name,
                    p.finalization.label(),
                    p.node_count,
                    f2(p.stabilization_time)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
