use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use efco_cli::error::{CliError, EXIT_OK};
use efco_cli::{load_scenario, output_dir, read_manifest, replay, run_scenario, shipped, Pipeline, OUT_ENV};

#[derive(Parser)]
#[command(name = "efco", version, about = "Simulate and analyse oscillators coupled through an electric field")]
struct Cli {
    /// Worker threads for parallel scans (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file, or the name of a shipped scenario.
    scenario: String,
    /// Replace the scenario's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run length (steps, samples or cycles depending on the pipeline).
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory for this run.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output root; runs go to <root>/<scenario name> unless --out is given.
    #[arg(long, env = OUT_ENV)]
    out_root: Option<PathBuf>,
    /// Override any scenario key, e.g. --set simulate.scenario.seed=3.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulate-pipeline scenario.
    Simulate(RunArgs),
    /// Run a bifurcation-scan scenario.
    Scan(RunArgs),
    /// Run a stationary-state / bifurcation analysis scenario.
    Analyze(RunArgs),
    /// Run a calibration scenario (k1 or group-statistics curves).
    Calibrate(RunArgs),
    /// Run a current-mode scenario.
    Currentmode(RunArgs),
    /// Run any scenario, whatever its pipeline.
    Run(RunArgs),
    /// Print the resolved scenario (overrides applied) as TOML.
    Show(RunArgs),
    /// List the shipped scenarios.
    ListScenarios,
    /// Re-run the configuration recorded in a manifest and compare checksums.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(args: &RunArgs, expect: Option<Pipeline>, show_only: bool) -> Result<u8, CliError> {
    let mut file = load_scenario(&args.scenario, &args.set)?;
    if let Some(p) = expect {
        if file.metadata.pipeline != p {
            return Err(CliError::Invalid(format!(
                "scenario `{}` is a {} scenario, not {}",
                file.metadata.name,
                file.metadata.pipeline.name(),
                p.name()
            )));
        }
    }
    if let Some(seed) = args.seed {
        file.metadata.seed = seed;
    }
    if let Some(steps) = args.steps {
        file.set_steps(steps)?;
    }
    if show_only {
        file.propagate_seed();
        print!("{}", file.to_toml()?);
        return Ok(EXIT_OK);
    }
    let dir = output_dir(&file, args.out.as_deref(), args.out_root.as_deref());
    let outcome = run_scenario(&file, &dir)?;
    let m = &outcome.manifest;
    println!("{} [{}] -> {}", m.name, m.pipeline.name(), outcome.out_dir.display());
    for (k, v) in &m.summary {
        println!("  {k} = {v}");
    }
    if let Some(msg) = &m.message {
        eprintln!("{}: {msg}", serde_json::to_string(&m.status).unwrap_or_default().trim_matches('"'));
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => execute(a, Some(Pipeline::Simulate), false),
        Command::Scan(a) => execute(a, Some(Pipeline::Scan), false),
        Command::Analyze(a) => execute(a, Some(Pipeline::Analyze), false),
        Command::Calibrate(a) => execute(a, Some(Pipeline::Calibrate), false),
        Command::Currentmode(a) => execute(a, Some(Pipeline::Currentmode), false),
        Command::Run(a) => execute(a, None, false),
        Command::Show(a) => execute(a, None, true),
        Command::ListScenarios => {
            for (name, _) in shipped::SHIPPED {
                match shipped::shipped(name) {
                    Ok(f) => println!(
                        "{name:<28} {:<12} fig {:<4} {}",
                        f.metadata.pipeline.name(),
                        f.metadata.figure.as_deref().unwrap_or("-"),
                        f.metadata.description
                    ),
                    Err(e) => println!("{name:<28} (broken: {e})"),
                }
            }
            Ok(EXIT_OK)
        }
        Command::Replay { manifest, out } => read_manifest(manifest).and_then(|m| replay(&m, out)).map(|o| {
            println!("{}: {} files reproduced", o.manifest.name, o.manifest.files.len());
            o.exit_code()
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
