use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ncgal_cli::{audit, parse_config, run, RunSpec};

#[derive(Parser)]
#[command(name = "bench", version, about = "Benchmark the barrier AL method against SpaRSA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment grid and write CSV artifacts.
    Run(Box<RunArgs>),
    /// Re-check the certificates stored in a run directory.
    Audit(AuditArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key=value file; flags and environment variables take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated families or `all`.
    #[arg(long, env = "NCGAL_BENCH_FAMILY")]
    family: Option<String>,
    /// Comma-separated NxLxM cells.
    #[arg(long, env = "NCGAL_BENCH_GRID")]
    grid: Option<String>,
    /// Instances per cell.
    #[arg(long, env = "NCGAL_BENCH_INSTANCES")]
    instances: Option<String>,
    #[arg(long, env = "NCGAL_BENCH_SEED")]
    seed: Option<String>,
    /// Comma-separated subset of barrier_al,sparsa.
    #[arg(long, env = "NCGAL_BENCH_SOLVERS")]
    solvers: Option<String>,
    #[arg(long, env = "NCGAL_BENCH_EPS")]
    eps: Option<String>,
    #[arg(long, env = "NCGAL_BENCH_EPS2")]
    eps2: Option<String>,
    /// det or rand.
    #[arg(long, env = "NCGAL_BENCH_ORACLE")]
    oracle: Option<String>,
    #[arg(long, env = "NCGAL_BENCH_OUT")]
    out: Option<String>,
    #[arg(long, env = "NCGAL_BENCH_WORKERS")]
    workers: Option<String>,
    /// Restrict the published grids to n <= 40.
    #[arg(long, env = "NCGAL_BENCH_SMALL", num_args = 0..=1, default_missing_value = "true")]
    small: Option<String>,
}

#[derive(Args)]
struct AuditArgs {
    /// Run directory to audit.
    #[arg(long, env = "NCGAL_BENCH_OUT")]
    out: PathBuf,
    /// Defaults to the run's own tolerance.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
}

fn settings(args: RunArgs) -> Result<BTreeMap<String, String>, String> {
    let mut map = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            parse_config(&text).map_err(|e| e.to_string())?
        }
        None => BTreeMap::new(),
    };
    let overrides = [
        ("family", args.family),
        ("grid", args.grid),
        ("instances", args.instances),
        ("seed", args.seed),
        ("solvers", args.solvers),
        ("eps", args.eps),
        ("eps2", args.eps2),
        ("oracle", args.oracle),
        ("out", args.out),
        ("workers", args.workers),
        ("small", args.small),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            map.insert(key.to_string(), v);
        }
    }
    Ok(map)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => {
            let spec = match settings(*args).and_then(|s| RunSpec::from_settings(&s).map_err(|e| e.to_string())) {
                Ok(spec) => spec,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run::run(&spec) {
                Ok(output) => {
                    run::describe(&output, std::io::stdout()).ok();
                    println!("artifacts written to {}", spec.out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Audit(args) => {
            let run_spec = fs::read_to_string(args.out.join("run.cfg"))
                .ok()
                .and_then(|t| parse_config(&t).ok())
                .and_then(|s| RunSpec::from_settings(&s).ok());
            let (eps, eps2) = match (args.eps, args.eps2, &run_spec) {
                (Some(a), Some(b), _) => (a, b),
                (a, b, Some(spec)) => (a.unwrap_or(spec.eps), b.unwrap_or(spec.eps2)),
                (a, b, None) => (a.unwrap_or(1e-4), b.unwrap_or(1e-2)),
            };
            match audit::audit(&args.out, eps, eps2) {
                Ok(report) => {
                    let passed = report.entries.iter().filter(|e| e.pass).count();
                    println!(
                        "audited {} barrier_al certificates at eps={eps:e}, eps2={eps2:e}: {passed} pass",
                        report.entries.len()
                    );
                    for m in &report.mismatches {
                        println!("MISMATCH {m}");
                    }
                    if report.ok() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
