use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cqbem::verification::{expected_rates, ErrorKind};
use cqbem_cli::{cmd_convergence, cmd_fields, cmd_solve, cmd_weights_dump, CliError, Options, RunConfig};

/// Convolution-quadrature boundary elements for 2D heat transmission.
#[derive(Parser, Debug)]
#[command(name = "cqbem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `out_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the frequency loop (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Number of contour points N_ζ, overriding the default rule.
    #[arg(long, global = true)]
    contour_points: Option<usize>,
    /// Also write the CQ weights of the system matrix.
    #[arg(long, global = true)]
    dump_weights: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve once and write density norms per step.
    Solve,
    /// Manufactured-solution study with k and h halved per level.
    Convergence,
    /// Write field snapshots on the configured grid.
    Fields,
    /// Write the CQ weights of the system matrix.
    WeightsDump,
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("workers: must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("workers: {e}")))?;
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("config: --config PATH is required".into()))?;
    let cfg = RunConfig::load(path)?;
    let opts = Options {
        out_dir: cli.out.clone(),
        contour_points: cli.contour_points,
        dump_weights: cli.dump_weights,
    };
    let artifacts = match cli.command {
        Command::Solve => cmd_solve(&cfg, &opts)?,
        Command::Fields => cmd_fields(&cfg, &opts)?,
        Command::WeightsDump => cmd_weights_dump(&cfg, &opts)?,
        Command::Convergence => {
            let (record, artifacts) = cmd_convergence(&cfg, &opts)?;
            let scheme = cfg.scheme_kind()?.build(cfg.step, cfg.steps()?)?;
            let expected = expected_rates(scheme.method());
            println!("{} with degree {}:", record.scheme, record.degree);
            for (name, kind, exp) in [
                ("E_phi", ErrorKind::Phi, expected.phi),
                ("E_lambda_0", ErrorKind::LambdaL2, expected.lambda),
                ("E_lambda_mhalf", ErrorKind::LambdaMinusHalf, expected.lambda),
            ] {
                let r = record.rate(kind)?;
                let flags = match (r.floor_hit, r.non_monotone) {
                    (true, _) => " (error floor reached)",
                    (false, true) => " (non-monotone)",
                    _ => "",
                };
                println!("  {name:<15} rate {:.3}  expected {exp}{flags}", r.rate);
            }
            artifacts
        }
    };
    for f in &artifacts.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
