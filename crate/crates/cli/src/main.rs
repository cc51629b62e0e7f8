mod commands;
mod config;
mod output;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{CliError, Ctx};
use config::{load_config, ScenarioConfig, BUILTIN_PREFIX};
use output::OutDir;

#[derive(Parser)]
#[command(
    name = "selfstab",
    version,
    about = "Self-stabilizing diffusions: drift, actions, exit times"
)]
struct Cli {
    /// Base seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for trial-level parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the model assumptions and the stability of the domain.
    CheckModel {
        #[arg(long)]
        config: String,
    },
    /// Integrate the deterministic (or relaxed) flow.
    Flow {
        #[arg(long)]
        config: String,
    },
    /// Solve for the self-consistent drift and write its table.
    SolveDrift {
        #[arg(long)]
        config: String,
    },
    /// Simulate paths in one of the five modes.
    Simulate {
        #[arg(long)]
        config: String,
    },
    /// Minimize the action between two points in a fixed time.
    Action {
        #[arg(long)]
        config: String,
    },
    /// Minimum of the quasi-potential over the domain boundary.
    Quasipotential {
        #[arg(long)]
        config: String,
        /// Use the closed form of gradient models.
        #[arg(long)]
        closed_form: bool,
    },
    /// Exit-time Monte Carlo.
    Exit {
        #[arg(long)]
        config: String,
    },
    /// Fit `log τ` against `1/ε`.
    Kramers {
        /// Kramers table (`epsilon,n_trials,n_censored,mean_exit_time,stderr,eps_log_mean`).
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        config: Option<String>,
        #[arg(long, default_value = "kramers_fit.json")]
        output: String,
    },
    /// Run a full built-in pipeline by scenario name.
    Scenario {
        name: String,
        /// Use this config instead of the built-in one.
        #[arg(long)]
        config: Option<String>,
        /// Print the built-in config and exit.
        #[arg(long)]
        print_config: bool,
        /// Trials per ε, overriding the config.
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn load(path: &str) -> Result<ScenarioConfig> {
    load_config(path).map_err(|e| CliError::Config(format!("{e:#}")).into())
}

fn with_model<F>(ctx: &mut Ctx, path: &str, seed: Option<u64>, f: F) -> Result<serde_json::Value>
where
    F: FnOnce(&Ctx, &ScenarioConfig, &selfstab_core::model::ModelSpec) -> Result<serde_json::Value>,
{
    let cfg = load(path)?;
    let seed = seed.or(cfg.seed).unwrap_or(1);
    ctx.seed = seed;
    let (resolved, model) = commands::resolve(&cfg, seed)?;
    f(ctx, &resolved, &model)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut ctx = Ctx {
        out: OutDir::new(&cli.out_dir)?,
        seed: cli.seed.unwrap_or(1),
    };
    let seed = cli.seed;
    match cli.command {
        Command::CheckModel { config } => with_model(&mut ctx, &config, seed, commands::check_model),
        Command::Flow { config } => with_model(&mut ctx, &config, seed, commands::flow),
        Command::SolveDrift { config } => with_model(&mut ctx, &config, seed, commands::solve_drift),
        Command::Simulate { config } => with_model(&mut ctx, &config, seed, commands::simulate),
        Command::Action { config } => with_model(&mut ctx, &config, seed, commands::action),
        Command::Quasipotential { config, closed_form } => with_model(&mut ctx, &config, seed, |c, cfg, m| {
            commands::quasipotential(c, cfg, m, closed_form)
        }),
        Command::Exit { config } => with_model(&mut ctx, &config, seed, commands::exit),
        Command::Kramers { input, config, output } => {
            let (input, output) = match (input, config) {
                (Some(i), _) => (i, output),
                (None, Some(c)) => {
                    let cfg = load(&c)?;
                    let sec = cfg.kramers.unwrap_or_default();
                    let input = sec
                        .input
                        .ok_or_else(|| CliError::Config("kramers needs --input or kramers.input".into()))?;
                    (PathBuf::from(input), sec.output)
                }
                (None, None) => return Err(CliError::Config("kramers needs --input or --config".into()).into()),
            };
            commands::kramers(&ctx, &input, &output)
        }
        Command::Scenario {
            name,
            config,
            print_config,
            trials,
        } => {
            let builtin = config::builtin_source(&name);
            if print_config {
                let text = builtin.ok_or_else(|| CliError::Config(format!("no built-in scenario named {name:?}")))?;
                print!("{text}");
                return Ok(serde_json::Value::Null);
            }
            let path = config.unwrap_or_else(|| format!("{BUILTIN_PREFIX}{name}"));
            with_model(&mut ctx, &path, seed, |c, cfg, m| scenario::run(c, cfg, m, trials))
        }
    }
}

/// Variant name of the first library error in the chain, else the CLI's own
/// classification.
fn error_kind(e: &anyhow::Error) -> String {
    for cause in e.chain() {
        if let Some(core) = cause.downcast_ref::<selfstab_core::Error>() {
            let dbg = format!("{core:?}");
            return dbg
                .split(|c: char| !c.is_alphanumeric())
                .next()
                .unwrap_or("Error")
                .to_string();
        }
        if let Some(cli) = cause.downcast_ref::<CliError>() {
            return match cli {
                CliError::CheckFailed(_) => "CheckFailed",
                CliError::Config(_) => "Config",
            }
            .into();
        }
    }
    "Error".into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(serde_json::Value::Null) => ExitCode::SUCCESS,
        Ok(v) => {
            println!("{}", serde_json::to_string(&v).expect("serializable summary"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = json!({ "error": { "kind": error_kind(&e), "message": format!("{e:#}") } });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
