//! `axiovol`: runs the experiment pipeline stage by stage.
//!
//! Every subcommand resolves one [`ExperimentConfig`] (file, then `--seed`,
//! then the output-directory override) and works inside its run directory.
//! Failures print `{"error": <kind>, "message": ...}` on stderr and exit
//! nonzero.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use axiovol::frontier::{fixture_verdict, read_fixture, write_frontier_csv};
use axiovol::pipeline::{ExperimentConfig, Run, Variant, STAGES};
use axiovol::{Error, Regime};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

/// Exit code for runtime failures; argument errors use 2.
const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "axiovol", version, about = "Law-manifold world models and law-aware RL experiments")]
struct Cli {
    /// TOML experiment config; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the run directory.
    #[arg(long, global = true, env = "AXIOVOL_OUTPUT_DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum VariantArg {
    Naive,
    Soft,
    Selection,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegimeArg {
    Baseline,
    Shock,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the trajectory dataset.
    Gen,
    /// Train the world model and write its ghost-channel diagnostics.
    TrainWm,
    /// Train one PPO variant (selection picks among the naive checkpoints).
    TrainRl {
        #[arg(long, value_enum)]
        variant: VariantArg,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Evaluate every policy under one regime.
    Eval {
        #[arg(long, value_enum)]
        regime: RegimeArg,
    },
    /// Build GFI, frontier, bands and the λ sweep; with `--fixture`, rank the
    /// rows of a CSV instead and print the verdict.
    Frontier {
        /// CSV of precomputed policy metrics.
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Penalty band `LO HI` compared within the fixture.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"], requires = "fixture")]
        band: Option<Vec<f64>>,
    },
    /// Render the Markdown report to stdout (also written to reports/report.md).
    Report,
    /// Write per-policy penalty histograms from the evaluation scatter data.
    Diag,
    /// Print the resolved config as TOML.
    Config {
        /// Print the built-in defaults instead of the resolved config.
        #[arg(long)]
        dump_defaults: bool,
        /// With `--dump-defaults`, print the smoke-test preset.
        #[arg(long, requires = "dump_defaults")]
        tiny: bool,
    },
    /// Run every stage, skipping completed ones.
    Run,
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_run(cli: &Cli) -> Result<Run, Error> {
    let cfg = resolve_config(cli)?;
    let dir = cfg.output_dir.clone();
    Run::open(cfg, dir)
}

fn print_json(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("json values serialize"));
}

fn stage(cli: &Cli, name: &str) -> Result<(), Error> {
    let mut run = open_run(cli)?;
    let ran = run.run_stage(name)?;
    print_json(json!({ "stage": name, "ran": ran, "dir": run.dir() }));
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Gen => stage(cli, "dataset"),
        Command::TrainWm => stage(cli, "world_model"),
        Command::TrainRl { variant, lambda } => {
            let (variant, lambda) = match (variant, lambda) {
                (VariantArg::Naive, _) => (Variant::Naive, 0.0),
                (VariantArg::Selection, _) => (Variant::Selection, 0.0),
                (VariantArg::Soft, Some(l)) if *l > 0.0 => (Variant::Soft, *l),
                (VariantArg::Soft, _) => {
                    return Err(Error::InvalidParameter("the soft variant needs --lambda > 0".into()))
                }
            };
            let run = open_run(cli)?;
            run.train_agent(variant, lambda)?;
            let id = axiovol::pipeline::ppo_id(variant, lambda);
            print_json(json!({ "policy": id, "dir": run.dir().join("agents").join(&id) }));
            Ok(())
        }
        Command::Eval { regime } => {
            let regime = match regime {
                RegimeArg::Baseline => Regime::Baseline,
                RegimeArg::Shock => Regime::Shock,
            };
            let run = open_run(cli)?;
            let files = run.evaluate(regime)?;
            print_json(json!({ "regime": regime.to_string(), "files": files }));
            Ok(())
        }
        Command::Frontier { fixture: Some(path), band } => {
            let text = fs::read(path).map_err(|_| Error::MissingArtifact(path.clone()))?;
            let rows = read_fixture(text.as_slice())?;
            let band = band.as_ref().map(|b| (b[0], b[1]));
            let verdict = fixture_verdict(&rows, band)?;
            print_json(serde_json::to_value(&verdict)?);
            Ok(())
        }
        Command::Frontier { fixture: None, .. } => {
            let run = open_run(cli)?;
            let summary = run.frontier()?;
            write_frontier_csv(std::io::stdout().lock(), &summary.points)
        }
        Command::Report => {
            let mut run = open_run(cli)?;
            run.stage_report()?;
            let path = run.dir().join("reports").join("report.md");
            let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path))?;
            print!("{text}");
            Ok(())
        }
        Command::Diag => {
            let run = open_run(cli)?;
            let files = run.diagnostics()?;
            print_json(json!({ "files": files }));
            Ok(())
        }
        Command::Config { dump_defaults, tiny } => {
            let cfg = match (dump_defaults, tiny) {
                (true, true) => ExperimentConfig::tiny(),
                (true, false) => ExperimentConfig::default(),
                (false, _) => resolve_config(cli)?,
            };
            print!("{}", cfg.to_toml()?);
            Ok(())
        }
        Command::Run => {
            let mut run = open_run(cli)?;
            let mut ran = Vec::new();
            for name in STAGES {
                if run.run_stage(name)? {
                    ran.push(name);
                }
            }
            print_json(json!({ "dir": run.dir(), "ran": ran }));
            Ok(())
        }
    }
}

fn fail(kind: &str, message: impl std::fmt::Display, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message.to_string() }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                ErrorKind::InvalidSubcommand => fail("UnknownSubcommand", e.render(), EXIT_USAGE),
                _ => fail("InvalidArguments", e.render(), EXIT_USAGE),
            };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e, EXIT_FAILURE),
    }
}
