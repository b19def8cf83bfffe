//! `toolforge`: generate, check, index and score tool-calling corpora.
//!
//! Errors go to stderr as one JSON line `{"error": CODE, "message": ...}`.
//! Exit codes: 0 ok, 2 config error, 3 missing prerequisite, 4 backend
//! failure, 5 validation failure, 1 anything else (I/O).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;
use toolforge_core::config::{BackendKind, JobConfig};
use toolforge_core::dataset::load_released_dir;
use toolforge_core::jobs::{self, Stage};
use toolforge_core::stats::pool_stats;
use toolforge_core::Error;

#[derive(Debug, Parser)]
#[command(name = "toolforge", version, about = "Tool-calling corpus generation and evaluation")]
struct Cli {
    /// TOML job file. Without one, built-in defaults are used.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides paths.out_dir.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides generation.rng_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use a scripted backend from this file instead of the configured one.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    /// More logging (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GenStage {
    Fields,
    Tools,
    Single,
    Multi,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one generation stage.
    Gen {
        #[arg(value_enum)]
        stage: GenStage,
    },
    /// Re-run the quality checks over instances.jsonl.
    Qc,
    /// Pool and corpus statistics.
    Stats {
        /// Tool file (defaults to the configured tools.jsonl).
        #[arg(long)]
        tools: Option<PathBuf>,
        /// Instance file to include.
        #[arg(long)]
        instances: Option<PathBuf>,
        /// Directory of externally released tool and instance files.
        #[arg(long, conflicts_with_all = ["tools", "instances"])]
        released: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Build and save the BM25 index.
    Index,
    /// Show the top-k tools for a query.
    Retrieve {
        query: String,
        #[arg(short)]
        k: Option<usize>,
    },
    /// Prompt the subject model with retrieved tools and save predictions.
    Infer {
        /// Add gold tools missing from the retrieved candidates.
        #[arg(long)]
        add_gold_candidates: bool,
    },
    /// Score predictions against the gold instances.
    Eval {
        /// Predictions file (defaults to the configured one).
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Run inference first.
        #[arg(long)]
        infer: bool,
        #[arg(long, requires = "infer")]
        add_gold_candidates: bool,
        #[arg(long)]
        json: bool,
    },
}

fn exit_code(code: &str) -> u8 {
    match code {
        "CONFIG_ERROR" | "TEMPLATE_ERROR" | "USAGE_ERROR" => 2,
        "MISSING_PREREQ" => 3,
        "BACKEND_EXHAUSTED" | "BACKEND_REJECTED" | "BAD_RESPONSE" | "SCRIPT_MISS" | "SCRIPT_EXHAUSTED"
        | "EMPTY_SCRIPT" | "EMPTY_PROMPT" | "EMBED_BACKEND_DOWN" => 4,
        "IO_ERROR" => 1,
        _ => 5,
    }
}

fn fail(code: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({"error": code, "message": message}));
    ExitCode::from(exit_code(code))
}

fn load_config(cli: &Cli) -> Result<JobConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => JobConfig::load(path)?,
        None => JobConfig::default(),
    };
    if let Some(dir) = &cli.out_dir {
        cfg.paths.out_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.generation.rng_seed = Some(seed);
    }
    if let Some(script) = &cli.script {
        cfg.backend.kind = BackendKind::Scripted;
        cfg.backend.script = Some(script.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen { stage } => {
            let stage = match stage {
                GenStage::Fields => Stage::Fields,
                GenStage::Tools => Stage::Tools,
                GenStage::Single => Stage::Single,
                GenStage::Multi => Stage::Multi,
            };
            print_json(&jobs::run_generation_job(&cfg, stage)?);
        }
        Command::Qc => {
            let summary = jobs::run_qc_job(&cfg)?;
            print_json(&summary);
            if !summary.failures.is_empty() {
                return Err(Error::Invalid(format!(
                    "QC_REJECTED: {} of {} instances fail quality checks",
                    summary.failures.len(),
                    summary.checked
                )));
            }
        }
        Command::Stats {
            tools,
            instances,
            released,
            json,
        } => {
            if let Some(dir) = released {
                let data = load_released_dir(&dir)?;
                let report = pool_stats(&data.pool, Some(&data.instances))?;
                if json {
                    print_json(&json!({"stats": report, "ingest": data}));
                } else {
                    print!("{}", report.render());
                    println!(
                        "ingested: {} tool files, {} instance files; skipped {} tools, {} instances; {} duplicate tools, {} duplicate instance ids",
                        data.tool_files.len(),
                        data.instance_files.len(),
                        data.skipped_tools.len(),
                        data.skipped_instances.len(),
                        data.duplicate_tools,
                        data.duplicate_instances
                    );
                }
            } else {
                let tools = tools.unwrap_or_else(|| cfg.paths.tools());
                let instances = instances.or_else(|| Some(cfg.paths.instances()).filter(|p| p.exists()));
                let report = jobs::run_stats_job(&tools, instances.as_deref())?;
                if json {
                    print_json(&report);
                } else {
                    print!("{}", report.render());
                }
            }
        }
        Command::Index => {
            let index = jobs::run_index_job(&cfg)?;
            println!("indexed {} tools into {}", index.len(), cfg.paths.index().display());
        }
        Command::Retrieve { query, k } => {
            for (name, score) in jobs::run_retrieve(&cfg, &query, k)? {
                println!("{score:.6}\t{name}");
            }
        }
        Command::Infer { add_gold_candidates } => {
            cfg.evaluation.add_gold_candidates |= add_gold_candidates;
            print_json(&jobs::run_configured_inference(&cfg)?);
        }
        Command::Eval {
            predictions,
            infer,
            add_gold_candidates,
            json,
        } => {
            if let Some(p) = predictions {
                cfg.paths.predictions = Some(p);
            }
            if infer {
                cfg.evaluation.add_gold_candidates |= add_gold_candidates;
                jobs::run_configured_inference(&cfg)?;
            }
            let report = jobs::run_evaluation_job(&cfg)?;
            if json {
                print_json(&report);
            } else {
                print!("{}", toolforge_core::evaluation::render_markdown(&report));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return fail("USAGE_ERROR", &e.kind().to_string());
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = match &e {
                // QC failures carry their own code in the message
                Error::Invalid(m) if m.starts_with("QC_REJECTED") => "QC_REJECTED",
                other => other.code(),
            };
            fail(code, &e.to_string())
        }
    }
}
