//! `manas` command-line driver.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical abort.

mod commands;
mod config;

use std::path::PathBuf;
use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "manas", version, about = "Multi-scale attentive architecture search for image de-raining")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset root for gen-data; base directory holding runs/ otherwise.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-to-one dataset to --out.
    GenData(GenDataArgs),
    /// Bi-level architecture search; writes genotype.json, checkpoints and logs.
    Search(SearchArgs),
    /// Retrain the discrete network of a genotype.
    Train(TrainArgs),
    /// De-rain images with a weights checkpoint.
    Infer(InferArgs),
    /// Score a weights checkpoint on a dataset split.
    Eval(EvalArgs),
    /// List every configuration key with its default.
    Keys,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long = "trainA")]
    train_a: Option<usize>,
    #[arg(long = "trainB")]
    train_b: Option<usize>,
    #[arg(long)]
    test: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    /// One value, or a comma list to run one search per value.
    #[arg(long = "lambda-comp")]
    lambda_comp: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    genotype: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long = "infer-out")]
    infer_out: Option<PathBuf>,
    /// Image files or directories.
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long = "eval-split")]
    eval_split: Option<String>,
}

fn push<T: ToString>(v: &mut Vec<(String, String)>, key: &str, value: &Option<T>) {
    if let Some(x) = value {
        v.push((key.to_owned(), x.to_string()));
    }
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut ov = Vec::new();
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        ov.push((k.to_owned(), v.to_owned()));
    }
    push(&mut ov, "seed", &cli.seed);
    match &cli.command {
        Command::GenData(a) => {
            push(&mut ov, "trainA", &a.train_a);
            push(&mut ov, "trainB", &a.train_b);
            push(&mut ov, "test", &a.test);
            push(&mut ov, "size", &a.size);
        }
        Command::Search(a) => {
            push(&mut ov, "data", &path_str(&a.data));
            push(&mut ov, "name", &a.name);
            push(&mut ov, "lambda_comp", &a.lambda_comp);
            push(&mut ov, "iterations", &a.iterations);
            push(&mut ov, "resume", &path_str(&a.resume));
        }
        Command::Train(a) => {
            push(&mut ov, "data", &path_str(&a.data));
            push(&mut ov, "name", &a.name);
            push(&mut ov, "genotype", &path_str(&a.genotype));
            push(&mut ov, "epochs", &a.epochs);
        }
        Command::Infer(a) => {
            push(&mut ov, "name", &a.name);
            push(&mut ov, "checkpoint", &path_str(&a.checkpoint));
            push(&mut ov, "infer_out", &path_str(&a.infer_out));
            if !a.inputs.is_empty() {
                let list: Vec<String> = a.inputs.iter().map(|p| p.display().to_string()).collect();
                ov.push(("input".into(), list.join(",")));
            }
        }
        Command::Eval(a) => {
            push(&mut ov, "data", &path_str(&a.data));
            push(&mut ov, "name", &a.name);
            push(&mut ov, "checkpoint", &path_str(&a.checkpoint));
            push(&mut ov, "eval_split", &a.eval_split);
        }
        Command::Keys => {}
    }
    let cfg = RunConfig::new(cli.config.as_deref(), &ov, cli.out.clone())?;
    match cli.command {
        Command::GenData(_) => commands::gen_data(&cfg),
        Command::Search(_) => commands::search(&cfg),
        Command::Train(_) => commands::train(&cfg),
        Command::Infer(_) => commands::infer(&cfg),
        Command::Eval(_) => commands::eval(&cfg),
        Command::Keys => {
            let mut out = std::io::stdout().lock();
            for (k, d, doc) in config::KEYS {
                // A closed pipe (`manas keys | head`) is not an error.
                if writeln!(out, "{k:<24} {d:<20} {doc}").is_err() {
                    break;
                }
            }
            Ok(())
        }
    }
}

/// 3 for numerical aborts, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err.chain().any(|e| {
        matches!(e.downcast_ref::<manas::Error>(), Some(manas::Error::NonFinite { .. } | manas::Error::NanLogits))
    });
    if numeric {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
