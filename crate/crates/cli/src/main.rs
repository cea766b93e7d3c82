use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use senti_runner::config::parse_models;
use senti_runner::{
    cmd_curve, cmd_run, cmd_train_embeddings, resolve, ExperimentConfig, InputError, Overrides,
    Settings,
};

#[derive(Parser)]
#[command(
    name = "senti",
    version,
    about = "Sentiment classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the 300- and 60-dimensional skip-gram embeddings.
    Embeddings(Common),
    /// Train all enabled bases, combine them and write the metrics report.
    Run(Common),
    /// Learning curves with best/worst/mean Macro F1 per corpus size.
    Curve(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed; SENTI_SEED is used when neither is set.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Comma-separated model names, e.g. nb,lr,cnn.
    #[arg(long)]
    models: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write an SVG plot (curve only).
    #[arg(long)]
    plot: bool,
}

fn settings(c: &Common) -> anyhow::Result<Settings> {
    let config = ExperimentConfig::load(&c.config)?;
    let models = c.models.as_deref().map(parse_models).transpose()?;
    let overrides = Overrides {
        seed: c.seed,
        workers: c.workers,
        models,
        out: c.out.clone(),
        plot: c.plot,
    };
    resolve(
        config,
        overrides,
        std::env::var("SENTI_SEED").ok().as_deref(),
    )
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Embeddings(c) => {
            let a = cmd_train_embeddings(&settings(c)?)?;
            println!(
                "{}\n{}\n{}",
                a.hybrid.display(),
                a.cnn.display(),
                a.manifest.display()
            );
        }
        Command::Run(c) => {
            let r = cmd_run(&settings(c)?)?;
            for (name, m) in &r.rows {
                println!("{name:<10} macro_f1={:.4}", m.macro_f1);
            }
            println!("{}", r.metrics_path.display());
        }
        Command::Curve(c) => {
            let r = cmd_curve(&settings(c)?)?;
            for p in r.csv_paths.iter().chain(&r.svg_path) {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            if e.chain().any(|c| c.is::<InputError>()) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
