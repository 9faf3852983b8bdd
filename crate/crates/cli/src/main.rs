use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use ragbias_core::pipeline::{ExperimentConfig, Overrides, Pipeline, PipelineError, Stage, StageRecord};
use ragbias_core::Condition;

/// Social-bias evaluation of retrieval-augmented generation.
#[derive(Debug, Parser)]
#[command(name = "ragbias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load, sample and chunk the retrieval corpora.
    Ingest(Common),
    /// Embed chunks and build the vector indexes.
    Index(Common),
    /// Generate and score every dataset item under every condition.
    Eval(Common),
    /// Probe chain-of-thought explanations at partial checkpoints.
    Faithfulness(Common),
    /// Correlate per-item bias with generation metrics.
    Correlate(Common),
    /// Write the summary tables.
    Report(Common),
    /// Every applicable stage in order.
    Run(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long, short)]
    config: PathBuf,
    /// Documents retrieved per query.
    #[arg(long)]
    k: Option<usize>,
    /// Words per corpus chunk.
    #[arg(long = "chunk-words")]
    chunk_words: Option<usize>,
    /// Restrict to these conditions (repeatable).
    #[arg(long = "condition", value_parser = parse_condition)]
    conditions: Vec<Condition>,
    /// Replaces every configured seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mock language-model fixture file.
    #[arg(long = "mock-fixtures")]
    mock_fixtures: Option<PathBuf>,
    #[arg(long = "plot-scale")]
    plot_scale: Option<f64>,
    /// Ignore cached stage outputs.
    #[arg(long)]
    force: bool,
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse()
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            k: self.k,
            chunk_size: self.chunk_words,
            conditions: (!self.conditions.is_empty()).then(|| self.conditions.clone()),
            seed: self.seed,
            parallelism: self.parallelism,
            out_dir: self.out.clone(),
            mock_fixture: self.mock_fixtures.clone(),
            plot_scale: self.plot_scale,
        }
    }
}

fn report(stage: Stage, rec: &StageRecord) {
    let state = if rec.cached { "cached" } else { "done" };
    println!("{:<13} {state} ({:.2}s)", stage.as_str(), rec.seconds);
    for (name, c) in &rec.counts {
        println!(
            "  {name}: {} loaded, {} ok, {} failed, {} unparsed, {} rejected rows",
            c.loaded, c.ok, c.failed, c.unparsed, c.rejected_rows
        );
    }
    for a in &rec.artifacts {
        println!("  -> {a}");
    }
}

fn run(cli: Cli) -> anyhow::Result<usize> {
    let (stage, common) = match &cli.command {
        Command::Ingest(c) => (Some(Stage::Ingest), c),
        Command::Index(c) => (Some(Stage::Index), c),
        Command::Eval(c) => (Some(Stage::Eval), c),
        Command::Faithfulness(c) => (Some(Stage::Faithfulness), c),
        Command::Correlate(c) => (Some(Stage::Correlate), c),
        Command::Report(c) => (Some(Stage::Report), c),
        Command::Run(c) => (None, c),
    };
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("loading {}", common.config.display()))?;
    cfg.apply(&common.overrides());
    let pipeline = Pipeline::new(cfg)?.with_force(common.force);
    let records = match stage {
        Some(s) => vec![(s, pipeline.run_stage(s)?)],
        None => pipeline.run_all()?,
    };
    let mut failures = 0;
    for (s, rec) in &records {
        report(*s, rec);
        failures += rec.failures();
    }
    Ok(failures)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("{n} item(s) failed");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
