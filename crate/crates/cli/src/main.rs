use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tokbench::pipeline::{Experiment, ExperimentConfig, RunStatus, StageName, StageRecord, SummaryRow};
use tokbench::synth::{self, SynthConfig};
use tokbench::{Error, Result};

/// Compare tokenization strategies for named entity recognition.
#[derive(Debug, Parser)]
#[command(name = "tokbench", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Strategy jobs to run concurrently.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, filter, clean and sample the corpus.
    Ingest,
    /// Train one BPE model per BPE strategy.
    TrainBpe,
    /// Tokenize the corpus and train embeddings for every strategy.
    TrainEmbed,
    /// Split the NER data and propagate tags onto each strategy's sub-tokens.
    PrepNer,
    /// Fit the tagger for every strategy.
    TrainNer,
    /// Score every tagger on the test split and write reports.
    Eval,
    /// Run every stage for every strategy and write the summary.
    RunAll,
    /// Collect existing reports and rewrite the summary.
    Report,
    /// Check every artifact recorded in the run manifest.
    Verify,
    /// Write a synthetic corpus, NER set and config.
    Synth {
        /// Directory to write into.
        dir: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "word,char,bigram,trigram,bpe-1k")]
        strategies: Vec<String>,
        #[arg(long, default_value_t = SynthConfig::default().articles)]
        articles: usize,
        #[arg(long, default_value_t = SynthConfig::default().ner_sentences)]
        ner_sentences: usize,
    },
}

fn experiment(cli: &Cli) -> Result<Experiment> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config <path> is required for this command".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(out) = &cli.out {
        config.output = Some(out.clone());
    }
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if cli.jobs.is_some() {
        config.jobs = cli.jobs;
    }
    Experiment::new(config)
}

fn print_records(records: &[StageRecord]) {
    for r in records {
        let what = if r.reused { "reused" } else { "ran" };
        let strategy = r.strategy.as_deref().unwrap_or("-");
        println!("{:<12} {:<10} {what:<6} {} ms", r.stage, strategy, r.wall_ms);
    }
}

fn print_summary(rows: &[SummaryRow], root: &Path) {
    println!(
        "{:<10} {:<8} {:>9} {:>9} {:>8}",
        "strategy", "status", "accuracy", "macro_f1", "classes"
    );
    for r in rows {
        let real = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        let classes = match (r.nonzero_class_count, r.class_total) {
            (Some(n), Some(t)) => format!("{n}/{t}"),
            _ => "-".into(),
        };
        println!(
            "{:<10} {:<8} {:>9} {:>9} {:>8}",
            r.strategy.to_string(),
            r.status.to_string(),
            real(r.accuracy),
            real(r.macro_f1),
            classes
        );
        if let RunStatus::Failed(msg) = &r.status {
            if !msg.is_empty() {
                eprintln!("{}: {msg}", r.strategy);
            }
        }
    }
    println!("summary written to {}", root.join("summary.csv").display());
}

fn run(cli: &Cli) -> Result<()> {
    let stage = match &cli.command {
        Command::Ingest => StageName::Ingest,
        Command::TrainBpe => StageName::TrainBpe,
        Command::TrainEmbed => StageName::TrainEmbed,
        Command::PrepNer => StageName::PrepNer,
        Command::TrainNer => StageName::TrainNer,
        Command::Eval => StageName::Eval,
        Command::RunAll => {
            let exp = experiment(cli)?;
            let rows = exp.run_all()?;
            print_summary(&rows, exp.root());
            if rows.iter().all(|r| r.status != RunStatus::Ok) {
                return Err(Error::Model("every strategy failed".into()));
            }
            return Ok(());
        }
        Command::Report => {
            let exp = experiment(cli)?;
            let rows = exp.report()?;
            print_summary(&rows, exp.root());
            return Ok(());
        }
        Command::Verify => {
            let exp = experiment(cli)?;
            let n = exp.verify_manifest()?;
            println!("{n} artifacts match the manifest");
            return Ok(());
        }
        Command::Synth {
            dir,
            strategies,
            articles,
            ner_sentences,
        } => {
            let config = SynthConfig {
                articles: *articles,
                ner_sentences: *ner_sentences,
                seed: cli.seed.unwrap_or(SynthConfig::default().seed),
                ..SynthConfig::default()
            };
            let names: Vec<&str> = strategies.iter().map(String::as_str).collect();
            let path = synth::write_fixture(dir, &config, &names)?;
            println!("wrote {}", path.display());
            return Ok(());
        }
    };
    let exp = experiment(cli)?;
    let records = exp.run_stage_command(stage)?;
    print_records(&records);
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
