use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use domain_rescore::rescorer::System;
use domain_rescore_cli::config::{ExperimentConfig, Overrides};
use domain_rescore_cli::manifest::verify_all;
use domain_rescore_cli::pipeline::Workspace;

#[derive(Parser)]
#[command(
    name = "domain-rescore",
    version,
    about = "Domain-aware second-pass n-best rescoring pipeline"
)]
struct Cli {
    /// Experiment config (JSON). Built-in desk-scale defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Routing threshold on the classifier posterior.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    /// Maximum number of stages run concurrently (fine-tuning).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Replace artifacts that already exist.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and split the synthetic corpus, build the vocabulary.
    GenCorpus,
    /// Train the Kneser-Ney first-pass model.
    TrainNgram,
    /// Train the general neural LM.
    TrainNlm,
    /// Fine-tune the three domain LMs from the general one.
    FinetuneNlm,
    /// Train and evaluate the domain classifier.
    TrainClassifier,
    /// Simulate first-pass n-best lists for the dev and eval splits.
    SimulateNbest,
    /// Tune (lambda, gamma) on the dev set by simulated annealing.
    OptimizeWeights {
        #[arg(long)]
        system: Option<System>,
    },
    /// Rescore the eval n-best lists.
    Rescore {
        #[arg(long)]
        system: Option<System>,
    },
    /// Score rescoring output, first pass, oracle and perplexities.
    Evaluate,
    /// Render the report tables.
    Report,
    /// Run every stage in order.
    RunAll,
    /// Recompute and check every manifest hash under the output directory.
    VerifyManifests,
    /// Print the built-in configuration.
    DefaultConfig,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    config.apply(&Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        threshold: cli.threshold,
        jobs: cli.jobs,
    });
    let ws = || Workspace::new(config.clone(), cli.force);
    let one = |s: &Option<System>| s.map(|s| vec![s]);
    match &cli.command {
        Command::GenCorpus => ws()?.gen_corpus(),
        Command::TrainNgram => ws()?.train_ngram(),
        Command::TrainNlm => ws()?.train_nlm(),
        Command::FinetuneNlm => ws()?.finetune_nlm(),
        Command::TrainClassifier => ws()?.train_classifier(),
        Command::SimulateNbest => ws()?.simulate_nbest(),
        Command::OptimizeWeights { system } => ws()?.optimize_weights(one(system).as_deref()),
        Command::Rescore { system } => ws()?.rescore(one(system).as_deref()),
        Command::Evaluate => ws()?.evaluate(),
        Command::Report => ws()?.report(),
        Command::RunAll => ws()?.run_all(),
        Command::VerifyManifests => {
            let (count, problems) = verify_all(&config.out_dir)?;
            for p in &problems {
                eprintln!("{p}");
            }
            if !problems.is_empty() {
                bail!("{} of {count} manifests failed verification", problems.len());
            }
            println!("{count} manifests verified");
            Ok(())
        }
        Command::DefaultConfig => {
            println!("{}", serde_json::to_string_pretty(&ExperimentConfig::default())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
