use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use voxdep::config::PipelineConfig;
use voxdep::pipeline::{compare_evaluations, run_pipeline, run_stage, Layout, Stage};
use voxdep::vowel::SaliencyStrategy;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "voxdep", version, about = "Vowel-level speech depression detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted depression markers.
    Synth(Common),
    /// Split speakers and cut vowel-labelled segments.
    Segment(Common),
    /// Train the vowel CNN.
    TrainVowel(Common),
    /// Embed every utterance and score its saliency.
    Embed(Common),
    /// Build the augmented window set.
    Augment(Common),
    /// Train the depression CNN.
    TrainDepression(Common),
    /// Soft-vote test speakers and report metrics.
    Evaluate(Common),
    /// Correlate acoustic descriptors with window probabilities.
    Correlate(Common),
    /// Composite commands over all stages.
    Pipeline {
        #[command(subcommand)]
        action: PipelineAction,
    },
    /// McNemar's test between two `evaluate` outputs.
    Compare { a: PathBuf, b: PathBuf },
    /// Print the resolved configuration as TOML.
    Config(Common),
}

#[derive(Subcommand)]
enum PipelineAction {
    /// Run every stage in order.
    Run(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Saliency {
    Grad,
    Emb,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file, or `default`.
    #[arg(long, default_value = "default")]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; stage directories live below it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Window size in utterances.
    #[arg(long, value_parser = ["10", "21", "42"])]
    n: Option<String>,
    /// Oversample windows without perturbing them (p = 0).
    #[arg(long)]
    no_perturb: bool,
    #[arg(long, value_enum)]
    saliency: Option<Saliency>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = if self.config == "default" {
            PipelineConfig::default()
        } else {
            PipelineConfig::load(self.config.as_ref())?
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(n) = &self.n {
            cfg.set_window(n.parse().context("window size")?);
        }
        if self.no_perturb {
            cfg.disable_perturbation();
        }
        if let Some(s) = self.saliency {
            cfg.embedding.saliency = match s {
                Saliency::Grad => SaliencyStrategy::GradNorm,
                Saliency::Emb => SaliencyStrategy::EmbNorm,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn stage(stage: Stage, common: &Common) -> anyhow::Result<()> {
    let cfg = common.resolve()?;
    let summary = run_stage(stage, &cfg, &Layout::new(&cfg.out_dir))?;
    println!("{summary}");
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(c) => stage(Stage::Synth, &c),
        Command::Segment(c) => stage(Stage::Segment, &c),
        Command::TrainVowel(c) => stage(Stage::TrainVowel, &c),
        Command::Embed(c) => stage(Stage::Embed, &c),
        Command::Augment(c) => stage(Stage::Augment, &c),
        Command::TrainDepression(c) => stage(Stage::TrainDepression, &c),
        Command::Evaluate(c) => stage(Stage::Evaluate, &c),
        Command::Correlate(c) => stage(Stage::Correlate, &c),
        Command::Pipeline {
            action: PipelineAction::Run(c),
        } => {
            let cfg = c.resolve()?;
            run_pipeline(&cfg, &cfg.out_dir, |s| println!("{s}"))?;
            Ok(())
        }
        Command::Compare { a, b } => {
            let r = compare_evaluations(&a, &b)?;
            println!(
                "b = {}, c = {}, statistic = {:.4}, p = {:.4e} ({}){}",
                r.b,
                r.c,
                r.statistic,
                r.p_value,
                if r.exact { "exact binomial" } else { "chi-square, continuity corrected" },
                if r.degenerate { ", no discordant pairs" } else { "" }
            );
            Ok(())
        }
        Command::Config(c) => {
            print!("{}", c.resolve()?.to_toml());
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
