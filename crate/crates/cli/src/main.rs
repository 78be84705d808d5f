//! `ril` — command-line runner for the RIL experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ril_core::config::AdvantageVariant;
use ril_core::harness::{self, Pipeline, RunKind, SweepAxis};
use ril_core::TrainConfig;

#[derive(Parser)]
#[command(name = "ril", version, about = "Reinforcement and imitation learning on toy tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `default` or a path to a TOML config.
    #[arg(long, default_value = "default")]
    config: String,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Root under which `<config hash>-s<seed>` run directories are created.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Grpo,
    Drgrpo,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training and held-out questions.
    GenTasks(Common),
    /// Render and persist the teacher response cache.
    BuildCache(Common),
    /// Supervised warm-up; its checkpoint is also the reference policy.
    Sft(Common),
    /// Pre-train the discriminator on student samples vs cached teachers.
    PretrainDisc(Common),
    /// RL-only training with judge rewards.
    TrainRl {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "drgrpo")]
        variant: Variant,
    },
    /// Reinforcement and imitation learning.
    TrainRil(Common),
    /// Held-out accuracy of every checkpoint in the run directory.
    Eval(Common),
    /// One RIL run per value of an ablation axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// mu, beta, sim_levels, teacher_count, teacher_responses, disc_mode, judge_mode or groups.
        #[arg(long)]
        axis: String,
    },
    /// Summarize the run directory's metrics logs into tables and plots.
    Report(Common),
}

fn open(common: &Common) -> Result<Pipeline> {
    let mut config = TrainConfig::load(&common.config).with_context(|| format!("loading config {:?}", common.config))?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(Pipeline::open(config, &common.out)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenTasks(c) => {
            let p = open(&c)?;
            let (train, heldout) = p.tasks()?;
            println!("{} train / {} held-out questions in {}", train.len(), heldout.len(), p.dir.display());
        }
        Command::BuildCache(c) => {
            let p = open(&c)?;
            let cache = p.teacher_cache()?;
            println!(
                "{} cached responses for {} questions in {}",
                cache.response_count(),
                cache.question_count(),
                p.dir.display()
            );
        }
        Command::Sft(c) => {
            let p = open(&c)?;
            p.sft_params()?;
            println!("sft held-out accuracy {}", p.sft_accuracy()?);
        }
        Command::PretrainDisc(c) => {
            let p = open(&c)?;
            let (_, record) = p.pretrained_disc()?;
            println!(
                "discriminator held-out accuracy {} over {} responses",
                record.heldout_accuracy, record.corpus_size
            );
        }
        Command::TrainRl { common, variant } => {
            let p = open(&common)?;
            let v = match variant {
                Variant::Grpo => AdvantageVariant::Grpo,
                Variant::Drgrpo => AdvantageVariant::DrGrpo,
            };
            let s = p.train(RunKind::Rl(v))?;
            println!("{} final held-out accuracy {} ({})", s.kind.name(), s.final_accuracy, s.metrics_path.display());
        }
        Command::TrainRil(c) => {
            let p = open(&c)?;
            let s = p.train(RunKind::Ril)?;
            println!("ril final held-out accuracy {} ({})", s.final_accuracy, s.metrics_path.display());
        }
        Command::Eval(c) => {
            let p = open(&c)?;
            for (name, acc) in harness::evaluate_run(&p)? {
                println!("{name}\t{acc}");
            }
        }
        Command::Sweep { common, axis } => {
            let axis: SweepAxis = axis.parse()?;
            let p = open(&common)?;
            let result = harness::sweep(&p.config, axis, &common.out)?;
            print!("{}", result.to_markdown());
        }
        Command::Report(c) => {
            let p = open(&c)?;
            let r = harness::report(&p.dir)?;
            print!("{}", r.to_markdown());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
