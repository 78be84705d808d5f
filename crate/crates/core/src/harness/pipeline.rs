//! Lazily materialized experiment artifacts inside one run directory.

use std::cell::OnceCell;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{AdvantageVariant, TrainConfig};
use crate::discriminator::{pretrain_disc, DiscParams, PretrainSpec};
use crate::error::{Error, Result};
use crate::judge::Judge;
use crate::model::{checkpoint, Layout, ParamGroupMask, PolicyParams, PolicySnapshot, SnapshotRole};
use crate::rng::rng_stream;
use crate::tasks::{build_teacher_cache, gen_tasks, load_questions, save_questions, TeacherCache};
use crate::trainer::{self, IterationMetrics, SftSpec, TrainContext};
use crate::types::Question;
use crate::vocab::Vocab;

use super::evaluate;

/// First id of the held-out range; training ids stay below it.
pub const HELDOUT_ID_BASE: u64 = 1_000_000;

/// `<out>/<config hash>-s<seed>`.
pub fn run_dir(out_root: &Path, config: &TrainConfig) -> PathBuf {
    out_root.join(format!("{}-s{}", config.content_hash(), config.seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Ril,
    Rl(AdvantageVariant),
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Ril => "ril",
            RunKind::Rl(AdvantageVariant::Grpo) => "rl_grpo",
            RunKind::Rl(AdvantageVariant::DrGrpo) => "rl_drgrpo",
        }
    }
}

/// Summary of one finished training run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub kind: RunKind,
    pub metrics_path: PathBuf,
    pub metrics: Vec<IterationMetrics>,
    pub final_accuracy: f64,
    pub params: PolicyParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscPretrainRecord {
    pub heldout_accuracy: f64,
    pub final_objective: f64,
    pub corpus_size: usize,
    pub train_questions: usize,
    pub heldout_questions: usize,
}

pub struct Pipeline {
    pub config: TrainConfig,
    pub vocab: Vocab,
    pub dir: PathBuf,
    tasks: OnceCell<(Vec<Question>, Vec<Question>)>,
    cache: OnceCell<TeacherCache>,
    sft: OnceCell<PolicyParams>,
    disc: OnceCell<(DiscParams, DiscPretrainRecord)>,
}

impl Pipeline {
    /// Validates `config`, creates its run directory and snapshots the config there.
    pub fn open(config: TrainConfig, out_root: &Path) -> Result<Self> {
        config.validate()?;
        let dir = run_dir(out_root, &config);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("config.toml"), config.to_toml_string())?;
        Ok(Self {
            config,
            vocab: Vocab::new(),
            dir,
            tasks: OnceCell::new(),
            cache: OnceCell::new(),
            sft: OnceCell::new(),
            disc: OnceCell::new(),
        })
    }

    /// Reuses upstream artifacts computed by `other`. Teacher-side artifacts
    /// (cache and pre-trained discriminator) are shared only when asked.
    pub fn adopt_upstream(&self, other: &Pipeline, teacher_side: bool) {
        if let Some(t) = other.tasks.get() {
            let _ = self.tasks.set(t.clone());
        }
        if let Some(p) = other.sft.get() {
            let _ = self.sft.set(p.clone());
        }
        if teacher_side {
            if let Some(c) = other.cache.get() {
                let _ = self.cache.set(c.clone());
            }
            if let Some(d) = other.disc.get() {
                let _ = self.disc.set(d.clone());
            }
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// `(train, heldout)`; train ids count up from 0, held-out ids from [`HELDOUT_ID_BASE`].
    pub fn tasks(&self) -> Result<&(Vec<Question>, Vec<Question>)> {
        if let Some(t) = self.tasks.get() {
            return Ok(t);
        }
        let cfg = &self.config;
        let (train_path, heldout_path) = (self.path("tasks_train.jsonl"), self.path("tasks_heldout.jsonl"));
        let tasks = if train_path.exists() && heldout_path.exists() {
            (load_questions(&train_path)?, load_questions(&heldout_path)?)
        } else {
            let kinds = cfg.task_kinds.len();
            let mut train = Vec::with_capacity(cfg.train_questions);
            let mut heldout = Vec::with_capacity(cfg.heldout_per_kind * kinds);
            for (k, kind) in cfg.task_kinds.iter().enumerate() {
                let count = cfg.train_questions / kinds + usize::from(k < cfg.train_questions % kinds);
                let first = train.len() as u64;
                train.extend(gen_tasks(&self.vocab, *kind, count, first, &mut rng_stream(cfg.seed, "tasks/train", k as u64)));
                let first = HELDOUT_ID_BASE + heldout.len() as u64;
                heldout.extend(gen_tasks(
                    &self.vocab,
                    *kind,
                    cfg.heldout_per_kind,
                    first,
                    &mut rng_stream(cfg.seed, "tasks/heldout", k as u64),
                ));
            }
            save_questions(&train_path, &train)?;
            save_questions(&heldout_path, &heldout)?;
            (train, heldout)
        };
        Ok(self.tasks.get_or_init(|| tasks))
    }

    pub fn teacher_cache(&self) -> Result<&TeacherCache> {
        if let Some(c) = self.cache.get() {
            return Ok(c);
        }
        let path = self.path("teacher_cache.jsonl");
        let cache = if path.exists() {
            TeacherCache::load(&path)?
        } else {
            let (train, _) = self.tasks()?;
            let c = build_teacher_cache(
                &self.vocab,
                &self.config.teachers,
                train,
                self.config.responses_per_teacher,
                self.config.max_len,
                &mut rng_stream(self.config.seed, "cache", 0),
            )?;
            c.save(&path)?;
            c
        };
        Ok(self.cache.get_or_init(|| cache))
    }

    /// Seeded initialization followed by the supervised warm-up (when enabled).
    /// The result is also the frozen reference policy.
    pub fn sft_params(&self) -> Result<&PolicyParams> {
        if let Some(p) = self.sft.get() {
            return Ok(p);
        }
        let path = self.path("sft.ckpt");
        let params = if path.exists() {
            checkpoint::load_policy(&path)?
        } else {
            let cfg = &self.config;
            let init = PolicyParams::random(Layout::from_config(cfg), cfg.model.init_scale, &mut rng_stream(cfg.seed, "init", 0));
            let params = if cfg.sft.enabled {
                let (train, _) = self.tasks()?;
                let data = trainer::sft_dataset(&self.vocab, train, cfg.max_len)?;
                let spec = SftSpec {
                    epochs: cfg.sft.epochs,
                    batch_size: cfg.sft.batch_size,
                    lr: cfg.sft.lr,
                    optimizer: cfg.optimizer.clone(),
                    mask: &ParamGroupMask::all(),
                };
                trainer::sft(init, &self.vocab, &data, &spec, &mut rng_stream(cfg.seed, "sft", 0))?
            } else {
                init
            };
            checkpoint::save_policy(&path, &params)?;
            params
        };
        Ok(self.sft.get_or_init(|| params))
    }

    pub fn pretrained_disc(&self) -> Result<&(DiscParams, DiscPretrainRecord)> {
        if let Some(d) = self.disc.get() {
            return Ok(d);
        }
        let (path, record_path) = (self.path("disc_pretrained.ckpt"), self.path("disc_pretrain.json"));
        let out = if path.exists() && record_path.exists() {
            let record = serde_json::from_slice(&std::fs::read(&record_path)?)?;
            (DiscParams::load(&path)?, record)
        } else {
            let cfg = &self.config;
            let student = PolicySnapshot::new(SnapshotRole::Reference, self.sft_params()?);
            let (train, _) = self.tasks()?;
            let questions = &train[..cfg.disc_pretrain.questions.min(train.len())];
            let spec = PretrainSpec {
                sampling: &cfg.sampling,
                mix: cfg.teacher_mix,
                n: cfg.disc_pretrain.responses_per_source,
                steps: cfg.disc_pretrain.steps,
                lr: cfg.disc_pretrain.lr,
                heldout_fraction: cfg.disc_pretrain.heldout_fraction,
                max_len: cfg.max_len,
                disc_max_len: cfg.disc_max_len,
                optimizer: cfg.optimizer.clone(),
            };
            let outcome = pretrain_disc(
                &self.vocab,
                &student,
                self.teacher_cache()?,
                questions,
                &spec,
                &mut rng_stream(cfg.seed, "disc-pretrain", 0),
            )?;
            let record = DiscPretrainRecord {
                heldout_accuracy: outcome.heldout_accuracy,
                final_objective: outcome.final_objective,
                corpus_size: outcome.corpus_size,
                train_questions: outcome.train_questions,
                heldout_questions: outcome.heldout_questions,
            };
            outcome.params.save(&path)?;
            std::fs::write(&record_path, serde_json::to_string_pretty(&record)?)?;
            (outcome.params, record)
        };
        Ok(self.disc.get_or_init(|| out))
    }

    /// Held-out accuracy of the SFT checkpoint.
    pub fn sft_accuracy(&self) -> Result<f64> {
        let (_, heldout) = self.tasks()?;
        Ok(evaluate(self.sft_params()?, &self.vocab, heldout, self.config.max_len))
    }

    /// Runs one training loop from the SFT checkpoint, streaming metrics,
    /// timings and periodic checkpoints into the run directory.
    pub fn train(&self, kind: RunKind) -> Result<RunSummary> {
        let mut cfg = self.config.clone();
        if let RunKind::Rl(v) = kind {
            cfg.variant = v;
        }
        let judge = Judge::from_config(&cfg.judge)?;
        let (train, heldout) = self.tasks()?;
        let ctx = TrainContext {
            config: &cfg,
            vocab: &self.vocab,
            tasks: train,
            heldout,
            judge: &judge,
            seed: cfg.seed,
        };
        let name = kind.name();
        let metrics_path = self.path(&format!("metrics_{name}.jsonl"));
        let mut metrics_out = BufWriter::new(File::create(&metrics_path)?);
        let mut timing_out = BufWriter::new(File::create(self.path(&format!("timing_{name}.jsonl")))?);
        let dir = self.dir.clone();
        let every = cfg.checkpoint_every;
        let mut observer = |m: &IterationMetrics, p: &PolicyParams, d: Option<&DiscParams>| -> Result<()> {
            serde_json::to_writer(&mut metrics_out, m)?;
            metrics_out.write_all(b"\n")?;
            writeln!(timing_out, "{{\"iter\":{},\"wall_time\":{}}}", m.iter, m.wall_time)?;
            if let Some(acc) = m.eval_accuracy {
                log::info!("{name} iter {} eval accuracy {acc:.3} ({:.1}s)", m.iter + 1, m.wall_time);
            }
            if every > 0 && (m.iter + 1) % every == 0 {
                checkpoint::save_policy(&dir.join(format!("policy_{name}_iter{}.ckpt", m.iter + 1)), p)?;
                if let Some(d) = d {
                    d.save(&dir.join(format!("disc_{name}_iter{}.ckpt", m.iter + 1)))?;
                }
            }
            Ok(())
        };
        let start = self.sft_params()?.clone();
        let outcome = match kind {
            RunKind::Rl(_) => trainer::train_rl(&ctx, start, &mut observer)?,
            RunKind::Ril => {
                let disc = match cfg.disc_mode {
                    crate::config::DiscMode::Absent => None,
                    _ => Some(self.pretrained_disc()?.0.clone()),
                };
                trainer::train_ril(&ctx, start, disc, self.teacher_cache()?, &mut observer)?
            }
        };
        drop(observer);
        metrics_out.flush()?;
        timing_out.flush()?;
        checkpoint::save_policy(&self.path(&format!("policy_{name}.ckpt")), &outcome.params)?;
        if let Some(d) = &outcome.disc {
            d.save(&self.path(&format!("disc_{name}.ckpt")))?;
        }
        let final_accuracy = outcome
            .metrics
            .iter()
            .rev()
            .find_map(|m| m.eval_accuracy)
            .ok_or_else(|| Error::Config("run produced no evaluation".into()))?;
        Ok(RunSummary {
            kind,
            metrics_path,
            metrics: outcome.metrics,
            final_accuracy,
            params: outcome.params,
        })
    }
}
