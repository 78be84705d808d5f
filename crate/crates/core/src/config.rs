//! Experiment configuration. One TOML document per experiment; every field
//! has a default so an empty document is the default experiment.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeMode {
    Oracle,
    Parse,
    None,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscMode {
    Online,
    Frozen,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageVariant {
    Grpo,
    DrGrpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embed,
    Recurrent,
    Head,
}

/// How `extract_group` spreads a draw over several teachers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherMix {
    /// Only the teacher with this id.
    Single(u32),
    /// Round-robin across all teachers.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSpec {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: usize,
    pub repetition_penalty: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 0.95,
            top_k: 50,
            repetition_penalty: 1.05,
        }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("sampling.temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config("sampling.top_p must lie in (0, 1]".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("sampling.top_k must be positive".into()));
        }
        if !(self.repetition_penalty >= 1.0 && self.repetition_penalty.is_finite()) {
            return Err(Error::Config("sampling.repetition_penalty must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub teacher_id: u32,
    pub style_template: String,
    pub correctness_rate: f64,
}

impl TeacherSpec {
    pub fn new(teacher_id: u32, style_template: &str, correctness_rate: f64) -> Self {
        Self {
            teacher_id,
            style_template: style_template.to_string(),
            correctness_rate,
        }
    }
}

/// Linear learning-rate decay from `start` to `end` over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    pub start: f64,
    pub end: f64,
}

impl LinearSchedule {
    pub fn constant(lr: f64) -> Self {
        Self { start: lr, end: lr }
    }

    /// Rate at `step` of `total` steps.
    pub fn at(&self, step: usize, total: usize) -> f64 {
        if total <= 1 {
            return self.start;
        }
        let frac = step.min(total - 1) as f64 / (total - 1) as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            hidden_dim: 64,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub enabled: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: LinearSchedule,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            epochs: 1,
            batch_size: 16,
            lr: LinearSchedule { start: 1e-2, end: 1e-3 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscPretrainConfig {
    /// Questions drawn from the training pool for the pre-training corpus.
    pub questions: usize,
    /// Responses per source per question (N).
    pub responses_per_source: usize,
    pub steps: usize,
    pub lr: LinearSchedule,
    /// Fraction of corpus questions held out for the accuracy estimate.
    pub heldout_fraction: f64,
}

impl Default for DiscPretrainConfig {
    fn default() -> Self {
        Self {
            questions: 40,
            responses_per_source: 16,
            steps: 2000,
            lr: LinearSchedule { start: 1e-3, end: 1e-4 },
            heldout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeConfig {
    pub mode: JudgeMode,
    /// `host:port` of a remote judge; the `RIL_JUDGE_ENDPOINT` environment variable wins.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        Self {
            mode: JudgeMode::Oracle,
            endpoint: None,
            timeout_ms: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub task_kinds: Vec<TaskKind>,
    pub train_questions: usize,
    pub heldout_per_kind: usize,
    /// Maximum response length in tokens, EOS included.
    pub max_len: usize,
    /// Maximum discriminator input length in tokens, BOS included.
    pub disc_max_len: usize,

    pub group_size: usize,
    pub mu: usize,
    pub epsilon: f64,
    pub beta: f64,
    pub variant: AdvantageVariant,
    pub sim_levels: u32,
    pub disc_mode: DiscMode,
    pub trainable_groups: BTreeSet<ParamGroup>,
    pub iterations: usize,
    pub batch_questions: usize,
    pub policy_lr: LinearSchedule,
    pub disc_lr: LinearSchedule,
    pub eval_every: usize,
    pub checkpoint_every: usize,

    pub teachers: Vec<TeacherSpec>,
    pub teacher_mix: TeacherMix,
    pub responses_per_teacher: usize,

    pub sampling: SamplingSpec,
    pub model: ModelConfig,
    pub sft: SftConfig,
    pub disc_pretrain: DiscPretrainConfig,
    pub optimizer: OptimizerConfig,
    pub judge: JudgeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task_kinds: vec![TaskKind::ModArith],
            train_questions: 2000,
            heldout_per_kind: 200,
            max_len: 64,
            disc_max_len: 128,
            group_size: 4,
            mu: 1,
            epsilon: 0.2,
            beta: 0.01,
            variant: AdvantageVariant::DrGrpo,
            sim_levels: 2,
            disc_mode: DiscMode::Online,
            trainable_groups: [ParamGroup::Embed, ParamGroup::Recurrent, ParamGroup::Head]
                .into_iter()
                .collect(),
            iterations: 3000,
            batch_questions: 8,
            policy_lr: LinearSchedule::constant(3e-4),
            disc_lr: LinearSchedule::constant(1e-3),
            eval_every: 250,
            checkpoint_every: 1000,
            teachers: default_teachers(),
            teacher_mix: TeacherMix::Both,
            responses_per_teacher: 16,
            sampling: SamplingSpec::default(),
            model: ModelConfig::default(),
            sft: SftConfig::default(),
            disc_pretrain: DiscPretrainConfig::default(),
            optimizer: OptimizerConfig::default(),
            judge: JudgeConfig::default(),
        }
    }
}

pub fn default_teachers() -> Vec<TeacherSpec> {
    vec![
        TeacherSpec::new(0, "the answer is {answer}.", 0.95),
        TeacherSpec::new(1, "{answer} - final answer.", 0.95),
    ]
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.group_size == 0 {
            return fail("group_size must be >= 1");
        }
        if self.mu == 0 {
            return fail("mu must be >= 1");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be > 0");
        }
        if !(self.beta >= 0.0) {
            return fail("beta must be >= 0");
        }
        if ![0, 2, 3, 5].contains(&self.sim_levels) {
            return fail("sim_levels must be one of 0, 2, 3, 5");
        }
        if self.trainable_groups.is_empty() {
            return fail("trainable_groups must not be empty");
        }
        if self.task_kinds.is_empty() {
            return fail("task_kinds must not be empty");
        }
        if self.max_len == 0 || self.disc_max_len < 2 {
            return fail("max_len must be >= 1 and disc_max_len >= 2");
        }
        if self.batch_questions == 0 || self.train_questions == 0 {
            return fail("batch_questions and train_questions must be >= 1");
        }
        if self.train_questions as u64 >= crate::harness::HELDOUT_ID_BASE {
            return fail("training ids would collide with the held-out id range");
        }
        if self.responses_per_teacher == 0 {
            return fail("responses_per_teacher must be >= 1");
        }
        if self.disc_pretrain.responses_per_source == 0 {
            return fail("disc_pretrain.responses_per_source must be >= 1");
        }
        let mut ids = BTreeSet::new();
        for t in &self.teachers {
            if t.style_template.matches("{answer}").count() != 1 {
                return fail("teacher style_template must contain exactly one {answer} slot");
            }
            if !(0.0..=1.0).contains(&t.correctness_rate) {
                return fail("teacher correctness_rate must lie in [0, 1]");
            }
            if !ids.insert(t.teacher_id) {
                return fail("teacher ids must be unique");
            }
        }
        if let TeacherMix::Single(id) = self.teacher_mix {
            if !ids.contains(&id) {
                return fail("teacher_mix names an unknown teacher");
            }
        }
        self.sampling.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// `"default"` names the built-in defaults; anything else is a TOML path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        if name_or_path == "default" {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(Path::new(name_or_path))?;
        Self::from_toml_str(&text)
    }

    /// Short content hash of the serialized config, seed excluded.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.seed = 0;
        let digest = Sha256::digest(c.to_toml_string().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}
