//! Experiment pipeline, evaluation, sweeps, reports and plots.

mod pipeline;
pub mod plots;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{default_teachers, AdvantageVariant, DiscMode, JudgeMode, ParamGroup, TeacherMix, TrainConfig};
use crate::error::{Error, Result};
use crate::judge::oracle_judge;
use crate::model::{greedy_responses, PolicyParams};
use crate::trainer::IterationMetrics;
use crate::types::Question;
use crate::vocab::Vocab;

pub use pipeline::{run_dir, DiscPretrainRecord, Pipeline, RunKind, RunSummary, HELDOUT_ID_BASE};

/// Fraction of held-out questions whose greedy decode the oracle accepts.
pub fn evaluate(params: &PolicyParams, vocab: &Vocab, heldout: &[Question], max_len: usize) -> f64 {
    if heldout.is_empty() {
        return 0.0;
    }
    let correct = heldout
        .iter()
        .zip(greedy_responses(params, vocab, heldout, max_len))
        .filter(|(q, r)| oracle_judge(q, &q.answer_text, &r.text).correct)
        .count();
    correct as f64 / heldout.len() as f64
}

/// Last periodic evaluation in a log.
pub fn final_accuracy(metrics: &[IterationMetrics]) -> Option<f64> {
    metrics.iter().rev().find_map(|m| m.eval_accuracy)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Means of `f` over the first and last quarter of a log.
pub fn quarter_means(metrics: &[IterationMetrics], f: impl Fn(&IterationMetrics) -> f64) -> (f64, f64) {
    let q = (metrics.len() / 4).max(1);
    (
        mean(metrics[..q].iter().map(&f)),
        mean(metrics[metrics.len() - q..].iter().map(&f)),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub final_accuracy: Option<f64>,
    pub mean_similarity_reward: f64,
    pub mean_answer_reward: f64,
    pub iterations: usize,
    pub metrics_log: String,
}

impl ComparisonRow {
    pub fn from_log(variant: &str, metrics: &[IterationMetrics], log: &Path) -> Self {
        Self {
            variant: variant.to_string(),
            final_accuracy: final_accuracy(metrics),
            mean_similarity_reward: mean(metrics.iter().map(|m| m.mean_similarity_reward)),
            mean_answer_reward: mean(metrics.iter().map(|m| m.mean_answer_reward)),
            iterations: metrics.len(),
            metrics_log: log.display().to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub config_hash: String,
    pub seed: u64,
    pub run_dir: String,
    pub sft_accuracy: Option<f64>,
    pub disc_pretrain: Option<DiscPretrainRecord>,
    pub rows: Vec<ComparisonRow>,
}

impl ExperimentReport {
    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "# Run {}\n\nconfig hash `{}`, seed {}\n\n",
            self.run_dir, self.config_hash, self.seed
        );
        if let Some(a) = self.sft_accuracy {
            let _ = writeln!(s, "SFT held-out accuracy: {a}\n");
        }
        if let Some(d) = &self.disc_pretrain {
            let _ = writeln!(s, "Discriminator pre-training held-out accuracy: {}\n", d.heldout_accuracy);
        }
        s.push_str("| variant | final accuracy | mean similarity reward | mean answer reward | iterations |\n|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {:.4} | {} |",
                r.variant,
                r.final_accuracy.map_or("-".into(), |a| a.to_string()),
                r.mean_similarity_reward,
                r.mean_answer_reward,
                r.iterations
            );
        }
        s
    }
}

/// Collects every `metrics_*.jsonl` in a run directory into a report, and
/// writes `report.json`, `report.md` and per-run curve plots next to them.
pub fn report(dir: &Path) -> Result<ExperimentReport> {
    let config = TrainConfig::from_toml_str(&std::fs::read_to_string(dir.join("config.toml"))?)?;
    let mut logs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".jsonl"))
        })
        .collect();
    logs.sort();
    let mut rows = Vec::new();
    for log in &logs {
        let metrics = plots::load_metrics(log)?;
        let name = log.file_stem().and_then(|s| s.to_str()).unwrap_or("run").trim_start_matches("metrics_").to_string();
        plots::run_curves(&metrics, &name, dir, &format!("curves_{name}"))?;
        rows.push(ComparisonRow::from_log(&name, &metrics, log));
    }
    let read_json = |name: &str| -> Result<Option<serde_json::Value>> {
        let p = dir.join(name);
        if p.exists() {
            Ok(Some(serde_json::from_slice(&std::fs::read(p)?)?))
        } else {
            Ok(None)
        }
    };
    let sft_accuracy = read_json("eval.json")?.and_then(|v| v.get("sft").and_then(|a| a.as_f64()));
    let disc_pretrain = read_json("disc_pretrain.json")?.map(serde_json::from_value).transpose()?;
    let report = ExperimentReport {
        config_hash: config.content_hash(),
        seed: config.seed,
        config,
        run_dir: dir.display().to_string(),
        sft_accuracy,
        disc_pretrain,
        rows,
    };
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(dir.join("report.md"), report.to_markdown())?;
    Ok(report)
}

/// Re-plots one or more metrics logs; one curve set per log, written next to it.
pub fn emit_plots(logs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for log in logs {
        let metrics = plots::load_metrics(log)?;
        let dir = log.parent().unwrap_or(Path::new("."));
        let stem = log.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        let (svg, csv) = plots::run_curves(&metrics, stem, dir, &format!("curves_{}", stem.trim_start_matches("metrics_")))?;
        out.push(svg);
        out.push(csv);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Mu,
    Beta,
    SimLevels,
    TeacherCount,
    TeacherResponses,
    DiscMode,
    JudgeMode,
    Groups,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 8] = [
        SweepAxis::Mu,
        SweepAxis::Beta,
        SweepAxis::SimLevels,
        SweepAxis::TeacherCount,
        SweepAxis::TeacherResponses,
        SweepAxis::DiscMode,
        SweepAxis::JudgeMode,
        SweepAxis::Groups,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Mu => "mu",
            SweepAxis::Beta => "beta",
            SweepAxis::SimLevels => "sim_levels",
            SweepAxis::TeacherCount => "teacher_count",
            SweepAxis::TeacherResponses => "teacher_responses",
            SweepAxis::DiscMode => "disc_mode",
            SweepAxis::JudgeMode => "judge_mode",
            SweepAxis::Groups => "groups",
        }
    }

    /// Whether arms differ in the teacher cache (and hence the pre-trained discriminator).
    fn changes_teachers(self) -> bool {
        matches!(self, SweepAxis::TeacherCount | SweepAxis::TeacherResponses)
    }

    /// `(label, config)` for every arm of the axis.
    pub fn arms(self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        let with = |f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            SweepAxis::Mu => [1, 2, 4, 8].iter().map(|&m| (m.to_string(), with(&|c| c.mu = m))).collect(),
            SweepAxis::Beta => [0.0, 0.001, 0.01, 0.1]
                .iter()
                .map(|&b| (b.to_string(), with(&|c| c.beta = b)))
                .collect(),
            SweepAxis::SimLevels => [2, 3, 5, 0]
                .iter()
                .map(|&l| (if l == 0 { "continuous".to_string() } else { l.to_string() }, with(&|c| c.sim_levels = l)))
                .collect(),
            SweepAxis::TeacherCount => {
                let teachers = default_teachers();
                vec![
                    (
                        "1".to_string(),
                        with(&|c| {
                            c.teachers = teachers[..1].to_vec();
                            c.teacher_mix = TeacherMix::Single(teachers[0].teacher_id);
                        }),
                    ),
                    (
                        "2".to_string(),
                        with(&|c| {
                            c.teachers = teachers.clone();
                            c.teacher_mix = TeacherMix::Both;
                        }),
                    ),
                ]
            }
            SweepAxis::TeacherResponses => [1, 2, 4, 8, 16]
                .iter()
                .map(|&n| (n.to_string(), with(&|c| c.responses_per_teacher = n)))
                .collect(),
            SweepAxis::DiscMode => [DiscMode::Online, DiscMode::Frozen, DiscMode::Absent]
                .iter()
                .map(|&d| (format!("{d:?}").to_lowercase(), with(&|c| c.disc_mode = d)))
                .collect(),
            SweepAxis::JudgeMode => [JudgeMode::Oracle, JudgeMode::Parse, JudgeMode::None]
                .iter()
                .map(|&j| (format!("{j:?}").to_lowercase(), with(&|c| c.judge.mode = j)))
                .collect(),
            SweepAxis::Groups => {
                use ParamGroup::*;
                let sets: [&[ParamGroup]; 4] = [&[Embed, Recurrent, Head], &[Recurrent, Head], &[Embed, Recurrent], &[Head]];
                sets.iter()
                    .map(|s| {
                        let label = s.iter().map(|g| format!("{g:?}").to_lowercase()).collect::<Vec<_>>().join("+");
                        (label, with(&|c| c.trainable_groups = s.iter().copied().collect()))
                    })
                    .collect()
            }
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub base_run_dir: String,
    pub rows: Vec<ComparisonRow>,
}

impl SweepResult {
    pub fn to_markdown(&self) -> String {
        let mut s = format!("| {} | final accuracy | mean similarity reward | mean answer reward |\n|---|---|---|---|\n", self.axis);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {} | {:.4} | {:.4} |",
                r.variant,
                r.final_accuracy.map_or("-".into(), |a| a.to_string()),
                r.mean_similarity_reward,
                r.mean_answer_reward
            );
        }
        s
    }
}

/// Runs RIL once per arm of `axis`. Arms share the base run's tasks and SFT
/// checkpoint, and its teacher cache and discriminator unless the axis
/// changes the teachers. Writes `sweep_<axis>.{md,json,csv,svg}` into the
/// base run directory.
pub fn sweep(base: &TrainConfig, axis: SweepAxis, out_root: &Path) -> Result<SweepResult> {
    let root = Pipeline::open(base.clone(), out_root)?;
    root.tasks()?;
    root.sft_params()?;
    let mut rows = Vec::new();
    for (label, cfg) in axis.arms(base) {
        let arm = Pipeline::open(cfg, out_root)?;
        arm.adopt_upstream(&root, !axis.changes_teachers());
        log::info!("sweep {} = {label}: {}", axis.name(), arm.dir.display());
        let run = arm.train(RunKind::Ril)?;
        rows.push(ComparisonRow::from_log(&label, &run.metrics, &run.metrics_path));
    }
    let result = SweepResult {
        axis: axis.name().to_string(),
        base_run_dir: root.dir.display().to_string(),
        rows,
    };
    let stem = format!("sweep_{}", axis.name());
    std::fs::write(root.path(&format!("{stem}.md")), result.to_markdown())?;
    std::fs::write(root.path(&format!("{stem}.json")), serde_json::to_string_pretty(&result)?)?;
    emit_sweep_plot(&result, &root.dir)?;
    Ok(result)
}

/// Line of final accuracy against response count for the teacher-responses
/// axis; grouped bars (accuracy and both reward means) for every other axis.
pub fn emit_sweep_plot(result: &SweepResult, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let stem = format!("sweep_{}", result.axis);
    let title = format!("sweep over {}", result.axis);
    if result.axis == SweepAxis::TeacherResponses.name() {
        let points: Vec<(f64, f64)> = result
            .rows
            .iter()
            .filter_map(|r| Some((r.variant.parse::<f64>().ok()?, r.final_accuracy?)))
            .collect();
        plots::line(&title, "responses_per_teacher", "final_accuracy", &points, dir, &stem)
    } else {
        let labels: Vec<String> = result.rows.iter().map(|r| r.variant.clone()).collect();
        let series = vec![
            ("final_accuracy", result.rows.iter().map(|r| r.final_accuracy.unwrap_or(0.0)).collect()),
            ("mean_similarity_reward", result.rows.iter().map(|r| r.mean_similarity_reward).collect()),
            ("mean_answer_reward", result.rows.iter().map(|r| r.mean_answer_reward).collect()),
        ];
        plots::grouped_bars(&title, &labels, &series, dir, &stem)
    }
}

/// Evaluates the SFT checkpoint and every final policy checkpoint in a run
/// directory on the held-out set; writes `eval.json`.
pub fn evaluate_run(pipeline: &Pipeline) -> Result<std::collections::BTreeMap<String, f64>> {
    let mut out = std::collections::BTreeMap::new();
    out.insert("sft".to_string(), pipeline.sft_accuracy()?);
    let (_, heldout) = pipeline.tasks()?;
    for kind in [RunKind::Ril, RunKind::Rl(AdvantageVariant::Grpo), RunKind::Rl(AdvantageVariant::DrGrpo)] {
        let p = pipeline.path(&format!("policy_{}.ckpt", kind.name()));
        if p.exists() {
            let params = crate::model::checkpoint::load_policy(&p)?;
            out.insert(kind.name().to_string(), evaluate(&params, &pipeline.vocab, heldout, pipeline.config.max_len));
        }
    }
    std::fs::write(pipeline.path("eval.json"), serde_json::to_string_pretty(&out)?)?;
    Ok(out)
}

#[cfg(test)]
mod tests;
