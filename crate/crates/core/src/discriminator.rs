//! Discriminator: the student backbone topped with a scalar sigmoid head.
//!
//! Trained to score student responses toward one and teacher responses
//! toward zero. A score below 0.5 therefore reads as teacher-like.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::{LinearSchedule, OptimizerConfig, SamplingSpec, TeacherMix};
use crate::error::{Error, Result};
use crate::model::gru::{dot, BatchTrace};
use crate::model::{checkpoint, context_state, sample_group, PolicyParams, PolicySnapshot};
use crate::rng::Rng;
use crate::tasks::{extract_group, TeacherCache};
use crate::trainer::optimizer::OptimizerState;
use crate::types::{Question, Response, Source};
use crate::vocab::{Vocab, BOS};

/// Lower clamp for log arguments in the objective.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscParams {
    /// Same layout as the student; its language head is unused.
    pub backbone: PolicyParams,
    pub head_w: Vec<f64>,
    pub head_b: f64,
}

impl DiscParams {
    /// Copies the student backbone and attaches a zero head.
    pub fn from_student(student: &PolicyParams) -> Self {
        Self {
            backbone: student.clone(),
            head_w: vec![0.0; student.layout.hidden_dim],
            head_b: 0.0,
        }
    }

    pub fn flat_len(&self) -> usize {
        self.backbone.data.len() + self.head_w.len() + 1
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.backbone.data.clone();
        v.extend_from_slice(&self.head_w);
        v.push(self.head_b);
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.backbone.data.len();
        let h = self.head_w.len();
        self.backbone.data.copy_from_slice(&flat[..n]);
        self.head_w.copy_from_slice(&flat[n..n + h]);
        self.head_b = flat[n + h];
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut head = self.head_w.clone();
        head.push(self.head_b);
        std::fs::write(path, checkpoint::encode(&self.backbone, Some(&head)))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (backbone, head) = checkpoint::decode(&std::fs::read(path)?)?;
        let mut head = head.ok_or_else(|| Error::Checkpoint("missing discriminator head section".into()))?;
        let head_b = head.pop().expect("head section has hidden + 1 values");
        Ok(Self {
            backbone,
            head_w: head,
            head_b,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    TeacherLabeled = 0,
    StudentLabeled = 1,
}

impl Label {
    pub fn for_source(source: Source) -> Self {
        match source {
            Source::Student => Label::StudentLabeled,
            Source::Teacher(_) => Label::TeacherLabeled,
        }
    }

    pub fn target(self) -> f64 {
        self as u8 as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DiscExample<'a> {
    pub question: &'a Question,
    pub response: &'a Response,
    pub label: Label,
}

impl<'a> DiscExample<'a> {
    pub fn new(question: &'a Question, response: &'a Response) -> Self {
        Self {
            question,
            response,
            label: Label::for_source(response.source),
        }
    }
}

fn template_prefix(vocab: &Vocab, question: &Question) -> Vec<usize> {
    let mut t = vec![BOS];
    t.extend(vocab.encode("question: ").expect("template is in-alphabet"));
    t.extend_from_slice(&question.prompt_tokens);
    t.extend(vocab.encode(" response: ").expect("template is in-alphabet"));
    t
}

fn response_tokens(vocab: &Vocab, response: &Response) -> Vec<usize> {
    vocab.encode(&response.text).expect("decoded text is in-alphabet")
}

/// `BOS` + `"question: <prompt> response: <text>"`, truncated to `max_len` tokens.
pub fn format_disc_input(vocab: &Vocab, question: &Question, response: &Response, max_len: usize) -> Vec<usize> {
    let mut t = template_prefix(vocab, question);
    t.extend(response_tokens(vocab, response));
    t.truncate(max_len);
    t
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn head_logit(params: &DiscParams, h: &[f64]) -> f64 {
    dot(&params.head_w, h) + params.head_b
}

/// Probability that `response` came from the student.
pub fn disc_score(params: &DiscParams, vocab: &Vocab, question: &Question, response: &Response, max_len: usize) -> f64 {
    let tokens = format_disc_input(vocab, question, response, max_len);
    let h = context_state(&params.backbone, &tokens);
    sigmoid(head_logit(params, &h))
}

/// Scores several responses to one question, sharing the template prefix.
pub fn disc_scores(params: &DiscParams, vocab: &Vocab, question: &Question, responses: &[Response], max_len: usize) -> Vec<f64> {
    let mut prefix = template_prefix(vocab, question);
    prefix.truncate(max_len);
    let room = max_len - prefix.len();
    let h0 = context_state(&params.backbone, &prefix);
    let conts: Vec<Vec<usize>> = responses
        .iter()
        .map(|r| response_tokens(vocab, r).into_iter().take(room).collect())
        .collect();
    let refs: Vec<&[usize]> = conts.iter().map(|c| &c[..]).collect();
    let traces = BatchTrace::run(&params.backbone, &h0.repeat(refs.len()), &refs);
    (0..refs.len()).map(|s| sigmoid(head_logit(params, traces.last(s)))).collect()
}

/// Per-example objective term and its derivative with respect to the head logit.
fn term_and_slope(logit: f64, label: Label) -> (f64, f64) {
    let s = sigmoid(logit);
    let one_minus = sigmoid(-logit);
    match label {
        Label::StudentLabeled => {
            if s < LOG_CLAMP {
                (LOG_CLAMP.ln(), 0.0)
            } else {
                (s.ln(), one_minus)
            }
        }
        Label::TeacherLabeled => {
            if one_minus < LOG_CLAMP {
                (LOG_CLAMP.ln(), 0.0)
            } else {
                (one_minus.ln(), -s)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscStep {
    pub objective: f64,
    /// Ascent direction over [`DiscParams::to_flat`] coordinates.
    pub gradient: Vec<f64>,
    /// Fraction of examples on the correct side of 0.5.
    pub accuracy: f64,
}

/// Mean log-likelihood objective over `batch` and its exact gradient.
pub fn disc_loss_and_grad(params: &DiscParams, vocab: &Vocab, batch: &[DiscExample<'_>], max_len: usize) -> Result<DiscStep> {
    assert!(!batch.is_empty(), "discriminator batch must not be empty");
    let n_back = params.backbone.data.len();
    let hd = params.head_w.len();
    let mut grad = vec![0.0; params.flat_len()];
    let scale = 1.0 / batch.len() as f64;
    let mut objective = 0.0;
    let mut correct = 0usize;

    let mut by_question: BTreeMap<u64, Vec<&DiscExample<'_>>> = BTreeMap::new();
    for ex in batch {
        by_question.entry(ex.question.id).or_default().push(ex);
    }
    let prefix_tokens: Vec<Vec<usize>> = by_question
        .values()
        .map(|exs| {
            let mut t = template_prefix(vocab, exs[0].question);
            t.truncate(max_len);
            t
        })
        .collect();
    let prefix_refs: Vec<&[usize]> = prefix_tokens.iter().map(|t| &t[..]).collect();
    let prefixes = BatchTrace::run(&params.backbone, &vec![0.0; prefix_refs.len() * hd], &prefix_refs);
    let mut owner = Vec::with_capacity(batch.len());
    let mut h0 = Vec::with_capacity(batch.len() * hd);
    let mut conts = Vec::with_capacity(batch.len());
    let mut examples = Vec::with_capacity(batch.len());
    for (g, exs) in by_question.values().enumerate() {
        let room = max_len - prefix_tokens[g].len();
        for ex in exs {
            owner.push(g);
            h0.extend_from_slice(prefixes.last(g));
            conts.push(response_tokens(vocab, ex.response).into_iter().take(room).collect::<Vec<_>>());
            examples.push(*ex);
        }
    }
    let cont_refs: Vec<&[usize]> = conts.iter().map(|c| &c[..]).collect();
    let traces = BatchTrace::run(&params.backbone, &h0, &cont_refs);
    let mut dh = traces.zero_grads();
    for (s, ex) in examples.iter().enumerate() {
        let h = traces.last(s);
        let logit = head_logit(params, h);
        let (term, slope) = term_and_slope(logit, ex.label);
        objective += scale * term;
        let predicted_student = sigmoid(logit) >= 0.5;
        correct += usize::from(predicted_student == (ex.label == Label::StudentLabeled));
        let d = scale * slope;
        if d == 0.0 {
            continue;
        }
        for j in 0..hd {
            grad[n_back + j] += d * h[j];
        }
        grad[n_back + hd] += d;
        let slot = traces.grad_slot(&mut dh, s, traces.len(s));
        for j in 0..hd {
            slot[j] = d * params.head_w[j];
        }
    }
    let d0 = traces.backward(&params.backbone, &mut dh, &mut grad[..n_back]);
    let mut dp = prefixes.zero_grads();
    for (s, &g) in owner.iter().enumerate() {
        let slot = prefixes.grad_slot(&mut dp, g, prefixes.len(g));
        for j in 0..hd {
            slot[j] += d0[s * hd + j];
        }
    }
    prefixes.backward(&params.backbone, &mut dp, &mut grad[..n_back]);
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok(DiscStep {
        objective,
        gradient: grad,
        accuracy: correct as f64 / batch.len() as f64,
    })
}

/// Owns discriminator parameters together with their optimizer state.
#[derive(Debug, Clone)]
pub struct DiscTrainer {
    pub params: DiscParams,
    pub optimizer: OptimizerState,
    pub max_len: usize,
}

impl DiscTrainer {
    pub fn new(params: DiscParams, config: OptimizerConfig, max_len: usize) -> Self {
        let n = params.flat_len();
        Self {
            params,
            optimizer: OptimizerState::new(n, config),
            max_len,
        }
    }

    /// One ascent step on `batch`; returns the pre-step objective and accuracy.
    pub fn step(&mut self, vocab: &Vocab, batch: &[DiscExample<'_>], lr: f64) -> Result<DiscStep> {
        let out = disc_loss_and_grad(&self.params, vocab, batch, self.max_len)?;
        let mut flat = self.params.to_flat();
        self.optimizer.ascend(&mut flat, &out.gradient, lr);
        self.params.set_flat(&flat);
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: DiscParams,
    pub heldout_accuracy: f64,
    pub corpus_size: usize,
    pub train_questions: usize,
    pub heldout_questions: usize,
    pub final_objective: f64,
}

pub struct PretrainSpec<'a> {
    pub sampling: &'a SamplingSpec,
    pub mix: TeacherMix,
    /// Responses per source per question.
    pub n: usize,
    pub steps: usize,
    pub lr: LinearSchedule,
    pub heldout_fraction: f64,
    pub max_len: usize,
    pub disc_max_len: usize,
    pub optimizer: OptimizerConfig,
}

/// Pre-trains a discriminator initialized from the student backbone.
///
/// Builds a corpus of `n` student samples and `n` cached teacher responses per
/// question, holds out a seeded fraction of questions, and runs `steps`
/// ascent steps, one question's `2n` examples per step.
pub fn pretrain_disc(
    vocab: &Vocab,
    student: &PolicySnapshot,
    cache: &TeacherCache,
    questions: &[Question],
    spec: &PretrainSpec<'_>,
    rng: &mut Rng,
) -> Result<PretrainOutcome> {
    assert!(spec.n >= 1, "need at least one response per source");
    let policy = student.params();
    let mut corpus: Vec<(usize, Vec<Response>)> = Vec::with_capacity(questions.len());
    for (qi, q) in questions.iter().enumerate() {
        let h0 = context_state(policy, &q.context(vocab));
        let mut responses = sample_group(policy, vocab, &h0, spec.n, spec.sampling, spec.max_len, rng);
        responses.extend(extract_group(cache, q.id, spec.n, spec.mix, rng)?);
        corpus.push((qi, responses));
    }
    let corpus_size = corpus.iter().map(|(_, r)| r.len()).sum();

    let mut order: Vec<usize> = (0..questions.len()).collect();
    order.shuffle(rng);
    let n_heldout = ((questions.len() as f64 * spec.heldout_fraction).ceil() as usize).min(questions.len().saturating_sub(1));
    let (heldout, train) = order.split_at(n_heldout);

    let corpus = &corpus;
    let examples_for = |idx: &[usize]| -> Vec<DiscExample<'_>> {
        idx.iter()
            .flat_map(|&i| {
                let (qi, rs) = &corpus[i];
                rs.iter().map(move |r| DiscExample::new(&questions[*qi], r))
            })
            .collect()
    };

    let mut trainer = DiscTrainer::new(DiscParams::from_student(policy), spec.optimizer.clone(), spec.disc_max_len);
    let mut final_objective = f64::NAN;
    if !train.is_empty() {
        let mut schedule: Vec<usize> = Vec::new();
        for step in 0..spec.steps {
            if step % train.len() == 0 {
                schedule = train.to_vec();
                schedule.shuffle(rng);
            }
            let qi = schedule[step % train.len()];
            let batch = examples_for(&[qi]);
            let out = trainer.step(vocab, &batch, spec.lr.at(step, spec.steps))?;
            final_objective = out.objective;
        }
    }
    let eval_idx: &[usize] = if heldout.is_empty() { train } else { heldout };
    let eval = examples_for(eval_idx);
    let heldout_accuracy = if eval.is_empty() {
        f64::NAN
    } else {
        disc_loss_and_grad(&trainer.params, vocab, &eval, spec.disc_max_len)?.accuracy
    };
    Ok(PretrainOutcome {
        params: trainer.params,
        heldout_accuracy,
        corpus_size,
        train_questions: train.len(),
        heldout_questions: heldout.len(),
        final_objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_differences, max_relative_error, DEFAULT_FLOOR};
    use crate::model::Layout;
    use crate::rng::rng_stream;
    use crate::tasks::mod_arith_question;
    use crate::types::Source;

    fn q(v: &Vocab) -> Question {
        mod_arith_question(v, 0, 3, 4, 10)
    }

    #[test]
    fn formats_template() {
        let v = Vocab::new();
        let r = Response::from_text(&v, "7", Source::Student, 64).unwrap();
        let toks = format_disc_input(&v, &q(&v), &r, 128);
        assert_eq!(toks[0], BOS);
        assert_eq!(v.decode(&toks), "question: what is 3 plus 4 mod 10 response: 7");

        let empty = Response::from_text(&v, "", Source::Student, 64).unwrap();
        let toks = format_disc_input(&v, &q(&v), &empty, 128);
        assert_eq!(v.decode(&toks), "question: what is 3 plus 4 mod 10 response: ");
        assert!(toks.len() > q(&v).prompt_tokens.len());

        let long = Response::from_text(&v, &"x".repeat(60), Source::Student, 64).unwrap();
        let a = format_disc_input(&v, &q(&v), &long, 64);
        assert_eq!(a.len(), 64);
        assert_eq!(a, format_disc_input(&v, &q(&v), &long, 64));
    }

    #[test]
    fn score_closed_forms() {
        let v = Vocab::new();
        let student = PolicyParams::random(Layout::default(), 0.3, &mut rng_stream(0, "init", 0));
        let mut d = DiscParams::from_student(&student);
        let r = Response::from_text(&v, "the answer is 7.", Source::Teacher(0), 64).unwrap();
        assert_eq!(disc_score(&d, &v, &q(&v), &r, 128), 0.5);
        d.head_b = 5.0;
        let s = disc_score(&d, &v, &q(&v), &r, 128);
        assert!((s - 0.9933071490757153).abs() < 1e-12);
        d.head_w.iter_mut().enumerate().for_each(|(i, w)| *w = (i as f64).sin());
        assert_eq!(disc_score(&d, &v, &q(&v), &r, 128), disc_score(&d, &v, &q(&v), &r, 128));
        let batch = disc_scores(&d, &v, &q(&v), std::slice::from_ref(&r), 128);
        assert!((batch[0] - disc_score(&d, &v, &q(&v), &r, 128)).abs() < 1e-15);
    }

    #[test]
    fn objective_closed_forms() {
        let v = Vocab::new();
        let student = PolicyParams::random(Layout::default(), 0.3, &mut rng_stream(0, "init", 0));
        let mut d = DiscParams::from_student(&student);
        let question = q(&v);
        let s = Response::from_text(&v, "7", Source::Student, 64).unwrap();
        let t = Response::from_text(&v, "the answer is 7.", Source::Teacher(1), 64).unwrap();
        let batch = [DiscExample::new(&question, &s), DiscExample::new(&question, &t)];
        let out = disc_loss_and_grad(&d, &v, &batch, 128).unwrap();
        assert!((out.objective - 0.5f64.ln()).abs() < 1e-12);

        // saturate: student side → 1, teacher side → 0 via a huge head on a
        // feature that differs between the two inputs
        let hs = context_state(&d.backbone, &format_disc_input(&v, &question, &s, 128));
        let ht = context_state(&d.backbone, &format_disc_input(&v, &question, &t, 128));
        let diff: Vec<f64> = hs.iter().zip(&ht).map(|(a, b)| a - b).collect();
        let mid: f64 = hs.iter().zip(&ht).zip(&diff).map(|((a, b), w)| 0.5 * (a + b) * w).sum();
        let norm: f64 = diff.iter().map(|x| x * x).sum();
        let k = 200.0 / norm;
        d.head_w = diff.iter().map(|x| k * x).collect();
        d.head_b = -k * mid;
        let out = disc_loss_and_grad(&d, &v, &batch, 128).unwrap();
        assert!(out.objective > -1e-20 && out.objective <= 0.0);
        assert_eq!(out.accuracy, 1.0);
    }

    #[test]
    fn labels_follow_source() {
        assert_eq!(Label::for_source(Source::Student), Label::StudentLabeled);
        assert_eq!(Label::for_source(Source::Teacher(0)), Label::TeacherLabeled);
        assert_eq!(Label::for_source(Source::Teacher(7)), Label::TeacherLabeled);
    }

    fn random_batch(v: &Vocab, rng: &mut Rng) -> (Vec<Question>, Vec<Response>) {
        use rand::Rng as _;
        let qs: Vec<Question> = (0..2).map(|i| mod_arith_question(v, i, rng.random_range(0..100), 5, 7)).collect();
        let rs: Vec<Response> = (0..4)
            .map(|i| {
                let src = if i % 2 == 0 { Source::Student } else { Source::Teacher(i as u32) };
                let text: String = (0..rng.random_range(1..6)).map(|_| (b'a' + rng.random_range(0..5u8)) as char).collect();
                Response::from_text(v, &text, src, 64).unwrap()
            })
            .collect();
        (qs, rs)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let v = Vocab::new();
        for seed in 0..5 {
            let mut rng = rng_stream(seed, "disc-fd", 0);
            let student = PolicyParams::random(Layout { vocab: 48, embed_dim: 3, hidden_dim: 4 }, 0.5, &mut rng);
            let mut d = DiscParams::from_student(&student);
            d.head_w = vec![0.7, -0.3, 0.5, 1.1];
            d.head_b = 0.1;
            let (qs, rs) = random_batch(&v, &mut rng);
            let batch: Vec<DiscExample<'_>> = rs.iter().enumerate().map(|(i, r)| DiscExample::new(&qs[i % 2], r)).collect();
            let max_len = 20;
            let analytic = disc_loss_and_grad(&d, &v, &batch, max_len).unwrap().gradient;
            let mut x = d.to_flat();
            let idx: Vec<usize> = (0..x.len()).collect();
            let numeric = central_differences(&mut x, &idx, 1e-5, |x| {
                let mut p = d.clone();
                p.set_flat(x);
                disc_loss_and_grad(&p, &v, &batch, max_len).unwrap().objective
            });
            let err = max_relative_error(&analytic, &numeric, DEFAULT_FLOOR);
            assert!(err < 1e-4, "seed {seed}: {err:e}");
        }
    }

    #[test]
    fn small_ascent_steps_do_not_decrease_objective() {
        let v = Vocab::new();
        let mut rng = rng_stream(3, "disc-mono", 0);
        let student = PolicyParams::random(Layout { vocab: 48, embed_dim: 4, hidden_dim: 6 }, 0.3, &mut rng);
        let (qs, rs) = random_batch(&v, &mut rng);
        let batch: Vec<DiscExample<'_>> = rs.iter().enumerate().map(|(i, r)| DiscExample::new(&qs[i % 2], r)).collect();
        let mut cfg = OptimizerConfig::default();
        cfg.weight_decay = 0.0;
        let mut t = DiscTrainer::new(DiscParams::from_student(&student), cfg, 64);
        let mut last = f64::NEG_INFINITY;
        for _ in 0..50 {
            let out = t.step(&v, &batch, 1e-4).unwrap();
            assert!(out.objective <= 0.0);
            assert!(out.objective >= last - 1e-12, "{} < {last}", out.objective);
            last = out.objective;
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let student = PolicyParams::random(Layout::default(), 0.3, &mut rng_stream(0, "init", 0));
        let mut d = DiscParams::from_student(&student);
        d.head_w[3] = 1.25;
        d.head_b = -0.5;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("disc.ckpt");
        d.save(&p).unwrap();
        assert_eq!(DiscParams::load(&p).unwrap(), d);
        assert!(crate::model::checkpoint::load_policy(&p).is_err());
    }
}
