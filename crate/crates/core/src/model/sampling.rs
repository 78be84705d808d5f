//! Constrained stochastic decoding.

use rand::Rng as _;

use super::gru::{batch_logits, final_states, BatchStepper};
use super::params::PolicyParams;
use super::policy::{context_state, log_softmax};
use crate::config::SamplingSpec;
use crate::rng::Rng;
use crate::types::{Question, Response, Source};
use crate::vocab::{Vocab, EOS};

/// Below this temperature decoding switches to argmax.
pub const GREEDY_TEMPERATURE: f64 = 1e-6;

/// Applies the repetition penalty in place to tokens already emitted.
pub fn apply_repetition_penalty(logits: &mut [f64], emitted: &[usize], penalty: f64) {
    if penalty == 1.0 {
        return;
    }
    let mut seen = vec![false; logits.len()];
    for &t in emitted {
        if !seen[t] {
            seen[t] = true;
            let l = &mut logits[t];
            *l = if *l > 0.0 { *l / penalty } else { *l * penalty };
        }
    }
}

/// Sampling distribution after temperature, top-k and nucleus truncation.
///
/// `logits` must already carry the repetition penalty. The returned vector
/// sums to one and always keeps the most probable token.
pub fn constrained_distribution(logits: &[f64], spec: &SamplingSpec) -> Vec<f64> {
    let v = logits.len();
    let scaled: Vec<f64> = logits.iter().map(|l| l / spec.temperature).collect();
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
    let k = spec.top_k.clamp(1, v);
    let kept = &order[..k];
    let max = scaled[kept[0]];
    let mut probs = vec![0.0; v];
    let mut total = 0.0;
    for &t in kept {
        probs[t] = (scaled[t] - max).exp();
        total += probs[t];
    }
    for &t in kept {
        probs[t] /= total;
    }
    // nucleus: smallest prefix of the sorted kept tokens reaching top_p
    let mut cum = 0.0;
    let mut cut = kept.len();
    for (i, &t) in kept.iter().enumerate() {
        cum += probs[t];
        if cum >= spec.top_p {
            cut = i + 1;
            break;
        }
    }
    for &t in &kept[cut..] {
        probs[t] = 0.0;
    }
    let total: f64 = kept[..cut].iter().map(|&t| probs[t]).sum();
    for &t in &kept[..cut] {
        probs[t] /= total;
    }
    probs
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn draw(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

/// Chooses one token from raw logits under `spec`, given the tokens emitted so far.
pub fn choose_token(logits: &[f64], emitted: &[usize], spec: &SamplingSpec, rng: &mut Rng) -> usize {
    let mut adjusted = logits.to_vec();
    apply_repetition_penalty(&mut adjusted, emitted, spec.repetition_penalty);
    if spec.temperature < GREEDY_TEMPERATURE {
        return argmax(&adjusted);
    }
    let probs = constrained_distribution(&adjusted, spec);
    draw(&probs, rng)
}

/// Samples a student response autoregressively.
///
/// `behavior_logprobs` holds the unconstrained policy log-probability of each
/// chosen token, i.e. exactly what `sequence_logprob` recomputes.
pub fn sample_response(
    params: &PolicyParams,
    vocab: &Vocab,
    question: &Question,
    spec: &SamplingSpec,
    max_len: usize,
    rng: &mut Rng,
) -> Response {
    let h0 = context_state(params, &question.context(vocab));
    sample_group(params, vocab, &h0, 1, spec, max_len, rng).remove(0)
}

/// Samples `n` responses from one shared state.
pub(crate) fn sample_group(
    params: &PolicyParams,
    vocab: &Vocab,
    h0: &[f64],
    n: usize,
    spec: &SamplingSpec,
    max_len: usize,
    rng: &mut Rng,
) -> Vec<Response> {
    decode_lockstep(params, vocab, h0.repeat(n), spec, max_len, rng)
}

/// Decodes one response per packed row of `h` in lockstep. At every step the
/// still-running rows draw from `rng` in row order.
pub(crate) fn decode_lockstep(
    params: &PolicyParams,
    vocab: &Vocab,
    mut h: Vec<f64>,
    spec: &SamplingSpec,
    max_len: usize,
    rng: &mut Rng,
) -> Vec<Response> {
    let (v, hd) = (params.layout.vocab, params.layout.hidden_dim);
    let n = h.len() / hd;
    let mut tokens: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut lps: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut stepper = BatchStepper::new();
    let mut next = Vec::with_capacity(n);
    while !active.is_empty() {
        let logits = batch_logits(params, &h, active.len());
        let mut keep = Vec::with_capacity(active.len());
        next.clear();
        for (row, &i) in active.iter().enumerate() {
            let lg = &logits[row * v..(row + 1) * v];
            let t = choose_token(lg, &tokens[i], spec, rng);
            lps[i].push(log_softmax(lg)[t]);
            tokens[i].push(t);
            if t != EOS && tokens[i].len() < max_len.max(1) {
                if keep.len() != row {
                    h.copy_within(row * hd..(row + 1) * hd, keep.len() * hd);
                }
                keep.push(i);
                next.push(t);
            }
        }
        active = keep;
        stepper.step(params, &next, &mut h);
    }
    tokens
        .into_iter()
        .zip(lps)
        .map(|(tokens, lps)| Response {
            text: vocab.decode(&tokens),
            tokens,
            source: Source::Student,
            behavior_logprobs: Some(lps),
        })
        .collect()
}

fn greedy_spec(vocab: usize) -> SamplingSpec {
    SamplingSpec {
        temperature: 0.0,
        top_p: 1.0,
        top_k: vocab,
        repetition_penalty: 1.0,
    }
}

/// Argmax decoding on raw logits.
pub fn greedy_response(params: &PolicyParams, vocab: &Vocab, question: &Question, max_len: usize) -> Response {
    greedy_responses(params, vocab, std::slice::from_ref(question), max_len).remove(0)
}

/// [`greedy_response`] for many questions at once.
pub fn greedy_responses(params: &PolicyParams, vocab: &Vocab, questions: &[Question], max_len: usize) -> Vec<Response> {
    let contexts: Vec<Vec<usize>> = questions.iter().map(|q| q.context(vocab)).collect();
    let refs: Vec<&[usize]> = contexts.iter().map(|c| &c[..]).collect();
    let h = final_states(params, &refs);
    let mut unused = crate::rng::rng_stream(0, "greedy", 0);
    decode_lockstep(params, vocab, h, &greedy_spec(params.layout.vocab), max_len, &mut unused)
}
