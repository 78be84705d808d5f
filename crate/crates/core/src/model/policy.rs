//! Log-probabilities and exact gradients of the recurrent policy.

use super::gru::{axpy, gemm_ab_acc, gemm_abt, gemm_atb_acc, logits_from_hidden, BatchTrace, Stepper};
use super::params::{ParamGroupMask, PolicyParams};
use crate::error::{Error, Result};
use crate::types::{Question, Response};
use crate::vocab::Vocab;

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().map(|&x| x - lse).collect()
}

/// Hidden state after consuming `context` from the zero state.
pub fn context_state(params: &PolicyParams, context: &[usize]) -> Vec<f64> {
    let mut h = vec![0.0; params.layout.hidden_dim];
    let mut stepper = Stepper::new(params);
    for &t in context {
        stepper.step(params, t, &mut h);
    }
    h
}

/// Next-token logits after consuming `context` (which should start with BOS).
pub fn forward_logits(params: &PolicyParams, context: &[usize]) -> Vec<f64> {
    let h = context_state(params, context);
    let mut out = vec![0.0; params.layout.vocab];
    logits_from_hidden(params, &h, &mut out);
    out
}

/// Per-token log-probabilities of each continuation given a shared context.
/// Forward only.
pub fn continuation_logprobs(params: &PolicyParams, context: &[usize], continuations: &[&[usize]]) -> Vec<Vec<f64>> {
    let h0 = context_state(params, context);
    let mut stepper = Stepper::new(params);
    let mut logits = vec![0.0; params.layout.vocab];
    continuations
        .iter()
        .map(|tokens| {
            let mut h = h0.clone();
            let mut lps = Vec::with_capacity(tokens.len());
            for (k, &t) in tokens.iter().enumerate() {
                logits_from_hidden(params, &h, &mut logits);
                lps.push(log_softmax(&logits)[t]);
                if k + 1 < tokens.len() {
                    stepper.step(params, t, &mut h);
                }
            }
            lps
        })
        .collect()
}

/// `(Σ per_token, per_token)` log-probability of `response` given `question`.
///
/// Panics on an empty response: every response carries at least one token.
pub fn sequence_logprob(params: &PolicyParams, vocab: &Vocab, question: &Question, response: &Response) -> (f64, Vec<f64>) {
    assert!(!response.tokens.is_empty(), "response must contain at least one token");
    let ctx = question.context(vocab);
    let per_token = continuation_logprobs(params, &ctx, &[&response.tokens]).remove(0);
    (per_token.iter().sum(), per_token)
}

struct SequenceCache {
    tokens: Vec<usize>,
    /// Row of this sequence's first predicting state in `BatchForward::states`.
    start: usize,
    probs: Vec<f64>,
    logprobs: Vec<f64>,
}

/// Forward caches for many contexts, each with several continuations, run in
/// lockstep and ready for a weighted backward pass.
pub struct BatchForward {
    prefixes: BatchTrace,
    conts: BatchTrace,
    /// Predicting states of every continuation, row-stacked.
    states: Vec<f64>,
    total: usize,
    /// Index of the first continuation of each context; one trailing sentinel.
    offsets: Vec<usize>,
    seqs: Vec<SequenceCache>,
}

impl BatchForward {
    pub fn run(params: &PolicyParams, contexts: &[&[usize]], continuations: &[Vec<&[usize]>]) -> Self {
        assert_eq!(contexts.len(), continuations.len());
        let (v, hd) = (params.layout.vocab, params.layout.hidden_dim);
        let prefixes = BatchTrace::run(params, &vec![0.0; contexts.len() * hd], contexts);
        let mut offsets = vec![0];
        let mut h0 = Vec::new();
        let mut inputs = Vec::new();
        for (g, conts) in continuations.iter().enumerate() {
            for tokens in conts {
                assert!(!tokens.is_empty(), "continuation must contain at least one token");
                h0.extend_from_slice(prefixes.last(g));
                inputs.push(&tokens[..tokens.len() - 1]);
            }
            offsets.push(offsets[g] + conts.len());
        }
        let conts = BatchTrace::run(params, &h0, &inputs);

        // every predicting state, row-stacked, through the output layer at once
        let flat: Vec<&[usize]> = continuations.iter().flatten().copied().collect();
        let total: usize = flat.iter().map(|t| t.len()).sum();
        let mut states = Vec::with_capacity(total * hd);
        for (s, tokens) in flat.iter().enumerate() {
            for k in 0..tokens.len() {
                states.extend_from_slice(conts.state(s, k));
            }
        }
        let out_b = &params.data[params.layout.out_b()];
        let mut logits = Vec::with_capacity(total * v);
        for _ in 0..total {
            logits.extend_from_slice(out_b);
        }
        gemm_abt(total, v, hd, &states, &params.data[params.layout.out_w()], 1.0, &mut logits);
        let mut row = 0;
        let seqs = flat
            .iter()
            .map(|tokens| {
                let n = tokens.len();
                let mut probs = vec![0.0; n * v];
                let mut logprobs = Vec::with_capacity(n);
                for k in 0..n {
                    let lsm = log_softmax(&logits[(row + k) * v..(row + k + 1) * v]);
                    for (p, l) in probs[k * v..(k + 1) * v].iter_mut().zip(&lsm) {
                        *p = l.exp();
                    }
                    logprobs.push(lsm[tokens[k]]);
                }
                let start = row;
                row += n;
                SequenceCache {
                    tokens: tokens.to_vec(),
                    start,
                    probs,
                    logprobs,
                }
            })
            .collect();
        Self {
            prefixes,
            conts,
            states,
            total,
            offsets,
            seqs,
        }
    }

    /// Number of contexts.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-token log-probabilities of continuation `i` of context `g`.
    pub fn logprobs(&self, g: usize, i: usize) -> &[f64] {
        &self.seqs[self.offsets[g] + i].logprobs
    }

    /// All per-token log-probabilities, nested by context.
    pub fn all_logprobs(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.len())
            .map(|g| (self.offsets[g]..self.offsets[g + 1]).map(|s| self.seqs[s].logprobs.clone()).collect())
            .collect()
    }

    /// Accumulates `∇ Σ_g Σ_i Σ_t weights[g][i][t] · logprob[g][i][t]` into `grad`.
    pub fn backward(&self, params: &PolicyParams, weights: &[Vec<Vec<f64>>], grad: &mut [f64]) {
        assert_eq!(weights.len(), self.len());
        let l = params.layout;
        let (v, hd) = (l.vocab, l.hidden_dim);
        let (ow_range, ob_range) = (l.out_w(), l.out_b());
        let out_w = &params.data[ow_range.clone()];
        let mut dlogits = vec![0.0; self.total * v];
        for (g, ws) in weights.iter().enumerate() {
            assert_eq!(ws.len(), self.offsets[g + 1] - self.offsets[g]);
            for (i, w) in ws.iter().enumerate() {
                let seq = &self.seqs[self.offsets[g] + i];
                assert_eq!(w.len(), seq.tokens.len());
                for (k, &wk) in w.iter().enumerate() {
                    if wk == 0.0 {
                        continue;
                    }
                    let p = &seq.probs[k * v..(k + 1) * v];
                    let d = &mut dlogits[(seq.start + k) * v..(seq.start + k + 1) * v];
                    for j in 0..v {
                        d[j] = -wk * p[j];
                    }
                    d[seq.tokens[k]] += wk;
                    axpy(1.0, d, &mut grad[ob_range.clone()]);
                }
            }
        }
        gemm_atb_acc(v, hd, self.total, &dlogits, &self.states, &mut grad[ow_range]);
        let mut dstates = vec![0.0; self.total * hd];
        gemm_ab_acc(self.total, hd, v, &dlogits, out_w, &mut dstates);
        let mut dh = self.conts.zero_grads();
        for (s, seq) in self.seqs.iter().enumerate() {
            for k in 0..seq.tokens.len() {
                let row = seq.start + k;
                axpy(1.0, &dstates[row * hd..(row + 1) * hd], self.conts.grad_slot(&mut dh, s, k));
            }
        }
        let dh0 = self.conts.backward(params, &mut dh, grad);
        let mut dp = self.prefixes.zero_grads();
        for g in 0..self.len() {
            let m = self.prefixes.len(g);
            let slot = self.prefixes.grad_slot(&mut dp, g, m);
            for s in self.offsets[g]..self.offsets[g + 1] {
                axpy(1.0, &dh0[s * hd..(s + 1) * hd], slot);
            }
        }
        self.prefixes.backward(params, &mut dp, grad);
    }
}

/// Forward-only [`BatchForward`] log-probabilities, nested by context.
pub fn batch_logprobs(params: &PolicyParams, contexts: &[&[usize]], continuations: &[Vec<&[usize]>]) -> Vec<Vec<Vec<f64>>> {
    BatchForward::run(params, contexts, continuations).all_logprobs()
}

/// Continuations of one context with a weight per predicted token.
#[derive(Debug, Clone)]
pub struct WeightedGroup<'a> {
    pub context: Vec<usize>,
    pub sequences: Vec<(&'a [usize], Vec<f64>)>,
}

/// Value and masked gradient of `Σ weights · logprob` over all groups.
pub fn policy_grad(params: &PolicyParams, groups: &[WeightedGroup<'_>], mask: &ParamGroupMask) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.data.len()];
    let contexts: Vec<&[usize]> = groups.iter().map(|g| &g.context[..]).collect();
    let conts: Vec<Vec<&[usize]>> = groups.iter().map(|g| g.sequences.iter().map(|(t, _)| *t).collect()).collect();
    let fwd = BatchForward::run(params, &contexts, &conts);
    let weights: Vec<Vec<Vec<f64>>> = groups.iter().map(|g| g.sequences.iter().map(|(_, w)| w.clone()).collect()).collect();
    let mut value = 0.0;
    for (gi, ws) in weights.iter().enumerate() {
        for (i, w) in ws.iter().enumerate() {
            value += fwd.logprobs(gi, i).iter().zip(w).map(|(l, w)| l * w).sum::<f64>();
        }
    }
    fwd.backward(params, &weights, &mut grad);
    finish_gradient(params, &mut grad, mask)?;
    Ok((value, grad))
}

/// Masks disabled groups and rejects non-finite entries.
pub fn finish_gradient(params: &PolicyParams, grad: &mut [f64], mask: &ParamGroupMask) -> Result<()> {
    mask.apply(&params.layout, grad);
    if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok(())
}
