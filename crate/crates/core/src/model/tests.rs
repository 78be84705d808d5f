use super::*;
use crate::config::{ParamGroup, SamplingSpec};
use crate::gradcheck::{central_differences, max_relative_error, DEFAULT_FLOOR};
use crate::rng::{rng_stream, Rng};
use crate::types::{Question, Response, Source, TaskKind};
use crate::vocab::{Vocab, EOS};
use rand::Rng as _;

fn question(vocab: &Vocab, text: &str) -> Question {
    Question {
        id: 0,
        prompt_text: text.into(),
        prompt_tokens: vocab.encode(text).unwrap(),
        answer_text: "7".into(),
        task_kind: TaskKind::ModArith,
    }
}

fn small_layout() -> Layout {
    Layout { vocab: 48, embed_dim: 4, hidden_dim: 5 }
}

fn random_tokens(rng: &mut Rng, n: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..48)).collect()
}

/// Straight-line GRU written independently of `gru.rs`, for the chain-rule oracle.
fn naive_logprob(p: &PolicyParams, context: &[usize], targets: &[usize]) -> f64 {
    let l = p.layout;
    let (e, hd) = (l.embed_dim, l.hidden_dim);
    let w = |r: std::ops::Range<usize>, i: usize, j: usize| p.data[r.start + i * (e + hd) + j];
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let step = |h: &Vec<f64>, t: usize| -> Vec<f64> {
        let x: Vec<f64> = (0..e).map(|j| p.data[t * e + j]).collect();
        let mut z = vec![0.0; hd];
        let mut r = vec![0.0; hd];
        for i in 0..hd {
            let mut az = p.data[l.b_z().start + i];
            let mut ar = p.data[l.b_r().start + i];
            for j in 0..e {
                az += w(l.w_z(), i, j) * x[j];
                ar += w(l.w_r(), i, j) * x[j];
            }
            for j in 0..hd {
                az += w(l.w_z(), i, e + j) * h[j];
                ar += w(l.w_r(), i, e + j) * h[j];
            }
            z[i] = sig(az);
            r[i] = sig(ar);
        }
        (0..hd)
            .map(|i| {
                let mut a = p.data[l.b_h().start + i];
                for j in 0..e {
                    a += w(l.w_h(), i, j) * x[j];
                }
                for j in 0..hd {
                    a += w(l.w_h(), i, e + j) * r[j] * h[j];
                }
                (1.0 - z[i]) * h[i] + z[i] * a.tanh()
            })
            .collect()
    };
    let prob = |h: &Vec<f64>, t: usize| -> f64 {
        let logits: Vec<f64> = (0..l.vocab)
            .map(|v| {
                p.data[l.out_b().start + v]
                    + (0..hd).map(|j| p.data[l.out_w().start + v * hd + j] * h[j]).sum::<f64>()
            })
            .collect();
        let z: f64 = logits.iter().map(|x| x.exp()).sum();
        logits[t].exp() / z
    };
    let mut h = vec![0.0; hd];
    for &t in context {
        h = step(&h, t);
    }
    let mut product = 1.0;
    for &t in targets {
        product *= prob(&h, t);
        h = step(&h, t);
    }
    product.ln()
}

#[test]
fn zero_params_give_uniform_logits() {
    let v = Vocab::new();
    let p = PolicyParams::zeros(Layout::default());
    let q = question(&v, "what is 3 plus 4 mod 10");
    let logits = forward_logits(&p, &q.context(&v));
    assert!(logits.iter().all(|&x| x == 0.0));
    let lp = log_softmax(&logits);
    assert!((lp[0] + (48f64).ln()).abs() < 1e-12);
    assert!((lp[0] - (-3.8712)).abs() < 1e-4);

    let resp = Response::from_text(&v, "ab", Source::Student, 64).unwrap();
    assert_eq!(resp.tokens.len(), 3);
    let (total, per) = sequence_logprob(&p, &v, &q, &resp);
    assert!((total - 3.0 * -(48f64).ln()).abs() < 1e-12);
    assert_eq!(per.len(), 3);
}

#[test]
fn output_bias_concentrates_mass() {
    let v = Vocab::new();
    let mut p = PolicyParams::zeros(Layout::default());
    let t = 17;
    p.data[p.layout.out_b().start + t] = 10.0;
    let q = question(&v, "reverse abc");
    let lp = log_softmax(&forward_logits(&p, &q.context(&v)));
    // e^10 / (e^10 + 47)
    let expected = (10f64).exp() / ((10f64).exp() + 47.0);
    assert!((lp[t].exp() - expected).abs() < 1e-12);
    assert!(lp[t].exp() > 0.99);
}

#[test]
fn forward_is_deterministic() {
    let v = Vocab::new();
    let p = PolicyParams::random(Layout::default(), 0.3, &mut rng_stream(1, "init", 0));
    let q = question(&v, "how many a in abca");
    let ctx = q.context(&v);
    let a = forward_logits(&p, &ctx);
    let b = forward_logits(&p, &ctx);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.iter().all(|x| x.is_finite()));
}

#[test]
#[should_panic(expected = "at least one token")]
fn empty_response_is_rejected() {
    let v = Vocab::new();
    let p = PolicyParams::zeros(small_layout());
    let q = question(&v, "reverse ab");
    let r = Response { tokens: vec![], text: String::new(), source: Source::Student, behavior_logprobs: None };
    sequence_logprob(&p, &v, &q, &r);
}

#[test]
fn logprob_matches_naive_chain_rule() {
    let v = Vocab::new();
    for seed in 0..10 {
        let mut rng = rng_stream(seed, "chain", 0);
        let p = PolicyParams::random(Layout { vocab: 48, embed_dim: 6, hidden_dim: 7 }, 0.5, &mut rng);
        let q = question(&v, "what is 12 plus 9 mod 7");
        let tokens = random_tokens(&mut rng, 5);
        let r = Response { text: v.decode(&tokens), tokens: tokens.clone(), source: Source::Student, behavior_logprobs: None };
        let (total, per) = sequence_logprob(&p, &v, &q, &r);
        let oracle = naive_logprob(&p, &q.context(&v), &tokens);
        assert!((total - oracle).abs() < 1e-10, "{total} vs {oracle}");
        assert!((per.iter().sum::<f64>() - total).abs() < 1e-12);
        assert!(total <= 0.0);
    }
}

#[test]
fn per_step_distribution_is_normalized() {
    let p = PolicyParams::random(Layout::default(), 1.0, &mut rng_stream(4, "init", 0));
    let lp = log_softmax(&forward_logits(&p, &[crate::vocab::BOS, 3, 4, 5]));
    let lse = lp.iter().map(|x| x.exp()).sum::<f64>().ln();
    assert!(lse.abs() < 1e-10);
}

fn fd_check(mask: ParamGroupMask, seed: u64) -> f64 {
    let mut rng = rng_stream(seed, "fd", 0);
    let p = PolicyParams::random(small_layout(), 0.5, &mut rng);
    let context: Vec<usize> = std::iter::once(crate::vocab::BOS).chain(random_tokens(&mut rng, 4)).collect();
    let seqs: Vec<Vec<usize>> = (0..3).map(|i| random_tokens(&mut rng, 2 + i)).collect();
    let weights: Vec<Vec<f64>> = seqs.iter().map(|s| s.iter().map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let group = WeightedGroup {
        context: context.clone(),
        sequences: seqs.iter().map(|s| &s[..]).zip(weights.iter().cloned()).collect(),
    };
    let (_, grad) = policy_grad(&p, &[group], &mask).unwrap();

    let mut x = p.data.clone();
    let indices: Vec<usize> = (0..x.len()).collect();
    let mut numeric = central_differences(&mut x, &indices, 1e-5, |x| {
        let q = PolicyParams { layout: p.layout, data: x.to_vec() };
        let lps = continuation_logprobs(&q, &context, &seqs.iter().map(|s| &s[..]).collect::<Vec<_>>());
        lps.iter().zip(&weights).map(|(l, w)| l.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
    });
    mask.apply(&p.layout, &mut numeric);
    max_relative_error(&grad, &numeric, DEFAULT_FLOOR)
}

#[test]
fn gradient_matches_finite_differences_for_every_group_mask() {
    let masks = [
        ParamGroupMask::all(),
        ParamGroupMask::from_groups(&[ParamGroup::Embed]),
        ParamGroupMask::from_groups(&[ParamGroup::Recurrent]),
        ParamGroupMask::from_groups(&[ParamGroup::Head]),
        ParamGroupMask::from_groups(&[ParamGroup::Embed, ParamGroup::Head]),
    ];
    for (i, mask) in masks.into_iter().enumerate() {
        for seed in 0..4 {
            let err = fd_check(mask, 100 * i as u64 + seed);
            assert!(err < 1e-4, "mask {mask:?} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn masked_head_has_exactly_zero_gradient() {
    let mut rng = rng_stream(9, "mask", 0);
    let p = PolicyParams::random(Layout::default(), 0.2, &mut rng);
    let seq = random_tokens(&mut rng, 6);
    let group = WeightedGroup { context: vec![crate::vocab::BOS, 1], sequences: vec![(&seq[..], vec![1.0; 6])] };
    let mask = ParamGroupMask { embed: true, recurrent: true, head: false };
    let (_, grad) = policy_grad(&p, &[group], &mask).unwrap();
    let l = p.layout;
    assert!(grad[l.out_w().start..l.out_b().end].iter().all(|&g| g == 0.0));
    assert!(grad[l.embed()].iter().any(|&g| g != 0.0));
}

#[test]
fn unused_embedding_row_has_zero_gradient() {
    let mut rng = rng_stream(10, "unused", 0);
    let p = PolicyParams::random(Layout::default(), 0.2, &mut rng);
    let seq = vec![1, 2, 3, EOS];
    let group = WeightedGroup { context: vec![crate::vocab::BOS, 4], sequences: vec![(&seq[..], vec![1.0; 4])] };
    let (_, grad) = policy_grad(&p, &[group], &ParamGroupMask::all()).unwrap();
    let e = p.layout.embed_dim;
    // token 30 never appears as an input
    assert!(grad[30 * e..31 * e].iter().all(|&g| g == 0.0));
    // EOS is only ever predicted, never consumed
    assert!(grad[EOS * e..(EOS + 1) * e].iter().all(|&g| g == 0.0));
    assert!(grad[e..2 * e].iter().any(|&g| g != 0.0));
}

#[test]
fn sampled_behavior_logprobs_match_recomputation() {
    let v = Vocab::new();
    let p = PolicyParams::random(Layout::default(), 0.5, &mut rng_stream(2, "init", 0));
    let q = question(&v, "what is 3 plus 4 mod 10");
    let mut rng = rng_stream(2, "rollout", 0);
    for _ in 0..20 {
        let r = sample_response(&p, &v, &q, &SamplingSpec::default(), 64, &mut rng);
        assert!(!r.tokens.is_empty() && r.tokens.len() <= 64);
        let (_, per) = sequence_logprob(&p, &v, &q, &r);
        let beh = r.behavior_logprobs.as_ref().unwrap();
        assert_eq!(beh.len(), per.len());
        for (a, b) in beh.iter().zip(&per) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn greedy_limits_agree() {
    let v = Vocab::new();
    let p = PolicyParams::random(Layout::default(), 0.8, &mut rng_stream(3, "init", 0));
    let q = question(&v, "reverse abc");
    let greedy = greedy_response(&p, &v, &q, 64);
    let cold = SamplingSpec { temperature: 1e-9, top_p: 0.95, top_k: 50, repetition_penalty: 1.0 };
    let top1 = SamplingSpec { temperature: 1.0, top_p: 0.95, top_k: 1, repetition_penalty: 1.0 };
    for seed in 0..5 {
        let a = sample_response(&p, &v, &q, &cold, 64, &mut rng_stream(seed, "s", 0));
        let b = sample_response(&p, &v, &q, &top1, 64, &mut rng_stream(seed, "s", 1));
        assert_eq!(a.tokens, greedy.tokens);
        assert_eq!(b.tokens, greedy.tokens);
    }
}

#[test]
fn unconstrained_sampling_matches_softmax_frequencies() {
    let p = PolicyParams::random(Layout::default(), 1.0, &mut rng_stream(5, "init", 0));
    let logits = forward_logits(&p, &[crate::vocab::BOS, 10, 11]);
    let probs: Vec<f64> = log_softmax(&logits).iter().map(|x| x.exp()).collect();
    let spec = SamplingSpec { temperature: 1.0, top_p: 1.0, top_k: 48, repetition_penalty: 1.0 };
    let n = 100_000usize;
    let mut counts = vec![0usize; 48];
    let mut rng = rng_stream(5, "freq", 0);
    for _ in 0..n {
        counts[choose_token(&logits, &[], &spec, &mut rng)] += 1;
    }
    for (c, p) in counts.iter().zip(&probs) {
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sigma + 1e-9, "count {c} vs p {p}");
    }
}

#[test]
fn nucleus_keeps_the_top_token() {
    let logits = vec![5.0, 4.9, 0.0, -1.0];
    let spec = SamplingSpec { temperature: 1.0, top_p: 0.01, top_k: 4, repetition_penalty: 1.0 };
    let probs = constrained_distribution(&logits, &spec);
    assert_eq!(probs, vec![1.0, 0.0, 0.0, 0.0]);
    let spec = SamplingSpec { top_k: 2, top_p: 1.0, ..spec };
    let probs = constrained_distribution(&logits, &spec);
    assert!(probs[2] == 0.0 && probs[3] == 0.0);
    assert!((probs[0] + probs[1] - 1.0).abs() < 1e-15);
}

#[test]
fn repetition_penalty_divides_positive_and_multiplies_negative() {
    let mut logits = vec![2.0, -2.0, 1.0];
    apply_repetition_penalty(&mut logits, &[0, 1, 1], 2.0);
    assert_eq!(logits, vec![1.0, -4.0, 1.0]);
}

#[test]
fn lockstep_trace_matches_sequential_runs() {
    let mut rng = rng_stream(11, "batch-trace", 0);
    let layout = Layout { vocab: 48, embed_dim: 6, hidden_dim: 7 };
    let p = PolicyParams::random(layout, 0.5, &mut rng);
    let hd = layout.hidden_dim;
    // ragged, including an empty run and ties in length
    let seqs: Vec<Vec<usize>> = [3, 0, 9, 5, 9, 1, 12, 4, 7, 2, 9, 6]
        .iter()
        .map(|&n| random_tokens(&mut rng, n))
        .collect();
    let refs: Vec<&[usize]> = seqs.iter().map(|s| &s[..]).collect();
    let h0: Vec<f64> = (0..seqs.len() * hd).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = gru::BatchTrace::run(&p, &h0, &refs);

    let mut dh = batch.zero_grads();
    let mut grad_seq = vec![0.0; p.data.len()];
    let mut d0_seq = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        let single = gru::Trace::run(&p, &h0[i * hd..(i + 1) * hd], s);
        let mut up: Vec<f64> = (0..(s.len() + 1) * hd).map(|_| rng.random_range(-1.0..1.0)).collect();
        for k in 0..=s.len() {
            for (a, b) in batch.state(i, k).iter().zip(single.state(k)) {
                assert!((a - b).abs() <= 1e-13, "state {k} of run {i}: {a} vs {b}");
            }
            batch.grad_slot(&mut dh, i, k).copy_from_slice(&up[k * hd..(k + 1) * hd]);
        }
        d0_seq.extend(single.backward(&p, &mut up, &mut grad_seq));
    }
    let mut grad_batch = vec![0.0; p.data.len()];
    let d0_batch = batch.backward(&p, &mut dh, &mut grad_batch);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
    assert!(grad_batch.iter().zip(&grad_seq).all(|(&a, &b)| close(a, b)));
    assert!(d0_batch.iter().zip(&d0_seq).all(|(&a, &b)| close(a, b)));
}

#[test]
fn batched_greedy_matches_one_at_a_time() {
    let v = Vocab::new();
    let p = PolicyParams::random(Layout::default(), 0.5, &mut rng_stream(4, "init", 0));
    let mut rng = rng_stream(4, "prompts", 0);
    let qs: Vec<Question> = (0..40)
        .map(|_| {
            let (a, b) = (rng.random_range(0..100), rng.random_range(0..100));
            question(&v, &format!("what is {a} plus {b} mod 7"))
        })
        .collect();
    let batch = greedy_responses(&p, &v, &qs, 16);
    for (q, r) in qs.iter().zip(&batch) {
        assert_eq!(greedy_response(&p, &v, q, 16).tokens, r.tokens);
    }
}
