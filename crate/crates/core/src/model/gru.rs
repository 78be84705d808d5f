//! Single gated recurrent cell: forward trace and reverse-mode backward pass.
//!
//! ```text
//! u  = [x; h]            z = σ(W_z u + b_z)      r = σ(W_r u + b_r)
//! u' = [x; r ⊙ h]        c = tanh(W_h u' + b_h)  h' = (1 − z) ⊙ h + z ⊙ c
//! ```

use super::params::PolicyParams;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in 4 * chunks..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
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

/// Gate activations of one step, written into caller-provided buffers.
#[inline]
fn cell_forward(
    params: &PolicyParams,
    token: usize,
    h_prev: &[f64],
    u: &mut [f64],
    z: &mut [f64],
    r: &mut [f64],
    c: &mut [f64],
    h_next: &mut [f64],
) {
    let l = params.layout;
    let (e, hd, inp) = (l.embed_dim, l.hidden_dim, l.input_dim());
    let data = &params.data;
    u[..e].copy_from_slice(params.embed_row(token));
    u[e..].copy_from_slice(h_prev);
    let (wz, bz) = (&data[l.w_z()], &data[l.b_z()]);
    let (wr, br) = (&data[l.w_r()], &data[l.b_r()]);
    for i in 0..hd {
        z[i] = sigmoid(bz[i] + dot(&wz[i * inp..(i + 1) * inp], u));
        r[i] = sigmoid(br[i] + dot(&wr[i * inp..(i + 1) * inp], u));
    }
    for i in 0..hd {
        u[e + i] = r[i] * h_prev[i];
    }
    let (wh, bh) = (&data[l.w_h()], &data[l.b_h()]);
    for i in 0..hd {
        c[i] = (bh[i] + dot(&wh[i * inp..(i + 1) * inp], u)).tanh();
        h_next[i] = (1.0 - z[i]) * h_prev[i] + z[i] * c[i];
    }
}

/// Reusable buffers for forward-only stepping.
pub struct Stepper {
    u: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    next: Vec<f64>,
}

impl Stepper {
    pub fn new(params: &PolicyParams) -> Self {
        let l = params.layout;
        Self {
            u: vec![0.0; l.input_dim()],
            z: vec![0.0; l.hidden_dim],
            r: vec![0.0; l.hidden_dim],
            c: vec![0.0; l.hidden_dim],
            next: vec![0.0; l.hidden_dim],
        }
    }

    /// Advances `h` in place by consuming `token`.
    pub fn step(&mut self, params: &PolicyParams, token: usize, h: &mut [f64]) {
        cell_forward(
            params,
            token,
            h,
            &mut self.u,
            &mut self.z,
            &mut self.r,
            &mut self.c,
            &mut self.next,
        );
        h.copy_from_slice(&self.next);
    }
}

/// Output-layer logits `out_w h + out_b`.
pub fn logits_from_hidden(params: &PolicyParams, h: &[f64], out: &mut [f64]) {
    let l = params.layout;
    let w = &params.data[l.out_w()];
    let b = &params.data[l.out_b()];
    let hd = l.hidden_dim;
    for (v, o) in out.iter_mut().enumerate() {
        *o = b[v] + dot(&w[v * hd..(v + 1) * hd], h);
    }
}

/// Hidden states and gate activations recorded while consuming a token run.
#[derive(Debug, Clone)]
pub struct Trace {
    hidden: usize,
    tokens: Vec<usize>,
    /// `(n + 1) × H`; state 0 is the initial state.
    h: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

impl Trace {
    pub fn run(params: &PolicyParams, h0: &[f64], tokens: &[usize]) -> Self {
        let l = params.layout;
        let hd = l.hidden_dim;
        let n = tokens.len();
        let mut h = vec![0.0; (n + 1) * hd];
        h[..hd].copy_from_slice(h0);
        let mut z = vec![0.0; n * hd];
        let mut r = vec![0.0; n * hd];
        let mut c = vec![0.0; n * hd];
        let mut u = vec![0.0; l.input_dim()];
        for (k, &t) in tokens.iter().enumerate() {
            let (prev, next) = h.split_at_mut((k + 1) * hd);
            cell_forward(
                params,
                t,
                &prev[k * hd..],
                &mut u,
                &mut z[k * hd..(k + 1) * hd],
                &mut r[k * hd..(k + 1) * hd],
                &mut c[k * hd..(k + 1) * hd],
                &mut next[..hd],
            );
        }
        Self {
            hidden: hd,
            tokens: tokens.to_vec(),
            h,
            z,
            r,
            c,
        }
    }

    /// Number of consumed tokens.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// State after consuming `k` tokens.
    pub fn state(&self, k: usize) -> &[f64] {
        &self.h[k * self.hidden..(k + 1) * self.hidden]
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.len())
    }

    /// Back-propagates through the run.
    ///
    /// `dh` holds `(n + 1) × H` upstream gradients with respect to each state and
    /// is consumed as scratch. Parameter gradients accumulate into `grad`; the
    /// return value is the gradient with respect to the initial state.
    pub fn backward(&self, params: &PolicyParams, dh: &mut [f64], grad: &mut [f64]) -> Vec<f64> {
        let l = params.layout;
        let (e, hd, inp) = (l.embed_dim, l.hidden_dim, l.input_dim());
        debug_assert_eq!(dh.len(), (self.len() + 1) * hd);
        let data = &params.data;
        let (wz, wr, wh) = (&data[l.w_z()], &data[l.w_r()], &data[l.w_h()]);
        let (rz, rbz, rr, rbr, rh, rbh) = (l.w_z(), l.b_z(), l.w_r(), l.b_r(), l.w_h(), l.b_h());

        let mut u = vec![0.0; inp];
        let mut du = vec![0.0; inp];
        let mut da_z = vec![0.0; hd];
        let mut da_r = vec![0.0; hd];
        let mut da_h = vec![0.0; hd];
        let mut dr = vec![0.0; hd];

        for k in (0..self.len()).rev() {
            let token = self.tokens[k];
            let hp = &self.h[k * hd..(k + 1) * hd];
            let z = &self.z[k * hd..(k + 1) * hd];
            let r = &self.r[k * hd..(k + 1) * hd];
            let c = &self.c[k * hd..(k + 1) * hd];
            let (dprev, dcur) = dh.split_at_mut((k + 1) * hd);
            let dprev = &mut dprev[k * hd..];
            let g = &dcur[..hd];

            for i in 0..hd {
                let dz = g[i] * (c[i] - hp[i]);
                let dc = g[i] * z[i];
                dprev[i] += g[i] * (1.0 - z[i]);
                da_h[i] = dc * (1.0 - c[i] * c[i]);
                da_z[i] = dz * z[i] * (1.0 - z[i]);
            }

            // candidate path, input u' = [x; r ⊙ h]
            u[..e].copy_from_slice(params.embed_row(token));
            for i in 0..hd {
                u[e + i] = r[i] * hp[i];
            }
            du.fill(0.0);
            {
                let gw = &mut grad[rh.clone()];
                for i in 0..hd {
                    let a = da_h[i];
                    if a != 0.0 {
                        axpy(a, &u, &mut gw[i * inp..(i + 1) * inp]);
                        axpy(a, &wh[i * inp..(i + 1) * inp], &mut du);
                    }
                }
                axpy(1.0, &da_h, &mut grad[rbh.clone()]);
            }
            let mut dx: Vec<f64> = du[..e].to_vec();
            for i in 0..hd {
                let drh = du[e + i];
                dr[i] = drh * hp[i];
                dprev[i] += drh * r[i];
                da_r[i] = dr[i] * r[i] * (1.0 - r[i]);
            }

            // gate paths, input u = [x; h]
            u[e..].copy_from_slice(hp);
            du.fill(0.0);
            {
                let gw = &mut grad[rr.clone()];
                for i in 0..hd {
                    let a = da_r[i];
                    if a != 0.0 {
                        axpy(a, &u, &mut gw[i * inp..(i + 1) * inp]);
                        axpy(a, &wr[i * inp..(i + 1) * inp], &mut du);
                    }
                }
                axpy(1.0, &da_r, &mut grad[rbr.clone()]);
            }
            {
                let gw = &mut grad[rz.clone()];
                for i in 0..hd {
                    let a = da_z[i];
                    if a != 0.0 {
                        axpy(a, &u, &mut gw[i * inp..(i + 1) * inp]);
                        axpy(a, &wz[i * inp..(i + 1) * inp], &mut du);
                    }
                }
                axpy(1.0, &da_z, &mut grad[rbz.clone()]);
            }
            axpy(1.0, &du[..e], &mut dx);
            axpy(1.0, &du[e..], dprev);
            axpy(1.0, &dx, &mut grad[token * e..(token + 1) * e]);
        }
        dh[..hd].to_vec()
    }
}

/// `C = A·Bᵀ + β·C` with `A: m×k`, `B: n×k`, `C: m×n`, all row-major.
pub(crate) fn gemm_abt(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every index the given shapes and strides touch.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `C += Aᵀ·B` with `A: k×m`, `B: k×n`, `C: m×n`, all row-major.
pub(crate) fn gemm_atb_acc(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= k * m && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `C += A·B` with `A: m×k`, `B: k×n`, `C: m×n`, all row-major.
pub(crate) fn gemm_ab_acc(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// One lockstep step for `n = tokens.len()` sequences. All state buffers are
/// packed `n × H`; `u` is `n × (E + H)` scratch.
#[allow(clippy::too_many_arguments)]
fn batch_cell_forward(
    params: &PolicyParams,
    tokens: &[usize],
    h_prev: &[f64],
    u: &mut [f64],
    z: &mut [f64],
    r: &mut [f64],
    c: &mut [f64],
    h_next: &mut [f64],
) {
    let l = params.layout;
    let (e, hd, inp) = (l.embed_dim, l.hidden_dim, l.input_dim());
    let n = tokens.len();
    let data = &params.data;
    for (b, &t) in tokens.iter().enumerate() {
        let ub = &mut u[b * inp..(b + 1) * inp];
        ub[..e].copy_from_slice(params.embed_row(t));
        ub[e..].copy_from_slice(&h_prev[b * hd..(b + 1) * hd]);
    }
    gemm_abt(n, hd, inp, u, &data[l.w_z()], 0.0, z);
    gemm_abt(n, hd, inp, u, &data[l.w_r()], 0.0, r);
    let (bz, br, bh) = (&data[l.b_z()], &data[l.b_r()], &data[l.b_h()]);
    for b in 0..n {
        for i in 0..hd {
            let k = b * hd + i;
            z[k] = sigmoid(z[k] + bz[i]);
            r[k] = sigmoid(r[k] + br[i]);
            u[b * inp + e + i] = r[k] * h_prev[k];
        }
    }
    gemm_abt(n, hd, inp, u, &data[l.w_h()], 0.0, c);
    for b in 0..n {
        for i in 0..hd {
            let k = b * hd + i;
            c[k] = (c[k] + bh[i]).tanh();
            h_next[k] = (1.0 - z[k]) * h_prev[k] + z[k] * c[k];
        }
    }
}

/// Gate backward for a batch: `grad_w += aᵀ u`, `grad_b += Σ_b a_b`, `du += a w`.
#[allow(clippy::too_many_arguments)]
fn batch_gate_backward(a: &[f64], u: &[f64], w: &[f64], grad_w: &mut [f64], grad_b: &mut [f64], du: &mut [f64], hd: usize, inp: usize) {
    let n = a.len() / hd;
    gemm_atb_acc(hd, inp, n, a, u, grad_w);
    gemm_ab_acc(n, inp, hd, a, w, du);
    for b in 0..n {
        axpy(1.0, &a[b * hd..(b + 1) * hd], grad_b);
    }
}

/// Gate activations of one lockstep step, packed in rank order.
#[derive(Debug, Clone)]
struct BatchStep {
    tokens: Vec<usize>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
}

/// Several token runs advanced in lockstep, each from its own initial state.
///
/// Sequences are ranked by decreasing length so that the runs still active at
/// step `k` are always a prefix of the ranking; `states[k]` holds the rows of
/// every run with at least `k` tokens.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    hidden: usize,
    rank: Vec<usize>,
    order: Vec<usize>,
    lens: Vec<usize>,
    steps: Vec<BatchStep>,
    states: Vec<Vec<f64>>,
}

impl BatchTrace {
    /// `h0` is `seqs.len() × H`, one row per sequence in input order.
    pub fn run(params: &PolicyParams, h0: &[f64], seqs: &[&[usize]]) -> Self {
        let l = params.layout;
        let (hd, inp) = (l.hidden_dim, l.input_dim());
        assert_eq!(h0.len(), seqs.len() * hd, "one initial state per sequence");
        let mut order: Vec<usize> = (0..seqs.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(seqs[i].len()));
        let mut rank = vec![0; seqs.len()];
        for (k, &i) in order.iter().enumerate() {
            rank[i] = k;
        }
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        let max = order.first().map_or(0, |&i| lens[i]);

        let mut first = Vec::with_capacity(h0.len());
        for &i in &order {
            first.extend_from_slice(&h0[i * hd..(i + 1) * hd]);
        }
        let mut states = Vec::with_capacity(max + 1);
        states.push(first);
        let mut steps = Vec::with_capacity(max);
        let mut u = vec![0.0; seqs.len() * inp];
        for k in 0..max {
            let tokens: Vec<usize> = order.iter().take_while(|&&i| lens[i] > k).map(|&i| seqs[i][k]).collect();
            let n = tokens.len();
            let mut step = BatchStep {
                tokens,
                z: vec![0.0; n * hd],
                r: vec![0.0; n * hd],
                c: vec![0.0; n * hd],
            };
            let mut next = vec![0.0; n * hd];
            batch_cell_forward(
                params,
                &step.tokens,
                &states[k][..n * hd],
                &mut u[..n * inp],
                &mut step.z,
                &mut step.r,
                &mut step.c,
                &mut next,
            );
            steps.push(step);
            states.push(next);
        }
        Self {
            hidden: hd,
            rank,
            order,
            lens,
            steps,
            states,
        }
    }

    /// Number of sequences.
    pub fn count(&self) -> usize {
        self.lens.len()
    }

    /// Tokens consumed by sequence `seq`.
    pub fn len(&self, seq: usize) -> usize {
        self.lens[seq]
    }

    /// State of `seq` after consuming `k` of its tokens.
    pub fn state(&self, seq: usize, k: usize) -> &[f64] {
        debug_assert!(k <= self.lens[seq]);
        let at = self.rank[seq] * self.hidden;
        &self.states[k][at..at + self.hidden]
    }

    pub fn last(&self, seq: usize) -> &[f64] {
        self.state(seq, self.lens[seq])
    }

    /// Zeroed upstream-gradient buffers shaped like the recorded states.
    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| vec![0.0; s.len()]).collect()
    }

    /// Mutable slot of `dh` for the state of `seq` after `k` tokens.
    pub fn grad_slot<'g>(&self, dh: &'g mut [Vec<f64>], seq: usize, k: usize) -> &'g mut [f64] {
        let at = self.rank[seq] * self.hidden;
        &mut dh[k][at..at + self.hidden]
    }

    /// Back-propagates every run at once; `dh` (from [`Self::zero_grads`]) is
    /// consumed as scratch. Returns the initial-state gradients, `count × H`
    /// in input order.
    pub fn backward(&self, params: &PolicyParams, dh: &mut [Vec<f64>], grad: &mut [f64]) -> Vec<f64> {
        let l = params.layout;
        let (e, hd, inp) = (l.embed_dim, l.hidden_dim, l.input_dim());
        let data = &params.data;
        let (wz, wr, wh) = (&data[l.w_z()], &data[l.w_r()], &data[l.w_h()]);
        let cap = self.count();
        let mut u = vec![0.0; cap * inp];
        let mut du = vec![0.0; cap * inp];
        let mut da_z = vec![0.0; cap * hd];
        let mut da_r = vec![0.0; cap * hd];
        let mut da_h = vec![0.0; cap * hd];

        for k in (0..self.steps.len()).rev() {
            let step = &self.steps[k];
            let n = step.tokens.len();
            let (nh, ni) = (n * hd, n * inp);
            let hp = &self.states[k][..nh];
            let (lo, hi) = dh.split_at_mut(k + 1);
            let dprev = &mut lo[k][..nh];
            let g = &hi[0][..nh];
            let (z, r, c) = (&step.z, &step.r, &step.c);
            for j in 0..nh {
                let dz = g[j] * (c[j] - hp[j]);
                let dc = g[j] * z[j];
                dprev[j] += g[j] * (1.0 - z[j]);
                da_h[j] = dc * (1.0 - c[j] * c[j]);
                da_z[j] = dz * z[j] * (1.0 - z[j]);
            }

            // candidate path, input u' = [x; r ⊙ h]
            for (b, &t) in step.tokens.iter().enumerate() {
                let ub = &mut u[b * inp..(b + 1) * inp];
                ub[..e].copy_from_slice(params.embed_row(t));
                for i in 0..hd {
                    ub[e + i] = r[b * hd + i] * hp[b * hd + i];
                }
            }
            du[..ni].fill(0.0);
            {
                let (gw, gb) = split_two(grad, l.w_h(), l.b_h());
                batch_gate_backward(&da_h[..nh], &u[..ni], wh, gw, gb, &mut du[..ni], hd, inp);
            }
            // the embedding part of du is kept; the state part flows through r
            for b in 0..n {
                for i in 0..hd {
                    let j = b * hd + i;
                    let drh = du[b * inp + e + i];
                    dprev[j] += drh * r[j];
                    let dr = drh * hp[j];
                    da_r[j] = dr * r[j] * (1.0 - r[j]);
                }
                du[b * inp + e..(b + 1) * inp].fill(0.0);
                u[b * inp + e..(b + 1) * inp].copy_from_slice(&hp[b * hd..(b + 1) * hd]);
            }

            // gate paths, input u = [x; h]
            {
                let (gw, gb) = split_two(grad, l.w_r(), l.b_r());
                batch_gate_backward(&da_r[..nh], &u[..ni], wr, gw, gb, &mut du[..ni], hd, inp);
            }
            {
                let (gw, gb) = split_two(grad, l.w_z(), l.b_z());
                batch_gate_backward(&da_z[..nh], &u[..ni], wz, gw, gb, &mut du[..ni], hd, inp);
            }
            for (b, &t) in step.tokens.iter().enumerate() {
                let db = &du[b * inp..(b + 1) * inp];
                axpy(1.0, &db[e..], &mut dprev[b * hd..(b + 1) * hd]);
                axpy(1.0, &db[..e], &mut grad[t * e..(t + 1) * e]);
            }
        }
        let mut out = vec![0.0; self.count() * hd];
        for (k, &i) in self.order.iter().enumerate() {
            out[i * hd..(i + 1) * hd].copy_from_slice(&dh[0][k * hd..(k + 1) * hd]);
        }
        out
    }
}

/// Disjoint mutable views of two non-overlapping ranges, the first lower.
fn split_two(
    v: &mut [f64],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = v.split_at_mut(b.start);
    (&mut lo[a], &mut hi[..b.end - b.start])
}

/// Reusable buffers for forward-only lockstep stepping.
#[derive(Debug, Default)]
pub struct BatchStepper {
    u: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    c: Vec<f64>,
    next: Vec<f64>,
}

impl BatchStepper {
    pub fn new() -> Self {
        Self::default()
    }

    /// Advances the `tokens.len()` packed rows of `h` by one token each.
    pub fn step(&mut self, params: &PolicyParams, tokens: &[usize], h: &mut [f64]) {
        let l = params.layout;
        let (n, hd) = (tokens.len(), l.hidden_dim);
        let nh = n * hd;
        for buf in [&mut self.z, &mut self.r, &mut self.c, &mut self.next] {
            buf.resize(nh, 0.0);
        }
        self.u.resize(n * l.input_dim(), 0.0);
        batch_cell_forward(
            params,
            tokens,
            &h[..nh],
            &mut self.u,
            &mut self.z[..nh],
            &mut self.r[..nh],
            &mut self.c[..nh],
            &mut self.next[..nh],
        );
        h[..nh].copy_from_slice(&self.next[..nh]);
    }
}

/// States after consuming each run from the zero state, `seqs.len() × H` in
/// input order. Forward only; nothing is recorded.
pub fn final_states(params: &PolicyParams, seqs: &[&[usize]]) -> Vec<f64> {
    let hd = params.layout.hidden_dim;
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(seqs[i].len()));
    let max = order.first().map_or(0, |&i| seqs[i].len());
    let mut h = vec![0.0; seqs.len() * hd];
    let mut stepper = BatchStepper::new();
    let mut tokens = Vec::with_capacity(seqs.len());
    for k in 0..max {
        tokens.clear();
        tokens.extend(order.iter().take_while(|&&i| seqs[i].len() > k).map(|&i| seqs[i][k]));
        stepper.step(params, &tokens, &mut h);
    }
    let mut out = vec![0.0; h.len()];
    for (rank, &i) in order.iter().enumerate() {
        out[i * hd..(i + 1) * hd].copy_from_slice(&h[rank * hd..(rank + 1) * hd]);
    }
    out
}

/// Output-layer logits for `n` packed states, `n × V`.
pub fn batch_logits(params: &PolicyParams, h: &[f64], n: usize) -> Vec<f64> {
    let l = params.layout;
    let b = &params.data[l.out_b()];
    let mut out = Vec::with_capacity(n * l.vocab);
    for _ in 0..n {
        out.extend_from_slice(b);
    }
    gemm_abt(n, l.vocab, l.hidden_dim, h, &params.data[l.out_w()], 1.0, &mut out);
    out
}
