use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::config::{ParamGroup, TrainConfig};
use crate::rng::Rng;
use crate::vocab::VOCAB_SIZE;

/// Shape descriptor fixing where each tensor lives in the flat vector.
///
/// Order: `embed [V×E]`, `w_z [H×(E+H)]`, `b_z [H]`, `w_r`, `b_r`, `w_h`, `b_h`,
/// `out_w [V×H]`, `out_b [V]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for Layout {
    fn default() -> Self {
        Self {
            vocab: VOCAB_SIZE,
            embed_dim: 32,
            hidden_dim: 64,
        }
    }
}

impl Layout {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self {
            vocab: VOCAB_SIZE,
            embed_dim: cfg.model.embed_dim,
            hidden_dim: cfg.model.hidden_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embed_dim + self.hidden_dim
    }

    fn gate_len(&self) -> usize {
        self.hidden_dim * self.input_dim()
    }

    pub fn embed(&self) -> std::ops::Range<usize> {
        0..self.vocab * self.embed_dim
    }

    pub fn w_z(&self) -> std::ops::Range<usize> {
        let s = self.embed().end;
        s..s + self.gate_len()
    }

    pub fn b_z(&self) -> std::ops::Range<usize> {
        let s = self.w_z().end;
        s..s + self.hidden_dim
    }

    pub fn w_r(&self) -> std::ops::Range<usize> {
        let s = self.b_z().end;
        s..s + self.gate_len()
    }

    pub fn b_r(&self) -> std::ops::Range<usize> {
        let s = self.w_r().end;
        s..s + self.hidden_dim
    }

    pub fn w_h(&self) -> std::ops::Range<usize> {
        let s = self.b_r().end;
        s..s + self.gate_len()
    }

    pub fn b_h(&self) -> std::ops::Range<usize> {
        let s = self.w_h().end;
        s..s + self.hidden_dim
    }

    pub fn out_w(&self) -> std::ops::Range<usize> {
        let s = self.b_h().end;
        s..s + self.vocab * self.hidden_dim
    }

    pub fn out_b(&self) -> std::ops::Range<usize> {
        let s = self.out_w().end;
        s..s + self.vocab
    }

    pub fn total(&self) -> usize {
        self.out_b().end
    }

    /// Flat ranges covered by a parameter group.
    pub fn group_ranges(&self, group: ParamGroup) -> Vec<std::ops::Range<usize>> {
        match group {
            ParamGroup::Embed => vec![self.embed()],
            ParamGroup::Recurrent => vec![self.w_z().start..self.b_h().end],
            ParamGroup::Head => vec![self.out_w().start..self.out_b().end],
        }
    }
}

/// Which parameter groups receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroupMask {
    pub embed: bool,
    pub recurrent: bool,
    pub head: bool,
}

impl Default for ParamGroupMask {
    fn default() -> Self {
        Self::all()
    }
}

impl ParamGroupMask {
    pub fn all() -> Self {
        Self {
            embed: true,
            recurrent: true,
            head: true,
        }
    }

    pub fn from_groups<'a>(groups: impl IntoIterator<Item = &'a ParamGroup>) -> Self {
        let mut m = Self {
            embed: false,
            recurrent: false,
            head: false,
        };
        for g in groups {
            match g {
                ParamGroup::Embed => m.embed = true,
                ParamGroup::Recurrent => m.recurrent = true,
                ParamGroup::Head => m.head = true,
            }
        }
        m
    }

    pub fn is_empty(&self) -> bool {
        !(self.embed || self.recurrent || self.head)
    }

    pub fn allows(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Embed => self.embed,
            ParamGroup::Recurrent => self.recurrent,
            ParamGroup::Head => self.head,
        }
    }

    /// Zeroes every entry of `flat` belonging to a disabled group.
    pub fn apply(&self, layout: &Layout, flat: &mut [f64]) {
        for group in [ParamGroup::Embed, ParamGroup::Recurrent, ParamGroup::Head] {
            if !self.allows(group) {
                for range in layout.group_ranges(group) {
                    flat[range].fill(0.0);
                }
            }
        }
    }
}

/// Flat parameter vector of the gated recurrent policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub layout: Layout,
    pub data: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(layout: Layout) -> Self {
        Self {
            layout,
            data: vec![0.0; layout.total()],
        }
    }

    /// Uniform `[-scale, scale]` weights, zero biases.
    pub fn random(layout: Layout, scale: f64, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(layout);
        let biases = [layout.b_z(), layout.b_r(), layout.b_h(), layout.out_b()];
        for (i, x) in p.data.iter_mut().enumerate() {
            if biases.iter().any(|r| r.contains(&i)) {
                continue;
            }
            *x = uniform_symmetric(rng, scale);
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    #[inline]
    pub fn embed_row(&self, token: usize) -> &[f64] {
        let e = self.layout.embed_dim;
        &self.data[token * e..(token + 1) * e]
    }

    #[inline]
    pub fn slice(&self, range: std::ops::Range<usize>) -> &[f64] {
        &self.data[range]
    }
}

/// Role of a frozen policy copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnapshotRole {
    OldPolicy,
    Reference,
}

/// Immutable copy of policy parameters.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    role: SnapshotRole,
    params: std::sync::Arc<PolicyParams>,
}

impl PolicySnapshot {
    pub fn new(role: SnapshotRole, params: &PolicyParams) -> Self {
        Self {
            role,
            params: std::sync::Arc::new(params.clone()),
        }
    }

    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

fn uniform_symmetric(rng: &mut Rng, scale: f64) -> f64 {
    if scale == 0.0 {
        0.0
    } else {
        rng.random_range(-scale..scale)
    }
}
