//! Reinforcement and imitation learning for a tiny character-level policy.
//!
//! A gated recurrent student is trained on groups that mix its own samples
//! with cached teacher responses. Each response is rewarded by a
//! discriminator (does it read like a teacher?) and a judge (is the answer
//! right?), and the policy follows a clipped, KL-regularized group-relative
//! objective. RL-only baselines share the same machinery.

pub mod config;
pub mod discriminator;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod judge;
pub mod model;
pub mod rewards;
pub mod rng;
pub mod tasks;
pub mod trainer;
pub mod types;
pub mod vocab;

pub use config::{AdvantageVariant, DiscMode, JudgeMode, ParamGroup, SamplingSpec, TeacherSpec, TrainConfig};
pub use error::{Error, Result};
pub use model::{Layout, ParamGroupMask, PolicyParams, PolicySnapshot};
pub use rng::{rng_stream, Rng};
pub use types::{Question, Response, Source, TaskKind};
pub use vocab::Vocab;
