//! The student policy: a single gated recurrent cell over character tokens.

pub mod checkpoint;
pub mod gru;
mod params;
mod policy;
mod sampling;

pub use params::{Layout, ParamGroupMask, PolicyParams, PolicySnapshot, SnapshotRole};
pub use policy::{
    context_state, continuation_logprobs, finish_gradient, forward_logits, log_softmax, policy_grad,
    sequence_logprob, batch_logprobs, BatchForward, WeightedGroup,
};
pub use sampling::{
    apply_repetition_penalty, choose_token, constrained_distribution, greedy_response, greedy_responses,
    sample_response,
    GREEDY_TEMPERATURE,
};
pub(crate) use sampling::sample_group;

#[cfg(test)]
mod tests;
