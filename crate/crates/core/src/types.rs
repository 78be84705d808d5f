//! Domain values exchanged between modules.

use serde::{Deserialize, Serialize};

use crate::vocab::{Vocab, BOS, EOS, PROMPT_END};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ModArith,
    CountChar,
    ReverseString,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::ModArith, TaskKind::CountChar, TaskKind::ReverseString];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ModArith => "mod_arith",
            TaskKind::CountChar => "count_char",
            TaskKind::ReverseString => "reverse_string",
        }
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown task kind {s:?}"))
    }
}

/// A generated task instance with a checkable answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: u64,
    pub prompt_text: String,
    pub prompt_tokens: Vec<usize>,
    pub answer_text: String,
    pub task_kind: TaskKind,
}

impl Question {
    /// Policy conditioning context: BOS, the prompt, and the prompt terminator.
    pub fn context(&self, vocab: &Vocab) -> Vec<usize> {
        let mut ctx = Vec::with_capacity(self.prompt_tokens.len() + 2);
        ctx.push(BOS);
        ctx.extend_from_slice(&self.prompt_tokens);
        ctx.push(vocab.id(PROMPT_END).expect("prompt terminator is in the alphabet"));
        ctx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    Student,
    Teacher(u32),
}

impl Source {
    pub fn is_teacher(self) -> bool {
        matches!(self, Source::Teacher(_))
    }
}

/// A generated token sequence, ending in EOS unless truncated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub tokens: Vec<usize>,
    pub text: String,
    pub source: Source,
    /// Per-token log-probabilities under the policy acting as the old-policy
    /// denominator. Filled at sampling time for student responses.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_logprobs: Option<Vec<f64>>,
}

impl Response {
    /// Builds a response from rendered text, terminated by EOS and capped at `max_len` tokens.
    pub fn from_text(vocab: &Vocab, text: &str, source: Source, max_len: usize) -> crate::Result<Self> {
        let mut tokens = vocab.encode(text)?;
        tokens.push(EOS);
        tokens.truncate(max_len.max(1));
        let text = vocab.decode(&tokens);
        Ok(Self {
            tokens,
            text,
            source,
            behavior_logprobs: None,
        })
    }

    pub fn is_terminated(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}
