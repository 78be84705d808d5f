//! Answer-reward judges.
//!
//! The oracle judge normalizes phrasing before comparing, standing in for a
//! language-model judge. The parse judge compares strings almost verbatim.
//! The remote judge forwards the triple to an external grader.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Question;

/// Versioned grading prompt sent to remote judges.
pub const JUDGE_PROMPT_V1: &str = include_str!("../resources/judge_prompt_v1.txt");
pub const JUDGE_PROTOCOL_VERSION: u32 = 1;
/// Environment variable overriding the configured remote endpoint.
pub const ENDPOINT_ENV: &str = "RIL_JUDGE_ENDPOINT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub correct: bool,
    pub normalized_prediction: String,
    pub normalized_truth: String,
}

const UNITS: [&str; 20] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const TENS: [&str; 8] = ["twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];
const LEADING_PHRASES: [&str; 4] = ["the answer is", "the final answer is", "final answer:", "answer:"];
const TRAILING_PHRASES: [&str; 2] = ["final answer", "is the answer"];

fn unit_value(w: &str) -> Option<u32> {
    UNITS.iter().position(|&u| u == w).map(|i| i as u32)
}

fn tens_value(w: &str) -> Option<u32> {
    TENS.iter().position(|&t| t == w).map(|i| 20 + 10 * i as u32)
}

/// Value of a single number word or a hyphenated compound such as `twenty-one`.
fn word_value(w: &str) -> Option<u32> {
    if let Some(v) = unit_value(w).or_else(|| tens_value(w)) {
        return Some(v);
    }
    let (a, b) = w.split_once('-')?;
    match (tens_value(a), unit_value(b)) {
        (Some(t), Some(u)) if (1..10).contains(&u) => Some(t + u),
        _ => None,
    }
}

fn is_edge_punct(c: char) -> bool {
    c.is_whitespace() || matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | '-' | '—' | '–' | '"' | '\'' | '(' | ')')
}

fn strip_templates(mut s: String) -> String {
    loop {
        let before = s.clone();
        s = s.trim_matches(is_edge_punct).to_string();
        for p in LEADING_PHRASES {
            if let Some(rest) = s.strip_prefix(p) {
                s = rest.to_string();
            }
        }
        for p in TRAILING_PHRASES {
            if let Some(rest) = s.strip_suffix(p) {
                s = rest.to_string();
            }
        }
        if s == before {
            return s;
        }
    }
}

/// Canonical form used by the oracle judge.
pub fn normalize_answer(text: &str) -> String {
    let s = strip_templates(text.to_lowercase());
    let s = s.replace('%', " ");
    let words: Vec<&str> = s.split_whitespace().filter(|w| *w != "percent").collect();
    let mut out: Vec<String> = Vec::with_capacity(words.len());
    let mut i = 0;
    while i < words.len() {
        let w = words[i];
        if let Some(t) = tens_value(w) {
            if let Some(u) = words.get(i + 1).and_then(|n| unit_value(n)).filter(|u| (1..10).contains(u)) {
                out.push((t + u).to_string());
                i += 2;
                continue;
            }
        }
        match word_value(w) {
            Some(v) => out.push(v.to_string()),
            None => out.push(w.to_string()),
        }
        i += 1;
    }
    strip_templates(out.join(" "))
}

pub fn oracle_judge(_question: &Question, answer_text: &str, response_text: &str) -> JudgeVerdict {
    let normalized_truth = normalize_answer(answer_text);
    let normalized_prediction = normalize_answer(response_text);
    JudgeVerdict {
        correct: normalized_truth == normalized_prediction,
        normalized_prediction,
        normalized_truth,
    }
}

/// Case-folded exact comparison with no other normalization.
pub fn parse_judge(_question: &Question, answer_text: &str, response_text: &str) -> JudgeVerdict {
    let normalized_truth = answer_text.to_lowercase();
    let normalized_prediction = response_text.to_lowercase();
    JudgeVerdict {
        correct: normalized_truth == normalized_prediction,
        normalized_prediction,
        normalized_truth,
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JudgeRequest {
    pub version: u32,
    pub prompt: String,
    pub question: String,
    pub ground_truth: String,
    pub prediction: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JudgeReply {
    pub verdict: String,
}

pub fn render_prompt(question: &str, ground_truth: &str, prediction: &str) -> String {
    JUDGE_PROMPT_V1
        .replace("{question}", question)
        .replace("{ground_truth}", ground_truth)
        .replace("{prediction}", prediction)
}

/// Client for a grader speaking one JSON line in, one JSON line out over TCP.
#[derive(Debug, Clone)]
pub struct RemoteJudge {
    pub endpoint: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl RemoteJudge {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout,
            max_in_flight: 4,
        }
    }

    pub fn judge(&self, question: &Question, answer_text: &str, response_text: &str) -> Result<JudgeVerdict> {
        let unavailable = |e: std::io::Error| Error::JudgeUnavailable(format!("{}: {e}", self.endpoint));
        let addr = self
            .endpoint
            .to_socket_addrs()
            .map_err(unavailable)?
            .next()
            .ok_or_else(|| Error::JudgeUnavailable(format!("{}: no address", self.endpoint)))?;
        let mut stream = TcpStream::connect_timeout(&addr, self.timeout).map_err(unavailable)?;
        stream.set_read_timeout(Some(self.timeout)).map_err(unavailable)?;
        stream.set_write_timeout(Some(self.timeout)).map_err(unavailable)?;
        let request = JudgeRequest {
            version: JUDGE_PROTOCOL_VERSION,
            prompt: render_prompt(&question.prompt_text, answer_text, response_text),
            question: question.prompt_text.clone(),
            ground_truth: answer_text.to_string(),
            prediction: response_text.to_string(),
        };
        let mut line = serde_json::to_string(&request)?;
        line.push('\n');
        stream.write_all(line.as_bytes()).map_err(unavailable)?;
        let mut reply = String::new();
        BufReader::new(stream).read_line(&mut reply).map_err(unavailable)?;
        if reply.is_empty() {
            return Err(Error::JudgeUnavailable(format!("{}: connection closed", self.endpoint)));
        }
        let parsed: JudgeReply =
            serde_json::from_str(reply.trim_end()).map_err(|_| Error::MalformedVerdict(reply.clone()))?;
        let correct = match parsed.verdict.trim().to_lowercase().as_str() {
            "yes" => true,
            "no" => false,
            _ => return Err(Error::MalformedVerdict(parsed.verdict)),
        };
        Ok(JudgeVerdict {
            correct,
            normalized_prediction: response_text.to_string(),
            normalized_truth: answer_text.to_string(),
        })
    }

    /// Judges a batch with at most `max_in_flight` concurrent requests; results keep input order.
    pub fn judge_many(&self, items: &[(&Question, &str, &str)]) -> Result<Vec<JudgeVerdict>> {
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.max_in_flight.max(1)) {
            let results: Vec<Result<JudgeVerdict>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|(q, a, r)| s.spawn(move || self.judge(q, a, r)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("judge thread panicked")).collect()
            });
            for r in results {
                out.push(r?);
            }
        }
        Ok(out)
    }
}

/// Judge selected by `judge_mode`. `None` awards nothing.
#[derive(Debug, Clone)]
pub enum Judge {
    Oracle,
    Parse,
    None,
    Remote(RemoteJudge),
}

impl Judge {
    /// Builds the judge for a config, honouring the endpoint environment override.
    pub fn from_config(cfg: &crate::config::JudgeConfig) -> Result<Self> {
        use crate::config::JudgeMode;
        Ok(match cfg.mode {
            JudgeMode::Oracle => Judge::Oracle,
            JudgeMode::Parse => Judge::Parse,
            JudgeMode::None => Judge::None,
            JudgeMode::Remote => {
                let endpoint = std::env::var(ENDPOINT_ENV)
                    .ok()
                    .or_else(|| cfg.endpoint.clone())
                    .ok_or_else(|| Error::Config(format!("remote judge needs judge.endpoint or {ENDPOINT_ENV}")))?;
                Judge::Remote(RemoteJudge::new(endpoint, Duration::from_millis(cfg.timeout_ms)))
            }
        })
    }

    pub fn is_none(&self) -> bool {
        matches!(self, Judge::None)
    }

    /// Answer correctness flags for a batch of responses to one question.
    pub fn correct_flags(&self, question: &Question, responses: &[&str]) -> Result<Vec<bool>> {
        let truth = question.answer_text.as_str();
        match self {
            Judge::Oracle => Ok(responses.iter().map(|r| oracle_judge(question, truth, r).correct).collect()),
            Judge::Parse => Ok(responses.iter().map(|r| parse_judge(question, truth, r).correct).collect()),
            Judge::None => Ok(vec![false; responses.len()]),
            Judge::Remote(remote) => {
                let items: Vec<_> = responses.iter().map(|r| (question, truth, *r)).collect();
                Ok(remote.judge_many(&items)?.into_iter().map(|v| v.correct).collect())
            }
        }
    }
}
