//! Boundary to the external models: planner, observer, timeline generator,
//! encoders and answerer.
//!
//! Text-producing providers return the raw model output; parsing happens on
//! this side so a malformed reply can be retried like any other failure.

pub mod cache;
pub mod http;
pub mod ledger;
pub mod mock;
pub mod prompts;
pub mod retry;
pub mod set;

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub use cache::ResponseCache;
pub use ledger::{LedgerEntry, TokenLedger};
pub use retry::{call_with_retry, NoSleep, ProviderPolicy, RecordingSleeper, Sleeper, ThreadSleeper};
pub use set::ProviderSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProviderError {
    #[error("{provider}: transport failure: {message}")]
    Transport { provider: String, message: String },
    #[error("{provider}: malformed response: {message}")]
    Malformed { provider: String, message: String },
    #[error("{provider}: {message}")]
    Rejected { provider: String, message: String },
    #[error("{provider}: gave up after {attempts} attempts: {last}")]
    Exhausted {
        provider: String,
        attempts: usize,
        last: Box<ProviderError>,
    },
}

impl ProviderError {
    pub fn transport(provider: &str, message: impl Into<String>) -> Self {
        Self::Transport {
            provider: provider.to_string(),
            message: message.into(),
        }
    }

    pub fn malformed(provider: &str, message: impl Into<String>) -> Self {
        Self::Malformed {
            provider: provider.to_string(),
            message: message.into(),
        }
    }

    pub fn rejected(provider: &str, message: impl Into<String>) -> Self {
        Self::Rejected {
            provider: provider.to_string(),
            message: message.into(),
        }
    }
}

/// Reference to one frame of a bundle; the remote side resolves it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub bundle_id: String,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub system: String,
    pub user: String,
    pub query: String,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverRequest {
    pub system: String,
    pub user: String,
    pub frames: Vec<FrameRef>,
    pub query: String,
    pub focus_keywords: Vec<String>,
    pub focus_semantic_queries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRequest {
    pub bundle_id: String,
    pub duration_s: f64,
    /// Frames sampled uniformly over the whole video.
    pub frames: Vec<FrameRef>,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub system: String,
    pub user: String,
    pub query: String,
    pub options: Vec<String>,
    pub package: Value,
}

pub trait Planner: Send + Sync {
    fn plan(&self, request: &PlanRequest) -> Result<String, ProviderError>;
}

pub trait Observer: Send + Sync {
    fn observe(&self, request: &ObserverRequest) -> Result<String, ProviderError>;
}

pub trait TimelineProvider: Send + Sync {
    fn timeline(&self, request: &TimelineRequest) -> Result<String, ProviderError>;
}

/// Text semantic encoder, unit-norm output.
pub trait TextEncoder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

/// Text tower of a joint image-text encoder, mapping into the frame feature space.
pub trait JointEncoder: Send + Sync {
    fn embed_joint(&self, text: &str) -> Result<Vec<f64>, ProviderError>;
}

pub trait Answerer: Send + Sync {
    fn answer(&self, request: &AnswerRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ObserverResponse {
    pub reasoning: String,
    pub caption: String,
    pub needs_more_info: bool,
    pub missing_visual_keyword: String,
}

/// Slice from the first `{` to the last `}`, which strips code fences and chatter.
pub fn json_object_span(raw: &str) -> Option<&str> {
    let start = raw.find('{')?;
    let end = raw.rfind('}')?;
    (end > start).then(|| &raw[start..=end])
}

pub fn parse_observer_response(raw: &str) -> Result<ObserverResponse, ProviderError> {
    const P: &str = "observer";
    let body = json_object_span(raw).ok_or_else(|| ProviderError::malformed(P, "no JSON object"))?;
    let v: Value = serde_json::from_str(body).map_err(|e| ProviderError::malformed(P, e.to_string()))?;
    let caption = match v.get("caption") {
        Some(Value::String(s)) => s.clone(),
        _ => return Err(ProviderError::malformed(P, "missing string field \"caption\"")),
    };
    let reasoning = match v.get("reasoning") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ProviderError::malformed(P, "\"reasoning\" must be a string")),
    };
    let (needs_more_info, missing_visual_keyword) = match v.get("refinement_plan") {
        None | Some(Value::Null) => (false, String::new()),
        Some(Value::Object(plan)) => {
            let needs = match plan.get("needs_more_info") {
                None | Some(Value::Null) => false,
                Some(Value::Bool(b)) => *b,
                Some(_) => return Err(ProviderError::malformed(P, "\"needs_more_info\" must be a bool")),
            };
            let missing = match plan.get("missing_visual_keyword") {
                None | Some(Value::Null) => String::new(),
                Some(Value::String(s)) => s.clone(),
                Some(_) => {
                    return Err(ProviderError::malformed(P, "\"missing_visual_keyword\" must be a string"))
                }
            };
            (needs, missing)
        }
        Some(_) => return Err(ProviderError::malformed(P, "\"refinement_plan\" must be an object")),
    };
    Ok(ObserverResponse {
        reasoning,
        caption,
        needs_more_info,
        missing_visual_keyword,
    })
}

/// Extracts the option letter from an answerer reply.
pub fn parse_final_answer(raw: &str) -> Result<char> {
    static FINAL: LazyLock<Regex> =
        LazyLock::new(|| Regex::new(r"(?i)final\s+answer\s*[:：]\s*\**\s*\(?([a-z])\b").unwrap());
    static LONE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b([A-Z])\b").unwrap());
    if raw.trim().is_empty() {
        return Err(Error::AnswerParse("empty answer".into()));
    }
    if let Some(c) = FINAL.captures(raw) {
        return Ok(c[1].chars().next().unwrap().to_ascii_uppercase());
    }
    // Skip the pronoun "I" and the article "A" ("A dog ...").
    LONE.captures_iter(raw)
        .filter_map(|c| {
            let m = c.get(1).unwrap();
            let letter = m.as_str().chars().next().unwrap();
            let rest = &raw[m.end()..];
            let article = letter == 'A'
                && rest.starts_with(' ')
                && rest[1..].starts_with(|ch: char| ch.is_ascii_lowercase());
            (letter != 'I' && !article).then_some(letter)
        })
        .next()
        .ok_or_else(|| Error::AnswerParse(format!("no option letter in {:?}", truncate(raw, 80))))
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Option letters `A`, `B`, ... for `n` options.
pub fn option_letters(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| char::from(b'A' + (i % 26) as u8).to_string())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_answer_line() {
        assert_eq!(parse_final_answer("Analysis: ...\nFinal Answer: B\nReason: ...").unwrap(), 'B');
        assert_eq!(parse_final_answer("final answer: c").unwrap(), 'C');
        assert_eq!(parse_final_answer("Final Answer: **(D)**").unwrap(), 'D');
        assert_eq!(parse_final_answer("I think the answer is C.").unwrap(), 'C');
        assert_eq!(parse_final_answer("I pick A.").unwrap(), 'A');
        assert!(parse_final_answer("A dog runs").is_err());
        assert!(matches!(parse_final_answer("no letter here"), Err(Error::AnswerParse(_))));
        assert!(parse_final_answer("   ").is_err());
    }

    #[test]
    fn observer_schema() {
        let raw = "```json\n{\"reasoning\": \"r\", \"caption\": \"a red boat\", \"refinement_plan\": {\"needs_more_info\": true, \"missing_visual_keyword\": \"harbor\"}}\n```";
        let r = parse_observer_response(raw).unwrap();
        assert_eq!(r.caption, "a red boat");
        assert!(r.needs_more_info);
        assert_eq!(r.missing_visual_keyword, "harbor");
        let bare = parse_observer_response("{\"caption\": \"x\"}").unwrap();
        assert!(!bare.needs_more_info);
        assert!(parse_observer_response("{\"reasoning\": \"r\"}").is_err());
        assert!(parse_observer_response("{\"caption\": 3}").is_err());
        assert!(parse_observer_response("not json").is_err());
        assert!(parse_observer_response("{\"caption\": \"x\", \"refinement_plan\": {\"needs_more_info\": \"yes\"}}").is_err());
    }

    #[test]
    fn letters() {
        assert_eq!(option_letters(4), vec!["A", "B", "C", "D"]);
    }
}
