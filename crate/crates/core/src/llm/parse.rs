//! Defensive parsers for free-text model output. None of them panic.

use serde::Serialize;
use thiserror::Error;

use super::ChatResponse;
use crate::model::LabelId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("response contains no JSON array of strings")]
pub struct Unparseable;

/// First well-formed JSON array of strings anywhere in the response.
pub fn parse_extraction(resp: &ChatResponse) -> Result<Vec<String>, Unparseable> {
    extract_string_array(&resp.raw)
}

pub(crate) fn extract_string_array(raw: &str) -> Result<Vec<String>, Unparseable> {
    for (i, _) in raw.match_indices('[') {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Vec<String>>();
        if let Some(Ok(items)) = stream.next() {
            return Ok(items);
        }
    }
    Err(Unparseable)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum LabelChoice {
    Chosen(LabelId),
    NoValidChoice,
}

fn tokens(raw: &str) -> impl Iterator<Item = &str> {
    raw.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| !t.is_empty())
}

/// The single candidate named as a whole token (case-insensitive).
pub fn parse_label_choice(resp: &ChatResponse, candidates: &[LabelId]) -> LabelChoice {
    let toks: Vec<String> = tokens(&resp.raw).map(str::to_lowercase).collect();
    let mut hits = candidates
        .iter()
        .filter(|c| {
            let want = c.as_str().to_lowercase();
            toks.iter().any(|t| *t == want)
        });
    match (hits.next(), hits.next()) {
        (Some(only), None) => LabelChoice::Chosen(only.clone()),
        _ => LabelChoice::NoValidChoice,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Confirmed,
    Rejected,
    NoValidChoice,
}

impl Verdict {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Verdict::Confirmed => Some(true),
            Verdict::Rejected => Some(false),
            Verdict::NoValidChoice => None,
        }
    }
}

/// Yes/no from the first alphabetic token.
pub fn parse_verification(resp: &ChatResponse) -> Verdict {
    let first = resp
        .raw
        .split(|c: char| !c.is_alphabetic())
        .find(|t| !t.is_empty())
        .map(str::to_lowercase);
    match first.as_deref() {
        Some("yes") => Verdict::Confirmed,
        Some("no") => Verdict::Rejected,
        _ => Verdict::NoValidChoice,
    }
}
