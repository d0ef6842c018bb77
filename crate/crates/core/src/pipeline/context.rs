use serde::Serialize;

use crate::model::Document;

/// Terminators that end a sentence wherever they appear.
const ALWAYS_TERMINAL: [char; 5] = ['。', '！', '？', '؟', '।'];
/// Terminators that end a sentence only before whitespace or end of text,
/// so `3.5`, `a.b@c.se` and `...` stay intact.
const SPACED_TERMINAL: [char; 3] = ['.', '!', '?'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContextWindow {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Code-point ranges of the sentences of `text`, covering it end to end.
/// A terminator belongs to the sentence it closes; whitespace after it
/// belongs to the next sentence.
pub fn sentence_ranges(text: &str) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let mut cuts = vec![0];
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if ALWAYS_TERMINAL.contains(&c) {
            cuts.push(i + 1);
        } else if SPACED_TERMINAL.contains(&c) && chars.get(i + 1).is_none_or(|x| x.is_whitespace()) {
            cuts.push(i + 1);
        } else if c == '\n' {
            // a blank line: newline, optional horizontal space, newline
            let mut j = i + 1;
            while j < n && chars[j] != '\n' && chars[j].is_whitespace() {
                j += 1;
            }
            if j < n && chars[j] == '\n' {
                cuts.push(i);
            }
        }
        i += 1;
    }
    cuts.push(n);
    cuts.dedup();
    let mut out: Vec<(usize, usize)> = Vec::new();
    for w in cuts.windows(2) {
        let (s, e) = (w[0], w[1]);
        if s >= e {
            continue;
        }
        let has_content = chars[s..e].iter().any(|c| c.is_alphanumeric());
        match out.last_mut() {
            // fold terminator runs and blank stretches into their neighbour
            Some(last) if !has_content => last.1 = e,
            _ => out.push((s, e)),
        }
    }
    if out.is_empty() && n > 0 {
        out.push((0, n));
    }
    out
}

/// The sentences containing `[start, end)` plus `n` on either side, with
/// surrounding whitespace trimmed. Always contains the span.
pub fn extract_context_window(doc: &Document, start: usize, end: usize, n: usize) -> ContextWindow {
    let chars: Vec<char> = doc.text().chars().collect();
    let sentences = sentence_ranges(doc.text());
    if sentences.is_empty() {
        return ContextWindow {
            text: String::new(),
            start: 0,
            end: 0,
        };
    }
    let last = end.saturating_sub(1).max(start);
    let first_idx = sentences
        .iter()
        .position(|&(_, e)| start < e)
        .unwrap_or(sentences.len() - 1);
    let last_idx = sentences
        .iter()
        .position(|&(_, e)| last < e)
        .unwrap_or(sentences.len() - 1);
    let lo = first_idx.saturating_sub(n);
    let hi = (last_idx + n).min(sentences.len() - 1);
    let mut ws = sentences[lo].0;
    let mut we = sentences[hi].1;
    while ws < start && chars[ws].is_whitespace() {
        ws += 1;
    }
    while we > end && chars[we - 1].is_whitespace() {
        we -= 1;
    }
    ContextWindow {
        text: chars[ws..we].iter().collect(),
        start: ws,
        end: we,
    }
}
