//! Core vocabulary: documents, spans, labels and span geometry.
//!
//! Every offset in this crate is a Unicode code point index into the
//! document text. Spans are half-open `[start, end)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("span [{start}, {end}) out of range for text of {len} code points")]
    OutOfRange { start: usize, end: usize, len: usize },
    #[error("span [{start}, {end}) is empty")]
    EmptySpan { start: usize, end: usize },
    #[error("entity span needs at least one label")]
    NoLabels,
    #[error("document id must be non-empty")]
    EmptyId,
    #[error("malformed locale tag {0:?}")]
    BadLocale(String),
}

/// Entity label such as `NAME` or `PHONE_IN`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(String);

impl LabelId {
    pub fn new(name: impl Into<String>) -> Self {
        LabelId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LabelId {
    fn from(s: &str) -> Self {
        LabelId(s.to_string())
    }
}

/// A `ll_RR` style locale tag (`hi_IN`, `zh_SG`).
///
/// Only the shape is checked here; membership in a supported set is the
/// registry's concern.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LocaleId(String);

impl LocaleId {
    pub fn new(tag: impl Into<String>) -> Result<Self, ModelError> {
        let tag = tag.into();
        let well_formed = match tag.split_once('_') {
            Some((lang, region)) => {
                (2..=3).contains(&lang.len())
                    && (2..=3).contains(&region.len())
                    && lang.bytes().all(|b| b.is_ascii_lowercase())
                    && region.bytes().all(|b| b.is_ascii_uppercase())
            }
            None => false,
        };
        if well_formed {
            Ok(LocaleId(tag))
        } else {
            Err(ModelError::BadLocale(tag))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LocaleId {
    type Error = ModelError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        LocaleId::new(s)
    }
}

impl From<LocaleId> for String {
    fn from(l: LocaleId) -> String {
        l.0
    }
}

impl fmt::Display for LocaleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An input text with its locale. Cheap to clone; the text is shared.
#[derive(Debug, Clone)]
pub struct Document {
    id: String,
    text: Arc<str>,
    locale: LocaleId,
    // byte offset of every code point, plus text.len() as sentinel
    char_starts: Arc<[usize]>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        locale: LocaleId,
    ) -> Result<Self, ModelError> {
        let id = id.into();
        if id.is_empty() {
            return Err(ModelError::EmptyId);
        }
        let text: String = text.into();
        let mut starts: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        starts.push(text.len());
        Ok(Document {
            id,
            text: Arc::from(text),
            locale,
            char_starts: Arc::from(starts),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn locale(&self) -> &LocaleId {
        &self.locale
    }

    /// Length in code points.
    pub fn char_len(&self) -> usize {
        self.char_starts.len() - 1
    }

    /// Byte offset of code point `idx` (`idx == char_len()` is the end).
    pub fn byte_offset(&self, idx: usize) -> Option<usize> {
        self.char_starts.get(idx).copied()
    }

    /// Code point index of a byte offset that lies on a char boundary.
    pub fn char_index(&self, byte: usize) -> Option<usize> {
        self.char_starts.binary_search(&byte).ok()
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<&str, ModelError> {
        if start > end || end > self.char_len() {
            return Err(ModelError::OutOfRange {
                start,
                end,
                len: self.char_len(),
            });
        }
        Ok(&self.text[self.char_starts[start]..self.char_starts[end]])
    }
}

/// Free-function form of [`Document::slice`].
pub fn slice(doc: &Document, start: usize, end: usize) -> Result<&str, ModelError> {
    doc.slice(start, end)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Regex,
    Llm,
    Gold,
}

/// A detected or gold PII occurrence.
///
/// `labels` is non-empty. Before multi-label resolution it may hold
/// several candidates, ordered by descending priority then name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct EntitySpan {
    start: usize,
    end: usize,
    labels: Vec<LabelId>,
    source: Source,
    surface: String,
}

impl EntitySpan {
    pub fn new(
        doc: &Document,
        start: usize,
        end: usize,
        labels: Vec<LabelId>,
        source: Source,
    ) -> Result<Self, ModelError> {
        if labels.is_empty() {
            return Err(ModelError::NoLabels);
        }
        if start >= end {
            if end <= doc.char_len() && start == end {
                return Err(ModelError::EmptySpan { start, end });
            }
            return Err(ModelError::OutOfRange {
                start,
                end,
                len: doc.char_len(),
            });
        }
        let surface = doc.slice(start, end)?.to_string();
        Ok(EntitySpan {
            start,
            end,
            labels,
            source,
            surface,
        })
    }

    pub fn single(
        doc: &Document,
        start: usize,
        end: usize,
        label: LabelId,
        source: Source,
    ) -> Result<Self, ModelError> {
        Self::new(doc, start, end, vec![label], source)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    /// The first (highest-ranked) label.
    pub fn label(&self) -> &LabelId {
        &self.labels[0]
    }

    pub fn is_multi_label(&self) -> bool {
        self.labels.len() > 1
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn same_span(&self, other: &EntitySpan) -> bool {
        self.start == other.start && self.end == other.end
    }

    /// Replace the label set with a single label; geometry is untouched.
    pub fn with_label(mut self, label: LabelId) -> Self {
        self.labels = vec![label];
        self
    }

    /// Union `other`'s labels into this span's set and re-rank them.
    pub(crate) fn absorb_labels(&mut self, other: &[LabelId], priorities: &LabelPriorityTable) {
        for l in other {
            if !self.labels.contains(l) {
                self.labels.push(l.clone());
            }
        }
        priorities.rank(&mut self.labels);
    }

    pub(crate) fn rank_labels(&mut self, priorities: &LabelPriorityTable) {
        priorities.rank(&mut self.labels);
    }
}

/// Strict containment: `inner` lies within `outer` and is shorter.
/// Identical spans are not containment.
pub fn contains(outer: &EntitySpan, inner: &EntitySpan) -> bool {
    contains_range((outer.start, outer.end), (inner.start, inner.end))
}

pub fn overlaps(a: &EntitySpan, b: &EntitySpan) -> bool {
    overlaps_range((a.start, a.end), (b.start, b.end))
}

pub fn contains_range(outer: (usize, usize), inner: (usize, usize)) -> bool {
    outer.0 <= inner.0 && inner.1 <= outer.1 && (outer.1 - outer.0) > (inner.1 - inner.0)
}

pub fn overlaps_range(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0.max(b.0) < a.1.min(b.1)
}

/// Canonical entity order: start asc, end desc, first label name.
pub fn canonical_order(a: &EntitySpan, b: &EntitySpan) -> std::cmp::Ordering {
    a.start
        .cmp(&b.start)
        .then(b.end.cmp(&a.end))
        .then_with(|| a.label().cmp(b.label()))
}

pub fn sort_canonical(entities: &mut [EntitySpan]) {
    entities.sort_by(canonical_order);
}

/// Label → priority. Higher wins containment conflicts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelPriorityTable {
    priority: BTreeMap<LabelId, i32>,
}

impl LabelPriorityTable {
    pub fn new(priority: BTreeMap<LabelId, i32>) -> Self {
        LabelPriorityTable { priority }
    }

    pub fn get(&self, label: &LabelId) -> Option<i32> {
        self.priority.get(label).copied()
    }

    /// Unknown labels rank below everything.
    pub fn priority(&self, label: &LabelId) -> i32 {
        self.get(label).unwrap_or(i32::MIN)
    }

    pub fn contains(&self, label: &LabelId) -> bool {
        self.priority.contains_key(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &LabelId> {
        self.priority.keys()
    }

    pub fn len(&self) -> usize {
        self.priority.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priority.is_empty()
    }

    /// Sort labels by descending priority, then name.
    pub fn rank(&self, labels: &mut [LabelId]) {
        labels.sort_by(|a, b| self.priority(b).cmp(&self.priority(a)).then_with(|| a.cmp(b)));
    }

    /// Highest-priority label, ties broken lexicographically.
    pub fn best<'a>(&self, labels: &'a [LabelId]) -> Option<&'a LabelId> {
        labels
            .iter()
            .max_by(|a, b| self.priority(a).cmp(&self.priority(b)).then_with(|| b.cmp(a)))
    }
}

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PhaseId {
    #[serde(rename = "phase1")]
    Phase1Baseline,
    #[serde(rename = "phase2")]
    Phase2MultiLabel,
    #[serde(rename = "phase3")]
    Phase3Consolidation,
}

impl PhaseId {
    pub const ALL: [PhaseId; 3] = [
        PhaseId::Phase1Baseline,
        PhaseId::Phase2MultiLabel,
        PhaseId::Phase3Consolidation,
    ];

    /// Phases `<= self`, in order.
    pub fn up_to(self) -> impl Iterator<Item = PhaseId> {
        PhaseId::ALL.into_iter().filter(move |p| *p <= self)
    }

    pub fn roman(self) -> &'static str {
        match self {
            PhaseId::Phase1Baseline => "I",
            PhaseId::Phase2MultiLabel => "II",
            PhaseId::Phase3Consolidation => "III",
        }
    }

    pub fn number(self) -> u8 {
        match self {
            PhaseId::Phase1Baseline => 1,
            PhaseId::Phase2MultiLabel => 2,
            PhaseId::Phase3Consolidation => 3,
        }
    }
}

impl std::str::FromStr for PhaseId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "i" | "phase1" => Ok(PhaseId::Phase1Baseline),
            "2" | "ii" | "phase2" => Ok(PhaseId::Phase2MultiLabel),
            "3" | "iii" | "phase3" => Ok(PhaseId::Phase3Consolidation),
            other => Err(format!("unknown phase {other:?}")),
        }
    }
}
