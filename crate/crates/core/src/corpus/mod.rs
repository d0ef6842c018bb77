//! Annotated corpora: JSONL I/O, summary statistics and a seeded generator.

mod generate;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Document, EntitySpan, LabelId, LocaleId, ModelError, Source};
use crate::registry::{CompiledRegistry, UNSTRUCTURED_LABELS};

pub use generate::{
    count_words, fill_template, generate, size_class_of, Domain, GenerateError, GeneratorData,
    GeneratorTemplate, ProviderSource, SizeClass, ValueProvider,
};

/// First-line marker declaring the offset convention.
pub const CORPUS_HEADER: &str = "#recap-corpus v1 offsets=codepoints";

const AMBIGUITY_FIXTURE: &str = include_str!("../../data/fixtures/ambiguity.jsonl");

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldSpan {
    pub start: usize,
    pub end: usize,
    pub label: LabelId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub id: String,
    pub locale: LocaleId,
    pub text: String,
    pub gold: Vec<GoldSpan>,
}

impl CorpusRecord {
    pub fn document(&self) -> Result<Document, ModelError> {
        Document::new(self.id.clone(), self.text.clone(), self.locale.clone())
    }

    /// Gold annotations as entity spans over `doc`.
    pub fn gold_entities(&self, doc: &Document) -> Result<Vec<EntitySpan>, ModelError> {
        self.gold
            .iter()
            .map(|g| EntitySpan::single(doc, g.start, g.end, g.label.clone(), Source::Gold))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("line {line}: span [{start},{end}) outside text of {len} code points")]
    SpanOutOfRange {
        line: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("line {line}: empty span at {start}")]
    EmptySpan { line: usize, start: usize },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: duplicate gold span [{start},{end}) {label}")]
    DuplicateGold {
        line: usize,
        start: usize,
        end: usize,
        label: String,
    },
    #[error("line {line}: unsupported locale {locale}")]
    UnsupportedLocale { line: usize, locale: String },
    #[error("line {line}: duplicate record id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("corpus I/O: {0}")]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    pub fn line(&self) -> Option<usize> {
        match self {
            CorpusError::ParseError { line, .. }
            | CorpusError::SpanOutOfRange { line, .. }
            | CorpusError::EmptySpan { line, .. }
            | CorpusError::UnknownLabel { line, .. }
            | CorpusError::DuplicateGold { line, .. }
            | CorpusError::UnsupportedLocale { line, .. }
            | CorpusError::DuplicateId { line, .. } => Some(*line),
            CorpusError::Io(_) => None,
        }
    }
}

fn known_labels(reg: &CompiledRegistry) -> BTreeSet<LabelId> {
    let mut known = reg.known_labels();
    known.extend(UNSTRUCTURED_LABELS.iter().map(|l| LabelId::new(*l)));
    known
}

fn validate(
    rec: &CorpusRecord,
    line: usize,
    reg: &CompiledRegistry,
    known: &BTreeSet<LabelId>,
) -> Result<(), CorpusError> {
    if !reg.supports(&rec.locale) {
        return Err(CorpusError::UnsupportedLocale {
            line,
            locale: rec.locale.to_string(),
        });
    }
    let len = rec.text.chars().count();
    let mut seen = BTreeSet::new();
    for g in &rec.gold {
        if g.end > len || g.start > len {
            return Err(CorpusError::SpanOutOfRange {
                line,
                start: g.start,
                end: g.end,
                len,
            });
        }
        if g.start >= g.end {
            return Err(CorpusError::EmptySpan {
                line,
                start: g.start,
            });
        }
        if !known.contains(&g.label) {
            return Err(CorpusError::UnknownLabel {
                line,
                label: g.label.to_string(),
            });
        }
        if !seen.insert((g.start, g.end, &g.label)) {
            return Err(CorpusError::DuplicateGold {
                line,
                start: g.start,
                end: g.end,
                label: g.label.to_string(),
            });
        }
    }
    Ok(())
}

/// Read and validate a JSONL corpus. Blank lines are skipped; the header
/// marker is accepted on line 1 only.
pub fn read_corpus(source: impl BufRead, reg: &CompiledRegistry) -> Result<Vec<CorpusRecord>, CorpusError> {
    let known = known_labels(reg);
    let mut ids = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if line_no == 1 && trimmed.starts_with('#') {
            if trimmed != CORPUS_HEADER {
                return Err(CorpusError::ParseError {
                    line: line_no,
                    message: format!("unrecognised header {trimmed:?}"),
                });
            }
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(trimmed).map_err(|e| CorpusError::ParseError {
            line: line_no,
            message: e.to_string(),
        })?;
        validate(&rec, line_no, reg, &known)?;
        if !ids.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: rec.id,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn parse_corpus(text: &str, reg: &CompiledRegistry) -> Result<Vec<CorpusRecord>, CorpusError> {
    read_corpus(text.as_bytes(), reg)
}

/// Canonical serialization: header line, then one compact record per line.
pub fn write_corpus(records: &[CorpusRecord], mut sink: impl Write) -> Result<(), CorpusError> {
    writeln!(sink, "{CORPUS_HEADER}")?;
    for r in records {
        let line = serde_json::to_string(r).expect("corpus records serialize");
        writeln!(sink, "{line}")?;
    }
    sink.flush()?;
    Ok(())
}

pub fn corpus_to_string(records: &[CorpusRecord]) -> String {
    let mut buf = Vec::new();
    write_corpus(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Hand-built records with multi-label collisions and contained or
/// free-standing short numerics that are not PII.
pub fn ambiguity_fixture_source() -> &'static str {
    AMBIGUITY_FIXTURE
}

pub fn ambiguity_fixture(reg: &CompiledRegistry) -> Result<Vec<CorpusRecord>, CorpusError> {
    parse_corpus(AMBIGUITY_FIXTURE, reg)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub gold_entities: usize,
    pub per_locale: BTreeMap<String, usize>,
    pub per_label: BTreeMap<LabelId, usize>,
    pub size_classes: BTreeMap<SizeClass, usize>,
}

pub fn corpus_stats(records: &[CorpusRecord]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for r in records {
        stats.documents += 1;
        stats.gold_entities += r.gold.len();
        *stats.per_locale.entry(r.locale.to_string()).or_default() += 1;
        for g in &r.gold {
            *stats.per_label.entry(g.label.clone()).or_default() += 1;
        }
        *stats.size_classes.entry(size_class_of(&r.text)).or_default() += 1;
    }
    stats
}
