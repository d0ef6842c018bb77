//! Locale-aware structured-PII pattern registry.
//!
//! A registry is a TOML document with a `[priorities]` table and a
//! `[[pattern]]` array. See `data/registry.toml` for the shipped one.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    sort_canonical, Document, EntitySpan, LabelId, LabelPriorityTable, LocaleId, ModelError,
    Source,
};

/// Labels the chat model extracts; they need priorities but no pattern.
pub const UNSTRUCTURED_LABELS: [&str; 4] = ["NAME", "ADDRESS", "USERNAME", "PASSWORD"];

/// Short numeric labels whose regex hits need contextual verification.
pub const SHORT_NUMERIC_LABELS: [&str; 2] = ["AGE", "CVV"];

/// The thirteen locales supported when a registry does not list its own.
pub const DEFAULT_LOCALES: [&str; 13] = [
    "sv_SE", "vi_VN", "zh_CN", "zh_SG", "pt_BR", "pt_PT", "pl_PL", "hi_IN", "fi_FI", "ar_AE",
    "nl_NL", "nl_BE", "no_NO",
];

const BUILTIN_REGISTRY: &str = include_str!("../data/registry.toml");

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("registry parse error: {0}")]
    ParseError(String),
    #[error("duplicate pattern id {0:?}")]
    DuplicateId(String),
    #[error("pattern {id:?}: unknown locale {locale:?}")]
    UnknownLocale { id: String, locale: String },
    #[error("pattern {id:?}: label {label:?} has no priority entry")]
    UnknownLabel { id: String, label: String },
    #[error("pattern {id:?}: priority {found} disagrees with table entry {expected} for {label}")]
    PriorityMismatch {
        id: String,
        label: String,
        found: i32,
        expected: i32,
    },
    #[error("pattern {id:?} does not compile: {message}")]
    BadPattern { id: String, message: String },
    #[error("priority table invariant violated: {0}")]
    PriorityInvariant(String),
    #[error("locale {0} has no patterns")]
    EmptyLocale(String),
    #[error("unsupported locale {0:?}")]
    UnsupportedLocale(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LuhnError {
    #[error("Luhn input must be ASCII digits only")]
    NonDigitInput,
    #[error("Luhn input needs at least two digits")]
    TooShort,
}

/// Standard mod-10 check.
pub fn luhn_valid(digits: &str) -> Result<bool, LuhnError> {
    if !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(LuhnError::NonDigitInput);
    }
    if digits.len() < 2 {
        return Err(LuhnError::TooShort);
    }
    let sum: u32 = digits
        .bytes()
        .rev()
        .enumerate()
        .map(|(i, b)| {
            let d = u32::from(b - b'0');
            if i % 2 == 1 {
                let x = d * 2;
                if x > 9 {
                    x - 9
                } else {
                    x
                }
            } else {
                d
            }
        })
        .sum();
    Ok(sum % 10 == 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Validator {
    #[default]
    None,
    Luhn,
}

impl Validator {
    fn accepts(self, surface: &str) -> bool {
        match self {
            Validator::None => true,
            Validator::Luhn => {
                let digits: String = surface.chars().filter(char::is_ascii_digit).collect();
                luhn_valid(&digits).unwrap_or(false)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scope {
    /// Only the string `"universal"` is accepted here.
    Universal(UniversalTag),
    Locales(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UniversalTag {
    #[serde(rename = "universal")]
    Universal,
}

impl Scope {
    pub fn is_universal(&self) -> bool {
        matches!(self, Scope::Universal(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub id: String,
    pub label: LabelId,
    pub scope: Scope,
    pub pattern: String,
    #[serde(default)]
    pub priority: Option<i32>,
    #[serde(default)]
    pub validator: Validator,
    #[serde(default = "default_true")]
    pub word_boundary: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RegistryFile {
    #[serde(default)]
    locales: Option<Vec<String>>,
    #[serde(default)]
    priorities: BTreeMap<String, i32>,
    #[serde(default)]
    pattern: Vec<PatternSpec>,
}

#[derive(Debug, Clone)]
struct CompiledPattern {
    spec: PatternSpec,
    regex: Regex,
    anchored: Regex,
}

/// Immutable, compiled registry. Safe to share across threads.
#[derive(Debug, Clone)]
pub struct CompiledRegistry {
    patterns: Vec<CompiledPattern>,
    by_locale: BTreeMap<LocaleId, Vec<usize>>,
    locales: Vec<LocaleId>,
    priorities: LabelPriorityTable,
}

pub fn load_registry(source: &[u8]) -> Result<CompiledRegistry, RegistryError> {
    CompiledRegistry::load(source)
}

/// The registry shipped in `data/registry.toml`.
pub fn builtin() -> &'static CompiledRegistry {
    static REG: OnceLock<CompiledRegistry> = OnceLock::new();
    REG.get_or_init(|| {
        CompiledRegistry::load(BUILTIN_REGISTRY.as_bytes()).expect("shipped registry is valid")
    })
}

pub fn builtin_source() -> &'static str {
    BUILTIN_REGISTRY
}

impl CompiledRegistry {
    pub fn load(source: &[u8]) -> Result<Self, RegistryError> {
        let text = std::str::from_utf8(source)
            .map_err(|e| RegistryError::ParseError(format!("registry is not UTF-8: {e}")))?;
        let file: RegistryFile =
            toml::from_str(text).map_err(|e| RegistryError::ParseError(e.to_string()))?;
        if file.pattern.is_empty() {
            return Err(RegistryError::ParseError(
                "registry must define at least one [[pattern]]".into(),
            ));
        }
        if file.priorities.is_empty() {
            return Err(RegistryError::ParseError(
                "registry must define a [priorities] table".into(),
            ));
        }

        let locale_tags: Vec<String> = match file.locales {
            Some(l) => l,
            None => DEFAULT_LOCALES.iter().map(|s| s.to_string()).collect(),
        };
        let mut locales = Vec::with_capacity(locale_tags.len());
        for tag in locale_tags {
            let loc = LocaleId::new(tag)?;
            if !locales.contains(&loc) {
                locales.push(loc);
            }
        }

        let priorities = LabelPriorityTable::new(
            file.priorities
                .into_iter()
                .map(|(k, v)| (LabelId::new(k), v))
                .collect(),
        );
        check_priority_invariants(&priorities)?;

        let mut seen = HashSet::new();
        let mut patterns = Vec::with_capacity(file.pattern.len());
        for spec in file.pattern {
            if !seen.insert(spec.id.clone()) {
                return Err(RegistryError::DuplicateId(spec.id));
            }
            let expected = priorities
                .get(&spec.label)
                .ok_or_else(|| RegistryError::UnknownLabel {
                    id: spec.id.clone(),
                    label: spec.label.to_string(),
                })?;
            if let Some(found) = spec.priority {
                if found != expected {
                    return Err(RegistryError::PriorityMismatch {
                        id: spec.id.clone(),
                        label: spec.label.to_string(),
                        found,
                        expected,
                    });
                }
            }
            if let Scope::Locales(tags) = &spec.scope {
                for t in tags {
                    if !locales.iter().any(|l| l.as_str() == t) {
                        return Err(RegistryError::UnknownLocale {
                            id: spec.id.clone(),
                            locale: t.clone(),
                        });
                    }
                }
            }
            let regex = Regex::new(&spec.pattern).map_err(|e| RegistryError::BadPattern {
                id: spec.id.clone(),
                message: e.to_string(),
            })?;
            let anchored = Regex::new(&format!("^(?:{})$", spec.pattern))
                .expect("anchoring a valid pattern keeps it valid");
            patterns.push(CompiledPattern {
                spec,
                regex,
                anchored,
            });
        }

        let mut by_locale = BTreeMap::new();
        for loc in &locales {
            let idx: Vec<usize> = patterns
                .iter()
                .enumerate()
                .filter(|(_, p)| match &p.spec.scope {
                    Scope::Universal(_) => true,
                    Scope::Locales(tags) => tags.iter().any(|t| t == loc.as_str()),
                })
                .map(|(i, _)| i)
                .collect();
            if idx.is_empty() {
                return Err(RegistryError::EmptyLocale(loc.to_string()));
            }
            by_locale.insert(loc.clone(), idx);
        }

        Ok(CompiledRegistry {
            patterns,
            by_locale,
            locales,
            priorities,
        })
    }

    pub fn locales(&self) -> &[LocaleId] {
        &self.locales
    }

    pub fn supports(&self, locale: &LocaleId) -> bool {
        self.by_locale.contains_key(locale)
    }

    /// Resolve a tag into a supported locale.
    pub fn locale(&self, tag: &str) -> Result<LocaleId, RegistryError> {
        let loc = LocaleId::new(tag).map_err(|_| RegistryError::UnsupportedLocale(tag.into()))?;
        if self.supports(&loc) {
            Ok(loc)
        } else {
            Err(RegistryError::UnsupportedLocale(tag.into()))
        }
    }

    /// Build a document whose locale is checked against this registry.
    pub fn document(
        &self,
        id: impl Into<String>,
        text: impl Into<String>,
        locale: &str,
    ) -> Result<Document, RegistryError> {
        let loc = self.locale(locale)?;
        Ok(Document::new(id, text, loc)?)
    }

    pub fn priorities(&self) -> &LabelPriorityTable {
        &self.priorities
    }

    pub fn patterns(&self) -> impl Iterator<Item = &PatternSpec> {
        self.patterns.iter().map(|p| &p.spec)
    }

    /// Universal plus locale-scoped patterns for `locale`.
    pub fn patterns_for(&self, locale: &LocaleId) -> Vec<&PatternSpec> {
        self.by_locale
            .get(locale)
            .map(|idx| idx.iter().map(|&i| &self.patterns[i].spec).collect())
            .unwrap_or_default()
    }

    /// Structured labels available in `locale`.
    pub fn labels_for(&self, locale: &LocaleId) -> BTreeSet<LabelId> {
        self.patterns_for(locale)
            .into_iter()
            .map(|p| p.label.clone())
            .collect()
    }

    /// Every label the registry knows: pattern labels plus unstructured ones.
    pub fn known_labels(&self) -> BTreeSet<LabelId> {
        self.priorities.labels().cloned().collect()
    }

    /// Does `candidate` match some `label` pattern for `locale` in full?
    pub fn full_match(&self, locale: &LocaleId, label: &LabelId, candidate: &str) -> bool {
        let Some(idx) = self.by_locale.get(locale) else {
            return false;
        };
        idx.iter().map(|&i| &self.patterns[i]).any(|p| {
            &p.spec.label == label
                && p.anchored.is_match(candidate)
                && p.spec.validator.accepts(candidate)
        })
    }

    /// Run one pattern alone over a document. Used by tests and lint.
    pub fn match_pattern(&self, doc: &Document, id: &str) -> Option<Vec<(usize, usize)>> {
        let p = self.patterns.iter().find(|p| p.spec.id == id)?;
        Some(find_guarded(doc, p))
    }

    pub fn lint(&self) -> LintReport {
        lint(self)
    }
}

fn check_priority_invariants(table: &LabelPriorityTable) -> Result<(), RegistryError> {
    for l in UNSTRUCTURED_LABELS {
        if !table.contains(&LabelId::from(l)) {
            return Err(RegistryError::PriorityInvariant(format!(
                "unstructured label {l} has no priority"
            )));
        }
    }
    for structural in ["ADDRESS", "NAME"] {
        for numeric in ["AGE", "CVV"] {
            let (Some(s), Some(n)) = (
                table.get(&LabelId::from(structural)),
                table.get(&LabelId::from(numeric)),
            ) else {
                continue;
            };
            if s <= n {
                return Err(RegistryError::PriorityInvariant(format!(
                    "{structural} ({s}) must outrank {numeric} ({n})"
                )));
            }
        }
    }
    Ok(())
}

/// CJK ideographs, kana and hangul: scripts written without spaces.
pub(crate) fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x2E80..=0x2FDF
        | 0x3000..=0x303F
        | 0x3040..=0x30FF
        | 0x3100..=0x312F
        | 0x31A0..=0x31FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xAC00..=0xD7AF
        | 0xF900..=0xFAFF
        | 0xFF00..=0xFFEF
        | 0x20000..=0x2FA1F)
}

fn is_word_char(c: char) -> bool {
    (c.is_alphanumeric() || c == '_') && !is_cjk(c)
}

fn boundary_ok(text: &str, start: usize, end: usize) -> bool {
    let matched = &text[start..end];
    let (Some(first), Some(last)) = (matched.chars().next(), matched.chars().next_back()) else {
        return false;
    };
    let before = text[..start].chars().next_back();
    let after = text[end..].chars().next();
    let glued_left = before.is_some_and(is_word_char) && is_word_char(first);
    let glued_right = after.is_some_and(is_word_char) && is_word_char(last);
    !glued_left && !glued_right
}

/// All accepted matches of one pattern, as code-point ranges.
fn find_guarded(doc: &Document, p: &CompiledPattern) -> Vec<(usize, usize)> {
    let text = doc.text();
    let mut out = Vec::new();
    let mut pos = 0;
    while pos <= text.len() {
        let Some(m) = p.regex.find_at(text, pos) else {
            break;
        };
        let next_char = |b: usize| b + text[b..].chars().next().map_or(1, char::len_utf8);
        if m.is_empty() {
            pos = next_char(m.start());
            continue;
        }
        let accepted = (!p.spec.word_boundary || boundary_ok(text, m.start(), m.end()))
            && p.spec.validator.accepts(m.as_str());
        if accepted {
            let s = doc.char_index(m.start()).expect("regex match on char boundary");
            let e = doc.char_index(m.end()).expect("regex match on char boundary");
            out.push((s, e));
            pos = m.end();
        } else {
            pos = next_char(m.start());
        }
    }
    out
}

/// Every structured match for `doc`, with identical spans merged into one
/// multi-label entity.
pub fn match_structured(
    doc: &Document,
    reg: &CompiledRegistry,
) -> Result<Vec<EntitySpan>, RegistryError> {
    let idx = reg
        .by_locale
        .get(doc.locale())
        .ok_or_else(|| RegistryError::UnsupportedLocale(doc.locale().to_string()))?;
    let mut by_span: BTreeMap<(usize, usize), Vec<LabelId>> = BTreeMap::new();
    for &i in idx {
        let p = &reg.patterns[i];
        for range in find_guarded(doc, p) {
            let labels = by_span.entry(range).or_default();
            if !labels.contains(&p.spec.label) {
                labels.push(p.spec.label.clone());
            }
        }
    }
    let mut out = Vec::with_capacity(by_span.len());
    for ((s, e), mut labels) in by_span {
        reg.priorities.rank(&mut labels);
        out.push(EntitySpan::new(doc, s, e, labels, Source::Regex)?);
    }
    sort_canonical(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct LocaleCoverage {
    pub locale: LocaleId,
    pub patterns: usize,
    pub locale_specific: usize,
    pub labels: Vec<LabelId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LintReport {
    pub patterns: usize,
    pub labels: usize,
    pub coverage: Vec<LocaleCoverage>,
    pub warnings: Vec<String>,
}

fn lint(reg: &CompiledRegistry) -> LintReport {
    let mut warnings = Vec::new();
    let used: BTreeSet<&LabelId> = reg.patterns.iter().map(|p| &p.spec.label).collect();
    for label in reg.priorities.labels() {
        if !used.contains(label) && !UNSTRUCTURED_LABELS.contains(&label.as_str()) {
            warnings.push(format!("label {label} has a priority but no pattern"));
        }
    }
    for p in &reg.patterns {
        if p.spec.priority.is_none() {
            warnings.push(format!("pattern {} relies on the table priority", p.spec.id));
        }
        if p.regex.is_match("") {
            warnings.push(format!("pattern {} matches the empty string", p.spec.id));
        }
    }
    let mut coverage = Vec::new();
    for loc in &reg.locales {
        let specs = reg.patterns_for(loc);
        let locale_specific = specs.iter().filter(|p| !p.scope.is_universal()).count();
        if locale_specific == 0 {
            warnings.push(format!("locale {loc} has no locale-specific patterns"));
        }
        coverage.push(LocaleCoverage {
            locale: loc.clone(),
            patterns: specs.len(),
            locale_specific,
            labels: reg.labels_for(loc).into_iter().collect(),
        });
    }
    LintReport {
        patterns: reg.patterns.len(),
        labels: reg.priorities.len(),
        coverage,
        warnings,
    }
}
