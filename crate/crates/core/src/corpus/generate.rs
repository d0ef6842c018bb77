//! Seeded synthetic corpus generator.
//!
//! Locale kits live in `data/generator/*.toml`, one file per language.
//! A kit holds sentence frames with `{LABEL}` placeholders, PII-free
//! filler sentences, per-domain openers and value providers. Documents
//! are composed from frames and fillers, then filled; gold spans come
//! from the fill positions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CorpusRecord, GoldSpan};
use crate::model::{contains_range, Document, LabelId, LocaleId};
use crate::registry::{is_cjk, match_structured, CompiledRegistry, SHORT_NUMERIC_LABELS, UNSTRUCTURED_LABELS};

const KITS: [(&str, &str); 10] = [
    ("sv.toml", include_str!("../../data/generator/sv.toml")),
    ("vi.toml", include_str!("../../data/generator/vi.toml")),
    ("zh.toml", include_str!("../../data/generator/zh.toml")),
    ("pt.toml", include_str!("../../data/generator/pt.toml")),
    ("pl.toml", include_str!("../../data/generator/pl.toml")),
    ("hi.toml", include_str!("../../data/generator/hi.toml")),
    ("fi.toml", include_str!("../../data/generator/fi.toml")),
    ("ar.toml", include_str!("../../data/generator/ar.toml")),
    ("nl.toml", include_str!("../../data/generator/nl.toml")),
    ("no.toml", include_str!("../../data/generator/no.toml")),
];

const COMMON: &str = include_str!("../../data/generator/common.toml");

const MAX_ATTEMPTS: usize = 200;

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("no value provider for {label} in {locale}")]
    MissingProvider { label: String, locale: String },
    #[error("no generator kit for locale {0}")]
    MissingLocale(String),
    #[error("{file}: {message}")]
    Data { file: String, message: String },
    #[error("bad value format {format:?}: {message}")]
    BadFormat { format: String, message: String },
    #[error("{label} value {value:?} does not match the registry pattern for {locale}")]
    InvalidValue {
        label: String,
        locale: String,
        value: String,
    },
    #[error("record {index}: no valid document after {attempts} attempts")]
    Exhausted { index: usize, attempts: usize },
    #[error("n must be at least 1")]
    EmptyRequest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    Short,
    Medium,
    Large,
    #[serde(rename = "xlarge")]
    XLarge,
}

impl SizeClass {
    pub const ALL: [SizeClass; 4] = [
        SizeClass::Short,
        SizeClass::Medium,
        SizeClass::Large,
        SizeClass::XLarge,
    ];

    /// Inclusive word-count band.
    pub fn band(self) -> (usize, usize) {
        match self {
            SizeClass::Short => (1, 20),
            SizeClass::Medium => (21, 239),
            SizeClass::Large => (240, 1000),
            SizeClass::XLarge => (1001, 4500),
        }
    }

    fn frames(self, rng: &mut impl Rng) -> usize {
        match self {
            SizeClass::Short => 1,
            SizeClass::Medium => rng.random_range(2..=3),
            SizeClass::Large => rng.random_range(4..=6),
            SizeClass::XLarge => rng.random_range(7..=10),
        }
    }

    fn target_words(self, rng: &mut impl Rng) -> usize {
        match self {
            SizeClass::Short => 0,
            SizeClass::Medium => rng.random_range(40..=200),
            SizeClass::Large => rng.random_range(300..=900),
            SizeClass::XLarge => rng.random_range(1100..=1900),
        }
    }
}

impl fmt::Display for SizeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SizeClass::Short => "short",
            SizeClass::Medium => "medium",
            SizeClass::Large => "large",
            SizeClass::XLarge => "xlarge",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Domain {
    Finance,
    Travel,
    Healthcare,
    #[serde(rename = "IT")]
    It,
    #[serde(rename = "CPG")]
    Cpg,
    Media,
}

impl Domain {
    pub const ALL: [Domain; 6] = [
        Domain::Finance,
        Domain::Travel,
        Domain::Healthcare,
        Domain::It,
        Domain::Cpg,
        Domain::Media,
    ];
}

/// Whitespace tokens, except that every CJK character is its own word.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace()
        .map(|tok| {
            let cjk = tok.chars().filter(|c| is_cjk(*c) && c.is_alphanumeric()).count();
            let other = tok
                .split(is_cjk)
                .filter(|piece| piece.chars().any(char::is_alphanumeric))
                .count();
            cjk + other
        })
        .sum()
}

pub fn size_class_of(text: &str) -> SizeClass {
    let words = count_words(text);
    SizeClass::ALL
        .into_iter()
        .find(|s| words <= s.band().1)
        .unwrap_or(SizeClass::XLarge)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSource {
    /// Curated values, sampled without replacement within a document.
    Pool(Vec<String>),
    /// Format strings: `#` digit, `%` Luhn check digit over the digits so
    /// far, `[..]` character class, `{a-b}` integer range, `\` escape.
    Formats(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueProvider {
    pub label: LabelId,
    pub locale: LocaleId,
    pub source: ProviderSource,
}

impl ValueProvider {
    fn sample(&self, rng: &mut impl Rng, used: &BTreeSet<String>) -> Result<Option<String>, GenerateError> {
        match &self.source {
            ProviderSource::Pool(pool) => {
                let free: Vec<&String> = pool.iter().filter(|v| !used.contains(*v)).collect();
                Ok(free.choose(rng).map(|v| (*v).clone()))
            }
            ProviderSource::Formats(formats) => {
                for _ in 0..32 {
                    let f = formats.choose(rng).expect("formats are non-empty");
                    let v = expand_format(f, rng)?;
                    if !used.contains(&v) {
                        return Ok(Some(v));
                    }
                }
                Ok(None)
            }
        }
    }
}

fn luhn_check_digit(digits: &[u32]) -> u32 {
    let sum: u32 = digits
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            if i % 2 == 0 {
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
    (10 - sum % 10) % 10
}

fn expand_format(format: &str, rng: &mut impl Rng) -> Result<String, GenerateError> {
    let bad = |message: &str| GenerateError::BadFormat {
        format: format.to_string(),
        message: message.to_string(),
    };
    let mut out = String::new();
    let mut digits: Vec<u32> = Vec::new();
    let mut chars = format.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '#' => {
                let d = rng.random_range(0..10);
                digits.push(d);
                out.push(char::from_digit(d, 10).expect("digit"));
            }
            '%' => {
                let d = luhn_check_digit(&digits);
                digits.push(d);
                out.push(char::from_digit(d, 10).expect("digit"));
            }
            '[' => {
                let mut set = Vec::new();
                let mut prev: Option<char> = None;
                loop {
                    match chars.next() {
                        None => return Err(bad("unterminated character class")),
                        Some(']') => break,
                        Some('-') if prev.is_some() && chars.peek().is_some_and(|n| *n != ']') => {
                            let lo = prev.take().expect("checked");
                            let hi = chars.next().expect("peeked");
                            if hi < lo {
                                return Err(bad("reversed range"));
                            }
                            set.pop();
                            set.extend(lo..=hi);
                        }
                        Some(x) => {
                            set.push(x);
                            prev = Some(x);
                        }
                    }
                }
                let pick = *set.choose(rng).ok_or_else(|| bad("empty character class"))?;
                if let Some(d) = pick.to_digit(10) {
                    digits.push(d);
                }
                out.push(pick);
            }
            '{' => {
                let body: String = chars.by_ref().take_while(|x| *x != '}').collect();
                let (lo, hi) = body
                    .split_once('-')
                    .and_then(|(a, b)| Some((a.parse::<u32>().ok()?, b.parse::<u32>().ok()?)))
                    .filter(|(a, b)| a <= b)
                    .ok_or_else(|| bad("range must be {lo-hi}"))?;
                let v = rng.random_range(lo..=hi).to_string();
                digits.extend(v.chars().filter_map(|x| x.to_digit(10)));
                out.push_str(&v);
            }
            '\\' => out.push(chars.next().ok_or_else(|| bad("dangling escape"))?),
            other => {
                if let Some(d) = other.to_digit(10) {
                    digits.push(d);
                }
                out.push(other);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorTemplate {
    pub locale: LocaleId,
    pub domain: Domain,
    /// Text with `{LABEL}` placeholders.
    pub body: String,
    pub size: SizeClass,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CommonFile {
    formats: BTreeMap<LabelId, Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KitFile {
    #[serde(default = "space")]
    joiner: String,
    openers: BTreeMap<Domain, Vec<String>>,
    fillers: Vec<String>,
    frames: Vec<String>,
    locale: BTreeMap<String, LocaleSection>,
}

fn space() -> String {
    " ".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LocaleSection {
    phone: LabelId,
    national_id: LabelId,
    #[serde(default)]
    frames: Vec<String>,
    #[serde(default)]
    pools: BTreeMap<LabelId, Vec<String>>,
    #[serde(default)]
    formats: BTreeMap<LabelId, Vec<String>>,
}

#[derive(Debug, Clone)]
struct LocaleKit {
    joiner: String,
    openers: BTreeMap<Domain, Vec<String>>,
    fillers: Vec<String>,
    /// Frames whose every placeholder has a provider, with aliases resolved.
    frames: Vec<(String, BTreeSet<LabelId>)>,
    providers: BTreeMap<LabelId, ValueProvider>,
}

impl LocaleKit {
    fn labels(&self) -> BTreeSet<LabelId> {
        self.frames.iter().flat_map(|(_, ls)| ls.iter().cloned()).collect()
    }
}

/// Placeholder names in order of appearance.
fn placeholders(body: &str) -> Vec<(usize, usize, &str)> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(rel) = body[from..].find('{') {
        let open = from + rel;
        let rest = &body[open + 1..];
        let len = rest
            .bytes()
            .take_while(|b| b.is_ascii_uppercase() || *b == b'_')
            .count();
        if len > 0 && rest.as_bytes().get(len) == Some(&b'}') {
            out.push((open, open + len + 2, &rest[..len]));
            from = open + len + 2;
        } else {
            from = open + 1;
        }
    }
    out
}

/// Every locale's frames, fillers and value providers.
#[derive(Debug, Clone)]
pub struct GeneratorData {
    kits: BTreeMap<LocaleId, LocaleKit>,
}

impl GeneratorData {
    pub fn builtin() -> Self {
        let kits: Vec<(String, String)> = KITS
            .iter()
            .map(|(n, s)| (n.to_string(), s.to_string()))
            .collect();
        Self::from_sources(COMMON, &kits).expect("builtin generator data is valid")
    }

    /// Load `common.toml` plus every other `*.toml` kit in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, GenerateError> {
        let io = |p: &Path, e: std::io::Error| GenerateError::Data {
            file: p.display().to_string(),
            message: e.to_string(),
        };
        let common_path = dir.join("common.toml");
        let common = std::fs::read_to_string(&common_path).map_err(|e| io(&common_path, e))?;
        let mut kits = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "toml") && *p != common_path)
            .collect();
        entries.sort();
        for p in entries {
            let text = std::fs::read_to_string(&p).map_err(|e| io(&p, e))?;
            kits.push((p.display().to_string(), text));
        }
        Self::from_sources(&common, &kits)
    }

    fn from_sources(common: &str, kits: &[(String, String)]) -> Result<Self, GenerateError> {
        let common: CommonFile = toml::from_str(common).map_err(|e| GenerateError::Data {
            file: "common.toml".into(),
            message: e.to_string(),
        })?;
        let mut out = BTreeMap::new();
        for (file, text) in kits {
            let data_err = |message: String| GenerateError::Data {
                file: file.clone(),
                message,
            };
            let kit: KitFile = toml::from_str(text).map_err(|e| data_err(e.to_string()))?;
            for (tag, section) in kit.locale {
                let locale = LocaleId::new(tag.as_str()).map_err(|e| data_err(e.to_string()))?;
                let mut providers = BTreeMap::new();
                for (label, formats) in common.formats.iter().chain(&section.formats) {
                    if formats.is_empty() {
                        return Err(data_err(format!("{label}: empty format list")));
                    }
                    providers.insert(
                        label.clone(),
                        ValueProvider {
                            label: label.clone(),
                            locale: locale.clone(),
                            source: ProviderSource::Formats(formats.clone()),
                        },
                    );
                }
                for (label, pool) in &section.pools {
                    if pool.is_empty() {
                        return Err(data_err(format!("{label}: empty pool")));
                    }
                    providers.insert(
                        label.clone(),
                        ValueProvider {
                            label: label.clone(),
                            locale: locale.clone(),
                            source: ProviderSource::Pool(pool.clone()),
                        },
                    );
                }
                let mut frames = Vec::new();
                for raw in kit.frames.iter().chain(&section.frames) {
                    let body = raw
                        .replace("{PHONE}", &format!("{{{}}}", section.phone))
                        .replace("{NATIONAL_ID}", &format!("{{{}}}", section.national_id));
                    let labels: BTreeSet<LabelId> = placeholders(&body)
                        .into_iter()
                        .map(|(_, _, l)| LabelId::new(l))
                        .collect();
                    if labels.is_empty() {
                        return Err(data_err(format!("frame without placeholders: {raw:?}")));
                    }
                    if labels.iter().all(|l| providers.contains_key(l)) {
                        frames.push((body, labels));
                    }
                }
                if frames.is_empty() {
                    return Err(data_err(format!("{locale}: no usable frames")));
                }
                out.insert(
                    locale,
                    LocaleKit {
                        joiner: kit.joiner.clone(),
                        openers: kit.openers.clone(),
                        fillers: kit.fillers.clone(),
                        frames,
                        providers,
                    },
                );
            }
        }
        Ok(GeneratorData { kits: out })
    }

    pub fn locales(&self) -> impl Iterator<Item = &LocaleId> {
        self.kits.keys()
    }

    pub fn provider(&self, locale: &LocaleId, label: &LabelId) -> Option<&ValueProvider> {
        self.kits.get(locale)?.providers.get(label)
    }

    pub fn providers(&self, locale: &LocaleId) -> impl Iterator<Item = &ValueProvider> {
        self.kits.get(locale).into_iter().flat_map(|k| k.providers.values())
    }

    /// Labels that can appear in documents for `locale`.
    pub fn labels(&self, locale: &LocaleId) -> BTreeSet<LabelId> {
        self.kits.get(locale).map(LocaleKit::labels).unwrap_or_default()
    }

    /// Lay out a document skeleton: an opener, frames chosen by sampling a
    /// target label uniformly, and fillers up to a target word count.
    pub fn compose(
        &self,
        locale: &LocaleId,
        size: SizeClass,
        rng: &mut impl Rng,
    ) -> Result<GeneratorTemplate, GenerateError> {
        let kit = self
            .kits
            .get(locale)
            .ok_or_else(|| GenerateError::MissingLocale(locale.to_string()))?;
        let domain = *Domain::ALL.choose(rng).expect("six domains");
        let labels: Vec<LabelId> = kit.labels().into_iter().collect();
        let mut frames = Vec::new();
        for _ in 0..size.frames(rng) {
            let target = labels.choose(rng).expect("kit has labels");
            let candidates: Vec<&String> = kit
                .frames
                .iter()
                .filter(|(_, ls)| ls.contains(target))
                .map(|(b, _)| b)
                .collect();
            frames.push((*candidates.choose(rng).expect("label came from a frame")).clone());
        }
        let mut sentences: Vec<String> = Vec::new();
        if size != SizeClass::Short {
            if let Some(op) = kit.openers.get(&domain).and_then(|o| o.choose(rng)) {
                sentences.push(op.clone());
            }
        }
        let head = sentences.len();
        sentences.extend(frames);
        let target = size.target_words(rng);
        let mut words: usize = sentences.iter().map(|s| estimate_words(s)).sum();
        while words < target && !kit.fillers.is_empty() {
            let f = kit.fillers.choose(rng).expect("non-empty").clone();
            words += estimate_words(&f);
            let at = rng.random_range(head..=sentences.len());
            sentences.insert(at, f);
        }
        let mut body = String::new();
        for (i, s) in sentences.iter().enumerate() {
            if i > 0 {
                if size >= SizeClass::Large && i % 7 == 0 {
                    body.push_str("\n\n");
                } else {
                    body.push_str(&kit.joiner);
                }
            }
            body.push_str(s);
        }
        Ok(GeneratorTemplate {
            locale: locale.clone(),
            domain,
            body,
            size,
        })
    }
}

fn estimate_words(template: &str) -> usize {
    count_words(template) + placeholders(template).len()
}

/// Fill a template's placeholders, recording each value's code-point span.
///
/// Structured values are checked against the registry; a mismatch is a
/// data error, not a retry.
pub fn fill_template(
    template: &GeneratorTemplate,
    data: &GeneratorData,
    reg: &CompiledRegistry,
    rng: &mut impl Rng,
) -> Result<(String, Vec<GoldSpan>), GenerateError> {
    let mut used = BTreeSet::new();
    fill_with(template, data, reg, rng, &mut used)?.ok_or_else(|| GenerateError::Exhausted {
        index: 0,
        attempts: 1,
    })
}

fn fill_with(
    template: &GeneratorTemplate,
    data: &GeneratorData,
    reg: &CompiledRegistry,
    rng: &mut impl Rng,
    used: &mut BTreeSet<String>,
) -> Result<Option<(String, Vec<GoldSpan>)>, GenerateError> {
    let locale = &template.locale;
    let mut text = String::new();
    let mut chars = 0usize;
    let mut gold = Vec::new();
    let mut last = 0;
    for (open, close, name) in placeholders(&template.body) {
        let literal = &template.body[last..open];
        text.push_str(literal);
        chars += literal.chars().count();
        let label = LabelId::new(name);
        let provider = data
            .provider(locale, &label)
            .ok_or_else(|| GenerateError::MissingProvider {
                label: name.to_string(),
                locale: locale.to_string(),
            })?;
        let Some(value) = provider.sample(rng, used)? else {
            return Ok(None);
        };
        let structured = !UNSTRUCTURED_LABELS.contains(&name);
        if structured && !reg.full_match(locale, &label, &value) {
            return Err(GenerateError::InvalidValue {
                label: name.to_string(),
                locale: locale.to_string(),
                value,
            });
        }
        let n = value.chars().count();
        gold.push(GoldSpan {
            start: chars,
            end: chars + n,
            label,
        });
        text.push_str(&value);
        chars += n;
        used.insert(value);
        last = close;
    }
    text.push_str(&template.body[last..]);
    Ok(Some((text, gold)))
}

fn occurrences(hay: &str, needle: &str) -> usize {
    let mut n = 0;
    let mut from = 0;
    while let Some(i) = hay[from..].find(needle) {
        n += 1;
        let at = from + i;
        from = at + hay[at..].chars().next().map_or(1, char::len_utf8);
    }
    n
}

/// Accept only documents where each gold surface occurs exactly once and
/// the word count sits inside the size band.
fn acceptable(text: &str, gold: &[GoldSpan], size: SizeClass) -> bool {
    let (lo, hi) = size.band();
    let words = count_words(text);
    if words < lo || words > hi {
        return false;
    }
    let chars: Vec<char> = text.chars().collect();
    gold.iter().all(|g| {
        let surface: String = chars[g.start..g.end].iter().collect();
        occurrences(text, &surface) == 1
    })
}

/// Every regex hit that is not a gold span must be one the pipeline discards
/// on its own: a short numeric, or a span strictly inside a gold entity that
/// outranks it. Otherwise a value happens to embed another identifier (a
/// Luhn-valid card number inside an IBAN, say) and the document is redrawn.
fn stray_matches_resolvable(
    text: &str,
    gold: &[GoldSpan],
    locale: &LocaleId,
    reg: &CompiledRegistry,
) -> Result<bool, GenerateError> {
    let doc = Document::new("probe", text, locale.clone()).map_err(|e| GenerateError::Data {
        file: locale.to_string(),
        message: e.to_string(),
    })?;
    let hits = match_structured(&doc, reg).map_err(|e| GenerateError::Data {
        file: locale.to_string(),
        message: e.to_string(),
    })?;
    let prio = reg.priorities();
    Ok(hits.iter().all(|m| {
        if gold.iter().any(|g| (g.start, g.end) == (m.start(), m.end())) {
            return true;
        }
        let best = prio.best(m.labels()).expect("entities carry a label");
        SHORT_NUMERIC_LABELS.contains(&best.as_str())
            || gold.iter().any(|g| {
                contains_range((g.start, g.end), (m.start(), m.end())) && prio.priority(&g.label) >= prio.priority(best)
            })
    }))
}

/// `n` records cycling through `locales` and the four size classes.
///
/// Record `i` draws from its own ChaCha stream, so any prefix of a larger
/// run is identical to a smaller run with the same seed.
pub fn generate(
    data: &GeneratorData,
    reg: &CompiledRegistry,
    locales: &[LocaleId],
    seed: u64,
    n: usize,
) -> Result<Vec<CorpusRecord>, GenerateError> {
    if n == 0 {
        return Err(GenerateError::EmptyRequest);
    }
    let locales: Vec<LocaleId> = if locales.is_empty() {
        data.locales().cloned().collect()
    } else {
        locales.to_vec()
    };
    for l in &locales {
        if !data.kits.contains_key(l) {
            return Err(GenerateError::MissingLocale(l.to_string()));
        }
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let locale = &locales[i % locales.len()];
        let size = SizeClass::ALL[i % 4];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut made = None;
        for _ in 0..MAX_ATTEMPTS {
            let template = data.compose(locale, size, &mut rng)?;
            let mut used = BTreeSet::new();
            if let Some((text, gold)) = fill_with(&template, data, reg, &mut rng, &mut used)? {
                if acceptable(&text, &gold, size) && stray_matches_resolvable(&text, &gold, locale, reg)? {
                    made = Some((text, gold));
                    break;
                }
            }
        }
        let (text, gold) = made.ok_or(GenerateError::Exhausted {
            index: i,
            attempts: MAX_ATTEMPTS,
        })?;
        out.push(CorpusRecord {
            id: format!("{locale}-{i:05}"),
            locale: locale.clone(),
            text,
            gold,
        });
    }
    Ok(out)
}
