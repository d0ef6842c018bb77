use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::LlmError;
use crate::model::{LabelId, LocaleId};
use crate::registry::UNSTRUCTURED_LABELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placeholder {
    Locale,
    Text,
    SpanText,
    CandidateLabels,
    ContextWindow,
}

impl Placeholder {
    pub const ALL: [Placeholder; 5] = [
        Placeholder::Locale,
        Placeholder::Text,
        Placeholder::SpanText,
        Placeholder::CandidateLabels,
        Placeholder::ContextWindow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Placeholder::Locale => "locale",
            Placeholder::Text => "text",
            Placeholder::SpanText => "span_text",
            Placeholder::CandidateLabels => "candidate_labels",
            Placeholder::ContextWindow => "context_window",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Placeholder::ALL.into_iter().find(|p| p.name() == name)
    }
}

pub type Bindings = BTreeMap<Placeholder, String>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    ExtractUnstructured(LabelId),
    Disambiguate,
    VerifyNumeric,
}

impl TaskKind {
    pub fn extract(label: LabelId) -> Result<Self, LlmError> {
        if UNSTRUCTURED_LABELS.contains(&label.as_str()) {
            Ok(TaskKind::ExtractUnstructured(label))
        } else {
            Err(LlmError::NotUnstructured(label.to_string()))
        }
    }

    /// File-name stem of the template for this task.
    pub fn key(&self) -> String {
        match self {
            TaskKind::ExtractUnstructured(l) => format!("extract_{}", l.as_str().to_lowercase()),
            TaskKind::Disambiguate => "disambiguate".into(),
            TaskKind::VerifyNumeric => "verify_numeric".into(),
        }
    }

    fn from_key(key: &str) -> Option<Self> {
        match key {
            "disambiguate" => Some(TaskKind::Disambiguate),
            "verify_numeric" => Some(TaskKind::VerifyNumeric),
            _ => {
                let label = key.strip_prefix("extract_")?.to_uppercase();
                TaskKind::extract(LabelId::new(label)).ok()
            }
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmTask {
    pub kind: TaskKind,
    pub locale: LocaleId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(Placeholder),
}

/// A system/user message pair with `{placeholder}` markers.
///
/// Only the five known placeholder names are markers. Braces around
/// anything else (JSON examples, `[]`) are literal text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TaskKind,
    system: Vec<Piece>,
    user: Vec<Piece>,
    placeholders: BTreeSet<Placeholder>,
}

impl PromptTemplate {
    pub fn new(kind: TaskKind, system: &str, user: &str) -> Result<Self, LlmError> {
        let template = kind.key();
        let system = parse_pieces(&template, system)?;
        let user = parse_pieces(&template, user)?;
        let placeholders = system
            .iter()
            .chain(&user)
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(*s),
                Piece::Literal(_) => None,
            })
            .collect();
        Ok(PromptTemplate {
            kind,
            system,
            user,
            placeholders,
        })
    }

    pub fn kind(&self) -> &TaskKind {
        &self.kind
    }

    pub fn placeholders(&self) -> &BTreeSet<Placeholder> {
        &self.placeholders
    }

    fn render_part(&self, pieces: &[Piece], bindings: &Bindings) -> Result<String, LlmError> {
        let mut out = String::new();
        for p in pieces {
            match p {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(ph) => {
                    let v = bindings.get(ph).ok_or_else(|| LlmError::MissingPlaceholder {
                        template: self.kind.key(),
                        name: ph.name().to_string(),
                    })?;
                    out.push_str(v);
                }
            }
        }
        Ok(out)
    }
}

fn parse_pieces(template: &str, src: &str) -> Result<Vec<Piece>, LlmError> {
    let mut pieces = Vec::new();
    let mut literal = String::new();
    let mut rest = src;
    while let Some(open) = rest.find('{') {
        literal.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let ident_len = after
            .bytes()
            .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
            .count();
        if ident_len > 0 && after.as_bytes().get(ident_len) == Some(&b'}') {
            let name = &after[..ident_len];
            let ph = Placeholder::from_name(name).ok_or_else(|| LlmError::UnknownPlaceholder {
                template: template.to_string(),
                name: name.to_string(),
            })?;
            if !literal.is_empty() {
                pieces.push(Piece::Literal(std::mem::take(&mut literal)));
            }
            pieces.push(Piece::Slot(ph));
            rest = &after[ident_len + 1..];
        } else {
            literal.push('{');
            rest = after;
        }
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        pieces.push(Piece::Literal(literal));
    }
    Ok(pieces)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequestOptions {
    pub model: String,
    pub max_tokens: u32,
}

impl Default for RequestOptions {
    fn default() -> Self {
        RequestOptions {
            model: "gpt-4o".into(),
            max_tokens: 1024,
        }
    }
}

/// What a request is about. Mock backends key on this; the live backend
/// ignores it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RequestContext {
    pub task: TaskKind,
    pub document_id: String,
    /// Code-point span the request concerns, if any.
    pub target: Option<(usize, usize)>,
    /// Label under test for verification requests.
    pub label: Option<LabelId>,
    pub bindings: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    temperature: f32,
    pub max_tokens: u32,
    pub context: RequestContext,
}

impl ChatRequest {
    /// Always zero.
    pub fn temperature(&self) -> f32 {
        self.temperature
    }

    pub fn for_document(mut self, id: impl Into<String>) -> Self {
        self.context.document_id = id.into();
        self
    }

    pub fn with_target(mut self, start: usize, end: usize) -> Self {
        self.context.target = Some((start, end));
        self
    }

    pub fn with_label(mut self, label: LabelId) -> Self {
        self.context.label = Some(label);
        self
    }

    /// Stable hex digest of task kind, bound values and target span.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Material<'a> {
            task: String,
            bindings: &'a BTreeMap<String, String>,
            target: Option<(usize, usize)>,
            label: Option<&'a LabelId>,
        }
        let material = Material {
            task: self.context.task.key(),
            bindings: &self.context.bindings,
            target: self.context.target,
            label: self.context.label.as_ref(),
        };
        let bytes = serde_json::to_vec(&material).expect("fingerprint material serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..16])
    }

    /// OpenAI-compatible chat-completion body.
    pub fn to_openai_body(&self) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &Bindings,
    options: &RequestOptions,
) -> Result<ChatRequest, LlmError> {
    let system = template.render_part(&template.system, bindings)?;
    let user = template.render_part(&template.user, bindings)?;
    let bound = template
        .placeholders
        .iter()
        .map(|p| (p.name().to_string(), bindings[p].clone()))
        .collect();
    Ok(ChatRequest {
        model: options.model.clone(),
        system,
        user,
        temperature: 0.0,
        max_tokens: options.max_tokens,
        context: RequestContext {
            task: template.kind.clone(),
            document_id: String::new(),
            target: None,
            label: None,
            bindings: bound,
        },
    })
}

const BUILTIN_PROMPTS: [(&str, &str, &str); 6] = [
    (
        "extract_name",
        include_str!("../../data/prompts/extract_name.system.txt"),
        include_str!("../../data/prompts/extract_name.user.txt"),
    ),
    (
        "extract_address",
        include_str!("../../data/prompts/extract_address.system.txt"),
        include_str!("../../data/prompts/extract_address.user.txt"),
    ),
    (
        "extract_username",
        include_str!("../../data/prompts/extract_username.system.txt"),
        include_str!("../../data/prompts/extract_username.user.txt"),
    ),
    (
        "extract_password",
        include_str!("../../data/prompts/extract_password.system.txt"),
        include_str!("../../data/prompts/extract_password.user.txt"),
    ),
    (
        "disambiguate",
        include_str!("../../data/prompts/disambiguate.system.txt"),
        include_str!("../../data/prompts/disambiguate.user.txt"),
    ),
    (
        "verify_numeric",
        include_str!("../../data/prompts/verify_numeric.system.txt"),
        include_str!("../../data/prompts/verify_numeric.user.txt"),
    ),
];

/// Templates keyed by task, with optional per-locale overrides.
#[derive(Debug, Clone)]
pub struct PromptSet {
    templates: BTreeMap<(String, Option<LocaleId>), PromptTemplate>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        let mut templates = BTreeMap::new();
        for (key, system, user) in BUILTIN_PROMPTS {
            let kind = TaskKind::from_key(key).expect("builtin task key");
            let t = PromptTemplate::new(kind, system, user).expect("builtin template parses");
            templates.insert((key.to_string(), None), t);
        }
        PromptSet { templates }
    }

    /// Overlay templates from `dir` on top of the builtin set.
    ///
    /// Files are named `<task>.system.txt` / `<task>.user.txt`, or
    /// `<task>.<locale>.system.txt` for a locale override. A missing half
    /// falls back to the builtin text for that task.
    pub fn with_overrides(mut self, dir: &Path) -> Result<Self, LlmError> {
        let entries = std::fs::read_dir(dir)
            .map_err(|e| LlmError::Config(format!("{}: {e}", dir.display())))?;
        let mut parts: BTreeMap<(String, Option<String>), (Option<String>, Option<String>)> =
            BTreeMap::new();
        for entry in entries {
            let path = entry
                .map_err(|e| LlmError::Config(e.to_string()))?
                .path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
                continue;
            };
            let Some(stem) = name.strip_suffix(".txt") else {
                continue;
            };
            let segs: Vec<&str> = stem.split('.').collect();
            let (task, locale, role) = match segs.as_slice() {
                [task, role] => (task.to_string(), None, *role),
                [task, locale, role] => (task.to_string(), Some(locale.to_string()), *role),
                _ => continue,
            };
            let text = std::fs::read_to_string(&path)
                .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
            let slot = parts.entry((task, locale)).or_default();
            match role {
                "system" => slot.0 = Some(text),
                "user" => slot.1 = Some(text),
                _ => {}
            }
        }
        for ((task, locale), (system, user)) in parts {
            let kind = TaskKind::from_key(&task)
                .ok_or_else(|| LlmError::Config(format!("unknown prompt task {task:?}")))?;
            let base = BUILTIN_PROMPTS.iter().find(|(k, _, _)| *k == task);
            let system = system
                .or_else(|| base.map(|b| b.1.to_string()))
                .ok_or_else(|| LlmError::NoTemplate(task.clone()))?;
            let user = user
                .or_else(|| base.map(|b| b.2.to_string()))
                .ok_or_else(|| LlmError::NoTemplate(task.clone()))?;
            let locale = locale
                .map(LocaleId::new)
                .transpose()
                .map_err(|e| LlmError::Config(e.to_string()))?;
            let t = PromptTemplate::new(kind, &system, &user)?;
            self.templates.insert((task, locale), t);
        }
        Ok(self)
    }

    pub fn insert(&mut self, locale: Option<LocaleId>, template: PromptTemplate) {
        self.templates
            .insert((template.kind.key(), locale), template);
    }

    /// Locale override if present, else the task default.
    pub fn get(&self, kind: &TaskKind, locale: &LocaleId) -> Result<&PromptTemplate, LlmError> {
        let key = kind.key();
        self.templates
            .get(&(key.clone(), Some(locale.clone())))
            .or_else(|| self.templates.get(&(key.clone(), None)))
            .ok_or(LlmError::NoTemplate(key))
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet::builtin()
    }
}
