//! The three-phase refinement pipeline.
//!
//! Phase I unions regex matches with LLM extractions. Phase II resolves
//! spans that carry several labels. Phase III drops contained entities by
//! priority and then asks the model to verify short numerics in context.

mod consolidate;
mod context;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusRecord;
use crate::llm::{
    ground_spans, parse_extraction, parse_label_choice, parse_verification, render_prompt, Bindings,
    ChatBackend, LabelChoice, LlmError, Placeholder, PromptSet, RequestOptions, TaskKind, Verdict,
};
use crate::model::{sort_canonical, Document, EntitySpan, LabelId, LabelPriorityTable, LocaleId, ModelError, PhaseId};
use crate::registry::{match_structured, CompiledRegistry, RegistryError, SHORT_NUMERIC_LABELS, UNSTRUCTURED_LABELS};

pub use consolidate::{redact, resolve_overlaps, RedactionStyle};
pub use context::{extract_context_window, sentence_ranges, ContextWindow};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{task} request failed")]
    Llm {
        task: String,
        #[source]
        source: LlmError,
    },
    #[error("entity [{start},{end}) still has {count} labels")]
    MultiLabelRemains { start: usize, end: usize, count: usize },
    #[error("entities [{a_start},{a_end}) and [{b_start},{b_end}) overlap")]
    OverlappingEntities {
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("invalid pipeline config: {0}")]
    Config(String),
}

impl PipelineError {
    /// The adapter error underneath, if this failure came from the model.
    pub fn llm_error(&self) -> Option<&LlmError> {
        match self {
            PipelineError::Llm { source, .. } => Some(source),
            _ => None,
        }
    }
}

fn llm_err(task: &TaskKind, source: LlmError) -> PipelineError {
    PipelineError::Llm {
        task: task.key(),
        source,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run_through: PhaseId,
    /// Sentences of context on each side for numeric verification.
    pub context_sentences: usize,
    pub short_numeric_labels: BTreeSet<LabelId>,
    pub unstructured_labels: Vec<LabelId>,
    /// Overrides the registry's table when set.
    pub priorities: Option<LabelPriorityTable>,
    pub fail_open_on_llm_error: bool,
    pub request: RequestOptions,
    #[serde(skip)]
    pub prompts: Arc<PromptSet>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            run_through: PhaseId::Phase3Consolidation,
            context_sentences: 1,
            short_numeric_labels: SHORT_NUMERIC_LABELS.into_iter().map(LabelId::new).collect(),
            unstructured_labels: UNSTRUCTURED_LABELS.iter().map(|l| LabelId::new(*l)).collect(),
            priorities: None,
            fail_open_on_llm_error: true,
            request: RequestOptions::default(),
            prompts: Arc::new(PromptSet::builtin()),
        }
    }
}

impl PipelineConfig {
    pub fn through(mut self, phase: PhaseId) -> Self {
        self.run_through = phase;
        self
    }

    pub fn fail_open(mut self, open: bool) -> Self {
        self.fail_open_on_llm_error = open;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if let Some(l) = self
            .unstructured_labels
            .iter()
            .find(|l| self.short_numeric_labels.contains(*l))
        {
            return Err(PipelineError::Config(format!(
                "{l} is both short-numeric and unstructured"
            )));
        }
        for l in &self.unstructured_labels {
            TaskKind::extract(l.clone()).map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        Ok(())
    }

    fn priority_table<'a>(&'a self, reg: &'a CompiledRegistry) -> &'a LabelPriorityTable {
        self.priorities.as_ref().unwrap_or_else(|| reg.priorities())
    }
}

/// Counters describing what the pipeline absorbed or changed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub llm_calls: usize,
    pub llm_errors: usize,
    pub unparseable_responses: usize,
    pub grounding_misses: usize,
    pub fallback_disambiguations: usize,
    pub verification_fallbacks: usize,
    pub fp_filter_removals: usize,
    pub overlap_removals: usize,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.llm_calls += other.llm_calls;
        self.llm_errors += other.llm_errors;
        self.unparseable_responses += other.unparseable_responses;
        self.grounding_misses += other.grounding_misses;
        self.fallback_disambiguations += other.fallback_disambiguations;
        self.verification_fallbacks += other.verification_fallbacks;
        self.fp_filter_removals += other.fp_filter_removals;
        self.overlap_removals += other.overlap_removals;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionResult {
    pub document_id: String,
    pub locale: LocaleId,
    pub entities: Vec<EntitySpan>,
    pub snapshots: BTreeMap<PhaseId, Vec<EntitySpan>>,
    pub diagnostics: Diagnostics,
}

impl DetectionResult {
    pub fn snapshot(&self, phase: PhaseId) -> Option<&[EntitySpan]> {
        self.snapshots.get(&phase).map(Vec::as_slice)
    }
}

fn request_for(
    config: &PipelineConfig,
    doc: &Document,
    task: &TaskKind,
    bindings: &Bindings,
) -> Result<crate::llm::ChatRequest, PipelineError> {
    let template = config
        .prompts
        .get(task, doc.locale())
        .map_err(|e| llm_err(task, e))?;
    Ok(render_prompt(template, bindings, &config.request)
        .map_err(|e| llm_err(task, e))?
        .for_document(doc.id()))
}

/// Regex matches unioned with grounded LLM extractions. Identical spans
/// merge into one entity carrying every label.
pub fn run_phase1(
    doc: &Document,
    reg: &CompiledRegistry,
    adapter: &dyn ChatBackend,
    config: &PipelineConfig,
    diag: &mut Diagnostics,
) -> Result<Vec<EntitySpan>, PipelineError> {
    let priorities = config.priority_table(reg);
    let structured = match_structured(doc, reg)?;
    if doc.char_len() == 0 {
        return Ok(structured);
    }

    let mut base = Bindings::new();
    base.insert(Placeholder::Locale, doc.locale().to_string());
    base.insert(Placeholder::Text, doc.text().to_string());

    let outcomes: Vec<Result<_, PipelineError>> = config
        .unstructured_labels
        .par_iter()
        .map(|label| {
            let task = TaskKind::extract(label.clone()).map_err(|e| PipelineError::Config(e.to_string()))?;
            let req = request_for(config, doc, &task, &base)?;
            Ok((label, task.clone(), adapter.complete(&req)))
        })
        .collect();

    let mut by_span: BTreeMap<(usize, usize), EntitySpan> = structured
        .into_iter()
        .map(|e| ((e.start(), e.end()), e))
        .collect();
    for outcome in outcomes {
        let (label, task, reply) = outcome?;
        diag.llm_calls += 1;
        let resp = match reply {
            Ok(r) => r,
            Err(_) if config.fail_open_on_llm_error => {
                diag.llm_errors += 1;
                continue;
            }
            Err(e) => return Err(llm_err(&task, e)),
        };
        let strings = parse_extraction(&resp).unwrap_or_else(|_| {
            diag.unparseable_responses += 1;
            Vec::new()
        });
        let g = ground_spans(doc, &strings, label);
        diag.grounding_misses += g.misses;
        for span in g.spans {
            match by_span.get_mut(&(span.start(), span.end())) {
                Some(existing) => existing.absorb_labels(span.labels(), priorities),
                None => {
                    by_span.insert((span.start(), span.end()), span);
                }
            }
        }
    }
    let mut out: Vec<EntitySpan> = by_span.into_values().collect();
    for e in &mut out {
        e.rank_labels(priorities);
    }
    sort_canonical(&mut out);
    Ok(out)
}

/// Give every multi-label entity a single label, asking the model first
/// and falling back to the highest-priority candidate.
pub fn resolve_multilabel(
    doc: &Document,
    entities: Vec<EntitySpan>,
    adapter: &dyn ChatBackend,
    priorities: &LabelPriorityTable,
    config: &PipelineConfig,
    diag: &mut Diagnostics,
) -> Result<Vec<EntitySpan>, PipelineError> {
    enum Step {
        Keep(EntitySpan),
        Asked(EntitySpan, Result<crate::llm::ChatResponse, LlmError>),
    }
    let task = TaskKind::Disambiguate;
    let steps: Vec<Result<Step, PipelineError>> = entities
        .into_par_iter()
        .map(|e| {
            if !e.is_multi_label() {
                return Ok(Step::Keep(e));
            }
            let mut b = Bindings::new();
            b.insert(Placeholder::Locale, doc.locale().to_string());
            b.insert(Placeholder::Text, doc.text().to_string());
            b.insert(Placeholder::SpanText, e.surface().to_string());
            b.insert(Placeholder::CandidateLabels, join_labels(e.labels()));
            let req = request_for(config, doc, &task, &b)?.with_target(e.start(), e.end());
            let reply = adapter.complete(&req);
            Ok(Step::Asked(e, reply))
        })
        .collect();

    let mut out = Vec::with_capacity(steps.len());
    for step in steps {
        match step? {
            Step::Keep(e) => out.push(e),
            Step::Asked(e, reply) => {
                diag.llm_calls += 1;
                let choice = match reply {
                    Ok(r) => parse_label_choice(&r, e.labels()),
                    Err(_) if config.fail_open_on_llm_error => {
                        diag.llm_errors += 1;
                        LabelChoice::NoValidChoice
                    }
                    Err(err) => return Err(llm_err(&task, err)),
                };
                let label = match choice {
                    LabelChoice::Chosen(l) => l,
                    LabelChoice::NoValidChoice => {
                        diag.fallback_disambiguations += 1;
                        priorities
                            .best(e.labels())
                            .expect("entities carry at least one label")
                            .clone()
                    }
                };
                out.push(e.with_label(label));
            }
        }
    }
    Ok(out)
}

fn join_labels(labels: &[LabelId]) -> String {
    labels
        .iter()
        .map(LabelId::as_str)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Verify short numeric entities against their local context. Anything
/// the model does not clearly reject is kept.
pub fn filter_false_positives(
    doc: &Document,
    entities: Vec<EntitySpan>,
    adapter: &dyn ChatBackend,
    config: &PipelineConfig,
    diag: &mut Diagnostics,
) -> Result<Vec<EntitySpan>, PipelineError> {
    let task = TaskKind::VerifyNumeric;
    let checks: Vec<Result<(EntitySpan, Option<Result<_, LlmError>>), PipelineError>> = entities
        .into_par_iter()
        .map(|e| {
            if !config.short_numeric_labels.contains(e.label()) {
                return Ok((e, None));
            }
            let window = extract_context_window(doc, e.start(), e.end(), config.context_sentences);
            let mut b = Bindings::new();
            b.insert(Placeholder::Locale, doc.locale().to_string());
            b.insert(Placeholder::Text, doc.text().to_string());
            b.insert(Placeholder::SpanText, e.surface().to_string());
            b.insert(Placeholder::CandidateLabels, e.label().to_string());
            b.insert(Placeholder::ContextWindow, window.text);
            let req = request_for(config, doc, &task, &b)?
                .with_target(e.start(), e.end())
                .with_label(e.label().clone());
            let reply = adapter.complete(&req);
            Ok((e, Some(reply)))
        })
        .collect();

    let mut out = Vec::new();
    for check in checks {
        let (e, reply) = check?;
        let Some(reply) = reply else {
            out.push(e);
            continue;
        };
        diag.llm_calls += 1;
        let verdict = match reply {
            Ok(r) => parse_verification(&r),
            Err(_) if config.fail_open_on_llm_error => {
                diag.llm_errors += 1;
                Verdict::NoValidChoice
            }
            Err(err) => return Err(llm_err(&task, err)),
        };
        match verdict {
            Verdict::Confirmed => out.push(e),
            Verdict::Rejected => diag.fp_filter_removals += 1,
            Verdict::NoValidChoice => {
                diag.verification_fallbacks += 1;
                out.push(e);
            }
        }
    }
    Ok(out)
}

/// Run phases I through `config.run_through`, snapshotting after each.
pub fn run_pipeline(
    doc: &Document,
    reg: &CompiledRegistry,
    adapter: &dyn ChatBackend,
    config: &PipelineConfig,
) -> Result<DetectionResult, PipelineError> {
    config.validate()?;
    if !reg.supports(doc.locale()) {
        return Err(RegistryError::UnsupportedLocale(doc.locale().to_string()).into());
    }
    let priorities = config.priority_table(reg);
    let mut diag = Diagnostics::default();
    let mut snapshots = BTreeMap::new();

    let mut current = run_phase1(doc, reg, adapter, config, &mut diag)?;
    snapshots.insert(PhaseId::Phase1Baseline, current.clone());

    if config.run_through >= PhaseId::Phase2MultiLabel {
        current = resolve_multilabel(doc, current, adapter, priorities, config, &mut diag)?;
        snapshots.insert(PhaseId::Phase2MultiLabel, current.clone());
    }

    if config.run_through >= PhaseId::Phase3Consolidation {
        let before = current.len();
        current = resolve_overlaps(&current, priorities)?;
        diag.overlap_removals += before - current.len();
        current = filter_false_positives(doc, current, adapter, config, &mut diag)?;
        snapshots.insert(PhaseId::Phase3Consolidation, current.clone());
    }

    Ok(DetectionResult {
        document_id: doc.id().to_string(),
        locale: doc.locale().clone(),
        entities: current,
        snapshots,
        diagnostics: diag,
    })
}

/// Run every record's document in parallel. Results keep input order; the
/// first failure in input order is reported with its document id.
pub fn run_corpus(
    records: &[CorpusRecord],
    reg: &CompiledRegistry,
    adapter: &dyn ChatBackend,
    config: &PipelineConfig,
) -> Result<Vec<DetectionResult>, (String, PipelineError)> {
    records
        .par_iter()
        .map(|rec| {
            let doc = rec.document().map_err(|e| (rec.id.clone(), e.into()))?;
            run_pipeline(&doc, reg, adapter, config).map_err(|e| (rec.id.clone(), e))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}
