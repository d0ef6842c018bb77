use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::model::{contains, overlaps, sort_canonical, Document, EntitySpan, LabelPriorityTable};

fn require_single_label(entities: &[EntitySpan]) -> Result<(), PipelineError> {
    match entities.iter().find(|e| e.labels().len() != 1) {
        Some(e) => Err(PipelineError::MultiLabelRemains {
            start: e.start(),
            end: e.end(),
            count: e.labels().len(),
        }),
        None => Ok(()),
    }
}

/// Drop every entity strictly contained in a kept entity of equal or
/// higher priority. A contained entity that outranks its container stays.
pub fn resolve_overlaps(
    entities: &[EntitySpan],
    priorities: &LabelPriorityTable,
) -> Result<Vec<EntitySpan>, PipelineError> {
    require_single_label(entities)?;
    let mut order: Vec<&EntitySpan> = entities.iter().collect();
    order.sort_by(|a, b| {
        a.start()
            .cmp(&b.start())
            .then_with(|| priorities.priority(b.label()).cmp(&priorities.priority(a.label())))
            .then_with(|| b.len().cmp(&a.len()))
            .then_with(|| a.label().cmp(b.label()))
    });

    let mut kept: Vec<EntitySpan> = Vec::with_capacity(order.len());
    for e in order {
        let p = priorities.priority(e.label());
        // the sort puts any container that could drop e ahead of it
        let dominated = kept
            .iter()
            .any(|k| contains(k, e) && priorities.priority(k.label()) >= p);
        if !dominated {
            kept.push(e.clone());
        }
    }
    sort_canonical(&mut kept);
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RedactionStyle {
    /// `[LABEL]` in place of the span.
    #[default]
    LabelTag,
    /// One `*` per code point.
    Mask,
}

/// Replace each entity in `doc`'s text. Entities must be single-label and
/// pairwise non-overlapping.
pub fn redact(
    doc: &Document,
    entities: &[EntitySpan],
    style: RedactionStyle,
) -> Result<String, PipelineError> {
    require_single_label(entities)?;
    let mut sorted: Vec<&EntitySpan> = entities.iter().collect();
    sorted.sort_by_key(|e| (e.start(), e.end()));
    for w in sorted.windows(2) {
        if overlaps(w[0], w[1]) {
            return Err(PipelineError::OverlappingEntities {
                a_start: w[0].start(),
                a_end: w[0].end(),
                b_start: w[1].start(),
                b_end: w[1].end(),
            });
        }
    }
    let mut text = doc.text().to_string();
    for e in sorted.iter().rev() {
        let lo = doc.byte_offset(e.start()).expect("entity within document");
        let hi = doc.byte_offset(e.end()).expect("entity within document");
        let replacement = match style {
            RedactionStyle::LabelTag => format!("[{}]", e.label()),
            RedactionStyle::Mask => "*".repeat(e.len()),
        };
        text.replace_range(lo..hi, &replacement);
    }
    Ok(text)
}
