//! Exact-span evaluation: category counts, derived metrics, weighted
//! aggregation across locales and per-phase ablation tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusRecord;
use crate::llm::ChatBackend;
use crate::model::{overlaps, EntitySpan, LocaleId, PhaseId};
use crate::pipeline::{run_corpus, PipelineConfig, PipelineError};
use crate::registry::CompiledRegistry;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("locale {0} has no gold entities to weight by")]
    ZeroSupport(LocaleId),
    #[error("no prediction for document {0}")]
    MissingPrediction(String),
    #[error("document {id}: {source}")]
    Pipeline {
        id: String,
        #[source]
        source: PipelineError,
    },
}

/// How a prediction must agree with gold to count as correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Identical `[start, end)`; labels ignored.
    #[default]
    Span,
    /// Identical span and the prediction's label set is exactly the gold
    /// label.
    Strict,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCategoryCounts {
    pub correct: usize,
    pub incorrect: usize,
    pub missed: usize,
    pub spurious: usize,
}

impl EvalCategoryCounts {
    pub fn possible(&self) -> usize {
        self.correct + self.incorrect + self.missed
    }

    pub fn actual(&self) -> usize {
        self.correct + self.incorrect + self.spurious
    }
}

impl std::ops::AddAssign for EvalCategoryCounts {
    fn add_assign(&mut self, o: Self) {
        self.correct += o.correct;
        self.incorrect += o.incorrect;
        self.missed += o.missed;
        self.spurious += o.spurious;
    }
}

impl std::iter::Sum for EvalCategoryCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        let mut acc = Self::default();
        for c in iter {
            acc += c;
        }
        acc
    }
}

fn exact_agrees(g: &EntitySpan, p: &EntitySpan, mode: MatchMode) -> bool {
    g.same_span(p)
        && match mode {
            MatchMode::Span => true,
            MatchMode::Strict => p.labels() == g.labels(),
        }
}

/// Span-only categorisation of `pred` against `gold`.
pub fn match_exact(gold: &[EntitySpan], pred: &[EntitySpan]) -> EvalCategoryCounts {
    match_with(gold, pred, MatchMode::Span)
}

/// One-to-one categorisation. Exact agreements pair first; the leftovers
/// are then paired along overlaps by maximum bipartite matching, so the
/// number of incorrect pairs is as large as the exact pass allows.
pub fn match_with(gold: &[EntitySpan], pred: &[EntitySpan], mode: MatchMode) -> EvalCategoryCounts {
    let mut gold_used = vec![false; gold.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut correct = 0;
    for (pi, p) in pred.iter().enumerate() {
        if let Some(gi) = (0..gold.len()).find(|&gi| !gold_used[gi] && exact_agrees(&gold[gi], p, mode)) {
            gold_used[gi] = true;
            pred_used[pi] = true;
            correct += 1;
        }
    }

    let mut rest_pred: Vec<usize> = (0..pred.len()).filter(|&i| !pred_used[i]).collect();
    rest_pred.sort_by_key(|&i| (pred[i].start(), pred[i].end(), i));
    let rest_gold: Vec<usize> = (0..gold.len()).filter(|&i| !gold_used[i]).collect();
    let adj: Vec<Vec<usize>> = rest_pred
        .iter()
        .map(|&pi| {
            (0..rest_gold.len())
                .filter(|&k| overlaps(&pred[pi], &gold[rest_gold[k]]))
                .collect()
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; rest_gold.len()];
    let mut incorrect = 0;
    for p in 0..rest_pred.len() {
        let mut seen = vec![false; rest_gold.len()];
        if augment(p, &adj, &mut owner, &mut seen) {
            incorrect += 1;
        }
    }

    EvalCategoryCounts {
        correct,
        incorrect,
        missed: gold.len() - correct - incorrect,
        spurious: pred.len() - correct - incorrect,
    }
}

fn augment(p: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &g in &adj[p] {
        if seen[g] {
            continue;
        }
        seen[g] = true;
        if owner[g].is_none_or(|q| augment(q, adj, owner, seen)) {
            owner[g] = Some(p);
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    /// Always zero: span detection has no natural true negative.
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

pub fn compute_metrics(c: &EvalCategoryCounts) -> Metrics {
    let tp = c.correct;
    let fp = c.actual() - c.correct;
    let fn_ = c.possible() - c.correct;
    let precision = ratio(tp as f64, (tp + fp) as f64);
    let recall = ratio(tp as f64, (tp + fn_) as f64);
    Metrics {
        tp,
        fp,
        tn: 0,
        fn_,
        accuracy: ratio(tp as f64, (tp + fp + fn_) as f64),
        precision,
        recall,
        f1: ratio(2.0 * precision * recall, precision + recall),
    }
}

/// An f64 that serialises with exactly three decimals.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Fixed3(pub f64);

impl Serialize for Fixed3 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw = serde_json::value::RawValue::from_string(format!("{:.3}", self.0))
            .map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

impl Serialize for Metrics {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(8))?;
        m.serialize_entry("accuracy", &Fixed3(self.accuracy))?;
        m.serialize_entry("precision", &Fixed3(self.precision))?;
        m.serialize_entry("recall", &Fixed3(self.recall))?;
        m.serialize_entry("f1", &Fixed3(self.f1))?;
        m.serialize_entry("tp", &self.tp)?;
        m.serialize_entry("fp", &self.fp)?;
        m.serialize_entry("tn", &self.tn)?;
        m.serialize_entry("fn", &self.fn_)?;
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocaleReport {
    pub locale: LocaleId,
    pub documents: usize,
    pub counts: EvalCategoryCounts,
    pub metrics: Metrics,
    /// Gold entity count, the aggregation weight.
    pub support: usize,
}

impl LocaleReport {
    pub fn new(locale: LocaleId, documents: usize, counts: EvalCategoryCounts) -> Self {
        LocaleReport {
            locale,
            documents,
            metrics: compute_metrics(&counts),
            support: counts.possible(),
            counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WeightedMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Serialize for WeightedMetrics {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(4))?;
        m.serialize_entry("accuracy", &Fixed3(self.accuracy))?;
        m.serialize_entry("precision", &Fixed3(self.precision))?;
        m.serialize_entry("recall", &Fixed3(self.recall))?;
        m.serialize_entry("f1", &Fixed3(self.f1))?;
        m.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateReport {
    pub metrics: WeightedMetrics,
    pub counts: EvalCategoryCounts,
    pub support: usize,
    #[serde(serialize_with = "fixed_map")]
    pub weights: BTreeMap<LocaleId, f64>,
}

fn fixed_map<S: Serializer>(map: &BTreeMap<LocaleId, f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut m = s.serialize_map(Some(map.len()))?;
    for (k, v) in map {
        m.serialize_entry(k, &Fixed3(*v))?;
    }
    m.end()
}

/// Support-weighted mean of each metric over the locales.
pub fn aggregate_weighted(reports: &[LocaleReport]) -> Result<AggregateReport, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if let Some(r) = reports.iter().find(|r| r.support == 0) {
        return Err(EvalError::ZeroSupport(r.locale.clone()));
    }
    let total: usize = reports.iter().map(|r| r.support).sum();
    let mut weights = BTreeMap::new();
    let mut agg = WeightedMetrics::default();
    for r in reports {
        let w = r.support as f64 / total as f64;
        *weights.entry(r.locale.clone()).or_insert(0.0) += w;
        agg.accuracy += w * r.metrics.accuracy;
        agg.precision += w * r.metrics.precision;
        agg.recall += w * r.metrics.recall;
        agg.f1 += w * r.metrics.f1;
    }
    Ok(AggregateReport {
        metrics: agg,
        counts: reports.iter().map(|r| r.counts).sum(),
        support: total,
        weights,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub mode: MatchMode,
    pub locales: Vec<LocaleReport>,
    pub aggregate: Option<AggregateReport>,
}

/// Score predictions keyed by document id against the records' gold,
/// grouped per locale in locale order.
pub fn evaluate_predictions(
    records: &[CorpusRecord],
    predictions: &BTreeMap<String, Vec<EntitySpan>>,
    mode: MatchMode,
) -> Result<EvaluationReport, EvalError> {
    let mut per_locale: BTreeMap<LocaleId, (usize, EvalCategoryCounts)> = BTreeMap::new();
    for rec in records {
        let pred = predictions
            .get(&rec.id)
            .ok_or_else(|| EvalError::MissingPrediction(rec.id.clone()))?;
        let counts = score_record(rec, pred, mode)?;
        let slot = per_locale.entry(rec.locale.clone()).or_default();
        slot.0 += 1;
        slot.1 += counts;
    }
    let locales: Vec<LocaleReport> = per_locale
        .into_iter()
        .map(|(l, (n, c))| LocaleReport::new(l, n, c))
        .collect();
    let scored: Vec<LocaleReport> = locales.iter().filter(|r| r.support > 0).cloned().collect();
    let aggregate = if scored.is_empty() {
        None
    } else {
        Some(aggregate_weighted(&scored)?)
    };
    Ok(EvaluationReport {
        mode,
        locales,
        aggregate,
    })
}

fn score_record(rec: &CorpusRecord, pred: &[EntitySpan], mode: MatchMode) -> Result<EvalCategoryCounts, EvalError> {
    let pipeline_err = |e: crate::model::ModelError| EvalError::Pipeline {
        id: rec.id.clone(),
        source: e.into(),
    };
    let doc = rec.document().map_err(pipeline_err)?;
    let gold = rec.gold_entities(&doc).map_err(pipeline_err)?;
    Ok(match_with(&gold, pred, mode))
}

/// `(b - a) / a`, undefined when `a` is zero.
pub fn relative_delta(a: f64, b: f64) -> Option<f64> {
    if a == 0.0 {
        None
    } else {
        Some((b - a) / a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDelta {
    pub from: PhaseId,
    pub to: PhaseId,
    /// Relative change in percent; `None` when the starting F1 is zero.
    pub percent: Option<Fixed3>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub locale: String,
    #[serde(serialize_with = "fixed_phase_map")]
    pub f1: BTreeMap<PhaseId, f64>,
    pub deltas: Vec<PhaseDelta>,
}

fn fixed_phase_map<S: Serializer>(map: &BTreeMap<PhaseId, f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut m = s.serialize_map(Some(map.len()))?;
    for (k, v) in map {
        m.serialize_entry(k, &Fixed3(*v))?;
    }
    m.end()
}

impl AblationRow {
    pub fn new(locale: impl Into<String>, f1: BTreeMap<PhaseId, f64>) -> Self {
        let phases: Vec<PhaseId> = f1.keys().copied().collect();
        let mut deltas = Vec::new();
        for w in phases.windows(2) {
            deltas.push(delta_between(&f1, w[0], w[1]));
        }
        if phases.len() > 2 {
            deltas.push(delta_between(&f1, phases[0], phases[phases.len() - 1]));
        }
        AblationRow {
            locale: locale.into(),
            f1,
            deltas,
        }
    }

    pub fn delta(&self, from: PhaseId, to: PhaseId) -> Option<f64> {
        self.deltas
            .iter()
            .find(|d| d.from == from && d.to == to)
            .and_then(|d| d.percent)
            .map(|p| p.0)
    }
}

fn delta_between(f1: &BTreeMap<PhaseId, f64>, from: PhaseId, to: PhaseId) -> PhaseDelta {
    PhaseDelta {
        from,
        to,
        percent: relative_delta(f1[&from], f1[&to]).map(|d| Fixed3(d * 100.0)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub mode: MatchMode,
    pub phases: Vec<PhaseId>,
    pub rows: Vec<AblationRow>,
    /// Support-weighted F1 per phase over all locales.
    pub overall: Option<AblationRow>,
    /// Per-phase evaluation behind the rows.
    pub evaluations: BTreeMap<PhaseId, EvaluationReport>,
}

/// Run the pipeline once through `base.run_through` and score every
/// phase snapshot, giving per-locale F1 and relative deltas.
pub fn ablation_report(
    records: &[CorpusRecord],
    reg: &CompiledRegistry,
    adapter: &dyn ChatBackend,
    base: &PipelineConfig,
    mode: MatchMode,
) -> Result<AblationReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let results = run_corpus(records, reg, adapter, base).map_err(|(id, source)| EvalError::Pipeline { id, source })?;
    let phases: Vec<PhaseId> = base.run_through.up_to().collect();
    let mut evaluations = BTreeMap::new();
    for &phase in &phases {
        let preds: BTreeMap<String, Vec<EntitySpan>> = results
            .iter()
            .map(|r| (r.document_id.clone(), r.snapshots[&phase].clone()))
            .collect();
        evaluations.insert(phase, evaluate_predictions(records, &preds, mode)?);
    }
    Ok(ablation_from_evaluations(mode, evaluations))
}

pub fn ablation_from_evaluations(mode: MatchMode, evaluations: BTreeMap<PhaseId, EvaluationReport>) -> AblationReport {
    let phases: Vec<PhaseId> = evaluations.keys().copied().collect();
    let mut per_locale: BTreeMap<LocaleId, BTreeMap<PhaseId, f64>> = BTreeMap::new();
    for (phase, ev) in &evaluations {
        for r in &ev.locales {
            per_locale.entry(r.locale.clone()).or_default().insert(*phase, r.metrics.f1);
        }
    }
    let rows = per_locale
        .into_iter()
        .map(|(l, f1)| AblationRow::new(l.to_string(), f1))
        .collect();
    let overall_f1: Option<BTreeMap<PhaseId, f64>> = evaluations
        .iter()
        .map(|(p, ev)| ev.aggregate.as_ref().map(|a| (*p, a.metrics.f1)))
        .collect();
    AblationReport {
        mode,
        phases,
        rows,
        overall: overall_f1.map(|f1| AblationRow::new("overall", f1)),
        evaluations,
    }
}

fn pct(d: Option<f64>) -> String {
    match d {
        Some(v) => format!("{v:.2}%"),
        None => "n/a".into(),
    }
}

/// Aligned-column table: locale, accuracy, precision, recall, F1, TP, FP,
/// TN, FN.
pub fn render_evaluation_text(report: &EvaluationReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>8} {:>9} {:>6} {:>6} {:>6} {:>6} {:>4} {:>6}",
        "Locale", "Accuracy", "Precision", "Recall", "F1", "TP", "FP", "TN", "FN"
    );
    for r in &report.locales {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:<10} {:>8.3} {:>9.3} {:>6.3} {:>6.3} {:>6} {:>6} {:>4} {:>6}",
            r.locale.as_str(),
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            m.tp,
            m.fp,
            m.tn,
            m.fn_
        );
    }
    if let Some(a) = &report.aggregate {
        let m = &a.metrics;
        let _ = writeln!(
            out,
            "{:<10} {:>8.3} {:>9.3} {:>6.3} {:>6.3}",
            "weighted", m.accuracy, m.precision, m.recall, m.f1
        );
    }
    out
}

/// Aligned-column table: locale, F1 per phase, then the deltas.
pub fn render_ablation_text(report: &AblationReport) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "Locale");
    for p in &report.phases {
        let _ = write!(out, " {:>9}", format!("Phase {}", p.roman()));
    }
    let header_deltas: Vec<String> = report
        .rows
        .first()
        .or(report.overall.as_ref())
        .map(|r| {
            r.deltas
                .iter()
                .map(|d| format!("Δ ({}→{})", d.from.number(), d.to.number()))
                .collect()
        })
        .unwrap_or_default();
    for h in &header_deltas {
        let _ = write!(out, " {h:>10}");
    }
    out.push('\n');
    for row in report.rows.iter().chain(report.overall.as_ref()) {
        let _ = write!(out, "{:<10}", row.locale);
        for p in &report.phases {
            match row.f1.get(p) {
                Some(v) => {
                    let _ = write!(out, " {v:>9.3}");
                }
                None => {
                    let _ = write!(out, " {:>9}", "-");
                }
            }
        }
        for d in &row.deltas {
            let _ = write!(out, " {:>10}", pct(d.percent.map(|p| p.0)));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Document, LabelId, Source};
    use proptest::prelude::*;

    fn doc(len: usize) -> Document {
        Document::new("d", "x".repeat(len), LocaleId::new("sv_SE").unwrap()).unwrap()
    }

    fn spans(d: &Document, raw: &[(usize, usize)]) -> Vec<EntitySpan> {
        raw.iter()
            .map(|(s, e)| EntitySpan::single(d, *s, *e, LabelId::new("NAME"), Source::Gold).unwrap())
            .collect()
    }

    fn counts(c: usize, i: usize, m: usize, s: usize) -> EvalCategoryCounts {
        EvalCategoryCounts {
            correct: c,
            incorrect: i,
            missed: m,
            spurious: s,
        }
    }

    #[test]
    fn matcher_examples() {
        let d = doc(30);
        assert_eq!(match_exact(&[], &[]), counts(0, 0, 0, 0));
        assert_eq!(match_exact(&spans(&d, &[(0, 5)]), &spans(&d, &[(0, 5)])), counts(1, 0, 0, 0));
        assert_eq!(
            match_exact(&spans(&d, &[(0, 5), (10, 14)]), &spans(&d, &[(1, 5), (20, 22)])),
            counts(0, 1, 1, 1)
        );
        // greedy first-overlap pairing would give one incorrect here
        assert_eq!(
            match_exact(&spans(&d, &[(0, 10), (2, 3)]), &spans(&d, &[(1, 5), (8, 9)])),
            counts(0, 2, 0, 0)
        );
    }

    #[test]
    fn strict_mode_requires_the_label() {
        let d = doc(10);
        let gold = spans(&d, &[(0, 4)]);
        let wrong = vec![EntitySpan::single(&d, 0, 4, LabelId::new("AGE"), Source::Regex).unwrap()];
        let multi = vec![EntitySpan::new(&d, 0, 4, vec![LabelId::new("NAME"), LabelId::new("AGE")], Source::Regex).unwrap()];
        assert_eq!(match_with(&gold, &wrong, MatchMode::Span), counts(1, 0, 0, 0));
        assert_eq!(match_with(&gold, &wrong, MatchMode::Strict), counts(0, 1, 0, 0));
        assert_eq!(match_with(&gold, &multi, MatchMode::Strict), counts(0, 1, 0, 0));
        assert_eq!(match_with(&gold, &gold, MatchMode::Strict), counts(1, 0, 0, 0));
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 0.001
    }

    fn from_tp_fp_fn(tp: usize, fp: usize, fn_: usize) -> Metrics {
        compute_metrics(&counts(tp, 0, fn_, fp))
    }

    #[test]
    fn metric_examples() {
        let m = from_tp_fp_fn(364, 102, 216);
        assert!(close(m.precision, 0.781) && close(m.recall, 0.628));
        assert!(close(m.f1, 0.696) && close(m.accuracy, 0.534));
        let m = from_tp_fp_fn(313, 40, 85);
        assert!(close(m.precision, 0.887) && close(m.recall, 0.786));
        assert!(close(m.f1, 0.834) && close(m.accuracy, 0.715));
        assert_eq!(compute_metrics(&EvalCategoryCounts::default()), Metrics::default());
        // an incorrect pair costs both a false positive and a false negative
        let m = compute_metrics(&counts(2, 1, 0, 0));
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
    }

    fn report(tag: &str, tp: usize, fp: usize, fn_: usize) -> LocaleReport {
        LocaleReport::new(LocaleId::new(tag).unwrap(), 1, counts(tp, 0, fn_, fp))
    }

    #[test]
    fn aggregation_examples() {
        assert!(matches!(aggregate_weighted(&[]), Err(EvalError::EmptyInput)));
        let one = report("sv_SE", 5, 2, 3);
        let agg = aggregate_weighted(std::slice::from_ref(&one)).unwrap();
        assert!((agg.metrics.f1 - one.metrics.f1).abs() < 1e-12);
        assert_eq!(agg.weights.values().copied().collect::<Vec<_>>(), vec![1.0]);

        let a = report("sv_SE", 1, 1, 1);
        let b = report("fi_FI", 3, 3, 3);
        let agg = aggregate_weighted(&[a.clone(), b]).unwrap();
        assert!((agg.metrics.f1 - a.metrics.f1).abs() < 1e-12);
        assert!((agg.weights.values().sum::<f64>() - 1.0).abs() < 1e-12);

        // supports 100 and 300 with F1 0.4 and 0.8
        let mut x = report("sv_SE", 40, 60, 60);
        let mut y = report("fi_FI", 240, 60, 60);
        x.support = 100;
        y.support = 300;
        assert!(close(x.metrics.f1, 0.4) && close(y.metrics.f1, 0.8));
        let agg = aggregate_weighted(&[x, y]).unwrap();
        assert!((agg.metrics.f1 - 0.7).abs() < 1e-9);

        let empty = report("pl_PL", 0, 3, 0);
        assert!(matches!(aggregate_weighted(&[empty]), Err(EvalError::ZeroSupport(_))));
    }

    #[test]
    fn delta_examples() {
        assert!((relative_delta(0.396, 0.614).unwrap() * 100.0 - 55.05).abs() < 0.05);
        assert!((relative_delta(0.511, 0.585).unwrap() * 100.0 - 14.48).abs() < 0.05);
        assert_eq!(relative_delta(0.5, 0.5), Some(0.0));
        assert_eq!(relative_delta(0.0, 0.5), None);

        let row = AblationRow::new(
            "sv_SE",
            [(PhaseId::Phase1Baseline, 0.396), (PhaseId::Phase2MultiLabel, 0.614), (PhaseId::Phase3Consolidation, 0.703)]
                .into_iter()
                .collect(),
        );
        assert_eq!(row.deltas.len(), 3);
        assert!((row.delta(PhaseId::Phase1Baseline, PhaseId::Phase3Consolidation).unwrap() - 77.53).abs() < 0.05);
        let single = AblationRow::new("x", [(PhaseId::Phase1Baseline, 0.4)].into_iter().collect());
        assert!(single.deltas.is_empty());
    }

    #[test]
    fn json_floats_have_three_decimals() {
        let m = from_tp_fp_fn(364, 102, 216);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(
            json,
            r#"{"accuracy":0.534,"precision":0.781,"recall":0.628,"f1":0.696,"tp":364,"fp":102,"tn":0,"fn":216}"#
        );
        assert_eq!(serde_json::to_string(&Fixed3(1.0)).unwrap(), "1.000");
    }

    #[test]
    fn text_tables_line_up() {
        let ev = EvaluationReport {
            mode: MatchMode::Span,
            locales: vec![report("sv_SE", 5, 2, 3), report("fi_FI", 1, 0, 0)],
            aggregate: None,
        };
        let text = render_evaluation_text(&ev);
        let widths: Vec<usize> = text.lines().map(|l| l.chars().count()).collect();
        assert!(widths.windows(2).all(|w| w[0] == w[1]), "{text}");
        assert!(text.starts_with("Locale"));
    }

    /// Best (correct, incorrect) over every one-to-one partial pairing,
    /// memoised on the set of golds already taken.
    fn brute_force(gold: &[EntitySpan], pred: &[EntitySpan], mode: MatchMode) -> EvalCategoryCounts {
        fn go(
            i: usize,
            used: u32,
            gold: &[EntitySpan],
            pred: &[EntitySpan],
            mode: MatchMode,
            memo: &mut BTreeMap<(usize, u32), (usize, usize)>,
        ) -> (usize, usize) {
            if i == pred.len() {
                return (0, 0);
            }
            if let Some(v) = memo.get(&(i, used)) {
                return *v;
            }
            let mut best = go(i + 1, used, gold, pred, mode, memo);
            for (g, gs) in gold.iter().enumerate() {
                if used & (1 << g) != 0 || !overlaps(gs, &pred[i]) {
                    continue;
                }
                let (c, n) = go(i + 1, used | (1 << g), gold, pred, mode, memo);
                let cand = if exact_agrees(gs, &pred[i], mode) { (c + 1, n) } else { (c, n + 1) };
                best = best.max(cand);
            }
            memo.insert((i, used), best);
            best
        }
        let (c, n) = go(0, 0, gold, pred, mode, &mut BTreeMap::new());
        counts(c, n, gold.len() - c - n, pred.len() - c - n)
    }

    const L: [&str; 2] = ["NAME", "AGE"];

    fn arb_spans(max: usize) -> impl Strategy<Value = Vec<(usize, usize, usize)>> {
        proptest::collection::vec((0usize..49, 1usize..10, 0usize..2), 0..=max)
            .prop_map(|v| v.into_iter().map(|(s, l, k)| (s, (s + l).min(50), k)).collect())
    }

    fn labelled(d: &Document, raw: &[(usize, usize, usize)], dedup: bool) -> Vec<EntitySpan> {
        let mut seen = std::collections::BTreeSet::new();
        raw.iter()
            .filter(|(s, e, _)| !dedup || seen.insert((*s, *e)))
            .map(|(s, e, k)| EntitySpan::single(d, *s, *e, LabelId::new(L[*k]), Source::Gold).unwrap())
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(3_000))]

        #[test]
        fn matcher_equals_brute_force(g in arb_spans(8), p in arb_spans(8), strict in any::<bool>()) {
            let d = doc(50);
            let gold = labelled(&d, &g, true);
            let pred = labelled(&d, &p, false);
            let mode = if strict { MatchMode::Strict } else { MatchMode::Span };
            let got = match_with(&gold, &pred, mode);
            prop_assert_eq!(got, brute_force(&gold, &pred, mode));
            prop_assert_eq!(got.actual(), pred.len());
            prop_assert_eq!(got.possible(), gold.len());
        }

        #[test]
        fn metrics_stay_in_bounds(c in 0usize..500, i in 0usize..500, m in 0usize..500, s in 0usize..500) {
            let x = compute_metrics(&counts(c, i, m, s));
            for v in [x.accuracy, x.precision, x.recall, x.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let lo = x.precision.min(x.recall);
            let hi = x.precision.max(x.recall);
            prop_assert!(x.f1 >= lo - 1e-12 && x.f1 <= hi + 1e-12);
            prop_assert!(x.accuracy <= x.f1 + 1e-12);
        }
    }
}
