//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always visible.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use piiscan_core::corpus::{ambiguity_fixture, corpus_to_string, generate, GeneratorData};
use piiscan_core::eval::{
    ablation_report, compute_metrics, evaluate_predictions, match_with, AblationRow, EvalCategoryCounts, MatchMode,
};
use piiscan_core::llm::{
    parse_extraction, parse_label_choice, parse_verification, ChatBackend, ChatRequest, ChatResponse, LabelChoice,
    LlmError, MockAdapter, RecordingAdapter, Verdict,
};
use piiscan_core::model::{contains, overlaps};
use piiscan_core::pipeline::{resolve_multilabel, resolve_overlaps, run_corpus, Diagnostics, PipelineConfig};
use piiscan_core::registry::{builtin, UNSTRUCTURED_LABELS};
use piiscan_core::{
    match_structured, Document, EntitySpan, LabelId, LabelPriorityTable, LocaleId, PhaseId, Source,
};

/// Metric tolerance against the reference rows (three-decimal rounding).
const METRIC_TOL: f64 = 0.001;
/// Delta tolerance in percentage points.
const DELTA_TOL_PP: f64 = 0.05;
/// Float slack for comparisons sitting exactly on a tolerance edge.
const EPS: f64 = 1e-9;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

/// Reference rows whose printed counts and printed ratios disagree with
/// each other under every reading of the formulas. They are checked like
/// every other row and reported red; the suite still fails if any other
/// row goes red or one of these starts passing.
const KNOWN_IRREPRODUCIBLE: [&str; 8] = [
    "hi_IN/Zero-shot LLM",
    "ar_AE/RECAP",
    "pt_BR/RECAP",
    "pl_PL/RECAP",
    "ar_AE/Phase III",
    "pt_BR/Phase II",
    "pt_BR/Phase III",
    "pl_PL/Phase III",
];

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "metric reproduction",
            limit: Duration::from_secs(1),
            run: metric_reproduction,
        },
        Criterion {
            id: 2,
            name: "delta reproduction",
            limit: Duration::from_secs(1),
            run: delta_reproduction,
        },
        Criterion {
            id: 3,
            name: "matcher oracle equivalence",
            limit: Duration::from_secs(30),
            run: matcher_oracle,
        },
        Criterion {
            id: 4,
            name: "oracle ceiling",
            limit: Duration::from_secs(60),
            run: oracle_ceiling,
        },
        Criterion {
            id: 5,
            name: "phase monotonicity",
            limit: Duration::from_secs(30),
            run: phase_monotonicity,
        },
        Criterion {
            id: 6,
            name: "consolidation invariants",
            limit: Duration::from_secs(60),
            run: consolidation_invariants,
        },
        Criterion {
            id: 7,
            name: "generator/detector consistency",
            limit: Duration::from_secs(30),
            run: generator_consistency,
        },
        Criterion {
            id: 8,
            name: "parser totality fuzz",
            limit: Duration::from_secs(60),
            run: parser_totality,
        },
        Criterion {
            id: 9,
            name: "determinism",
            limit: Duration::from_secs(120),
            run: determinism,
        },
    ];

    let mut unexpected = 0;
    for c in &criteria {
        let t = Instant::now();
        let outcome = catch_unwind(c.run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let elapsed = t.elapsed();
        let in_time = elapsed <= c.limit;
        let pass = outcome.pass && in_time;
        let timing = if in_time {
            format!("{elapsed:.2?}")
        } else {
            format!("{elapsed:.2?} over the {:?} limit", c.limit)
        };
        println!(
            "criterion {} {:<32} {}  {} [{timing}]",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            outcome.detail
        );
        let expected_red = c.id == 1 && in_time && outcome.detail.starts_with("known-red only");
        if !pass && !expected_red {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        eprintln!("{unexpected} criterion/criteria failed unexpectedly");
        std::process::exit(1);
    }
}

// criterion 1

struct Row {
    locale: &'static str,
    approach: &'static str,
    tp: usize,
    fp: usize,
    fn_: usize,
    /// accuracy, precision, recall, f1
    printed: [f64; 4],
}

const fn row(locale: &'static str, approach: &'static str, tp: usize, fp: usize, fn_: usize, printed: [f64; 4]) -> Row {
    Row {
        locale,
        approach,
        tp,
        fp,
        fn_,
        printed,
    }
}

/// Every reference row with TN = 0, per locale and approach, then per
/// locale and phase.
const REFERENCE_ROWS: [Row; 51] = [
    row("hi_IN", "Zero-shot LLM", 310, 77, 22, [0.472, 0.801, 0.534, 0.641]),
    row("hi_IN", "RECAP", 364, 102, 216, [0.534, 0.781, 0.628, 0.696]),
    row("fi_FI", "Zero-shot LLM", 534, 109, 458, [0.485, 0.830, 0.538, 0.653]),
    row("fi_FI", "RECAP", 710, 244, 282, [0.574, 0.744, 0.716, 0.730]),
    row("ar_AE", "Zero-shot LLM", 886, 443, 1120, [0.362, 0.667, 0.442, 0.531]),
    row("ar_AE", "RECAP", 1078, 736, 928, [0.396, 0.610, 0.537, 0.567]),
    row("sv_SE", "Zero-shot LLM", 641, 249, 974, [0.344, 0.720, 0.397, 0.512]),
    row("sv_SE", "RECAP", 1118, 447, 497, [0.542, 0.714, 0.692, 0.703]),
    row("vi_VN", "Zero-shot LLM", 796, 264, 1454, [0.317, 0.751, 0.354, 0.481]),
    row("vi_VN", "RECAP", 1020, 302, 1230, [0.400, 0.772, 0.453, 0.571]),
    row("zh_CN", "Zero-shot LLM", 625, 146, 514, [0.486, 0.811, 0.549, 0.654]),
    row("zh_CN", "RECAP", 808, 431, 331, [0.515, 0.652, 0.709, 0.680]),
    row("zh_SG", "Zero-shot LLM", 279, 70, 184, [0.523, 0.799, 0.603, 0.687]),
    row("zh_SG", "RECAP", 353, 116, 110, [0.610, 0.753, 0.762, 0.758]),
    row("nl_NL", "Zero-shot LLM", 473, 66, 849, [0.341, 0.878, 0.358, 0.508]),
    row("nl_BE", "Zero-shot LLM", 194, 37, 204, [0.446, 0.840, 0.487, 0.617]),
    row("nl_BE", "RECAP", 313, 40, 85, [0.715, 0.887, 0.786, 0.834]),
    row("no_NO", "Zero-shot LLM", 517, 75, 604, [0.433, 0.873, 0.462, 0.604]),
    row("no_NO", "RECAP", 638, 175, 481, [0.493, 0.785, 0.570, 0.660]),
    row("pt_BR", "Zero-shot LLM", 186, 24, 336, [0.341, 0.886, 0.356, 0.508]),
    row("pt_BR", "RECAP", 290, 76, 224, [0.492, 0.792, 0.560, 0.659]),
    row("pt_PT", "Zero-shot LLM", 158, 22, 482, [0.239, 0.878, 0.247, 0.385]),
    row("pt_PT", "RECAP", 354, 160, 284, [0.444, 0.689, 0.555, 0.615]),
    row("pl_PL", "Zero-shot LLM", 128, 44, 226, [0.322, 0.744, 0.362, 0.487]),
    row("pl_PL", "RECAP", 398, 244, 242, [0.425, 0.614, 0.579, 0.602]),
    row("sv_SE", "Phase I", 584, 749, 1031, [0.247, 0.438, 0.362, 0.396]),
    row("sv_SE", "Phase II", 1049, 753, 566, [0.443, 0.582, 0.650, 0.614]),
    row("sv_SE", "Phase III", 1118, 447, 497, [0.542, 0.714, 0.692, 0.703]),
    row("vi_VN", "Phase II", 1059, 622, 1191, [0.369, 0.630, 0.471, 0.539]),
    row("vi_VN", "Phase III", 1020, 302, 1230, [0.400, 0.772, 0.453, 0.571]),
    row("zh_CN", "Phase II", 788, 566, 351, [0.462, 0.582, 0.692, 0.632]),
    row("zh_CN", "Phase III", 808, 431, 331, [0.515, 0.652, 0.709, 0.680]),
    row("zh_SG", "Phase II", 353, 135, 110, [0.590, 0.723, 0.762, 0.742]),
    row("zh_SG", "Phase III", 353, 116, 110, [0.610, 0.753, 0.762, 0.758]),
    row("nl_BE", "Phase I", 308, 31, 90, [0.718, 0.909, 0.774, 0.836]),
    row("nl_BE", "Phase II", 284, 42, 114, [0.645, 0.871, 0.714, 0.785]),
    row("nl_BE", "Phase III", 313, 40, 85, [0.715, 0.887, 0.786, 0.834]),
    row("no_NO", "Phase II", 647, 182, 472, [0.497, 0.780, 0.578, 0.664]),
    row("no_NO", "Phase III", 638, 175, 481, [0.493, 0.785, 0.570, 0.660]),
    row("hi_IN", "Phase II", 356, 479, 224, [0.336, 0.426, 0.614, 0.503]),
    row("hi_IN", "Phase III", 364, 102, 216, [0.534, 0.781, 0.628, 0.696]),
    row("fi_FI", "Phase II", 692, 652, 300, [0.421, 0.515, 0.698, 0.592]),
    row("fi_FI", "Phase III", 710, 244, 282, [0.574, 0.744, 0.716, 0.730]),
    row("ar_AE", "Phase II", 1048, 1323, 958, [0.315, 0.442, 0.522, 0.479]),
    row("ar_AE", "Phase III", 1078, 736, 928, [0.396, 0.610, 0.537, 0.567]),
    row("pt_BR", "Phase II", 294, 214, 214, [0.377, 0.519, 0.579, 0.547]),
    row("pt_BR", "Phase III", 290, 76, 224, [0.492, 0.792, 0.560, 0.659]),
    row("pt_PT", "Phase II", 352, 216, 268, [0.421, 0.620, 0.568, 0.593]),
    row("pt_PT", "Phase III", 354, 160, 284, [0.444, 0.689, 0.555, 0.615]),
    row("pl_PL", "Phase II", 364, 278, 242, [0.412, 0.567, 0.601, 0.583]),
    row("pl_PL", "Phase III", 398, 244, 242, [0.425, 0.614, 0.579, 0.602]),
];

fn metric_reproduction() -> Outcome {
    let mut red = Vec::new();
    for r in &REFERENCE_ROWS {
        let m = compute_metrics(&EvalCategoryCounts {
            correct: r.tp,
            incorrect: 0,
            missed: r.fn_,
            spurious: r.fp,
        });
        let got = [m.accuracy, m.precision, m.recall, m.f1];
        if got.iter().zip(r.printed).any(|(g, p)| (g - p).abs() > METRIC_TOL + EPS) {
            red.push(format!("{}/{}", r.locale, r.approach));
        }
    }
    let n = REFERENCE_ROWS.len();
    if red.is_empty() {
        return Outcome::new(true, format!("{n}/{n} rows within ±{METRIC_TOL}"));
    }
    let known: BTreeSet<&str> = KNOWN_IRREPRODUCIBLE.into_iter().collect();
    let got: BTreeSet<&str> = red.iter().map(String::as_str).collect();
    let prefix = if got == known { "known-red only" } else { "unexpected rows" };
    Outcome::new(
        false,
        format!(
            "{prefix}: {}/{n} rows within ±{METRIC_TOL}; out of tolerance: {}",
            n - red.len(),
            red.join(", ")
        ),
    )
}

// criterion 2

/// Locale, F1 for phases I, II, III, then the printed deltas 1→2, 2→3,
/// 1→3 in percent.
const REFERENCE_F1: [(&str, [f64; 3], [f64; 3]); 13] = [
    ("sv_SE", [0.396, 0.614, 0.703], [55.05, 14.50, 77.53]),
    ("vi_VN", [0.468, 0.539, 0.571], [15.17, 5.94, 22.01]),
    ("zh_CN", [0.594, 0.632, 0.680], [6.40, 7.60, 14.48]),
    ("zh_SG", [0.590, 0.742, 0.758], [25.76, 2.16, 28.48]),
    ("nl_NL", [0.582, 0.597, 0.625], [2.58, 4.69, 7.39]),
    ("nl_BE", [0.836, 0.785, 0.834], [-6.10, 6.24, -0.24]),
    ("no_NO", [0.583, 0.664, 0.660], [13.89, -0.60, 13.21]),
    ("hi_IN", [0.486, 0.503, 0.696], [3.50, 38.37, 43.21]),
    ("fi_FI", [0.573, 0.592, 0.730], [3.32, 23.31, 27.40]),
    ("ar_AE", [0.463, 0.479, 0.567], [3.46, 18.37, 22.46]),
    ("pt_BR", [0.446, 0.547, 0.659], [22.65, 20.48, 47.76]),
    ("pt_PT", [0.511, 0.593, 0.615], [16.05, 3.71, 20.35]),
    ("pl_PL", [0.428, 0.583, 0.602], [36.22, 3.26, 40.65]),
];

/// The all-locale progression with its two printed step deltas.
const REFERENCE_OVERALL: ([f64; 3], [f64; 2]) = ([0.511, 0.585, 0.657], [14.48, 12.30]);

fn phase_row(locale: &str, f1: [f64; 3]) -> AblationRow {
    AblationRow::new(locale, PhaseId::ALL.into_iter().zip(f1).collect())
}

fn delta_reproduction() -> Outcome {
    use PhaseId::*;
    let pairs = [(Phase1Baseline, Phase2MultiLabel), (Phase2MultiLabel, Phase3Consolidation), (Phase1Baseline, Phase3Consolidation)];
    let mut worst: f64 = 0.0;
    let mut red = Vec::new();
    let mut checked = 0;
    for (locale, f1, printed) in REFERENCE_F1 {
        let row = phase_row(locale, f1);
        for ((from, to), want) in pairs.into_iter().zip(printed) {
            let got = row.delta(from, to).expect("nonzero F1");
            let err = (got - want).abs();
            worst = worst.max(err);
            checked += 1;
            if err > DELTA_TOL_PP + EPS {
                red.push(format!("{locale} {}→{}: {got:.2}% vs {want:.2}%", from.number(), to.number()));
            }
        }
    }
    let overall = phase_row("overall", REFERENCE_OVERALL.0);
    for ((from, to), want) in pairs[..2].iter().zip(REFERENCE_OVERALL.1) {
        let got = overall.delta(*from, *to).expect("nonzero F1");
        let err = (got - want).abs();
        worst = worst.max(err);
        checked += 1;
        if err > DELTA_TOL_PP + EPS {
            red.push(format!("overall {}→{}: {got:.2}% vs {want:.2}%", from.number(), to.number()));
        }
    }
    Outcome::new(
        red.is_empty(),
        format!(
            "{}/{checked} deltas within ±{DELTA_TOL_PP} pp (worst {worst:.3} pp){}",
            checked - red.len(),
            if red.is_empty() { String::new() } else { format!("; {}", red.join(", ")) }
        ),
    )
}

// criterion 3

/// Best (correct, incorrect) over every one-to-one partial pairing of
/// predictions to overlapping golds, memoised on the golds taken.
fn brute_force(gold: &[EntitySpan], pred: &[EntitySpan]) -> EvalCategoryCounts {
    fn go(
        i: usize,
        used: u32,
        gold: &[EntitySpan],
        pred: &[EntitySpan],
        memo: &mut BTreeMap<(usize, u32), (usize, usize)>,
    ) -> (usize, usize) {
        if i == pred.len() {
            return (0, 0);
        }
        if let Some(v) = memo.get(&(i, used)) {
            return *v;
        }
        let mut best = go(i + 1, used, gold, pred, memo);
        for (g, gs) in gold.iter().enumerate() {
            if used & (1 << g) != 0 || !overlaps(gs, &pred[i]) {
                continue;
            }
            let (c, n) = go(i + 1, used | (1 << g), gold, pred, memo);
            let cand = if gs.same_span(&pred[i]) { (c + 1, n) } else { (c, n + 1) };
            best = best.max(cand);
        }
        memo.insert((i, used), best);
        best
    }
    let (c, n) = go(0, 0, gold, pred, &mut BTreeMap::new());
    EvalCategoryCounts {
        correct: c,
        incorrect: n,
        missed: gold.len() - c - n,
        spurious: pred.len() - c - n,
    }
}

fn random_spans(rng: &mut ChaCha8Rng, doc: &Document, max: usize, unique: bool) -> Vec<EntitySpan> {
    let n = rng.random_range(0..=max);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < n {
        let s = rng.random_range(0..doc.char_len() - 1);
        let e = rng.random_range(s + 1..=(s + 12).min(doc.char_len()));
        if unique && !seen.insert((s, e)) {
            continue;
        }
        out.push(EntitySpan::single(doc, s, e, LabelId::new("NAME"), Source::Regex).unwrap());
    }
    out
}

fn matcher_oracle() -> Outcome {
    const CASES: usize = 5_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let doc = Document::new("m", "x".repeat(50), LocaleId::new("sv_SE").unwrap()).unwrap();
    for case in 0..CASES {
        let gold = random_spans(&mut rng, &doc, 8, true);
        let pred = random_spans(&mut rng, &doc, 8, false);
        let got = match_with(&gold, &pred, MatchMode::Span);
        let want = brute_force(&gold, &pred);
        if got != want {
            return Outcome::new(false, format!("case {case}: matcher {got:?} vs oracle {want:?}"));
        }
    }
    Outcome::new(true, format!("{CASES} random instances agree with exhaustive pairing"))
}

// criterion 4

fn oracle_ceiling() -> Outcome {
    let reg = builtin();
    let records = generate(&GeneratorData::builtin(), reg, &[], 2024, 260).expect("generation");
    let locales: BTreeSet<&LocaleId> = records.iter().map(|r| &r.locale).collect();
    let labels: BTreeSet<&LabelId> = records.iter().flat_map(|r| r.gold.iter().map(|g| &g.label)).collect();
    let unstructured = labels.iter().filter(|l| UNSTRUCTURED_LABELS.contains(&l.as_str())).count();
    let structured = labels.len() - unstructured;
    let unique = records.iter().all(|r| {
        let chars: Vec<char> = r.text.chars().collect();
        r.gold.iter().all(|g| {
            let surface: String = chars[g.start..g.end].iter().collect();
            r.text.matches(surface.as_str()).count() == 1
        })
    });
    let oracle = MockAdapter::oracle(&records);
    let results = run_corpus(&records, reg, &oracle, &PipelineConfig::default()).expect("pipeline");
    let preds: BTreeMap<String, Vec<EntitySpan>> = results.into_iter().map(|r| (r.document_id, r.entities)).collect();
    let report = evaluate_predictions(&records, &preds, MatchMode::Span).expect("evaluation");
    let agg = report.aggregate.expect("gold present");
    let exact = agg.counts.correct == agg.support && agg.counts.actual() == agg.support;
    let pass = records.len() >= 200 && locales.len() == 13 && structured >= 10 && unstructured == 4 && unique && exact;
    Outcome::new(
        pass,
        format!(
            "{} docs, {} locales, {structured} structured + {unstructured} unstructured labels, unique surfaces {unique}; F1 {:.6} (tp {} / gold {} / predicted {})",
            records.len(),
            locales.len(),
            agg.metrics.f1,
            agg.counts.correct,
            agg.support,
            agg.counts.actual()
        ),
    )
}

// criterion 5

fn phase_monotonicity() -> Outcome {
    let reg = builtin();
    let records = ambiguity_fixture(reg).expect("fixture");
    let oracle = MockAdapter::oracle(&records);
    let report = ablation_report(&records, reg, &oracle, &PipelineConfig::default(), MatchMode::Strict).expect("ablation");
    let overall = report.overall.expect("gold present");
    let f = |p| overall.f1[&p];
    let (a, b, c) = (f(PhaseId::Phase1Baseline), f(PhaseId::Phase2MultiLabel), f(PhaseId::Phase3Consolidation));
    Outcome::new(
        a < b && b < c,
        format!("label-strict F1 on {} docs: I {a:.3} < II {b:.3} < III {c:.3}", records.len()),
    )
}

// criterion 6

const LABELS: [&str; 6] = ["ADDRESS", "NAME", "AGE", "CVV", "PHONE_SE", "IBAN"];

fn random_table(rng: &mut ChaCha8Rng) -> LabelPriorityTable {
    LabelPriorityTable::new(LABELS.iter().map(|l| (LabelId::new(*l), rng.random_range(0..5))).collect())
}

/// Answers disambiguation with a candidate, garbage or an error.
struct Erratic;

impl ChatBackend for Erratic {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let (s, e) = req.context.target.unwrap_or((0, 0));
        match (s * 31 + e) % 4 {
            0 => Ok(ChatResponse::text("NAME")),
            1 => Ok(ChatResponse::text("It could be either")),
            2 => Err(LlmError::TransportError("flaky".into())),
            _ => Ok(ChatResponse::text(LABELS[(s + e) % LABELS.len()])),
        }
    }
}

fn consolidation_invariants() -> Outcome {
    const CASES: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let doc = Document::new("c", "y".repeat(30), LocaleId::new("sv_SE").unwrap()).unwrap();
    let cfg = PipelineConfig::default();
    for case in 0..CASES {
        let prios = random_table(&mut rng);
        let n = rng.random_range(0..14);
        let mut seen = BTreeSet::new();
        let mut multi = Vec::new();
        for _ in 0..n {
            let s = rng.random_range(0..29);
            let e = rng.random_range(s + 1..=(s + 10).min(30));
            if !seen.insert((s, e)) {
                continue;
            }
            let k = rng.random_range(1..=3);
            let mut labels: Vec<LabelId> = Vec::new();
            while labels.len() < k {
                let l = LabelId::new(LABELS[rng.random_range(0..LABELS.len())]);
                if !labels.contains(&l) {
                    labels.push(l);
                }
            }
            prios.rank(&mut labels);
            multi.push(EntitySpan::new(&doc, s, e, labels, Source::Regex).unwrap());
        }

        let mut diag = Diagnostics::default();
        let single = resolve_multilabel(&doc, multi, &Erratic, &prios, &cfg, &mut diag).expect("fail-open");
        if single.iter().any(|e| e.labels().len() != 1) {
            return Outcome::new(false, format!("case {case}: multi-label entity after label resolution"));
        }
        let out = resolve_overlaps(&single, &prios).expect("single-label input");
        let dominated = out.iter().any(|e| {
            out.iter()
                .any(|k| contains(k, e) && prios.priority(k.label()) >= prios.priority(e.label()))
        });
        if dominated {
            return Outcome::new(false, format!("case {case}: a contained entity survived its container"));
        }
        if resolve_overlaps(&out, &prios).expect("single-label input") != out {
            return Outcome::new(false, format!("case {case}: resolve_overlaps is not idempotent"));
        }
    }
    Outcome::new(
        true,
        format!("{CASES} random cases: single-label, containment-free, idempotent"),
    )
}

// criterion 7

fn generator_consistency() -> Outcome {
    let reg = builtin();
    let records = generate(&GeneratorData::builtin(), reg, &[], 77, 1_000).expect("generation");
    let mut structured = 0;
    let mut recovered = 0;
    let mut first_miss = None;
    for r in &records {
        let doc = r.document().unwrap();
        let hits = match_structured(&doc, reg).expect("supported locale");
        for g in r.gold.iter().filter(|g| !UNSTRUCTURED_LABELS.contains(&g.label.as_str())) {
            structured += 1;
            let found = hits
                .iter()
                .any(|h| (h.start(), h.end()) == (g.start, g.end) && h.labels().contains(&g.label));
            if found {
                recovered += 1;
            } else if first_miss.is_none() {
                first_miss = Some(format!("{} {} [{},{})", r.id, g.label, g.start, g.end));
            }
        }
    }
    let recall = recovered as f64 / structured.max(1) as f64;
    Outcome::new(
        records.len() == 1_000 && structured > 0 && recovered == structured,
        format!(
            "{} records, structured recall {recall:.4} ({recovered}/{structured}){}",
            records.len(),
            first_miss.map(|m| format!("; first miss {m}")).unwrap_or_default()
        ),
    )
}

// criterion 8

fn random_bytes(rng: &mut ChaCha8Rng) -> Vec<u8> {
    const STRUCTURAL: &[u8] = b"[]{}\",:\\ \n`yesnoNAMEAGECVV0123456789jsonYesNO\xe4\xbd\xa0\xff";
    let len = rng.random_range(0..200);
    let biased = rng.random_bool(0.5);
    (0..len)
        .map(|_| {
            if biased {
                STRUCTURAL[rng.random_range(0..STRUCTURAL.len())]
            } else {
                rng.random()
            }
        })
        .collect()
}

fn parser_totality() -> Outcome {
    const INPUTS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let candidates = [LabelId::new("AGE"), LabelId::new("CVV"), LabelId::new("NAME")];
    let mut values = 0;
    let mut diagnostics = 0;
    let mut aborts = 0;
    for _ in 0..INPUTS {
        let bytes = random_bytes(&mut rng);
        let resp = ChatResponse::text(String::from_utf8_lossy(&bytes).into_owned());
        let r = catch_unwind(AssertUnwindSafe(|| {
            let e = parse_extraction(&resp).is_ok();
            let c = matches!(parse_label_choice(&resp, &candidates), LabelChoice::Chosen(_));
            let v = !matches!(parse_verification(&resp), Verdict::NoValidChoice);
            [e, c, v]
        }));
        match r {
            Ok(flags) => {
                for ok in flags {
                    if ok {
                        values += 1;
                    } else {
                        diagnostics += 1;
                    }
                }
            }
            Err(_) => aborts += 1,
        }
    }
    Outcome::new(
        aborts == 0 && values + diagnostics == 3 * INPUTS,
        format!("{INPUTS} inputs x 3 parsers: {values} values, {diagnostics} diagnostics, {aborts} aborts"),
    )
}

// criterion 9

fn determinism() -> Outcome {
    let reg = builtin();
    let mut records = ambiguity_fixture(reg).expect("fixture");
    records.extend(generate(&GeneratorData::builtin(), reg, &[], 99, 39).expect("generation"));
    let dir = tempfile::tempdir().unwrap();

    // record a complete fixture from the oracle, then replay it through the CLI
    let recorder = RecordingAdapter::new(MockAdapter::oracle(&records));
    run_corpus(&records, reg, &recorder, &PipelineConfig::default()).expect("pipeline");
    let fixture = dir.path().join("fixture.json");
    std::fs::write(&fixture, serde_json::to_string(&recorder.recorded()).unwrap()).unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, corpus_to_string(&records)).unwrap();

    let adapter = format!("fixture:{}", fixture.display());
    let once = || {
        Command::new(env!("CARGO_BIN_EXE_piiscan"))
            .args(["detect", "--in", corpus.to_str().unwrap(), "--adapter", &adapter, "--jobs", "8", "--fail-closed"])
            .output()
            .unwrap()
    };
    let a = once();
    let b = once();
    let ok = a.status.success() && b.status.success();
    let lines = a.stdout.iter().filter(|&&c| c == b'\n').count();
    let same = a.stdout == b.stdout;
    Outcome::new(
        ok && same && lines == records.len(),
        format!(
            "two runs over {} docs with --jobs 8: exit ok {ok}, {lines} lines, byte-identical {same}{}",
            records.len(),
            if ok { String::new() } else { format!("; stderr {}", String::from_utf8_lossy(&a.stderr).trim()) }
        ),
    )
}
