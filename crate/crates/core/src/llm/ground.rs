use std::collections::BTreeSet;

use crate::model::{sort_canonical, Document, EntitySpan, LabelId, Source};

/// Spans recovered from model-returned strings, plus the strings that
/// could not be found.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grounding {
    pub spans: Vec<EntitySpan>,
    pub misses: usize,
    pub empty: usize,
}

/// Locate every non-overlapping occurrence of each extracted string.
///
/// Exact search first; a string with no exact occurrence falls back to a
/// per-code-point case-insensitive scan.
pub fn ground_spans(doc: &Document, extracted: &[String], label: &LabelId) -> Grounding {
    let hay: Vec<char> = doc.text().chars().collect();
    let mut seen = BTreeSet::new();
    let mut out = Grounding::default();
    for raw in extracted {
        let needle: Vec<char> = raw.trim().chars().collect();
        if needle.is_empty() {
            out.empty += 1;
            continue;
        }
        let mut hits = find_all(&hay, &needle, |a, b| a == b);
        if hits.is_empty() {
            hits = find_all(&hay, &needle, chars_eq_ignore_case);
        }
        if hits.is_empty() {
            out.misses += 1;
            continue;
        }
        for start in hits {
            let end = start + needle.len();
            if seen.insert((start, end)) {
                let span = EntitySpan::single(doc, start, end, label.clone(), Source::Llm)
                    .expect("hit lies inside the document");
                out.spans.push(span);
            }
        }
    }
    sort_canonical(&mut out.spans);
    out
}

fn chars_eq_ignore_case(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

fn find_all(hay: &[char], needle: &[char], eq: impl Fn(char, char) -> bool) -> Vec<usize> {
    let mut hits = Vec::new();
    let mut i = 0;
    while i + needle.len() <= hay.len() {
        if hay[i..i + needle.len()]
            .iter()
            .zip(needle)
            .all(|(&h, &n)| eq(h, n))
        {
            hits.push(i);
            i += needle.len();
        } else {
            i += 1;
        }
    }
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LocaleId;

    fn doc(text: &str) -> Document {
        Document::new("d", text, LocaleId::new("vi_VN").unwrap()).unwrap()
    }

    // naive oracle: try every char offset
    fn naive(text: &str, needle: &str) -> Vec<usize> {
        let t: Vec<char> = text.chars().collect();
        let n: Vec<char> = needle.chars().collect();
        let mut out = Vec::new();
        let mut next_free = 0;
        for i in 0..t.len() {
            if i >= next_free && i + n.len() <= t.len() && t[i..i + n.len()] == n[..] {
                out.push(i);
                next_free = i + n.len();
            }
        }
        out
    }

    #[test]
    fn every_occurrence_is_annotated() {
        let d = doc("Call An. An lives here.");
        let g = ground_spans(&d, &["An".into()], &"NAME".into());
        let starts: Vec<usize> = g.spans.iter().map(|s| s.start()).collect();
        assert_eq!(starts, naive(d.text(), "An"));
        assert_eq!(starts, vec![5, 9]);
        assert!(g.spans.iter().all(|s| s.surface() == "An" && s.source() == Source::Llm));
    }

    #[test]
    fn absent_and_empty_strings() {
        let d = doc("Call An.");
        let g = ground_spans(&d, &["Zzz".into()], &"NAME".into());
        assert!(g.spans.is_empty());
        assert_eq!(g.misses, 1);
        let g = ground_spans(&d, &["".into(), "   ".into()], &"NAME".into());
        assert!(g.spans.is_empty());
        assert_eq!((g.misses, g.empty), (0, 2));
    }

    #[test]
    fn case_insensitive_fallback_only_when_exact_fails() {
        let d = doc("nguyễn văn an và NGUYỄN VĂN AN");
        let g = ground_spans(&d, &["Nguyễn Văn An".into()], &"NAME".into());
        assert_eq!(g.spans.len(), 2);
        let g = ground_spans(&d, &["nguyễn văn an".into()], &"NAME".into());
        assert_eq!(g.spans.len(), 1);
        assert_eq!(g.spans[0].start(), 0);
    }

    #[test]
    fn duplicates_and_trimming() {
        let d = doc("Hà Nội, Hà Nội");
        let g = ground_spans(&d, &["Hà Nội".into(), " Hà Nội ".into()], &"ADDRESS".into());
        assert_eq!(g.spans.len(), 2);
        assert_eq!(g.spans[1].start(), 8);
    }

    #[test]
    fn overlapping_occurrences_are_not_double_counted() {
        let d = doc("aaaa");
        let g = ground_spans(&d, &["aa".into()], &"PASSWORD".into());
        let starts: Vec<usize> = g.spans.iter().map(|s| s.start()).collect();
        assert_eq!(starts, naive("aaaa", "aa"));
    }
}
