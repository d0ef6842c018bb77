use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::Deserialize;

use piiscan_core::corpus::{read_corpus, CorpusRecord};
use piiscan_core::registry::CompiledRegistry;
use piiscan_core::{EntitySpan, LabelId, Source as SpanSource};

use crate::Source;

/// An error with the process exit code it maps to.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: 1, error: e.into() }
    }

    pub fn processing(e: impl Into<anyhow::Error>) -> Self {
        Failure { code: 2, error: e.into() }
    }
}

pub struct Input {
    pub records: Vec<CorpusRecord>,
    pub from_stdin: bool,
}

pub fn read_corpus_file(path: &Path, reg: &CompiledRegistry) -> Result<Vec<CorpusRecord>, Failure> {
    let file = File::open(path).map_err(|e| Failure::config(anyhow::anyhow!("{}: {e}", path.display())))?;
    read_corpus(BufReader::new(file), reg)
        .map_err(|e| Failure::processing(anyhow::Error::new(e).context(path.display().to_string())))
}

/// A corpus from `--in`, or a single stdin text with `--locale`.
pub fn read_input(source: &Source, reg: &CompiledRegistry) -> Result<Input, Failure> {
    if let Some(path) = &source.input {
        return Ok(Input {
            records: read_corpus_file(path, reg)?,
            from_stdin: false,
        });
    }
    let tag = source
        .locale
        .as_deref()
        .ok_or_else(|| Failure::config(anyhow::anyhow!("--locale is required when reading stdin")))?;
    let locale = reg.locale(tag).map_err(Failure::config)?;
    let mut text = String::new();
    std::io::stdin()
        .read_to_string(&mut text)
        .map_err(Failure::processing)?;
    Ok(Input {
        records: vec![CorpusRecord {
            id: "stdin".into(),
            locale,
            text,
            gold: Vec::new(),
        }],
        from_stdin: true,
    })
}

#[derive(Deserialize)]
struct PredictionLine {
    id: String,
    entities: Vec<PredictedSpan>,
}

#[derive(Deserialize)]
struct PredictedSpan {
    start: usize,
    end: usize,
    #[serde(default)]
    labels: Vec<LabelId>,
    #[serde(default)]
    label: Option<LabelId>,
}

/// Detection JSONL keyed by document id. Extra fields are ignored, so the
/// output of `detect` can be fed back directly.
pub fn read_predictions(
    path: &Path,
    records: &[CorpusRecord],
) -> Result<BTreeMap<String, Vec<EntitySpan>>, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::config(anyhow::anyhow!("{}: {e}", path.display())))?;
    let docs: BTreeMap<&str, &CorpusRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |msg: String| Failure::processing(anyhow::anyhow!("{}:{}: {msg}", path.display(), i + 1));
        let p: PredictionLine = serde_json::from_str(line).map_err(|e| at(e.to_string()))?;
        let rec = docs
            .get(p.id.as_str())
            .ok_or_else(|| at(format!("document {:?} is not in the corpus", p.id)))?;
        let doc = rec.document().map_err(|e| at(e.to_string()))?;
        let mut spans = Vec::with_capacity(p.entities.len());
        for e in p.entities {
            let mut labels = e.labels;
            labels.extend(e.label);
            let span = EntitySpan::new(&doc, e.start, e.end, labels, SpanSource::Regex).map_err(|e| at(e.to_string()))?;
            spans.push(span);
        }
        out.insert(p.id, spans);
    }
    Ok(out)
}

pub fn write_output(path: Option<&Path>, content: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, content).map_err(|e| Failure::processing(anyhow::anyhow!("{}: {e}", p.display()))),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(Failure::processing)
        }
    }
}
