mod io;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use piiscan_core::corpus::{corpus_to_string, generate, CorpusRecord, GeneratorData};
use piiscan_core::eval::{
    ablation_report, evaluate_predictions, render_ablation_text, render_evaluation_text, EvalError, MatchMode,
};
use piiscan_core::llm::{AdapterConfig, ChatBackend, LiveAdapter, LlmError, MockAdapter, PromptSet, ENV_MODEL};
use piiscan_core::pipeline::{redact, run_corpus, DetectionResult, PipelineConfig, PipelineError, RedactionStyle};
use piiscan_core::registry::{builtin, CompiledRegistry};
use piiscan_core::{EntitySpan, LocaleId, PhaseId};

use io::{read_input, read_predictions, write_output, Failure, Input};

#[derive(Parser)]
#[command(name = "piiscan", version, about = "Multilingual PII detection, redaction and evaluation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pattern registry TOML; the built-in registry when omitted.
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    /// Pipeline config TOML.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of prompt overrides (`<task>.system.txt`, `<task>.user.txt`).
    #[arg(long, global = true)]
    prompts: Option<PathBuf>,
    /// `live`, `fixture:PATH` or `oracle`.
    #[arg(long, global = true, default_value = "live")]
    adapter: String,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct Source {
    /// Corpus JSONL. Without it, a single text is read from stdin.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Locale of the stdin text.
    #[arg(long)]
    locale: Option<String>,
}

#[derive(Args)]
struct Policy {
    /// Abort on the first adapter error.
    #[arg(long, conflicts_with = "fail_open")]
    fail_closed: bool,
    /// Absorb adapter errors and count them.
    #[arg(long)]
    fail_open: bool,
    /// Last phase to run.
    #[arg(long)]
    through: Option<PhaseId>,
}

impl Policy {
    fn apply(&self, cfg: &mut PipelineConfig, default_open: bool) {
        cfg.fail_open_on_llm_error = if self.fail_closed {
            false
        } else if self.fail_open {
            true
        } else {
            default_open
        };
        if let Some(p) = self.through {
            cfg.run_through = p;
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Style {
    Tag,
    Mask,
}

#[derive(Subcommand)]
enum Command {
    /// Detect PII; one JSON line per document.
    Detect {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        policy: Policy,
    },
    /// Replace detected PII in the text.
    Redact {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        policy: Policy,
        #[arg(long, value_enum, default_value_t = Style::Tag)]
        style: Style,
    },
    /// Score the pipeline (or saved predictions) against gold.
    Evaluate {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        policy: Policy,
        /// Score `--predictions` without running the pipeline.
        #[arg(long, requires = "predictions")]
        counts_only: bool,
        /// Detection JSONL, as written by `detect`.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long = "match", value_enum, default_value_t = Mode::Span)]
        mode: Mode,
    },
    /// Per-phase F1 and relative deltas.
    Ablate {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        policy: Policy,
        #[arg(long = "match", value_enum, default_value_t = Mode::Span)]
        mode: Mode,
    },
    /// Write a seeded synthetic corpus.
    GenCorpus {
        #[arg(short = 'n', long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict to these locales (repeatable); all kits otherwise.
        #[arg(long = "locale")]
        locales: Vec<String>,
        /// Directory of generator kits.
        #[arg(long)]
        generator_data: Option<PathBuf>,
    },
    /// Check the registry and report per-locale coverage.
    LintRegistry,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Span,
    Strict,
}

impl From<Mode> for MatchMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Span => MatchMode::Span,
            Mode::Strict => MatchMode::Strict,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("piiscan: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let common = &cli.common;
    if let Some(j) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(Failure::config)?;
    }
    let owned;
    let reg: &CompiledRegistry = match &common.registry {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Failure::config(anyhow::anyhow!("{}: {e}", p.display())))?;
            owned = CompiledRegistry::load(&bytes).map_err(Failure::config)?;
            &owned
        }
        None => builtin(),
    };

    match &cli.command {
        Command::Detect { source, policy } => {
            let input = read_input(source, reg)?;
            let cfg = pipeline_config(common, policy, true)?;
            let results = detect(common, reg, &input, &cfg)?;
            let mut out = String::new();
            for r in &results {
                out.push_str(&serde_json::to_string(&DetectLine::from(r)).map_err(Failure::processing)?);
                out.push('\n');
            }
            write_output(common.out.as_deref(), &out)
        }
        Command::Redact { source, policy, style } => {
            let input = read_input(source, reg)?;
            let cfg = pipeline_config(common, policy, true)?;
            let results = detect(common, reg, &input, &cfg)?;
            let style = match style {
                Style::Tag => RedactionStyle::LabelTag,
                Style::Mask => RedactionStyle::Mask,
            };
            let mut out = String::new();
            for (rec, r) in input.records.iter().zip(&results) {
                let doc = rec.document().map_err(Failure::processing)?;
                let text = redact(&doc, &r.entities, style).map_err(Failure::processing)?;
                if input.from_stdin {
                    out.push_str(&text);
                } else {
                    let line = serde_json::json!({ "id": rec.id, "text": text });
                    out.push_str(&line.to_string());
                    out.push('\n');
                }
            }
            write_output(common.out.as_deref(), &out)
        }
        Command::Evaluate {
            input,
            policy,
            counts_only,
            predictions,
            mode,
        } => {
            let records = io::read_corpus_file(input, reg)?;
            let preds: BTreeMap<String, Vec<EntitySpan>> = if *counts_only {
                let path = predictions.as_ref().expect("clap enforces --predictions");
                read_predictions(path, &records)?
            } else {
                let cfg = pipeline_config(common, policy, false)?;
                let input = Input {
                    records: records.clone(),
                    from_stdin: false,
                };
                detect(common, reg, &input, &cfg)?
                    .into_iter()
                    .map(|r| (r.document_id, r.entities))
                    .collect()
            };
            let report = evaluate_predictions(&records, &preds, (*mode).into()).map_err(eval_failure)?;
            let out = match common.format {
                Format::Json => pretty(&report)?,
                Format::Text => render_evaluation_text(&report),
            };
            write_output(common.out.as_deref(), &out)
        }
        Command::Ablate { input, policy, mode } => {
            let records = io::read_corpus_file(input, reg)?;
            if records.is_empty() {
                return Err(Failure::config(EvalError::EmptyInput));
            }
            let cfg = pipeline_config(common, policy, false)?;
            let adapter = make_adapter(&common.adapter, Some(&records))?;
            let report = ablation_report(&records, reg, adapter.as_ref(), &cfg, (*mode).into()).map_err(eval_failure)?;
            let out = match common.format {
                Format::Json => pretty(&report)?,
                Format::Text => render_ablation_text(&report),
            };
            write_output(common.out.as_deref(), &out)
        }
        Command::GenCorpus {
            count,
            seed,
            locales,
            generator_data,
        } => {
            let data = match generator_data {
                Some(dir) => GeneratorData::load_dir(dir).map_err(Failure::config)?,
                None => GeneratorData::builtin(),
            };
            let locales: Vec<LocaleId> = locales
                .iter()
                .map(|l| reg.locale(l))
                .collect::<Result<_, _>>()
                .map_err(Failure::config)?;
            let records = generate(&data, reg, &locales, *seed, *count).map_err(Failure::config)?;
            write_output(common.out.as_deref(), &corpus_to_string(&records))
        }
        Command::LintRegistry => {
            let report = reg.lint();
            let out = match common.format {
                Format::Json => pretty(&report)?,
                Format::Text => {
                    let mut s = format!("{} patterns, {} labels\n", report.patterns, report.labels);
                    for c in &report.coverage {
                        s.push_str(&format!(
                            "{:<8} {:>3} patterns ({} locale-specific)\n",
                            c.locale.as_str(),
                            c.patterns,
                            c.locale_specific
                        ));
                    }
                    for w in &report.warnings {
                        s.push_str(&format!("warning: {w}\n"));
                    }
                    s
                }
            };
            write_output(common.out.as_deref(), &out)
        }
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value).map_err(Failure::processing)?;
    s.push('\n');
    Ok(s)
}

fn pipeline_config(common: &Common, policy: &Policy, default_open: bool) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::config(anyhow::anyhow!("{}: {e}", p.display())))?;
            toml::from_str::<PipelineConfig>(&text)
                .map_err(|e| Failure::config(anyhow::anyhow!("{}: {e}", p.display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(dir) = &common.prompts {
        cfg.prompts = Arc::new(PromptSet::builtin().with_overrides(dir).map_err(Failure::config)?);
    }
    if common.adapter == "live" {
        if let Ok(model) = std::env::var(ENV_MODEL) {
            cfg.request.model = model;
        }
    }
    policy.apply(&mut cfg, default_open);
    cfg.validate().map_err(Failure::config)?;
    Ok(cfg)
}

fn make_adapter(spec: &str, records: Option<&[CorpusRecord]>) -> Result<Box<dyn ChatBackend>, Failure> {
    if spec == "live" {
        let cfg = AdapterConfig::from_env().map_err(Failure::config)?;
        return Ok(Box::new(LiveAdapter::new(cfg).map_err(Failure::config)?));
    }
    if spec == "oracle" {
        let records = records.ok_or_else(|| {
            Failure::config(anyhow::anyhow!("the oracle adapter needs a gold-annotated corpus (--in)"))
        })?;
        return Ok(Box::new(MockAdapter::oracle(records)));
    }
    if let Some(path) = spec.strip_prefix("fixture:") {
        return Ok(Box::new(MockAdapter::fixture_file(path.as_ref()).map_err(Failure::config)?));
    }
    Err(Failure::config(anyhow::anyhow!(
        "unknown adapter {spec:?}; expected live, fixture:PATH or oracle"
    )))
}

fn detect(
    common: &Common,
    reg: &CompiledRegistry,
    input: &Input,
    cfg: &PipelineConfig,
) -> Result<Vec<DetectionResult>, Failure> {
    let gold = (!input.from_stdin).then_some(input.records.as_slice());
    let adapter = make_adapter(&common.adapter, gold)?;
    run_corpus(&input.records, reg, adapter.as_ref(), cfg).map_err(pipeline_failure)
}

fn is_adapter_error(e: &LlmError) -> bool {
    matches!(
        e,
        LlmError::Timeout(_) | LlmError::TransportError(_) | LlmError::BudgetExhausted { .. } | LlmError::MockMiss(_)
    )
}

fn pipeline_failure((id, e): (String, PipelineError)) -> Failure {
    let code = match &e {
        PipelineError::Llm { source, .. } if is_adapter_error(source) => 3,
        PipelineError::Llm { .. } | PipelineError::Config(_) => 1,
        _ => 2,
    };
    Failure {
        code,
        error: anyhow::Error::new(e).context(format!("document {id}")),
    }
}

fn eval_failure(e: EvalError) -> Failure {
    match e {
        EvalError::Pipeline { id, source } => pipeline_failure((id, source)),
        EvalError::EmptyInput => Failure::config(e),
        other => Failure::processing(other),
    }
}

#[derive(Serialize)]
struct DetectLine<'a> {
    id: &'a str,
    locale: &'a LocaleId,
    entities: &'a [EntitySpan],
    phase_sizes: BTreeMap<PhaseId, usize>,
    diagnostics: &'a piiscan_core::pipeline::Diagnostics,
}

impl<'a> From<&'a DetectionResult> for DetectLine<'a> {
    fn from(r: &'a DetectionResult) -> Self {
        DetectLine {
            id: &r.document_id,
            locale: &r.locale,
            entities: &r.entities,
            phase_sizes: r.snapshots.iter().map(|(p, v)| (*p, v.len())).collect(),
            diagnostics: &r.diagnostics,
        }
    }
}
