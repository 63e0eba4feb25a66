use std::fs;
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use groundprover::corpus::{load_corpus, Corpus, CorpusFormat};
use groundprover::decoder::DecodeMode;
use groundprover::harness::{
    self, aggregate_annotations_with, correlate, parse_annotations, sample_next_steps, ExperimentConfig,
    SuggestParams, Task, Thresholds,
};
use groundprover::lmbackend::{configure_mock, MockScript, RemoteBackend, RemoteConfig, Sampler, StreamKey};
use groundprover::metrics::MetricReport;
use groundprover::promptgen::{emit_finetune_file, KnowledgeSetting};
use groundprover::service::{self, AppState, BackendKind, ServiceConfig};

#[derive(Parser)]
#[command(name = "groundprover", version, about = "Reference-grounded proof generation toolkit")]
struct Cli {
    /// Experiment config (TOML); for `serve`, the service config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<Backend>,
    /// Mock script (JSON) for `--backend mock`.
    #[arg(long, global = true)]
    mock_script: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Setting {
    None,
    Retrieved,
    Provided,
}

impl From<Setting> for KnowledgeSetting {
    fn from(s: Setting) -> Self {
        match s {
            Setting::None => KnowledgeSetting::None,
            Setting::Retrieved => KnowledgeSetting::Retrieved,
            Setting::Provided => KnowledgeSetting::Provided,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Greedy,
    Rerank,
    Stepwise,
    Stepwisepp,
}

impl From<Mode> for DecodeMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Greedy => DecodeMode::Greedy,
            Mode::Rerank => DecodeMode::Rerank,
            Mode::Stepwise => DecodeMode::Stepwise,
            Mode::Stepwisepp => DecodeMode::Stepwisepp,
        }
    }
}

#[derive(Args)]
struct CorpusArg {
    /// Corpus file (.json or .jsonl).
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct Outputs {
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a CSV of means.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write fine-tuning records as JSON-lines.
    EmitFinetune {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long, value_enum, default_value = "none")]
        setting: Setting,
        #[arg(long)]
        retrievals: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate and score proofs for a split.
    Decode {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long, value_enum)]
        setting: Option<Setting>,
        /// Restrict to these theorem ids.
        #[arg(long = "theorem")]
        theorems: Vec<u64>,
        #[arg(long)]
        retrievals: Option<PathBuf>,
        #[command(flatten)]
        outputs: Outputs,
    },
    /// Sample next-step suggestions for one proof state, or run a next-step
    /// evaluation when no theorem is given.
    Suggest {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        theorem: Option<u64>,
        /// Proof steps so far, in order.
        #[arg(long = "step")]
        steps: Vec<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long, value_enum)]
        setting: Option<Setting>,
        #[arg(long)]
        max_steps_per_proof: Option<usize>,
        #[command(flatten)]
        outputs: Outputs,
    },
    /// Score a JSON-lines predictions file against gold proofs.
    Score {
        #[command(flatten)]
        corpus: CorpusArg,
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        outputs: Outputs,
    },
    /// Aggregate human step annotations.
    AggregateAnnotations {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long, default_value_t = 4)]
        correct_threshold: u8,
        #[arg(long, default_value_t = 3)]
        useful_threshold: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pearson r between automatic metrics and human judgments across settings.
    Correlate {
        /// `label=report.json`, one per setting.
        #[arg(long = "run", required = true)]
        runs: Vec<String>,
        /// `label=annotations.jsonl`, one per setting.
        #[arg(long = "annotations", required = true)]
        annotations: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        retrievals: Option<PathBuf>,
    },
}

type CliResult<T> = Result<T, String>;

/// The `means` field shared by run and score reports.
#[derive(Deserialize)]
struct MeansOnly {
    means: Option<MetricReport>,
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| format!("{}: {e}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.write_all(b"\n"))
                .map_err(|e| e.to_string())
        }
    }
}

fn open_corpus(path: &Path) -> CliResult<Corpus> {
    let corpus = load_corpus(path, CorpusFormat::from_path(path)).map_err(|e| e.to_string())?;
    for d in corpus.diagnostics() {
        tracing::warn!(theorem = d.theorem_id, title = %d.title, "gold proof mentions an unknown title");
    }
    Ok(corpus)
}

fn load_script(path: &Path) -> CliResult<MockScript> {
    serde_json::from_str(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn build_backend(cli: &Cli, kind: Backend, seed: u64, remote: RemoteConfig) -> CliResult<Arc<dyn Sampler>> {
    match kind {
        Backend::Mock => {
            let path = cli
                .mock_script
                .as_deref()
                .ok_or("the mock backend needs --mock-script")?;
            let mock = configure_mock(&load_script(path)?, seed).map_err(|e| e.to_string())?;
            Ok(Arc::new(mock))
        }
        Backend::Remote => {
            let config = remote.apply_env();
            if config.model.is_empty() {
                return Err("the remote backend needs GROUNDPROVER_MODEL".into());
            }
            Ok(Arc::new(RemoteBackend::new(config).map_err(|e| e.to_string())?))
        }
    }
}

fn experiment_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    Ok(config)
}

fn finish_config(config: &ExperimentConfig) -> CliResult<()> {
    config.validate().map_err(|e| e.to_string())
}

fn write_report(report: &harness::RunReport, outputs: &Outputs) -> CliResult<()> {
    if let Some(p) = &outputs.csv {
        let f = fs::File::create(p).map_err(|e| format!("{}: {e}", p.display()))?;
        report.write_means_csv(f).map_err(|e| e.to_string())?;
    }
    write_out(outputs.out.as_deref(), &report.to_json())
}

fn labelled(arg: &str) -> CliResult<(String, PathBuf)> {
    let (label, path) = arg
        .split_once('=')
        .ok_or_else(|| format!("expected label=path, got {arg:?}"))?;
    Ok((label.to_string(), PathBuf::from(path)))
}

fn run(cli: Cli) -> CliResult<()> {
    let backend_kind = cli.backend.unwrap_or(Backend::Mock);
    match &cli.command {
        Command::EmitFinetune {
            corpus,
            setting,
            retrievals,
            out,
        } => {
            let corpus = open_corpus(&corpus.corpus)?;
            let lists = match retrievals {
                Some(p) => Some(
                    harness::load_retrievals(p, Some(&corpus))
                        .map_err(|e| e.to_string())?
                        .lists,
                ),
                None => None,
            };
            let n = emit_finetune_file(&corpus, (*setting).into(), lists.as_ref(), out).map_err(|e| e.to_string())?;
            println!("{n}");
            Ok(())
        }
        Command::Decode {
            corpus,
            mode,
            setting,
            theorems,
            retrievals,
            outputs,
        } => {
            let mut config = experiment_config(&cli)?;
            config.task = Task::FullProof;
            if let Some(m) = mode {
                config.decode.mode = (*m).into();
            }
            if let Some(s) = setting {
                config.setting = (*s).into();
            }
            if !theorems.is_empty() {
                config.theorem_filter = Some(theorems.clone());
            }
            if let Some(r) = retrievals {
                config.retrievals_path = Some(r.clone());
            }
            finish_config(&config)?;
            let corpus = open_corpus(&corpus.corpus)?;
            let backend = build_backend(&cli, backend_kind, config.seed, RemoteConfig::default())?;
            let report = harness::run_full_proof(&config, &corpus, &*backend).map_err(|e| e.to_string())?;
            write_report(&report, outputs)
        }
        Command::Suggest {
            corpus,
            theorem,
            steps,
            k,
            temperature,
            setting,
            max_steps_per_proof,
            outputs,
        } => {
            let mut config = experiment_config(&cli)?;
            config.task = Task::NextStep;
            if let Some(k) = k {
                config.suggestions_k = *k;
            }
            if let Some(t) = temperature {
                config.temperature = *t;
            }
            if let Some(s) = setting {
                config.setting = (*s).into();
            }
            if max_steps_per_proof.is_some() {
                config.max_steps_per_proof = *max_steps_per_proof;
            }
            finish_config(&config)?;
            let corpus = open_corpus(&corpus.corpus)?;
            let backend = build_backend(&cli, backend_kind, config.seed, RemoteConfig::default())?;
            match theorem {
                None => {
                    let report = harness::run_next_step(&config, &corpus, &*backend).map_err(|e| e.to_string())?;
                    write_report(&report, outputs)
                }
                Some(id) => {
                    let reference = corpus
                        .reference_by_id(*id)
                        .ok_or_else(|| format!("unknown theorem {id}"))?;
                    let retrievals = match (&config.setting, &config.retrievals_path) {
                        (KnowledgeSetting::Retrieved, Some(p)) => {
                            Some(harness::load_retrievals(p, Some(&corpus)).map_err(|e| e.to_string())?)
                        }
                        _ => None,
                    };
                    let titles = match corpus.gold_proof(*id) {
                        Some(gold) => harness::constraint_titles(config.setting, gold, *id, retrievals.as_ref())?,
                        None if config.setting == KnowledgeSetting::None => Vec::new(),
                        None => return Err(format!("theorem {id} has no gold proof")),
                    };
                    let params = SuggestParams {
                        decode: &config.decode,
                        k: config.suggestions_k,
                        temperature: config.temperature,
                        stream: StreamKey {
                            salt: config.seed,
                            iteration: steps.len() as u64,
                            beam: 0,
                            group: 0,
                        },
                    };
                    let suggestions =
                        sample_next_steps(reference, &titles, steps, params, &*backend).map_err(|e| e.to_string())?;
                    let text = serde_json::to_string_pretty(&suggestions).expect("suggestions serialize");
                    write_out(outputs.out.as_deref(), &text)
                }
            }
        }
        Command::Score {
            corpus,
            predictions,
            outputs,
        } => {
            let corpus = open_corpus(&corpus.corpus)?;
            let report = harness::score_predictions(&read(predictions)?, &corpus)?;
            if let Some(p) = &outputs.csv {
                let mut w = csv::Writer::from_path(p).map_err(|e| e.to_string())?;
                let mut header = vec!["theorem_id".to_string()];
                header.extend(groundprover::metrics::MetricReport::NAMES.iter().map(|s| s.to_string()));
                w.write_record(&header).map_err(|e| e.to_string())?;
                let rows = report
                    .items
                    .iter()
                    .map(|i| (i.theorem_id.to_string(), &i.metrics))
                    .chain(report.means.iter().map(|m| ("mean".to_string(), m)));
                for (id, m) in rows {
                    let mut row = vec![id];
                    row.extend(m.values().iter().map(|v| v.to_string()));
                    w.write_record(&row).map_err(|e| e.to_string())?;
                }
                w.flush().map_err(|e| e.to_string())?;
            }
            write_out(
                outputs.out.as_deref(),
                &serde_json::to_string_pretty(&report).expect("reports serialize"),
            )
        }
        Command::AggregateAnnotations {
            annotations,
            correct_threshold,
            useful_threshold,
            out,
        } => {
            let records = parse_annotations(&read(annotations)?)?;
            let thresholds = Thresholds {
                correct: *correct_threshold,
                useful: *useful_threshold,
            };
            let report = aggregate_annotations_with(&records, thresholds);
            write_out(
                out.as_deref(),
                &serde_json::to_string_pretty(&report).expect("reports serialize"),
            )
        }
        Command::Correlate { runs, annotations, out } => {
            let mut means = Vec::new();
            for arg in runs {
                let (label, path) = labelled(arg)?;
                let report: MeansOnly =
                    serde_json::from_str(&read(&path)?).map_err(|e| format!("{}: {e}", path.display()))?;
                let m = report
                    .means
                    .ok_or_else(|| format!("{}: report has no scored items", path.display()))?;
                means.push((label, m));
            }
            let mut aggregates = Vec::new();
            for arg in annotations {
                let (label, path) = labelled(arg)?;
                let records = parse_annotations(&read(&path)?)?;
                aggregates.push((label, harness::aggregate_annotations(&records)));
            }
            let matrix = correlate(&means, &aggregates).map_err(|e| e.to_string())?;
            write_out(
                out.as_deref(),
                &serde_json::to_string_pretty(&matrix).expect("matrix serializes"),
            )
        }
        Command::Serve {
            bind,
            corpus,
            retrievals,
        } => {
            let mut config = match &cli.config {
                Some(p) => toml::from_str::<ServiceConfig>(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
                None => ServiceConfig::default(),
            }
            .apply_env();
            if let Some(b) = bind {
                config.bind = b.clone();
            }
            if let Some(c) = corpus {
                config.corpus_path = Some(c.clone());
            }
            if let Some(r) = retrievals {
                config.retrievals_path = Some(r.clone());
            }
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            let kind = match cli.backend {
                Some(Backend::Mock) => BackendKind::Mock,
                Some(Backend::Remote) => BackendKind::Remote,
                None => config.backend,
            };
            let mut cli = cli;
            if cli.mock_script.is_none() {
                cli.mock_script = config.mock_script.clone();
            }
            let backend = build_backend(
                &cli,
                match kind {
                    BackendKind::Mock => Backend::Mock,
                    BackendKind::Remote => Backend::Remote,
                },
                config.seed,
                config.remote.clone(),
            )?;
            let corpus_path = config.corpus_path.as_deref().ok_or("serve needs --corpus")?;
            let corpus = open_corpus(corpus_path)?;
            let mut state = AppState::new(corpus, backend, kind)
                .with_async_threshold(Duration::from_secs_f64(config.async_threshold_secs.max(0.0)));
            if let Some(p) = &config.retrievals_path {
                state = state.with_retrievals(harness::load_retrievals(p, None).map_err(|e| e.to_string())?);
            }
            let addr: SocketAddr = config
                .bind
                .parse()
                .map_err(|e| format!("bind address {:?}: {e}", config.bind))?;
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            runtime
                .block_on(service::serve(state, addr))
                .map_err(|e| e.to_string())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_max_level(
            std::env::var("GROUNDPROVER_LOG")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(tracing::Level::WARN),
        )
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
