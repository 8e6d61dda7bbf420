//! End-to-end orchestration: reject, anchor, expand, score.
//!
//! Relations are processed one after another. Within a relation, rejection
//! scores and anchor inference run on a bounded worker pool; results are
//! collected in input order so runs are reproducible.

mod config;
pub mod io;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::anchor::{anchor, AnchorError, AnchorResult, ProposalSet};
use crate::embeddings::{load_embeddings, EmbeddingTable};
use crate::evaluation::{aggregate, score, EvaluationReport, ScoredExample};
use crate::expansion::{expand, ExpansionPolicy};
use crate::model::{EntityContextPair, ExtractionResult, Relation};
use crate::provider::{
    MaskedLanguageModel, ProviderError, ProviderStats, ReferenceBackend, RemoteBackend, RemoteOptions,
};
use crate::rejection::{fit_threshold, score_pair, RejectionError, RejectionScore, RejectionThreshold};
use crate::templating::{query_from_filled, substitute_subject};

pub use config::{BackendConfig, ExpansionSetting, Grid, LambdaSetting, RunConfig, Settings};
pub use io::{DatasetRecord, ExtractionRecord, PredictionRecord};

/// Co-occurrence window of the PMI definition. Only relevant when training
/// the word vectors, which happens outside this engine; recorded in the
/// manifest for reference.
pub const PMI_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("no labelled development pairs")]
    NoDevData,
}

impl PipelineError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::NoDevData => 2,
            Self::Data(_) => 3,
            Self::Backend(_) => 4,
        }
    }
}

impl From<ProviderError> for PipelineError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::MalformedQuery(_) | ProviderError::EmptySequence | ProviderError::InvalidFixture(_) => {
                Self::Data(e.to_string())
            }
            ProviderError::BackendUnavailable(_) | ProviderError::Protocol(_) => Self::Backend(e.to_string()),
        }
    }
}

fn output_error(path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::data(format!("{}: {e}", path.display()))
}

/// Outcome of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub score: Option<f64>,
    pub rejected: bool,
    pub anchor: Option<AnchorResult>,
    pub prediction: ExtractionResult,
}

impl PairOutcome {
    pub fn record(&self, pair: &EntityContextPair) -> ExtractionRecord {
        ExtractionRecord {
            relation: pair.relation_id().to_string(),
            subject: pair.entity().to_vec(),
            prediction: match &self.prediction {
                ExtractionResult::NoAnswer => None,
                ExtractionResult::Answer { span, text } => Some(PredictionRecord {
                    span: [span.start(), span.end()],
                    text: text.to_vec(),
                }),
            },
            anchor: self.anchor.as_ref().map(|a| a.position),
            rejected: self.rejected,
            score: self.score.filter(|s| s.is_finite()),
        }
    }
}

/// Per-relation values chosen on the development split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TunedParameters {
    pub lambda: f64,
    pub expand: bool,
    pub dev_f1: f64,
    pub dev_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationOutput {
    pub relation_id: String,
    pub lambda: f64,
    pub expand: bool,
    pub threshold: Option<RejectionThreshold>,
    /// Indices into the input pair list, with their outcomes, in input order.
    pub outcomes: Vec<(usize, PairOutcome)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RelationManifest {
    pub relation_id: String,
    pub template: String,
    pub pairs: usize,
    pub rejected: usize,
    pub lambda: f64,
    pub expand: bool,
    pub threshold: Option<RejectionThreshold>,
    pub tuned: Option<TunedParameters>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timings {
    pub load_ms: u128,
    pub tune_ms: u128,
    pub extract_ms: u128,
    pub total_ms: u128,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub pmi_window: usize,
    pub relations: Vec<RelationManifest>,
    pub provider_stats: ProviderStats,
    pub dropped_unknown_relation: usize,
    pub timings: Timings,
}

#[derive(Serialize)]
struct DiagnosticRecord<'a> {
    relation: &'a str,
    index: usize,
    proposals: &'a ProposalSet,
    z: &'a [f64],
    anchor: usize,
    score: f64,
}

/// Rejection scores and fitted statistics for one relation's pairs.
struct RejectionStats {
    scores: Vec<RejectionScore>,
    /// `None` when no pair was scorable.
    fit: Option<RejectionThreshold>,
}

enum AnchorOutcome {
    Found(AnchorResult),
    NoProposal,
}

pub struct Engine<'a> {
    provider: &'a dyn MaskedLanguageModel,
    embeddings: Option<&'a EmbeddingTable>,
    settings: Settings,
    pool: rayon::ThreadPool,
}

impl<'a> Engine<'a> {
    pub fn new(
        provider: &'a dyn MaskedLanguageModel,
        embeddings: Option<&'a EmbeddingTable>,
        settings: Settings,
    ) -> Result<Self, PipelineError> {
        settings.validate()?;
        if settings.rejection_enabled && embeddings.is_none() {
            return Err(PipelineError::config("context rejection requires word embeddings"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(settings.workers)
            .build()
            .map_err(|e| PipelineError::config(format!("worker pool: {e}")))?;
        Ok(Self {
            provider,
            embeddings,
            settings,
            pool,
        })
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    fn rejection_stats(
        &self,
        relation: &Relation,
        pairs: &[&EntityContextPair],
    ) -> Result<Option<RejectionStats>, PipelineError> {
        let Some(table) = self.embeddings.filter(|_| self.settings.rejection_enabled) else {
            return Ok(None);
        };
        let values = self.pool.install(|| {
            pairs
                .par_iter()
                .map(|pair| {
                    let filled = substitute_subject(relation.template(), pair.entity())
                        .map_err(|e| PipelineError::data(e.to_string()))?;
                    Ok(score_pair(table, pair.context(), &filled))
                })
                .collect::<Result<Vec<f64>, PipelineError>>()
        })?;
        let scores: Vec<RejectionScore> = values
            .into_iter()
            .enumerate()
            .map(|(pair_index, value)| RejectionScore { pair_index, value })
            .collect();
        let fit = match fit_threshold(&scores, 0.0) {
            Ok(t) => Some(t),
            Err(RejectionError::EmptyScores) => {
                log::warn!("relation {:?}: no scorable pairs, rejecting all", relation.id());
                None
            }
            Err(e) => return Err(PipelineError::config(e.to_string())),
        };
        Ok(Some(RejectionStats { scores, fit }))
    }

    fn accepted(stats: Option<&RejectionStats>, lambda: f64, n: usize) -> Vec<bool> {
        match stats {
            None => vec![true; n],
            Some(RejectionStats { fit: None, .. }) => vec![false; n],
            Some(RejectionStats { scores, fit: Some(fit) }) => {
                let threshold = fit.with_lambda(lambda);
                scores.iter().map(|s| s.is_scorable() && threshold.accepts(s.value)).collect()
            }
        }
    }

    fn anchor_pairs(
        &self,
        relation: &Relation,
        pairs: &[&EntityContextPair],
        wanted: &[bool],
    ) -> Result<Vec<Option<AnchorOutcome>>, PipelineError> {
        let mask = self.provider.mask_token();
        let k = self.settings.k;
        self.pool.install(|| {
            pairs
                .par_iter()
                .zip(wanted)
                .map(|(pair, &wanted)| {
                    if !wanted {
                        return Ok(None);
                    }
                    if pair.context().is_empty() {
                        return Err(PipelineError::data("empty context"));
                    }
                    let filled = substitute_subject(relation.template(), pair.entity())
                        .map_err(|e| PipelineError::data(e.to_string()))?;
                    let query = query_from_filled(pair.context(), &filled, mask);
                    match anchor(self.provider, &query, k) {
                        Ok(result) => Ok(Some(AnchorOutcome::Found(result))),
                        Err(AnchorError::EmptyProposal) => {
                            log::warn!(
                                "relation {:?}: only punctuation predicted for {}; answering no answer",
                                relation.id(),
                                pair.entity()
                            );
                            Ok(Some(AnchorOutcome::NoProposal))
                        }
                        Err(AnchorError::Provider(e)) => Err(e.into()),
                    }
                })
                .collect()
        })
    }

    fn assemble(
        relation: &Relation,
        pairs: &[&EntityContextPair],
        stats: Option<&RejectionStats>,
        accepted: &[bool],
        anchors: &[Option<AnchorOutcome>],
        expand_spans: bool,
    ) -> Result<Vec<PairOutcome>, PipelineError> {
        let policy = if expand_spans {
            ExpansionPolicy::Always
        } else {
            ExpansionPolicy::Never
        };
        let mut out = Vec::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let score = stats.map(|s| s.scores[i].value);
            let outcome = match (accepted[i], &anchors[i]) {
                (false, _) => PairOutcome {
                    score,
                    rejected: true,
                    anchor: None,
                    prediction: ExtractionResult::NoAnswer,
                },
                (true, Some(AnchorOutcome::Found(result))) => {
                    let prediction = expand(result.position, pair.context(), pair.annotations(), &policy, relation.id())
                        .map_err(|e| PipelineError::data(e.to_string()))?;
                    PairOutcome {
                        score,
                        rejected: false,
                        anchor: Some(result.clone()),
                        prediction,
                    }
                }
                (true, Some(AnchorOutcome::NoProposal)) => PairOutcome {
                    score,
                    rejected: false,
                    anchor: None,
                    prediction: ExtractionResult::NoAnswer,
                },
                (true, None) => unreachable!("accepted pair without anchor inference"),
            };
            out.push(outcome);
        }
        Ok(out)
    }

    /// Tunes lambda and the expansion flag per relation on labelled
    /// development pairs, maximizing mean F1. Ties go to the smaller lambda,
    /// then to no expansion.
    pub fn grid_search(
        &self,
        relations: &BTreeMap<String, Relation>,
        dev_pairs: &[EntityContextPair],
        grid: &Grid,
    ) -> Result<BTreeMap<String, TunedParameters>, PipelineError> {
        let labelled: Vec<&EntityContextPair> = dev_pairs.iter().filter(|p| p.gold().is_some()).collect();
        if labelled.is_empty() {
            return Err(PipelineError::NoDevData);
        }
        let mut lambdas = grid.lambdas.clone();
        lambdas.sort_by(f64::total_cmp);
        let mut expansions = grid.expansions.clone();
        expansions.sort();

        let mut tuned = BTreeMap::new();
        for (id, relation) in relations {
            let pairs: Vec<&EntityContextPair> =
                labelled.iter().copied().filter(|p| p.relation_id() == id).collect();
            if pairs.is_empty() {
                continue;
            }
            let stats = self.rejection_stats(relation, &pairs)?;
            let anchors = self.anchor_pairs(relation, &pairs, &vec![true; pairs.len()])?;

            let mut best: Option<TunedParameters> = None;
            for &lambda in &lambdas {
                let accepted = Self::accepted(stats.as_ref(), lambda, pairs.len());
                for &expand_spans in &expansions {
                    let outcomes = Self::assemble(relation, &pairs, stats.as_ref(), &accepted, &anchors, expand_spans)?;
                    let f1 = pairs
                        .iter()
                        .zip(&outcomes)
                        .map(|(p, o)| score(&o.prediction, p.gold().unwrap()).f1)
                        .sum::<f64>()
                        / pairs.len() as f64;
                    if best.is_none_or(|b| f1 > b.dev_f1) {
                        best = Some(TunedParameters {
                            lambda,
                            expand: expand_spans,
                            dev_f1: f1,
                            dev_pairs: pairs.len(),
                        });
                    }
                }
            }
            if let Some(best) = best {
                log::info!(
                    "relation {id:?}: lambda={} expand={} dev F1={:.4}",
                    best.lambda,
                    best.expand,
                    best.dev_f1
                );
                tuned.insert(id.clone(), best);
            }
        }
        Ok(tuned)
    }

    /// Runs one relation over its pairs with fixed parameters.
    pub fn extract_relation(
        &self,
        relation: &Relation,
        pairs: &[&EntityContextPair],
        lambda: f64,
        expand_spans: bool,
    ) -> Result<(Option<RejectionThreshold>, Vec<PairOutcome>), PipelineError> {
        let stats = self.rejection_stats(relation, pairs)?;
        let accepted = Self::accepted(stats.as_ref(), lambda, pairs.len());
        let anchors = self.anchor_pairs(relation, pairs, &accepted)?;
        let outcomes = Self::assemble(relation, pairs, stats.as_ref(), &accepted, &anchors, expand_spans)?;
        let threshold = stats.and_then(|s| s.fit).map(|t| t.with_lambda(lambda));
        Ok((threshold, outcomes))
    }

    /// Extracts every pair, grouped by relation in order of first appearance.
    /// `sink` sees each relation's output as soon as it is complete.
    pub fn extract<F>(
        &self,
        relations: &BTreeMap<String, Relation>,
        pairs: &[EntityContextPair],
        tuned: &BTreeMap<String, TunedParameters>,
        mut sink: F,
    ) -> Result<Vec<RelationOutput>, PipelineError>
    where
        F: FnMut(&RelationOutput) -> Result<(), PipelineError>,
    {
        let mut order: Vec<&str> = Vec::new();
        for p in pairs {
            if !order.contains(&p.relation_id()) {
                order.push(p.relation_id());
            }
        }
        let mut outputs = Vec::new();
        for id in order {
            let relation = relations
                .get(id)
                .ok_or_else(|| PipelineError::data(format!("unknown relation {id:?}")))?;
            let (indices, group): (Vec<usize>, Vec<&EntityContextPair>) =
                pairs.iter().enumerate().filter(|(_, p)| p.relation_id() == id).unzip();
            let (lambda, expand_spans) = match tuned.get(id) {
                Some(t) => (t.lambda, t.expand),
                None => {
                    if self.settings.needs_tuning() {
                        log::warn!("relation {id:?}: no development pairs, using defaults");
                    }
                    self.settings.defaults()
                }
            };
            let (threshold, outcomes) = self.extract_relation(relation, &group, lambda, expand_spans)?;
            let output = RelationOutput {
                relation_id: id.to_string(),
                lambda,
                expand: expand_spans,
                threshold,
                outcomes: indices.into_iter().zip(outcomes).collect(),
            };
            sink(&output)?;
            outputs.push(output);
        }
        Ok(outputs)
    }
}

/// Scores every labelled pair and aggregates per relation.
pub fn evaluate(pairs: &[EntityContextPair], outputs: &[RelationOutput]) -> Option<EvaluationReport> {
    let mut grouped: BTreeMap<String, Vec<ScoredExample>> = BTreeMap::new();
    for output in outputs {
        for (i, outcome) in &output.outcomes {
            if let Some(gold) = pairs[*i].gold() {
                grouped
                    .entry(output.relation_id.clone())
                    .or_default()
                    .push(score(&outcome.prediction, gold));
            }
        }
    }
    (!grouped.is_empty()).then(|| aggregate(&grouped))
}

pub fn open_backend(backend: &BackendConfig) -> Result<Box<dyn MaskedLanguageModel>, PipelineError> {
    match backend {
        BackendConfig::Reference(path) => Ok(Box::new(ReferenceBackend::from_path(path)?)),
        BackendConfig::Remote(url) => Ok(Box::new(RemoteBackend::connect(url, RemoteOptions::default())?)),
    }
}

pub fn load_embeddings_file(path: &Path) -> Result<EmbeddingTable, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))?;
    load_embeddings(BufReader::new(file)).map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))
}

/// Files written by [`run`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub extractions: PathBuf,
    pub manifest: PathBuf,
    pub report: Option<EvaluationReport>,
}

pub const EXTRACTIONS_FILE: &str = "extractions.jsonl";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.jsonl";

/// Runs the pipeline described by `config`, writing outputs into
/// `config.output_dir`.
pub fn run(config: &RunConfig) -> Result<RunOutputs, PipelineError> {
    config.validate()?;
    let started = Instant::now();

    let relations = io::load_templates(&config.templates_path)?;
    let pairs = io::load_dataset(&config.dataset_path)?;
    let dev_pairs = match &config.dev_dataset_path {
        Some(p) => Some(io::load_dataset(p)?),
        None => None,
    };
    let embeddings = match (&config.embeddings_path, config.settings.rejection_enabled) {
        (Some(p), true) => Some(load_embeddings_file(p)?),
        _ => None,
    };
    let provider = open_backend(&config.backend)?;
    let load_ms = started.elapsed().as_millis();

    for p in pairs.iter().chain(dev_pairs.iter().flatten()) {
        if !relations.contains_key(p.relation_id()) {
            return Err(PipelineError::data(format!("pair references unknown relation {:?}", p.relation_id())));
        }
    }

    let engine = Engine::new(provider.as_ref(), embeddings.as_ref(), config.settings.clone())?;

    let tune_started = Instant::now();
    let tuned = match (&dev_pairs, config.settings.needs_tuning()) {
        (Some(dev), true) => engine.grid_search(&relations, dev, &config.settings.grid())?,
        _ => BTreeMap::new(),
    };
    let tune_ms = tune_started.elapsed().as_millis();

    fs::create_dir_all(&config.output_dir).map_err(|e| output_error(&config.output_dir, e))?;
    let extractions_path = config.output_dir.join(EXTRACTIONS_FILE);
    let mut writer = BufWriter::new(File::create(&extractions_path).map_err(|e| output_error(&extractions_path, e))?);
    let diagnostics_path = config.output_dir.join(DIAGNOSTICS_FILE);
    let mut diagnostics = if config.dump_diagnostics {
        Some(BufWriter::new(File::create(&diagnostics_path).map_err(|e| output_error(&diagnostics_path, e))?))
    } else {
        None
    };

    let extract_started = Instant::now();
    let result = engine.extract(&relations, &pairs, &tuned, |output| {
        for (i, outcome) in &output.outcomes {
            let line = serde_json::to_string(&outcome.record(&pairs[*i])).expect("serializable record");
            writeln!(writer, "{line}").map_err(|e| output_error(&extractions_path, e))?;
            if let (Some(diag), Some(a)) = (diagnostics.as_mut(), &outcome.anchor) {
                let record = DiagnosticRecord {
                    relation: &output.relation_id,
                    index: *i,
                    proposals: &a.proposals,
                    z: &a.z,
                    anchor: a.position,
                    score: a.score,
                };
                let line = serde_json::to_string(&record).expect("serializable record");
                writeln!(diag, "{line}").map_err(|e| output_error(&diagnostics_path, e))?;
            }
        }
        writer.flush().map_err(|e| output_error(&extractions_path, e))
    });
    let outputs = match result {
        Ok(o) => o,
        Err(e) => {
            let _ = writer.flush();
            eprintln!(
                "note: run failed; {} may hold partial results for completed relations",
                extractions_path.display()
            );
            return Err(e);
        }
    };
    if let Some(mut d) = diagnostics {
        d.flush().map_err(|e| output_error(&diagnostics_path, e))?;
    }
    let extract_ms = extract_started.elapsed().as_millis();

    let report = evaluate(&pairs, &outputs);
    if let Some(report) = &report {
        write_file(&config.output_dir.join(REPORT_JSON_FILE), &to_pretty_json(report))?;
        write_file(&config.output_dir.join(REPORT_TEXT_FILE), &report.to_table())?;
        if config.write_csv {
            write_file(&config.output_dir.join(REPORT_CSV_FILE), &report.to_csv())?;
        }
    }

    let manifest = RunManifest {
        config: config.clone(),
        pmi_window: PMI_WINDOW,
        relations: outputs
            .iter()
            .map(|o| RelationManifest {
                relation_id: o.relation_id.clone(),
                template: relations[&o.relation_id].template().to_string(),
                pairs: o.outcomes.len(),
                rejected: o.outcomes.iter().filter(|(_, x)| x.rejected).count(),
                lambda: o.lambda,
                expand: o.expand,
                threshold: o.threshold,
                tuned: tuned.get(&o.relation_id).copied(),
            })
            .collect(),
        provider_stats: provider.stats(),
        dropped_unknown_relation: 0,
        timings: Timings {
            load_ms,
            tune_ms,
            extract_ms,
            total_ms: started.elapsed().as_millis(),
        },
    };
    let manifest_path = config.output_dir.join(MANIFEST_FILE);
    write_file(&manifest_path, &to_pretty_json(&manifest))?;

    Ok(RunOutputs {
        extractions: extractions_path,
        manifest: manifest_path,
        report,
    })
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> Result<(), PipelineError> {
    fs::write(path, contents).map_err(|e| output_error(path, e))
}
