//! The five experiment pipelines and their reports.
//!
//! Each pipeline opens its own sessions, renders prompts, parses replies and
//! aggregates over the rows that parsed. Reports contain no session ids or
//! timestamps, so replay runs serialize byte-identically; those live in the
//! transcripts written next to the report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affect_space::{distance_matrix_with, rank_of, Dimension, Octant, Scale, VadTriple};
use crate::llm_client::{open_session, BackendDescriptor, ChatBackend, ChatSession, ClientError, ReplayMetadata, ReplayStore, SessionTranscript};
use crate::metrics::{self, normalize_word, CorrelationResult, MatchGrade, MatchTally};
use crate::occ_engine::{canonical_frame, table_rules, AppraisalFrame, EmotionLabel, Ordinal};
use crate::par::{self, Execution};
use crate::prompt_kit::{self, ParseError, Prompt, PromptError, TemplateId, BATCH_SIZE};
use crate::stimuli::{Dataset, ElicitationRow, Fixtures, MappingRow, OctantRow, PredictionVariant};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{0} is empty")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no expert mapping for situation {0}")]
    MissingExpert(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("{path}: {message}")]
    SideFile { path: String, message: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "rq1")]
    Rq1,
    #[serde(rename = "rq2.1")]
    Rq2Numeric,
    #[serde(rename = "rq2.2")]
    Rq2Latent,
    #[serde(rename = "rq2.3")]
    Rq2Generate,
    #[serde(rename = "rq3")]
    Rq3,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::Rq1,
        ExperimentId::Rq2Numeric,
        ExperimentId::Rq2Latent,
        ExperimentId::Rq2Generate,
        ExperimentId::Rq3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Rq1 => "rq1",
            ExperimentId::Rq2Numeric => "rq2.1",
            ExperimentId::Rq2Latent => "rq2.2",
            ExperimentId::Rq2Generate => "rq2.3",
            ExperimentId::Rq3 => "rq3",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentId {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.as_str() == s.trim().to_lowercase())
            .ok_or_else(|| ExperimentError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    #[serde(skip)]
    pub exec: Execution,
    pub dominance_clause: bool,
    /// Use the experimental perspective wording for word picks.
    pub perspective_prompt: bool,
    /// Extra attempts for a VAD batch whose table has the wrong row count.
    pub batch_retries: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            exec: Execution::default(),
            dominance_clause: true,
            perspective_prompt: false,
            batch_retries: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowError {
    Parse { error: ParseError },
    Client { error: ClientError },
    EmptyGeneration,
}

impl RowError {
    pub fn is_parse(&self) -> bool {
        !matches!(self, RowError::Client { .. })
    }
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowError::Parse { error } => write!(f, "parse: {error}"),
            RowError::Client { error } => write!(f, "client: {error}"),
            RowError::EmptyGeneration => f.write_str("empty generation"),
        }
    }
}

impl From<ParseError> for RowError {
    fn from(error: ParseError) -> Self {
        RowError::Parse { error }
    }
}

impl From<ClientError> for RowError {
    fn from(error: ClientError) -> Self {
        RowError::Client { error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingReference {
    pub word: String,
    pub distance: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowValue {
    Vad {
        predicted: [f64; 3],
        truth: [f64; 3],
        truth_scale: Scale,
    },
    Mapping {
        word: String,
        distance: f64,
        rank: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<MappingReference>,
    },
    WordPick {
        primary: [String; 2],
        alternates: Vec<String>,
        hallucinated: Vec<String>,
        expert: [String; 2],
        grade: MatchGrade,
    },
    Generated {
        octant: Octant,
        text: String,
        rating: String,
    },
    Emotion {
        expected: EmotionLabel,
        predicted: EmotionLabel,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        intensity: Option<Ordinal>,
        correct: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub session: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<RowValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<RowError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionRmse {
    pub dimension: Dimension,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
}

impl Accuracy {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Misprediction {
    pub id: String,
    pub expected: EmotionLabel,
    /// None when the reply had no recognisable label.
    pub predicted: Option<EmotionLabel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub valid_rows: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub correlations: Vec<CorrelationResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rmse: Vec<DimensionRmse>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ranks: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rank: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tally: Option<MatchTally>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hallucinated: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<Accuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mispredictions: Option<Vec<Misprediction>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_ratings: Option<usize>,
}

impl Aggregates {
    /// Everything here is a function of the rows alone.
    pub fn from_rows(experiment: ExperimentId, rows: &[ReportRow]) -> Aggregates {
        let mut agg = Aggregates {
            valid_rows: rows.iter().filter(|r| r.value.is_some()).count(),
            ..Aggregates::default()
        };
        match experiment {
            ExperimentId::Rq1 => vad_aggregates(rows, &mut agg),
            ExperimentId::Rq2Numeric => {
                agg.ranks = rows
                    .iter()
                    .filter_map(|r| match &r.value {
                        Some(RowValue::Mapping { rank, .. }) => Some(*rank),
                        _ => None,
                    })
                    .collect();
                if !agg.ranks.is_empty() {
                    agg.mean_rank = Some(agg.ranks.iter().sum::<usize>() as f64 / agg.ranks.len() as f64);
                }
            }
            ExperimentId::Rq2Latent => {
                let mut tally = MatchTally::default();
                let mut hallucinated = BTreeSet::new();
                for r in rows {
                    match &r.value {
                        Some(RowValue::WordPick { grade, hallucinated: h, .. }) => {
                            tally.add(*grade);
                            hallucinated.extend(h.iter().cloned());
                        }
                        _ => tally.add(MatchGrade::None),
                    }
                }
                agg.tally = Some(tally);
                agg.hallucinated = Some(hallucinated.into_iter().collect());
            }
            ExperimentId::Rq2Generate => {
                agg.pending_ratings = Some(
                    rows.iter()
                        .filter(|r| matches!(&r.value, Some(RowValue::Generated { rating, .. }) if rating == PENDING))
                        .count(),
                );
            }
            ExperimentId::Rq3 => {
                let mut correct = 0;
                let mut wrong = Vec::new();
                for r in rows {
                    match &r.value {
                        Some(RowValue::Emotion { correct: true, .. }) => correct += 1,
                        Some(RowValue::Emotion { expected, predicted, .. }) => wrong.push(Misprediction {
                            id: r.id.clone(),
                            expected: *expected,
                            predicted: Some(*predicted),
                        }),
                        _ => {
                            if let Ok(expected) = r.id.parse() {
                                wrong.push(Misprediction {
                                    id: r.id.clone(),
                                    expected,
                                    predicted: None,
                                })
                            }
                        }
                    }
                }
                agg.accuracy = Some(Accuracy {
                    correct,
                    total: rows.len(),
                });
                agg.mispredictions = Some(wrong);
            }
        }
        agg
    }
}

fn vad_aggregates(rows: &[ReportRow], agg: &mut Aggregates) {
    let pairs: Vec<([f64; 3], [f64; 3], Scale)> = rows
        .iter()
        .filter_map(|r| match &r.value {
            Some(RowValue::Vad {
                predicted,
                truth,
                truth_scale,
            }) => Some((*predicted, *truth, *truth_scale)),
            _ => None,
        })
        .collect();
    if pairs.len() < 3 {
        return;
    }
    for (k, dim) in Dimension::ALL.into_iter().enumerate() {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0[k]).collect();
        let truth: Vec<f64> = pairs.iter().map(|p| p.1[k]).collect();
        if let Ok(c) = metrics::correlate(dim, &truth, &pred) {
            agg.correlations.push(c);
        }
        let truth_unit: Vec<f64> = pairs.iter().map(|p| p.2.map_value(p.1[k], Scale::Unit0To1)).collect();
        if let Ok(e) = metrics::rmse(&truth_unit, &pred) {
            agg.rmse.push(DimensionRmse {
                dimension: dim,
                rmse: e,
                n: pred.len(),
            });
        }
    }
}

pub const PENDING: &str = "pending";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub backend: BackendDescriptor,
    pub options: RunOptions,
    pub session_policy: String,
    /// Session keys in the order they were opened; transcripts are stored
    /// under these names.
    pub sessions: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub parse_failures: usize,
    pub client_failures: usize,
    pub aggregates: Aggregates,
}

impl ExperimentReport {
    fn assemble(
        experiment: ExperimentId,
        dataset: Option<String>,
        backend: &dyn ChatBackend,
        options: &RunOptions,
        session_policy: &str,
        transcripts: &[SessionTranscript],
        rows: Vec<ReportRow>,
    ) -> Self {
        let parse_failures = rows.iter().filter(|r| r.error.as_ref().is_some_and(RowError::is_parse)).count();
        let client_failures = rows.iter().filter(|r| r.error.as_ref().is_some_and(|e| !e.is_parse())).count();
        ExperimentReport {
            experiment,
            dataset,
            backend: backend.descriptor(),
            options: *options,
            session_policy: session_policy.to_string(),
            sessions: transcripts.iter().map(|t| t.key.clone()).collect(),
            aggregates: Aggregates::from_rows(experiment, &rows),
            rows,
            parse_failures,
            client_failures,
        }
    }

    pub fn correlation(&self, dim: Dimension) -> Option<&CorrelationResult> {
        self.aggregates.correlations.iter().find(|c| c.dimension == dim)
    }

    pub fn to_canonical_json(&self) -> String {
        to_canonical_json(self).expect("reports serialize")
    }

    /// Flat view of the rows. Lossy: raw replies are omitted.
    pub fn to_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: &[&str] = match self.experiment {
            ExperimentId::Rq1 => &["id", "session", "v", "a", "d", "truth_v", "truth_a", "truth_d", "error"],
            ExperimentId::Rq2Numeric => &[
                "id",
                "session",
                "word",
                "distance",
                "rank",
                "reference_word",
                "reference_distance",
                "reference_rank",
                "error",
            ],
            ExperimentId::Rq2Latent => &["id", "session", "primary", "alternates", "hallucinated", "expert", "grade", "error"],
            ExperimentId::Rq2Generate => &["id", "session", "text", "rating", "error"],
            ExperimentId::Rq3 => &["id", "session", "expected", "predicted", "intensity", "correct", "error"],
        };
        w.write_record(header)?;
        for r in &self.rows {
            let mut rec = vec![r.id.clone(), r.session.clone()];
            let fields = header.len() - 3;
            match &r.value {
                Some(RowValue::Vad { predicted, truth, .. }) => {
                    rec.extend(predicted.iter().chain(truth).map(f64::to_string));
                }
                Some(RowValue::Mapping {
                    word,
                    distance,
                    rank,
                    reference,
                }) => {
                    rec.extend([word.clone(), distance.to_string(), rank.to_string()]);
                    match reference {
                        Some(m) => rec.extend([m.word.clone(), m.distance.to_string(), m.rank.to_string()]),
                        None => rec.extend([String::new(), String::new(), String::new()]),
                    }
                }
                Some(RowValue::WordPick {
                    primary,
                    alternates,
                    hallucinated,
                    expert,
                    grade,
                }) => rec.extend([
                    primary.join(", "),
                    alternates.join(", "),
                    hallucinated.join(", "),
                    expert.join(", "),
                    format!("{grade:?}").to_lowercase(),
                ]),
                Some(RowValue::Generated { text, rating, .. }) => rec.extend([text.clone(), rating.clone()]),
                Some(RowValue::Emotion {
                    expected,
                    predicted,
                    intensity,
                    correct,
                }) => rec.extend([
                    expected.variant_name().to_string(),
                    predicted.variant_name().to_string(),
                    intensity.map(|i| i.as_str().to_string()).unwrap_or_default(),
                    correct.to_string(),
                ]),
                None => rec.extend(std::iter::repeat_n(String::new(), fields)),
            }
            rec.push(r.error.as_ref().map(ToString::to_string).unwrap_or_default());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// A report plus the transcripts of every session it used.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ExperimentReport,
    pub transcripts: Vec<SessionTranscript>,
}

struct SessionRun<'b> {
    session: ChatSession<'b>,
}

impl<'b> SessionRun<'b> {
    fn open(backend: &'b dyn ChatBackend, key: String) -> Self {
        SessionRun {
            session: open_session(backend, key),
        }
    }

    fn send(&mut self, template: TemplateId, text: String) -> Result<String, ClientError> {
        self.session.send(&Prompt { template, text })
    }

    fn key(&self) -> String {
        self.session.key().to_string()
    }

    fn finish(self) -> SessionTranscript {
        self.session.transcript()
    }
}

pub fn rq1_session_key(dataset: &str, dominance_clause: bool, batch: usize, attempt: usize) -> String {
    let mut key = format!("rq1/{dataset}");
    if !dominance_clause {
        key.push_str("/no-clause");
    }
    key.push_str(&format!("/batch-{batch}"));
    if attempt > 0 {
        key.push_str(&format!("/retry-{attempt}"));
    }
    key
}

pub const RQ2_NUMERIC_SESSION: &str = "rq2.1";

pub fn rq2_latent_session_key(id: &str, perspective: bool) -> String {
    if perspective {
        format!("rq2.2-perspective/{id}")
    } else {
        format!("rq2.2/{id}")
    }
}

pub fn rq2_generate_session_key(octant: &Octant) -> String {
    format!("rq2.3/{}", octant.signature())
}

pub fn rq3_session_key(label: EmotionLabel) -> String {
    format!("rq3/{}", label.variant_name())
}

fn texts(d: &Dataset) -> Vec<&str> {
    d.items.iter().map(|s| s.text.as_str()).collect()
}

/// Instruction turn then numbered block turn; returns the block reply.
fn vad_exchange(
    run: &mut SessionRun<'_>,
    dominance_clause: bool,
    block: &[&str],
) -> Result<(String, Result<Vec<prompt_kit::ParsedVadRow>, ParseError>), RowError> {
    run.send(TemplateId::P1, prompt_kit::render_sentiment_instruction(dominance_clause))?;
    let block_text = prompt_kit::render_stimulus_block(block).expect("callers pass non-empty blocks");
    let reply = run.send(TemplateId::P1Block, block_text)?;
    let parsed = prompt_kit::parse_vad_table(&reply, block.len());
    Ok((reply, parsed))
}

/// VAD ratings for a dataset, batches of 20, one fresh session per batch.
pub fn run_rq1(dataset: &Dataset, backend: &dyn ChatBackend, options: &RunOptions) -> Result<RunOutput, ExperimentError> {
    if dataset.items.is_empty() {
        return Err(ExperimentError::EmptyInput("dataset"));
    }
    let batches: Vec<(usize, &[crate::stimuli::Stimulus])> = dataset.items.chunks(BATCH_SIZE).enumerate().collect();
    let results = par::map(options.exec, &batches, |(b, items)| {
        let block: Vec<&str> = items.iter().map(|s| s.text.as_str()).collect();
        let mut transcripts = Vec::new();
        let mut attempt = 0;
        let (key, raw, outcome) = loop {
            let mut run = SessionRun::open(backend, rq1_session_key(&dataset.name, options.dominance_clause, *b, attempt));
            let key = run.key();
            let result = vad_exchange(&mut run, options.dominance_clause, &block);
            transcripts.push(run.finish());
            match result {
                Ok((_, Err(ParseError::RowCount { .. }))) if attempt < options.batch_retries => attempt += 1,
                Ok((raw, parsed)) => break (key, Some(raw), parsed.map_err(RowError::from)),
                Err(e) => break (key, None, Err(e)),
            }
        };
        let rows: Vec<ReportRow> = items
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (value, error) = match &outcome {
                    Ok(parsed) => (
                        Some(RowValue::Vad {
                            predicted: parsed[i].vad.components(),
                            truth: s.ground_truth.components(),
                            truth_scale: s.ground_truth.scale(),
                        }),
                        None,
                    ),
                    Err(e) => (None, Some(e.clone())),
                };
                ReportRow {
                    id: s.id.clone(),
                    session: key.clone(),
                    raw: raw.clone(),
                    value,
                    error,
                }
            })
            .collect();
        (rows, transcripts)
    });
    let (rows, transcripts) = flatten(results);
    let policy = format!("fresh session per batch of {BATCH_SIZE}; instruction and block sent as separate turns");
    Ok(RunOutput {
        report: ExperimentReport::assemble(
            ExperimentId::Rq1,
            Some(dataset.name.clone()),
            backend,
            options,
            &policy,
            &transcripts,
            rows,
        ),
        transcripts,
    })
}

fn flatten(results: Vec<(Vec<ReportRow>, Vec<SessionTranscript>)>) -> (Vec<ReportRow>, Vec<SessionTranscript>) {
    let mut rows = Vec::new();
    let mut transcripts = Vec::new();
    for (r, t) in results {
        rows.extend(r);
        transcripts.extend(t);
    }
    (rows, transcripts)
}

/// Rate both sets and then ask for a word per situation, all in one session.
pub fn run_rq2_numeric(
    situations: &Dataset,
    words: &Dataset,
    reference: Option<&[MappingRow]>,
    backend: &dyn ChatBackend,
    options: &RunOptions,
) -> Result<RunOutput, ExperimentError> {
    if situations.items.is_empty() {
        return Err(ExperimentError::EmptyInput("situation set"));
    }
    if words.items.is_empty() {
        return Err(ExperimentError::EmptyInput("word set"));
    }
    let mut run = SessionRun::open(backend, RQ2_NUMERIC_SESSION.to_string());
    let key = run.key();
    let word_labels: Vec<String> = words.items.iter().map(|w| normalize_word(&w.text)).collect();

    type Numeric = (String, Vec<Result<String, ParseError>>, crate::affect_space::DistanceMatrix);
    let outcome = (|| -> Result<Numeric, RowError> {
        let (_, s_parsed) = vad_exchange(&mut run, options.dominance_clause, &texts(situations))?;
        let s_parsed = s_parsed?;
        let (_, w_parsed) = vad_exchange(&mut run, options.dominance_clause, &texts(words))?;
        let w_parsed = w_parsed?;
        let reply = run.send(TemplateId::P2, prompt_kit::render_numeric_mapping_prompt())?;
        let ids: Vec<&str> = situations.items.iter().map(|s| s.id.as_str()).collect();
        let picks = prompt_kit::parse_numeric_mapping(&reply, &ids, &word_labels);
        let srows: Vec<(String, VadTriple)> = situations.items.iter().zip(&s_parsed).map(|(s, p)| (s.id.clone(), p.vad)).collect();
        let wcols: Vec<(String, VadTriple)> = word_labels.iter().cloned().zip(w_parsed.iter().map(|p| p.vad)).collect();
        let matrix = distance_matrix_with(&srows, &wcols, options.exec).expect("all parsed values share the unit scale");
        Ok((reply, picks, matrix))
    })();

    let rows = situations
        .items
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut row = ReportRow {
                id: s.id.clone(),
                session: key.clone(),
                raw: None,
                value: None,
                error: None,
            };
            match &outcome {
                Err(e) => row.error = Some(e.clone()),
                Ok((reply, picks, matrix)) => {
                    row.raw = Some(reply.clone());
                    match &picks[i] {
                        Err(e) => row.error = Some(e.clone().into()),
                        Ok(word) => {
                            let distance = matrix.get(&s.id, word).expect("picked word is a column");
                            let rank = rank_of(matrix, &s.id, word).expect("picked word is a column");
                            let reference = reference.and_then(|r| r.iter().find(|m| m.id == s.id)).map(|m| MappingReference {
                                word: m.numeric_word.clone(),
                                distance: m.numeric_distance,
                                rank: m.numeric_rank,
                            });
                            row.value = Some(RowValue::Mapping {
                                word: word.clone(),
                                distance,
                                rank,
                                reference,
                            });
                        }
                    }
                }
            }
            row
        })
        .collect();
    let transcripts = vec![run.finish()];
    Ok(RunOutput {
        report: ExperimentReport::assemble(
            ExperimentId::Rq2Numeric,
            Some(format!("{}+{}", situations.name, words.name)),
            backend,
            options,
            "single session: situation ratings, word ratings, then the mapping request",
            &transcripts,
            rows,
        ),
        transcripts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertPair {
    pub id: String,
    pub pair: (String, String),
}

impl ExpertPair {
    pub fn from_mapping(rows: &[MappingRow]) -> Vec<ExpertPair> {
        rows.iter()
            .map(|r| ExpertPair {
                id: r.id.clone(),
                pair: r.expert_pair(),
            })
            .collect()
    }
}

/// Expert side file: `id,expert_mapping` with the two words comma-separated
/// inside the second column.
pub fn load_expert_csv<R: Read>(source: R) -> Result<Vec<ExpertPair>, ExperimentError> {
    #[derive(Deserialize)]
    struct Raw {
        id: String,
        expert_mapping: String,
    }
    let mut out = Vec::new();
    for (i, rec) in csv::Reader::from_reader(source).deserialize::<Raw>().enumerate() {
        let r = rec?;
        let words: Vec<String> = r.expert_mapping.split(',').map(|w| w.trim().to_string()).filter(|w| !w.is_empty()).collect();
        if words.len() != 2 {
            return Err(ExperimentError::SideFile {
                path: format!("expert mapping row {}", i + 2),
                message: format!("expected two words, got `{}`", r.expert_mapping),
            });
        }
        out.push(ExpertPair {
            id: r.id,
            pair: (words[0].clone(), words[1].clone()),
        });
    }
    Ok(out)
}

/// Ratings side file: `octant,rating`.
pub fn load_ratings_csv<R: Read>(source: R) -> Result<BTreeMap<String, String>, ExperimentError> {
    #[derive(Deserialize)]
    struct Raw {
        octant: String,
        rating: String,
    }
    let mut out = BTreeMap::new();
    for rec in csv::Reader::from_reader(source).deserialize::<Raw>() {
        let r = rec?;
        out.insert(r.octant.trim().to_string(), r.rating.trim().to_string());
    }
    Ok(out)
}

/// One session per situation, two words picked from the list.
pub fn run_rq2_latent(
    situations: &Dataset,
    words: &Dataset,
    expert: &[ExpertPair],
    backend: &dyn ChatBackend,
    options: &RunOptions,
) -> Result<RunOutput, ExperimentError> {
    if situations.items.is_empty() {
        return Err(ExperimentError::EmptyInput("situation set"));
    }
    let list: Vec<&str> = texts(words);
    let mut jobs = Vec::new();
    for s in &situations.items {
        let e = expert
            .iter()
            .find(|e| e.id == s.id)
            .ok_or_else(|| ExperimentError::MissingExpert(s.id.clone()))?;
        let (template, text) = if options.perspective_prompt {
            (TemplateId::P3Perspective, prompt_kit::render_word_pick_perspective_prompt(&s.text, &list)?)
        } else {
            (TemplateId::P3, prompt_kit::render_word_pick_prompt(&s.text, &list)?)
        };
        jobs.push((s.id.clone(), e.pair.clone(), template, text));
    }
    let results = par::map(options.exec, &jobs, |(id, pair, template, text)| {
        let mut run = SessionRun::open(backend, rq2_latent_session_key(id, options.perspective_prompt));
        let mut row = ReportRow {
            id: id.clone(),
            session: run.key(),
            raw: None,
            value: None,
            error: None,
        };
        match run.send(*template, text.clone()) {
            Err(e) => row.error = Some(e.into()),
            Ok(reply) => {
                match prompt_kit::parse_word_pair(&reply, &list) {
                    Err(e) => row.error = Some(e.into()),
                    Ok(p) => {
                        let m = metrics::match_score((&p.primary.0, &p.primary.1), (&pair.0, &pair.1), &list);
                        row.value = Some(RowValue::WordPick {
                            primary: [p.primary.0, p.primary.1],
                            alternates: p.alternates,
                            hallucinated: p.hallucinated,
                            expert: [normalize_word(&pair.0), normalize_word(&pair.1)],
                            grade: m.grade,
                        });
                    }
                }
                row.raw = Some(reply);
            }
        }
        (vec![row], vec![run.finish()])
    });
    let (rows, transcripts) = flatten(results);
    Ok(RunOutput {
        report: ExperimentReport::assemble(
            ExperimentId::Rq2Latent,
            Some(format!("{}+{}", situations.name, words.name)),
            backend,
            options,
            "one session per situation",
            &transcripts,
            rows,
        ),
        transcripts,
    })
}

/// One session per octant. Ratings come from a side file; missing ones are
/// reported as pending.
pub fn run_rq2_generate(
    octants: &[Octant],
    ratings: &BTreeMap<String, String>,
    backend: &dyn ChatBackend,
    options: &RunOptions,
) -> Result<RunOutput, ExperimentError> {
    if octants.is_empty() {
        return Err(ExperimentError::EmptyInput("octant list"));
    }
    let results = par::map(options.exec, octants, |o| {
        let sig = o.signature();
        let mut run = SessionRun::open(backend, rq2_generate_session_key(o));
        let mut row = ReportRow {
            id: sig.clone(),
            session: run.key(),
            raw: None,
            value: None,
            error: None,
        };
        match run.send(TemplateId::P4, prompt_kit::render_octant_prompt(o)) {
            Err(e) => row.error = Some(e.into()),
            Ok(reply) => {
                if reply.trim().is_empty() {
                    row.error = Some(RowError::EmptyGeneration);
                } else {
                    row.value = Some(RowValue::Generated {
                        octant: *o,
                        text: reply.trim().to_string(),
                        rating: ratings.get(&sig).cloned().unwrap_or_else(|| PENDING.to_string()),
                    });
                }
                row.raw = Some(reply);
            }
        }
        (vec![row], vec![run.finish()])
    });
    let (rows, transcripts) = flatten(results);
    Ok(RunOutput {
        report: ExperimentReport::assemble(
            ExperimentId::Rq2Generate,
            None,
            backend,
            options,
            "one session per octant",
            &transcripts,
            rows,
        ),
        transcripts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElicitationCase {
    pub expected: EmotionLabel,
    pub situation: String,
}

impl ElicitationCase {
    pub fn from_fixture(rows: &[ElicitationRow]) -> Vec<ElicitationCase> {
        rows.iter()
            .map(|r| ElicitationCase {
                expected: r.label,
                situation: r.situation.clone(),
            })
            .collect()
    }

    /// The structured frame encoding this case.
    pub fn frame(&self) -> AppraisalFrame {
        canonical_frame(self.expected)
    }
}

/// One session per case with all twelve rules in the prompt.
pub fn run_rq3(cases: &[ElicitationCase], backend: &dyn ChatBackend, options: &RunOptions) -> Result<RunOutput, ExperimentError> {
    if cases.is_empty() {
        return Err(ExperimentError::EmptyInput("case list"));
    }
    let rules = table_rules();
    let prompts: Vec<String> = cases
        .iter()
        .map(|c| prompt_kit::render_chatocc_prompt(&rules, &c.situation))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(&ElicitationCase, &String)> = cases.iter().zip(&prompts).collect();
    let results = par::map(options.exec, &jobs, |(case, text)| {
        let mut run = SessionRun::open(backend, rq3_session_key(case.expected));
        let mut row = ReportRow {
            id: case.expected.variant_name().to_string(),
            session: run.key(),
            raw: None,
            value: None,
            error: None,
        };
        match run.send(TemplateId::P5, (*text).clone()) {
            Err(e) => row.error = Some(e.into()),
            Ok(reply) => {
                match prompt_kit::parse_emotion_label(&reply) {
                    Err(e) => row.error = Some(e.into()),
                    Ok((label, intensity)) => {
                        row.value = Some(RowValue::Emotion {
                            expected: case.expected,
                            predicted: label,
                            intensity,
                            correct: label == case.expected,
                        })
                    }
                }
                row.raw = Some(reply);
            }
        }
        (vec![row], vec![run.finish()])
    });
    let (rows, transcripts) = flatten(results);
    Ok(RunOutput {
        report: ExperimentReport::assemble(
            ExperimentId::Rq3,
            None,
            backend,
            options,
            "one session per case",
            &transcripts,
            rows,
        ),
        transcripts,
    })
}

/// Ratings as printed in the octant fixture, keyed by signature.
pub fn fixture_ratings(rows: &[OctantRow]) -> BTreeMap<String, String> {
    rows.iter().map(|r| (r.octant.signature(), r.rating.clone())).collect()
}

pub const REPLAY_ACK: &str = "Got it.";

fn push_vad_session(store: &mut ReplayStore, key: &str, clause: bool, block: &[&str], table: String) {
    let instruction = Prompt {
        template: TemplateId::P1,
        text: prompt_kit::render_sentiment_instruction(clause),
    };
    let block = Prompt {
        template: TemplateId::P1Block,
        text: prompt_kit::render_stimulus_block(block).expect("fixture blocks are non-empty"),
    };
    store.push(key, &instruction, REPLAY_ACK);
    store.push(key, &block, table);
}

fn prediction_table(fx: &Fixtures, dataset: &Dataset, variant: PredictionVariant) -> String {
    let preds = fx.predictions_for(&dataset.name, variant);
    let rows: Vec<prompt_kit::ParsedVadRow> = dataset
        .items
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = preds
                .iter()
                .find(|p| p.stimulus_id == s.id)
                .expect("every fixture stimulus has a prediction");
            prompt_kit::ParsedVadRow {
                index: i + 1,
                label: Some((i + 1).to_string()),
                vad: p.vad,
            }
        })
        .collect();
    prompt_kit::render_vad_table(&rows)
}

/// Replay store holding the published answers for every experiment, in the
/// shape each pipeline asks for them.
pub fn reference_replay_store(fx: &Fixtures) -> ReplayStore {
    let mut store = ReplayStore::new(ReplayMetadata {
        model: "gpt-3.5 (web UI, early 2023)".into(),
        captured: "2023-03".into(),
    });
    let anet = &fx.anet20;
    let words = &fx.words20;

    push_vad_session(
        &mut store,
        &rq1_session_key(&anet.name, true, 0, 0),
        true,
        &texts(anet),
        prediction_table(fx, anet, PredictionVariant::Normal),
    );
    push_vad_session(
        &mut store,
        &rq1_session_key(&anet.name, false, 0, 0),
        false,
        &texts(anet),
        prediction_table(fx, anet, PredictionVariant::FailedDominance),
    );
    push_vad_session(
        &mut store,
        &rq1_session_key(&words.name, true, 0, 0),
        true,
        &texts(words),
        prediction_table(fx, words, PredictionVariant::Normal),
    );

    push_vad_session(&mut store, RQ2_NUMERIC_SESSION, true, &texts(anet), prediction_table(fx, anet, PredictionVariant::Normal));
    push_vad_session(&mut store, RQ2_NUMERIC_SESSION, true, &texts(words), prediction_table(fx, words, PredictionVariant::Normal));
    let mapping: Vec<String> = anet
        .items
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            fx.word_mapping
                .iter()
                .find(|m| m.id == s.id)
                .map(|m| format!("{}. {}", i + 1, m.numeric_word))
        })
        .collect();
    store.push(
        RQ2_NUMERIC_SESSION,
        &Prompt {
            template: TemplateId::P2,
            text: prompt_kit::render_numeric_mapping_prompt(),
        },
        mapping.join("\n"),
    );

    let list = texts(words);
    for m in &fx.word_mapping {
        let s = anet.get(&m.id).expect("mapping rows reference anet20");
        let text = prompt_kit::render_word_pick_prompt(&s.text, &list).expect("fixture situation is non-empty");
        store.push(
            &rq2_latent_session_key(&m.id, false),
            &Prompt {
                template: TemplateId::P3,
                text,
            },
            m.free_mapping.clone(),
        );
    }

    for o in &fx.octants {
        store.push(
            &rq2_generate_session_key(&o.octant),
            &Prompt {
                template: TemplateId::P4,
                text: prompt_kit::render_octant_prompt(&o.octant),
            },
            o.generated.clone(),
        );
    }

    let rules = table_rules();
    for e in &fx.elicitation {
        store.push(
            &rq3_session_key(e.label),
            &Prompt {
                template: TemplateId::P5,
                text: prompt_kit::render_chatocc_prompt(&rules, &e.situation).expect("fixture situation is non-empty"),
            },
            e.prediction.clone(),
        );
    }
    store
}

/// Run one experiment over the embedded reference inputs.
pub fn run_on_fixtures(
    experiment: ExperimentId,
    dataset: &str,
    fx: &Fixtures,
    backend: &dyn ChatBackend,
    options: &RunOptions,
) -> Result<RunOutput, ExperimentError> {
    match experiment {
        ExperimentId::Rq1 => {
            let d = fx.dataset(dataset).ok_or(ExperimentError::EmptyInput("requested dataset"))?;
            run_rq1(d, backend, options)
        }
        ExperimentId::Rq2Numeric => run_rq2_numeric(&fx.anet20, &fx.words20, Some(&fx.word_mapping), backend, options),
        ExperimentId::Rq2Latent => {
            run_rq2_latent(&fx.anet20, &fx.words20, &ExpertPair::from_mapping(&fx.word_mapping), backend, options)
        }
        ExperimentId::Rq2Generate => run_rq2_generate(&Octant::all(), &BTreeMap::new(), backend, options),
        ExperimentId::Rq3 => run_rq3(&ElicitationCase::from_fixture(&fx.elicitation), backend, options),
    }
}

/// Pretty JSON with every float written to 17 significant digits.
pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter::default());
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("json is utf-8"))
}

#[derive(Default)]
struct CanonicalFormatter {
    inner: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.inner.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.inner.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.inner.end_object_value(w)
    }
}

fn transcript_file_name(key: &str) -> String {
    let safe: String = key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

/// Write `config.json`, `transcripts/`, `report.json` and `report.csv`.
pub fn write_run_dir<C: Serialize>(dir: &Path, config: &C, output: &RunOutput) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir.join("transcripts"))?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(config)? + "\n")?;
    for t in &output.transcripts {
        std::fs::write(
            dir.join("transcripts").join(transcript_file_name(&t.key)),
            serde_json::to_string_pretty(t)? + "\n",
        )?;
    }
    std::fs::write(dir.join("report.json"), output.report.to_canonical_json())?;
    std::fs::write(dir.join("report.csv"), output.report.to_csv()?)?;
    Ok(())
}
