//! Generator-backed filtering of retrieved candidates.
//!
//! The generator sees the reasoning paths through a fixed prompt and produces
//! free text. A candidate survives when the nonconformity between its label
//! and that text is within the calibrated threshold. The generator can only
//! remove candidates, never add them.

use std::sync::Arc;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalQuantile, ScoreSet};
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationPath};
use crate::http_client::{HttpSettings, JsonClient};
use crate::retriever::CandidateSet;
use crate::sample::QASample;
use crate::scoring::Scorer;

/// Input handed to a [`Generator`].
#[derive(Debug, Clone, Copy)]
pub struct GenerationRequest<'a> {
    pub graph: &'a KnowledgeGraph,
    pub question: &'a str,
    pub paths: &'a [RelationPath],
    pub prompt: &'a str,
}

/// Answer-producing text model.
pub trait Generator: Send + Sync {
    fn identity(&self) -> String;

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String>;
}

/// `Based on the following reasoning paths: P. Q?`
pub fn build_prompt(g: &KnowledgeGraph, paths: &[RelationPath], question: &str) -> String {
    let rendered = if paths.is_empty() {
        "(none)".to_owned()
    } else {
        paths
            .iter()
            .map(|p| p.render(g))
            .collect::<Vec<_>>()
            .join("; ")
    };
    let q = question.trim_end();
    let q = q.strip_suffix('?').unwrap_or(q);
    format!("Based on the following reasoning paths: {rendered}. {q}?")
}

/// Labels of the terminal entities of `paths`, deduplicated in order of first
/// appearance and joined by `", "`.
pub fn mock_generate(g: &KnowledgeGraph, paths: &[RelationPath]) -> String {
    let mut seen: Vec<EntityId> = Vec::new();
    for p in paths {
        let e = p.end();
        if !seen.contains(&e) {
            seen.push(e);
        }
    }
    seen.iter()
        .map(|&e| g.entity_label(e))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Deterministic stand-in generator built on [`mock_generate`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MockGenerator;

impl Generator for MockGenerator {
    fn identity(&self) -> String {
        "mock".into()
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String> {
        Ok(mock_generate(request.graph, request.paths))
    }
}

/// Settings for the external generator backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpGeneratorConfig {
    #[serde(flatten)]
    pub http: HttpSettings,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_max_new_tokens() -> u32 {
    10
}

fn default_max_in_flight() -> usize {
    4
}

impl HttpGeneratorConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            http: HttpSettings::new(endpoint),
            max_new_tokens: default_max_new_tokens(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

#[derive(Serialize)]
struct GenerateRequestBody<'a> {
    prompt: &'a str,
    max_new_tokens: u32,
}

#[derive(Deserialize)]
struct GenerateResponseBody {
    text: String,
}

/// Counting semaphore bounding concurrent requests.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

/// Generator backed by `POST {endpoint}/generate`.
pub struct HttpGenerator {
    client: JsonClient,
    max_new_tokens: u32,
    permits: Arc<Permits>,
}

impl HttpGenerator {
    pub fn new(config: HttpGeneratorConfig) -> Self {
        Self {
            client: JsonClient::new(config.http),
            max_new_tokens: config.max_new_tokens,
            permits: Arc::new(Permits {
                free: Mutex::new(config.max_in_flight.max(1)),
                cv: Condvar::new(),
            }),
        }
    }
}

impl Generator for HttpGenerator {
    fn identity(&self) -> String {
        format!("http:{}", self.client.settings().endpoint)
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String> {
        let _permit = self.permits.acquire();
        let body = GenerateRequestBody {
            prompt: request.prompt,
            max_new_tokens: self.max_new_tokens,
        };
        let resp: GenerateResponseBody = self
            .client
            .post("generate", &body)
            .map_err(Error::Generator)?;
        Ok(resp.text)
    }
}

/// Scores behind the answer-filter threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatorCalibration {
    pub answer_scores: ScoreSet,
    pub used: usize,
    pub skipped: usize,
}

/// Reasoning paths retrieved for one calibration sample.
#[derive(Debug, Clone)]
pub struct CalibrationEvidence<'a> {
    pub sample: &'a QASample,
    pub paths: Vec<RelationPath>,
}

/// Scores every gold answer label against the generation produced from the
/// sample's reasoning paths.
pub fn calibrate_evaluator(
    g: &KnowledgeGraph,
    evidence: &[CalibrationEvidence<'_>],
    generator: &dyn Generator,
    scorer: &Scorer,
) -> Result<EvaluatorCalibration> {
    let mut answer_scores = ScoreSet::default();
    let (mut used, mut skipped) = (0, 0);
    for ev in evidence {
        if ev.sample.answers.is_empty() {
            skipped += 1;
            continue;
        }
        let prompt = build_prompt(g, &ev.paths, &ev.sample.question);
        let generation = generator.generate(&GenerationRequest {
            graph: g,
            question: &ev.sample.question,
            paths: &ev.paths,
            prompt: &prompt,
        })?;
        for a in &ev.sample.answers {
            answer_scores.push(scorer.score(a, &generation)?)?;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::Calibration(
            "no usable evaluator calibration samples".into(),
        ));
    }
    Ok(EvaluatorCalibration {
        answer_scores,
        used,
        skipped,
    })
}

/// Final answer set for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub answers: Vec<EntityId>,
    /// `None` when the generator failed and the fail-open path was taken.
    pub generation: Option<String>,
    pub degraded: bool,
}

/// Per-candidate scores against one generation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidates {
    pub scores: Vec<(EntityId, f64)>,
    pub generation: Option<String>,
    pub degraded: bool,
}

impl ScoredCandidates {
    /// Candidates admitted by `q3`; a degraded scoring admits everything.
    pub fn filter(&self, q3: &ConformalQuantile) -> Vec<EntityId> {
        if self.degraded {
            return self.scores.iter().map(|(e, _)| *e).collect();
        }
        self.scores
            .iter()
            .filter(|(_, s)| q3.admits(*s))
            .map(|(e, _)| *e)
            .collect()
    }
}

/// Invokes the generator once and scores every candidate label against its
/// output. On generator failure with `fail_open`, returns a degraded result.
pub fn score_candidates(
    g: &KnowledgeGraph,
    candidates: &CandidateSet,
    paths: &[RelationPath],
    question: &str,
    generator: &dyn Generator,
    scorer: &Scorer,
    fail_open: bool,
) -> Result<ScoredCandidates> {
    let prompt = build_prompt(g, paths, question);
    let generation = match generator.generate(&GenerationRequest {
        graph: g,
        question,
        paths,
        prompt: &prompt,
    }) {
        Ok(text) => text,
        Err(e) if fail_open && matches!(e, Error::Generator(_)) => {
            return Ok(ScoredCandidates {
                scores: candidates.entities().map(|c| (c, f64::NAN)).collect(),
                generation: None,
                degraded: true,
            });
        }
        Err(e) => return Err(e),
    };
    let mut scores = Vec::with_capacity(candidates.len());
    for c in candidates.entities() {
        scores.push((c, scorer.score(g.entity_label(c), &generation)?));
    }
    Ok(ScoredCandidates {
        scores,
        generation: Some(generation),
        degraded: false,
    })
}

/// Keeps the candidates whose label is within `q3` of the generation.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    g: &KnowledgeGraph,
    candidates: &CandidateSet,
    paths: &[RelationPath],
    question: &str,
    q3: &ConformalQuantile,
    generator: &dyn Generator,
    scorer: &Scorer,
    fail_open: bool,
) -> Result<Evaluation> {
    let scored = score_candidates(g, candidates, paths, question, generator, scorer, fail_open)?;
    Ok(Evaluation {
        answers: scored.filter(q3),
        generation: scored.generation,
        degraded: scored.degraded,
    })
}
