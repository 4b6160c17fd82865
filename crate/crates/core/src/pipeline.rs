//! Retriever and evaluator wired into one calibratable pipeline.

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::RwLock;
use rayon::prelude::*;

use crate::conformal::{conformal_quantile, ConformalQuantile};
use crate::error::{Error, Result};
use crate::evaluator::{
    build_prompt, calibrate_evaluator, CalibrationEvidence, EvaluatorCalibration,
    GenerationRequest, Generator, ScoredCandidates,
};
use crate::graph::{EntityId, KnowledgeGraph, RelationPath};
use crate::retriever::{
    calibrate_retriever, retrieve, Retrieval, RetrieverCalibration, ScoredTraversal,
    TraversalLimits,
};
use crate::riskctl::{LambdaConfig, LambdaQuantiles, RiskPipeline, SampleOutcome};
use crate::sample::QASample;
use crate::scoring::Scorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineSettings {
    pub limits: TraversalLimits,
    /// Return unfiltered candidates when the generator fails.
    pub fail_open: bool,
}

impl PipelineSettings {
    pub fn new(max_hops: usize) -> Self {
        Self {
            limits: TraversalLimits::new(max_hops),
            fail_open: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineCalibration {
    pub retriever: RetrieverCalibration,
    pub evaluator: EvaluatorCalibration,
}

impl PipelineCalibration {
    pub fn quantiles(&self, lambda: &LambdaConfig) -> Result<LambdaQuantiles> {
        Ok(LambdaQuantiles {
            step: conformal_quantile(&self.retriever.step_scores, lambda.alpha1)?,
            path: conformal_quantile(&self.retriever.path_scores, lambda.alpha2)?,
            answer: conformal_quantile(&self.evaluator.answer_scores, lambda.alpha3)?,
        })
    }
}

/// Answer set for one question with the evidence behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub answers: Vec<EntityId>,
    pub retrieval: Retrieval,
    pub generation: Option<String>,
    pub degraded: bool,
}

impl Prediction {
    pub fn answer_labels(&self, g: &KnowledgeGraph) -> Vec<String> {
        self.answers
            .iter()
            .map(|&e| g.entity_label(e).to_owned())
            .collect()
    }

    /// Supporting paths of the final answers, rendered.
    pub fn supporting_paths(&self, g: &KnowledgeGraph) -> Vec<String> {
        self.answers
            .iter()
            .flat_map(|&e| self.retrieval.candidates.paths(e))
            .map(|p| p.render(g))
            .collect()
    }
}

/// Shared (step, path) thresholds and the (config index, answer threshold)
/// pairs that use them.
type ThresholdGroup = (
    (ConformalQuantile, ConformalQuantile),
    Vec<(usize, ConformalQuantile)>,
);

/// Retrieval + generator filtering over one knowledge graph.
pub struct KgqaPipeline {
    graph: Arc<KnowledgeGraph>,
    scorer: Scorer,
    generator: Arc<dyn Generator>,
    settings: PipelineSettings,
    calibration: Option<PipelineCalibration>,
    traces: RwLock<HashMap<String, Arc<ScoredTraversal>>>,
    generations: RwLock<HashMap<String, String>>,
}

impl KgqaPipeline {
    pub fn new(
        graph: Arc<KnowledgeGraph>,
        scorer: Scorer,
        generator: Arc<dyn Generator>,
        settings: PipelineSettings,
    ) -> Self {
        Self {
            graph,
            scorer,
            generator,
            settings,
            calibration: None,
            traces: RwLock::new(HashMap::new()),
            generations: RwLock::new(HashMap::new()),
        }
    }

    pub fn graph(&self) -> &Arc<KnowledgeGraph> {
        &self.graph
    }

    pub fn scorer(&self) -> &Scorer {
        &self.scorer
    }

    pub fn settings(&self) -> &PipelineSettings {
        &self.settings
    }

    pub fn calibration(&self) -> Option<&PipelineCalibration> {
        self.calibration.as_ref()
    }

    fn calibrated(&self) -> Result<&PipelineCalibration> {
        self.calibration
            .as_ref()
            .ok_or_else(|| Error::contract("pipeline used before calibration"))
    }

    fn trace(&self, question: &str, topics: &[EntityId]) -> Result<Arc<ScoredTraversal>> {
        let mut key = question.to_owned();
        for t in topics {
            key.push('\u{1f}');
            key.push_str(&t.0.to_string());
        }
        if let Some(t) = self.traces.read().get(&key) {
            return Ok(t.clone());
        }
        let trace = Arc::new(ScoredTraversal::build(
            &self.graph,
            question,
            topics,
            self.settings.limits,
            &self.scorer,
        )?);
        self.traces.write().insert(key, trace.clone());
        Ok(trace)
    }

    /// Same result as [`retrieve`], reusing cached edge scores when possible.
    pub fn retrieve(
        &self,
        question: &str,
        topics: &[EntityId],
        q1: &ConformalQuantile,
        q2: &ConformalQuantile,
    ) -> Result<Retrieval> {
        let trace = self.trace(question, topics)?;
        if trace.is_truncated() {
            return retrieve(
                &self.graph,
                question,
                topics,
                q1,
                q2,
                self.settings.limits,
                &self.scorer,
            );
        }
        Ok(trace.select(q1, q2, self.settings.limits.frontier_budget))
    }

    fn generate_cached(&self, question: &str, paths: &[RelationPath]) -> Result<String> {
        let prompt = build_prompt(&self.graph, paths, question);
        if let Some(g) = self.generations.read().get(&prompt) {
            return Ok(g.clone());
        }
        let text = self.generator.generate(&GenerationRequest {
            graph: &self.graph,
            question,
            paths,
            prompt: &prompt,
        })?;
        self.generations.write().insert(prompt, text.clone());
        Ok(text)
    }

    fn score_retrieval(&self, question: &str, retrieval: &Retrieval) -> Result<ScoredCandidates> {
        let generation = match self.generate_cached(question, &retrieval.paths) {
            Ok(g) => g,
            Err(Error::Generator(_)) if self.settings.fail_open => {
                return Ok(ScoredCandidates {
                    scores: retrieval
                        .candidates
                        .entities()
                        .map(|e| (e, f64::NAN))
                        .collect(),
                    generation: None,
                    degraded: true,
                })
            }
            Err(e) => return Err(e),
        };
        let mut scores = Vec::with_capacity(retrieval.candidates.len());
        for c in retrieval.candidates.entities() {
            scores.push((
                c,
                self.scorer.score(self.graph.entity_label(c), &generation)?,
            ));
        }
        Ok(ScoredCandidates {
            scores,
            generation: Some(generation),
            degraded: false,
        })
    }

    /// Full retrieve-then-filter prediction under explicit thresholds.
    pub fn predict(
        &self,
        question: &str,
        topics: &[EntityId],
        quantiles: &LambdaQuantiles,
    ) -> Result<Prediction> {
        let retrieval = self.retrieve(question, topics, &quantiles.step, &quantiles.path)?;
        let scored = self.score_retrieval(question, &retrieval)?;
        Ok(Prediction {
            answers: scored.filter(&quantiles.answer),
            generation: scored.generation,
            degraded: scored.degraded,
            retrieval,
        })
    }

    /// Per-sample outcomes under explicit thresholds, e.g. ones loaded from
    /// a saved calibration. Does not require [`RiskPipeline::calibrate`].
    pub fn outcomes_with(
        &self,
        quantiles: &LambdaQuantiles,
        samples: &[QASample],
    ) -> Result<Vec<SampleOutcome>> {
        let groups = [(
            (quantiles.step, quantiles.path),
            vec![(0, quantiles.answer)],
        )];
        samples
            .par_iter()
            .map(|s| Ok(self.sample_outcomes(s, &groups, 1)?.remove(0)))
            .collect()
    }

    /// Candidate sets of vacuous-threshold retrieval (no generator filter).
    pub fn full_candidate_sets(&self, samples: &[QASample]) -> Result<Vec<SampleOutcome>> {
        let all = ConformalQuantile::admit_all();
        samples
            .par_iter()
            .map(|s| {
                let r = s.resolve(&self.graph);
                if r.topics.is_empty() {
                    return Ok(SampleOutcome::default());
                }
                let retrieval = self.retrieve(&s.question, &r.topics, &all, &all)?;
                Ok(SampleOutcome {
                    prediction: retrieval
                        .candidates
                        .entities()
                        .map(|e| self.graph.entity_label(e).to_owned())
                        .collect(),
                    truncated: retrieval.truncated,
                    degraded: false,
                })
            })
            .collect()
    }

    fn sample_outcomes(
        &self,
        sample: &QASample,
        groups: &[ThresholdGroup],
        n_configs: usize,
    ) -> Result<Vec<SampleOutcome>> {
        let mut out = vec![SampleOutcome::default(); n_configs];
        let resolved = sample.resolve(&self.graph);
        if resolved.topics.is_empty() {
            return Ok(out);
        }
        for ((q1, q2), members) in groups {
            let retrieval = self.retrieve(&sample.question, &resolved.topics, q1, q2)?;
            let scored = self.score_retrieval(&sample.question, &retrieval)?;
            for (idx, q3) in members {
                out[*idx] = SampleOutcome {
                    prediction: scored
                        .filter(q3)
                        .into_iter()
                        .map(|e| self.graph.entity_label(e).to_owned())
                        .collect(),
                    truncated: retrieval.truncated,
                    degraded: scored.degraded,
                };
            }
        }
        Ok(out)
    }
}

impl RiskPipeline for KgqaPipeline {
    fn calibrate(&mut self, quantile_split: &[QASample]) -> Result<()> {
        let retriever = calibrate_retriever(
            &self.graph,
            quantile_split,
            &self.scorer,
            self.settings.limits.max_hops,
        )?;
        let all = ConformalQuantile::admit_all();
        let evidence: Vec<CalibrationEvidence<'_>> = quantile_split
            .par_iter()
            .filter_map(|s| {
                let r = s.resolve(&self.graph);
                (!r.topics.is_empty()).then_some((s, r))
            })
            .map(|(s, r)| {
                let retrieval = self.retrieve(&s.question, &r.topics, &all, &all)?;
                Ok(CalibrationEvidence {
                    sample: s,
                    paths: retrieval.paths,
                })
            })
            .collect::<Result<_>>()?;
        let evaluator =
            calibrate_evaluator(&self.graph, &evidence, &*self.generator, &self.scorer)?;
        self.calibration = Some(PipelineCalibration {
            retriever,
            evaluator,
        });
        Ok(())
    }

    fn quantiles(&self, lambda: &LambdaConfig) -> Result<LambdaQuantiles> {
        self.calibrated()?.quantiles(lambda)
    }

    fn outcomes(&self, lambda: &LambdaConfig, samples: &[QASample]) -> Result<Vec<SampleOutcome>> {
        Ok(self
            .outcomes_grid(std::slice::from_ref(lambda), samples)?
            .pop()
            .unwrap_or_default())
    }

    fn outcomes_grid(
        &self,
        configs: &[LambdaConfig],
        samples: &[QASample],
    ) -> Result<Vec<Vec<SampleOutcome>>> {
        let cal = self.calibrated()?;
        // Group configurations sharing retrieval thresholds so each sample is
        // retrieved and generated once per group.
        let mut groups: Vec<ThresholdGroup> = Vec::new();
        for (i, lambda) in configs.iter().enumerate() {
            let q = cal.quantiles(lambda)?;
            match groups
                .iter_mut()
                .find(|((a, b), _)| a.value == q.step.value && b.value == q.path.value)
            {
                Some((_, members)) => members.push((i, q.answer)),
                None => groups.push(((q.step, q.path), vec![(i, q.answer)])),
            }
        }
        let per_sample: Vec<Vec<SampleOutcome>> = samples
            .par_iter()
            .map(|s| self.sample_outcomes(s, &groups, configs.len()))
            .collect::<Result<_>>()?;
        let mut out: Vec<Vec<SampleOutcome>> = (0..configs.len())
            .map(|_| Vec::with_capacity(samples.len()))
            .collect();
        for sample_out in per_sample {
            for (i, o) in sample_out.into_iter().enumerate() {
                out[i].push(o);
            }
        }
        Ok(out)
    }

    fn ranked_candidates(&self, samples: &[QASample]) -> Result<Option<Vec<Vec<String>>>> {
        let ranked = samples
            .par_iter()
            .map(|s| {
                let r = s.resolve(&self.graph);
                if r.topics.is_empty() {
                    return Ok(Vec::new());
                }
                let trace = self.trace(&s.question, &r.topics)?;
                Ok(trace
                    .ranked_candidates()
                    .into_iter()
                    .map(|(e, _)| self.graph.entity_label(e).to_owned())
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Some(ranked))
    }
}
