//! Threshold-gated breadth-first retrieval of candidate answers.
//!
//! From every frontier item `(v, r_0 … r_{j-1})` and every neighbor
//! `(r_j, s)` of `v`:
//!
//! * the path is extended to `s` when the step score
//!   `S(question ‖ r_0 … r_{j-1}, r_j)` is at most the step threshold;
//! * `s` becomes a candidate when the path score
//!   `S(question, r_0 … r_j)` is at most the path threshold.
//!
//! Paths are simple (no entity repeats) and at most `max_hops` long. The
//! concatenation `‖` joins labels with a single space, question first.

use std::collections::VecDeque;

use indexmap::IndexMap;

use crate::conformal::{ConformalQuantile, ScoreSet};
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, RelationPath};
use crate::sample::QASample;
use crate::scoring::{Scorer, SimilarityKind};

pub const DEFAULT_FRONTIER_BUDGET: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraversalLimits {
    pub max_hops: usize,
    /// Maximum number of frontier pushes per retrieval.
    pub frontier_budget: usize,
}

impl TraversalLimits {
    pub fn new(max_hops: usize) -> Self {
        Self {
            max_hops,
            frontier_budget: DEFAULT_FRONTIER_BUDGET,
        }
    }
}

/// `question r_0 … r_{j-1}`: the text a next relation is scored against.
pub fn step_text(question: &str, prefix: &[&str]) -> String {
    let mut out = question.to_owned();
    for r in prefix {
        out.push(' ');
        out.push_str(r);
    }
    out
}

/// `r_0 … r_j` joined by single spaces.
pub fn chain_text(relations: &[&str]) -> String {
    relations.join(" ")
}

/// Score sets calibrating the step and path thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverCalibration {
    pub step_scores: ScoreSet,
    pub path_scores: ScoreSet,
    pub provider: String,
    pub kind: SimilarityKind,
    /// Samples that contributed at least one gold path.
    pub used: usize,
    /// Samples skipped for missing entities or unreachable answers.
    pub skipped: usize,
}

/// Step/path scores of one gold path, in the order calibration appends them.
pub fn gold_path_scores(
    g: &KnowledgeGraph,
    question: &str,
    path: &RelationPath,
    scorer: &Scorer,
) -> Result<(Vec<f64>, f64)> {
    let labels = path.relation_labels(g);
    let mut steps = Vec::with_capacity(labels.len());
    for j in 0..labels.len() {
        steps.push(scorer.score(&step_text(question, &labels[..j]), labels[j])?);
    }
    let full = scorer.score(question, &chain_text(&labels))?;
    Ok((steps, full))
}

/// Collects step and path scores along every gold path (all simple paths of
/// at most `max_hops` edges from a topic entity to a gold answer).
pub fn calibrate_retriever(
    g: &KnowledgeGraph,
    samples: &[QASample],
    scorer: &Scorer,
    max_hops: usize,
) -> Result<RetrieverCalibration> {
    if max_hops == 0 {
        return Err(Error::contract("max_hops must be at least 1"));
    }
    let mut step_scores = ScoreSet::default();
    let mut path_scores = ScoreSet::default();
    let (mut used, mut skipped) = (0, 0);
    for sample in samples {
        let resolved = sample.resolve(g);
        let mut contributed = false;
        for &t in &resolved.topics {
            for &a in &resolved.answers {
                for path in g.gold_paths(t, a, max_hops) {
                    let (steps, full) = gold_path_scores(g, &sample.question, &path, scorer)?;
                    for s in steps {
                        step_scores.push(s)?;
                    }
                    path_scores.push(full)?;
                    contributed = true;
                }
            }
        }
        if contributed {
            used += 1;
        } else {
            skipped += 1;
        }
    }
    if used == 0 {
        return Err(Error::Calibration(format!(
            "no usable retriever calibration samples ({skipped} skipped)"
        )));
    }
    Ok(RetrieverCalibration {
        step_scores,
        path_scores,
        provider: scorer.provider_identity().to_owned(),
        kind: scorer.kind(),
        used,
        skipped,
    })
}

/// Retrieved entities with every supporting path, in discovery order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    entries: IndexMap<EntityId, Vec<RelationPath>>,
}

impl CandidateSet {
    pub fn insert(&mut self, path: RelationPath) {
        self.entries.entry(path.end()).or_default().push(path);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.entries.contains_key(&e)
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.entries.keys().copied()
    }

    pub fn paths(&self, e: EntityId) -> &[RelationPath] {
        self.entries.get(&e).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (EntityId, &[RelationPath])> {
        self.entries.iter().map(|(e, p)| (*e, p.as_slice()))
    }
}

/// Output of one retrieval.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Retrieval {
    pub candidates: CandidateSet,
    /// Supporting paths of all candidates in collection order; these are the
    /// reasoning paths handed to the generator.
    pub paths: Vec<RelationPath>,
    /// Set when the frontier budget stopped expansion.
    pub truncated: bool,
    pub expansions: usize,
}

impl Retrieval {
    fn collect(&mut self, path: RelationPath) {
        self.candidates.insert(path.clone());
        self.paths.push(path);
    }
}

fn check_topics(g: &KnowledgeGraph, topics: &[EntityId]) -> Result<Vec<EntityId>> {
    if topics.is_empty() {
        return Err(Error::contract("retrieval needs at least one topic entity"));
    }
    let mut out = Vec::with_capacity(topics.len());
    for &t in topics {
        g.neighbors(t)?;
        if !out.contains(&t) {
            out.push(t);
        }
    }
    Ok(out)
}

/// Threshold-gated breadth-first traversal from `topics`.
///
/// An empty step threshold (`q1 = -inf`) closes the traversal entirely.
pub fn retrieve(
    g: &KnowledgeGraph,
    question: &str,
    topics: &[EntityId],
    q1: &ConformalQuantile,
    q2: &ConformalQuantile,
    limits: TraversalLimits,
    scorer: &Scorer,
) -> Result<Retrieval> {
    let topics = check_topics(g, topics)?;
    let mut out = Retrieval::default();
    if q1.admits_nothing() {
        return Ok(out);
    }
    let mut queue: VecDeque<RelationPath> = topics.into_iter().map(RelationPath::new).collect();
    while let Some(path) = queue.pop_front() {
        if path.len() >= limits.max_hops {
            continue;
        }
        let labels = path.relation_labels(g);
        let prefix = step_text(question, &labels);
        let mut chain = labels.clone();
        for &(r, s) in g.neighbors(path.end())? {
            if path.contains_entity(s) {
                continue;
            }
            let r_label = g.relation_label(r);
            let next = path.extended(r, s);
            if q1.admits(scorer.score(&prefix, r_label)?) {
                if out.expansions < limits.frontier_budget {
                    out.expansions += 1;
                    queue.push_back(next.clone());
                } else {
                    out.truncated = true;
                }
            }
            chain.push(r_label);
            let path_score = scorer.score(question, &chain_text(&chain))?;
            chain.pop();
            if q2.admits(path_score) {
                out.collect(next);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct TraceNode {
    parent: Option<u32>,
    start: EntityId,
    relation: RelationId,
    entity: EntityId,
    step_score: f64,
    path_score: f64,
}

/// Every edge a vacuous-threshold traversal considers, with its step and path
/// scores, in breadth-first order.
///
/// A traversal under finite thresholds considers a subsequence of these edges
/// in the same order, so [`ScoredTraversal::select`] reproduces [`retrieve`]
/// without re-scoring, provided the vacuous traversal itself was not
/// truncated.
#[derive(Debug, Clone)]
pub struct ScoredTraversal {
    nodes: Vec<TraceNode>,
    truncated: bool,
}

impl ScoredTraversal {
    pub fn build(
        g: &KnowledgeGraph,
        question: &str,
        topics: &[EntityId],
        limits: TraversalLimits,
        scorer: &Scorer,
    ) -> Result<Self> {
        let topics = check_topics(g, topics)?;
        let mut nodes: Vec<TraceNode> = Vec::new();
        let mut truncated = false;
        let mut pushes = 0usize;
        let mut queue: VecDeque<(Option<u32>, RelationPath)> = topics
            .into_iter()
            .map(|t| (None, RelationPath::new(t)))
            .collect();
        while let Some((node, path)) = queue.pop_front() {
            if path.len() >= limits.max_hops {
                continue;
            }
            let labels = path.relation_labels(g);
            let prefix = step_text(question, &labels);
            let mut chain = labels.clone();
            for &(r, s) in g.neighbors(path.end())? {
                if path.contains_entity(s) {
                    continue;
                }
                let r_label = g.relation_label(r);
                let step_score = scorer.score(&prefix, r_label)?;
                chain.push(r_label);
                let path_score = scorer.score(question, &chain_text(&chain))?;
                chain.pop();
                let idx = nodes.len() as u32;
                nodes.push(TraceNode {
                    parent: node,
                    start: path.start,
                    relation: r,
                    entity: s,
                    step_score,
                    path_score,
                });
                if pushes < limits.frontier_budget {
                    pushes += 1;
                    queue.push_back((Some(idx), path.extended(r, s)));
                } else {
                    truncated = true;
                }
            }
        }
        Ok(Self { nodes, truncated })
    }

    /// True when the vacuous traversal hit the frontier budget; selections
    /// are then not guaranteed to match [`retrieve`].
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn path_of(&self, idx: usize) -> RelationPath {
        let mut steps = Vec::new();
        let mut at = Some(idx as u32);
        while let Some(i) = at {
            let n = &self.nodes[i as usize];
            steps.push((n.relation, n.entity));
            at = n.parent;
        }
        steps.reverse();
        RelationPath {
            start: self.nodes[idx].start,
            steps,
        }
    }

    /// The retrieval [`retrieve`] would return under `q1`, `q2`.
    pub fn select(
        &self,
        q1: &ConformalQuantile,
        q2: &ConformalQuantile,
        frontier_budget: usize,
    ) -> Retrieval {
        let mut out = Retrieval::default();
        if q1.admits_nothing() {
            return out;
        }
        let mut pushed = vec![false; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            if let Some(p) = n.parent {
                if !pushed[p as usize] {
                    continue;
                }
            }
            if q1.admits(n.step_score) {
                if out.expansions < frontier_budget {
                    out.expansions += 1;
                    pushed[i] = true;
                } else {
                    out.truncated = true;
                }
            }
            if q2.admits(n.path_score) {
                out.collect(self.path_of(i));
            }
        }
        out
    }

    /// Every reachable candidate ranked by its best (lowest) path score;
    /// ties keep discovery order.
    pub fn ranked_candidates(&self) -> Vec<(EntityId, f64)> {
        let mut best: IndexMap<EntityId, f64> = IndexMap::new();
        for n in &self.nodes {
            let e = best.entry(n.entity).or_insert(f64::INFINITY);
            if n.path_score < *e {
                *e = n.path_score;
            }
        }
        let mut ranked: Vec<(EntityId, f64)> = best.into_iter().collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1));
        ranked
    }
}
