//! Reference implementations used as test oracles. They favour obviousness
//! over speed: enumerate everything, sort everything.

#![allow(dead_code)]

use std::collections::BTreeSet;

use kgrisk_core::conformal::ConformalQuantile;
use kgrisk_core::scoring::Scorer;
use kgrisk_core::KnowledgeGraph;
use rand::seq::IndexedRandom;
use rand::Rng;

pub const RELATION_POOL: [&str; 8] = [
    "capital of",
    "born in",
    "spouse",
    "member of",
    "located in",
    "currency",
    "religion",
    "author of",
];

pub const QUESTION_POOL: [&str; 5] = [
    "where was the spouse born",
    "what currency is used in the capital",
    "which religion is practiced where the author was born",
    "who is a member of the band",
    "what is located in the country",
];

/// Random small graph over labels `e0..e{n}` plus a question mentioning some
/// of its relations.
pub fn random_instance(
    rng: &mut impl Rng,
    max_entities: usize,
) -> (KnowledgeGraph, String, String) {
    let n = rng.random_range(3..=max_entities);
    let n_rel = rng.random_range(1..=RELATION_POOL.len());
    let rels = &RELATION_POOL[..n_rel];
    let edges = rng.random_range(n..=3 * n);
    let mut triples = Vec::new();
    for _ in 0..edges {
        let h = rng.random_range(0..n);
        let t = rng.random_range(0..n);
        let r = rels.choose(rng).unwrap();
        triples.push((format!("e{h}"), (*r).to_string(), format!("e{t}")));
    }
    // keep e0 connected so there is something to traverse
    triples.push(("e0".into(), rels[0].to_string(), "e1".into()));
    let g = KnowledgeGraph::from_triples(triples).unwrap();
    let q = QUESTION_POOL.choose(rng).unwrap().to_string();
    (g, q, "e0".into())
}

/// Every simple path (as label sequences `[e0, r1, e1, …]`) from `start` with
/// 1..=max_hops edges, found by scanning the triple list at each step.
pub fn all_simple_paths(g: &KnowledgeGraph, start: &str, max_hops: usize) -> Vec<Vec<String>> {
    let triples: Vec<(String, String, String)> = g
        .triples()
        .iter()
        .map(|t| {
            (
                g.entity_label(t.head).to_owned(),
                g.relation_label(t.relation).to_owned(),
                g.entity_label(t.tail).to_owned(),
            )
        })
        .collect();
    let mut out = Vec::new();
    let mut stack = vec![vec![start.to_owned()]];
    while let Some(path) = stack.pop() {
        let hops = path.len() / 2;
        if hops >= max_hops {
            continue;
        }
        let end = path.last().unwrap();
        for (h, r, t) in &triples {
            if h != end || path.iter().step_by(2).any(|e| e == t) {
                continue;
            }
            let mut next = path.clone();
            next.push(r.clone());
            next.push(t.clone());
            out.push(next.clone());
            stack.push(next);
        }
    }
    out
}

fn relations_of(path: &[String]) -> Vec<&str> {
    path.iter().skip(1).step_by(2).map(String::as_str).collect()
}

/// Candidate entities admitted by the traversal rules, checked path by path:
/// every proper prefix must pass the step test, the path itself the path test.
pub fn brute_force_candidates(
    g: &KnowledgeGraph,
    question: &str,
    topic: &str,
    q1: &ConformalQuantile,
    q2: &ConformalQuantile,
    max_hops: usize,
    scorer: &Scorer,
) -> Vec<Vec<String>> {
    if q1.admits_nothing() {
        return Vec::new();
    }
    let mut admitted = Vec::new();
    for path in all_simple_paths(g, topic, max_hops) {
        let rels = relations_of(&path);
        let mut ok = true;
        for j in 0..rels.len() - 1 {
            let mut text = question.to_owned();
            for r in &rels[..j] {
                text.push(' ');
                text.push_str(r);
            }
            if !q1.admits(scorer.score(&text, rels[j]).unwrap()) {
                ok = false;
                break;
            }
        }
        if ok && q2.admits(scorer.score(question, &rels.join(" ")).unwrap()) {
            admitted.push(path);
        }
    }
    admitted
}

/// Final answer labels: the candidates whose label is within `q3` of the mock
/// generation (the distinct candidate labels joined by ", ").
pub fn brute_force_answers(
    admitted: &[Vec<String>],
    q3: &ConformalQuantile,
    scorer: &Scorer,
) -> BTreeSet<String> {
    let candidates: BTreeSet<String> = admitted.iter().map(|p| p.last().unwrap().clone()).collect();
    let generation = candidates.iter().cloned().collect::<Vec<_>>().join(", ");
    candidates
        .into_iter()
        .filter(|c| q3.admits(scorer.score(c, &generation).unwrap()))
        .collect()
}

pub fn threshold(value: f64) -> ConformalQuantile {
    ConformalQuantile {
        alpha: 0.5,
        n: 1,
        rank: 1,
        value,
    }
}

/// `P(Binom(n, alpha) <= k)` by direct summation of the pmf.
pub fn naive_binomial_cdf(n: usize, alpha: f64, k: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..=k.min(n) {
        let mut coef = 1.0f64;
        for j in 0..i {
            coef *= (n - j) as f64 / (j + 1) as f64;
        }
        total += coef * alpha.powi(i as i32) * (1.0 - alpha).powi((n - i) as i32);
    }
    total.min(1.0)
}

/// Order statistic with rank `ceil((n+1)(1-alpha))` from a full sort.
pub fn full_sort_quantile(scores: &[f64], alpha: f64) -> f64 {
    let n = scores.len();
    let x = (n as f64 + 1.0) * (1.0 - alpha);
    let k = if (x - x.round()).abs() <= 1e-9 {
        x.round()
    } else {
        x.ceil()
    } as i64;
    if k > n as i64 {
        return f64::INFINITY;
    }
    if k <= 0 {
        return f64::NEG_INFINITY;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[(k - 1) as usize]
}
