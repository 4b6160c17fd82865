use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::KnowledgeGraph;
use crate::sample::QASample;

/// Version tag of the question templates; bump when they change.
pub const TEMPLATE_VERSION: &str = "v1";

const TEMPLATES: [&str; 4] = [
    "what is {}?",
    "which entity is {}?",
    "name {}.",
    "tell me {}?",
];

const RELATION_WORDS: [&str; 96] = [
    "capital",
    "founder",
    "author",
    "director",
    "spouse",
    "parent",
    "child",
    "sibling",
    "mentor",
    "student",
    "employer",
    "owner",
    "member",
    "leader",
    "neighbor",
    "rival",
    "partner",
    "producer",
    "composer",
    "designer",
    "inventor",
    "editor",
    "publisher",
    "sponsor",
    "coach",
    "captain",
    "mayor",
    "governor",
    "president",
    "chairman",
    "treasurer",
    "secretary",
    "birthplace",
    "hometown",
    "residence",
    "headquarters",
    "origin",
    "location",
    "region",
    "country",
    "language",
    "currency",
    "religion",
    "genre",
    "style",
    "instrument",
    "award",
    "prize",
    "school",
    "university",
    "college",
    "league",
    "team",
    "club",
    "band",
    "label",
    "studio",
    "network",
    "channel",
    "station",
    "airport",
    "harbor",
    "river",
    "mountain",
    "island",
    "province",
    "district",
    "county",
    "village",
    "street",
    "building",
    "bridge",
    "museum",
    "library",
    "hospital",
    "church",
    "castle",
    "palace",
    "garden",
    "forest",
    "successor",
    "predecessor",
    "ancestor",
    "descendant",
    "ally",
    "enemy",
    "colleague",
    "friend",
    "teacher",
    "pupil",
    "patron",
    "heir",
    "guardian",
    "advisor",
    "deputy",
    "envoy",
];

const NAME_WORDS: [&str; 48] = [
    "alder", "birch", "cedar", "dune", "ember", "fjord", "glade", "heath", "isle", "juniper",
    "kestrel", "lark", "maple", "nettle", "onyx", "pine", "quartz", "rowan", "sable", "thistle",
    "umber", "vale", "willow", "yarrow", "zephyr", "aster", "bramble", "coral", "delta", "elm",
    "fern", "garnet", "hazel", "iris", "jasper", "kelp", "laurel", "moss", "north", "oak", "pearl",
    "reed", "sorrel", "tansy", "ursa", "violet", "wren", "zinnia",
];

/// Parameters of the synthetic benchmark. `hop_distribution` holds
/// `(hops, weight)` pairs; `num_entities` sizes the shared entity pool that
/// intermediate and answer entities are drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_samples: usize,
    pub hop_distribution: Vec<(usize, f64)>,
    pub distractor_edge_factor: f64,
    pub vocabulary_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_entities: 2000,
            num_relations: 40,
            num_samples: 1200,
            hop_distribution: vec![(1, 0.5), (2, 0.5)],
            distractor_edge_factor: 3.0,
            vocabulary_size: RELATION_WORDS.len(),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_entities < 4 || self.num_relations == 0 || self.num_samples == 0 {
            return Err(Error::contract(
                "synthetic spec needs at least 4 entities, 1 relation and 1 sample",
            ));
        }
        if self.hop_distribution.is_empty()
            || self
                .hop_distribution
                .iter()
                .any(|&(h, w)| !(1..=4).contains(&h) || !w.is_finite() || w < 0.0)
            || self.hop_distribution.iter().map(|&(_, w)| w).sum::<f64>() <= 0.0
        {
            return Err(Error::contract(
                "hop distribution needs hops in 1..=4 with non-negative weights and positive mass",
            ));
        }
        if !self.distractor_edge_factor.is_finite() || self.distractor_edge_factor < 0.0 {
            return Err(Error::contract(
                "distractor edge factor must be non-negative",
            ));
        }
        if self.vocabulary_size < 4 {
            return Err(Error::contract("vocabulary size must be at least 4"));
        }
        Ok(())
    }

    /// Largest hop count with positive weight.
    pub fn max_hops(&self) -> usize {
        self.hop_distribution
            .iter()
            .filter(|&&(_, w)| w > 0.0)
            .map(|&(h, _)| h)
            .max()
            .unwrap_or(1)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub graph: KnowledgeGraph,
    pub samples: Vec<QASample>,
    /// Relations used on planted answer chains.
    pub template_relations: Vec<String>,
    /// Relations used only by distractor edges (may overlap when there is
    /// a single relation).
    pub distractor_relations: Vec<String>,
    pub planted_edges: usize,
    pub distractor_edges: usize,
}

fn relation_vocabulary(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<String> {
    let words = &RELATION_WORDS[..spec.vocabulary_size.min(RELATION_WORDS.len())];
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(spec.num_relations);
    let mut attempts = 0usize;
    while out.len() < spec.num_relations {
        attempts += 1;
        let n_words = if attempts > 50 * spec.num_relations {
            3
        } else {
            rng.random_range(2..=3)
        };
        let mut label = words
            .choose_multiple(rng, n_words)
            .copied()
            .collect::<Vec<_>>()
            .join("_");
        if attempts > 200 * spec.num_relations {
            // vocabulary exhausted: disambiguate by index
            label = format!("{label}_{}", out.len());
        }
        if seen.insert(label.clone()) {
            out.push(label);
        }
    }
    out
}

fn phrase(relations: &[&String], topic: &str) -> String {
    let mut s = String::new();
    for r in relations.iter().rev() {
        s.push_str("the ");
        s.push_str(&r.replace('_', " "));
        s.push_str(" of ");
    }
    s.push_str(topic);
    s
}

fn draw_hops(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = spec.hop_distribution.iter().map(|&(_, w)| w).sum();
    let mut x = rng.random::<f64>() * total;
    for &(h, w) in &spec.hop_distribution {
        if x < w {
            return h;
        }
        x -= w;
    }
    spec.max_hops()
}

/// Builds a graph with planted multi-hop answer chains and distractor edges.
/// Questions are rendered from templates that name the chain relations.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticBenchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let relations = relation_vocabulary(spec, &mut rng);
    let n_template = relations.len().div_ceil(2);
    let template_relations = relations[..n_template].to_vec();
    let distractor_relations = if relations.len() > n_template {
        relations[n_template..].to_vec()
    } else {
        template_relations.clone()
    };

    let pool: Vec<String> = (0..spec.num_entities)
        .map(|i| format!("{}_{i}", NAME_WORDS[i % NAME_WORDS.len()]))
        .collect();

    let mut triples: Vec<(String, String, String)> = Vec::new();
    let mut triple_set: HashSet<(String, String, String)> = HashSet::new();
    let mut push = |t: (String, String, String), triples: &mut Vec<_>| {
        if triple_set.insert(t.clone()) {
            triples.push(t);
            true
        } else {
            false
        }
    };
    let mut samples = Vec::with_capacity(spec.num_samples);
    let mut planted_edges = 0usize;
    let mut distractor_edges = 0usize;

    for i in 0..spec.num_samples {
        let hops = draw_hops(spec, &mut rng);
        let topic = format!("topic_{i}");
        let chain: Vec<&String> = (0..hops)
            .map(|_| template_relations.choose(&mut rng).expect("non-empty"))
            .collect();
        let picks: Vec<&String> = pool.choose_multiple(&mut rng, hops - 1 + 3).collect();
        let (intermediates, rest) = picks.split_at(hops - 1);
        let n_answers = rng.random_range(1..=3);
        let answers: Vec<String> = rest[..n_answers].iter().map(|s| (*s).clone()).collect();

        let mut local = vec![topic.clone()];
        let mut planted = 0usize;
        let mut prev = topic.clone();
        for (r, m) in chain.iter().zip(intermediates) {
            planted += usize::from(push(
                (prev.clone(), (*r).clone(), (*m).clone()),
                &mut triples,
            ));
            local.push((*m).clone());
            prev = (*m).clone();
        }
        let last = chain[hops - 1];
        for a in &answers {
            planted += usize::from(push((prev.clone(), last.clone(), a.clone()), &mut triples));
            local.push(a.clone());
        }
        planted_edges += planted;

        // Distractors hang off this question's own subgraph, half of them
        // linking two of its entities, so alternative routes to the answers
        // exist alongside the planted chain.
        let share = spec.distractor_edge_factor * planted as f64;
        let mut budget = share.floor() as usize + usize::from(rng.random::<f64>() < share.fract());
        let mut attempts = 0usize;
        while budget > 0 && attempts < 50 {
            attempts += 1;
            let head = local.choose(&mut rng).expect("non-empty");
            let tail = if rng.random_bool(0.5) {
                local.choose(&mut rng)
            } else {
                pool.choose(&mut rng)
            }
            .expect("non-empty");
            if head == tail {
                continue;
            }
            let rel = distractor_relations.choose(&mut rng).expect("non-empty");
            if push((head.clone(), rel.clone(), tail.clone()), &mut triples) {
                distractor_edges += 1;
                budget -= 1;
            }
        }

        let template = TEMPLATES.choose(&mut rng).expect("non-empty");
        samples.push(QASample {
            id: format!("s{i:05}"),
            question: template.replace("{}", &phrase(&chain, &topic)),
            topic_entities: vec![topic],
            answers,
        });
    }

    let graph = KnowledgeGraph::from_triples(triples)?;
    Ok(SyntheticBenchmark {
        graph,
        samples,
        template_relations,
        distractor_relations,
        planted_edges,
        distractor_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            num_entities: 60,
            num_relations: 10,
            num_samples: 30,
            hop_distribution: vec![(1, 0.5), (2, 0.5)],
            distractor_edge_factor: 1.0,
            vocabulary_size: 32,
            seed: 11,
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.graph.to_tsv(), b.graph.to_tsv());
        assert_eq!(a.samples, b.samples);
        let c = generate_synthetic(&SyntheticSpec {
            seed: 12,
            ..small()
        })
        .unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn answers_reachable_via_planted_chain() {
        let b = generate_synthetic(&small()).unwrap();
        for s in &b.samples {
            let t = b.graph.require_entity(&s.topic_entities[0]).unwrap();
            for a in &s.answers {
                let a = b.graph.require_entity(a).unwrap();
                assert!(!b.graph.gold_paths(t, a, 2).is_empty(), "{}", s.id);
            }
        }
    }

    #[test]
    fn distractors_use_off_template_relations() {
        let b = generate_synthetic(&small()).unwrap();
        assert!(b.distractor_edges > 0);
        for r in &b.distractor_relations {
            assert!(!b.template_relations.contains(r));
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(generate_synthetic(&SyntheticSpec {
            hop_distribution: vec![(5, 1.0)],
            ..small()
        })
        .is_err());
        assert!(generate_synthetic(&SyntheticSpec {
            num_samples: 0,
            ..small()
        })
        .is_err());
    }
}
