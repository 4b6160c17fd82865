use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph};

/// A question with its topic entities and gold answers, by label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QASample {
    pub id: String,
    pub question: String,
    pub topic_entities: Vec<String>,
    pub answers: Vec<String>,
}

impl QASample {
    pub fn validate(&self) -> Result<()> {
        if self.topic_entities.is_empty() {
            return Err(Error::contract(format!(
                "sample {}: no topic entities",
                self.id
            )));
        }
        if self.answers.is_empty() {
            return Err(Error::contract(format!("sample {}: no answers", self.id)));
        }
        Ok(())
    }

    /// Topic and answer ids present in `g`, deduplicated in input order.
    pub fn resolve(&self, g: &KnowledgeGraph) -> ResolvedSample {
        ResolvedSample {
            topics: dedup_ids(self.topic_entities.iter().filter_map(|l| g.entity(l))),
            answers: dedup_ids(self.answers.iter().filter_map(|l| g.entity(l))),
        }
    }

    /// True when any label of `prediction` is a gold answer.
    pub fn is_covered_by<S: AsRef<str>>(&self, prediction: &[S]) -> bool {
        prediction
            .iter()
            .any(|p| self.answers.iter().any(|a| a == p.as_ref()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSample {
    pub topics: Vec<EntityId>,
    pub answers: Vec<EntityId>,
}

impl ResolvedSample {
    pub fn is_usable(&self) -> bool {
        !self.topics.is_empty() && !self.answers.is_empty()
    }
}

fn dedup_ids(ids: impl Iterator<Item = EntityId>) -> Vec<EntityId> {
    let mut out: Vec<EntityId> = Vec::new();
    for id in ids {
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}
