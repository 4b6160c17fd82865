//! Knowledge-graph data model.
//!
//! A [`KnowledgeGraph`] is an immutable set of directed `(head, relation, tail)`
//! triples over interned entity and relation labels. Adjacency lists are sorted
//! by `(relation label, neighbor label)` so that every traversal built on top of
//! the graph is deterministic.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interned handle of an entity within one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

/// Interned handle of a relation within one graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

#[derive(Debug, Clone, Default)]
struct Interner {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }
}

/// Immutable directed knowledge graph with a sorted adjacency index.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Interner,
    relations: Interner,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    adjacency: Vec<Vec<(RelationId, EntityId)>>,
}

impl KnowledgeGraph {
    /// Builds a graph from labeled triples. Duplicates collapse to one triple.
    pub fn from_triples<I, S>(triples: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: AsRef<str>,
    {
        let mut entities = Interner::default();
        let mut relations = Interner::default();
        let mut ordered = Vec::new();
        let mut triple_set = HashSet::new();
        for (h, r, t) in triples {
            let (h, r, t) = (h.as_ref(), r.as_ref(), t.as_ref());
            if h.is_empty() || r.is_empty() || t.is_empty() {
                return Err(Error::contract("triple labels must be non-empty"));
            }
            let triple = Triple {
                head: EntityId(entities.intern(h)),
                relation: RelationId(relations.intern(r)),
                tail: EntityId(entities.intern(t)),
            };
            if triple_set.insert(triple) {
                ordered.push(triple);
            }
        }
        if ordered.is_empty() {
            return Err(Error::EmptyGraph);
        }

        let mut adjacency = vec![Vec::new(); entities.labels.len()];
        for t in &ordered {
            adjacency[t.head.0 as usize].push((t.relation, t.tail));
        }
        for list in &mut adjacency {
            list.sort_by(|a, b| {
                let ra = &relations.labels[a.0 .0 as usize];
                let rb = &relations.labels[b.0 .0 as usize];
                ra.cmp(rb).then_with(|| {
                    entities.labels[a.1 .0 as usize].cmp(&entities.labels[b.1 .0 as usize])
                })
            });
        }

        Ok(Self {
            entities,
            relations,
            triples: ordered,
            triple_set,
            adjacency,
        })
    }

    /// Loads a TAB-separated triple file (`head\trelation\ttail` per line).
    ///
    /// Blank lines and lines starting with `#` are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: idx + 1,
                    message: format!("expected 3 TAB-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: idx + 1,
                    message: "empty label".into(),
                });
            }
            rows.push((fields[0], fields[1], fields[2]));
        }
        Self::from_triples(rows)
    }

    /// Renders the graph in the triple-file format, one line per triple in
    /// insertion order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for t in &self.triples {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                self.entity_label(t.head),
                self.relation_label(t.relation),
                self.entity_label(t.tail)
            );
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn num_entities(&self) -> usize {
        self.entities.labels.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.labels.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    /// Resolves a label or fails with [`Error::UnknownEntity`].
    pub fn require_entity(&self, label: &str) -> Result<EntityId> {
        self.entity(label)
            .ok_or_else(|| Error::UnknownEntity(label.to_owned()))
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        &self.entities.labels[id.0 as usize]
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        &self.relations.labels[id.0 as usize]
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entities.labels.len() as u32).map(EntityId)
    }

    pub fn contains_triple(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.triple_set.contains(&Triple {
            head,
            relation,
            tail,
        })
    }

    /// Outgoing `(relation, neighbor)` pairs of `v`, sorted by label.
    pub fn neighbors(&self, v: EntityId) -> Result<&[(RelationId, EntityId)]> {
        self.adjacency
            .get(v.0 as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownEntity(format!("#{}", v.0)))
    }

    /// All simple paths from `src` to `dst` with at most `max_hops` edges.
    ///
    /// Paths are ordered by their relation-label sequence, then by their
    /// entity-label sequence. `src == dst` yields no paths.
    pub fn gold_paths(&self, src: EntityId, dst: EntityId, max_hops: usize) -> Vec<RelationPath> {
        let mut out = Vec::new();
        if src == dst || max_hops == 0 {
            return out;
        }
        if src.0 as usize >= self.adjacency.len() || dst.0 as usize >= self.adjacency.len() {
            return out;
        }
        let mut on_path = vec![false; self.adjacency.len()];
        let mut steps = Vec::new();
        on_path[src.0 as usize] = true;
        self.dfs_paths(src, src, dst, max_hops, &mut on_path, &mut steps, &mut out);

        out.sort_by(|a, b| {
            let ka = a.steps.iter().map(|&(r, _)| self.relation_label(r));
            let kb = b.steps.iter().map(|&(r, _)| self.relation_label(r));
            ka.cmp(kb).then_with(|| {
                let ea = a.steps.iter().map(|&(_, e)| self.entity_label(e));
                let eb = b.steps.iter().map(|&(_, e)| self.entity_label(e));
                ea.cmp(eb)
            })
        });
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn dfs_paths(
        &self,
        start: EntityId,
        at: EntityId,
        dst: EntityId,
        remaining: usize,
        on_path: &mut [bool],
        steps: &mut Vec<(RelationId, EntityId)>,
        out: &mut Vec<RelationPath>,
    ) {
        for &(r, next) in &self.adjacency[at.0 as usize] {
            if on_path[next.0 as usize] {
                continue;
            }
            steps.push((r, next));
            if next == dst {
                out.push(RelationPath {
                    start,
                    steps: steps.clone(),
                });
            } else if remaining > 1 {
                on_path[next.0 as usize] = true;
                self.dfs_paths(start, next, dst, remaining - 1, on_path, steps, out);
                on_path[next.0 as usize] = false;
            }
            steps.pop();
        }
    }
}

/// A walk from `start` through a sequence of `(relation, entity)` steps.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RelationPath {
    pub start: EntityId,
    pub steps: Vec<(RelationId, EntityId)>,
}

impl RelationPath {
    pub fn new(start: EntityId) -> Self {
        Self {
            start,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Final entity of the path (the start for an empty path).
    pub fn end(&self) -> EntityId {
        self.steps.last().map_or(self.start, |&(_, e)| e)
    }

    pub fn relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.steps.iter().map(|&(r, _)| r)
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        std::iter::once(self.start).chain(self.steps.iter().map(|&(_, e)| e))
    }

    pub fn contains_entity(&self, e: EntityId) -> bool {
        self.start == e || self.steps.iter().any(|&(_, x)| x == e)
    }

    pub fn extended(&self, relation: RelationId, entity: EntityId) -> Self {
        let mut steps = Vec::with_capacity(self.steps.len() + 1);
        steps.extend_from_slice(&self.steps);
        steps.push((relation, entity));
        Self {
            start: self.start,
            steps,
        }
    }

    pub fn relation_labels<'g>(&self, g: &'g KnowledgeGraph) -> Vec<&'g str> {
        self.relations().map(|r| g.relation_label(r)).collect()
    }

    /// True when every step is a triple of `g`.
    pub fn replays(&self, g: &KnowledgeGraph) -> bool {
        let mut at = self.start;
        for &(r, e) in &self.steps {
            if !g.contains_triple(at, r, e) {
                return false;
            }
            at = e;
        }
        true
    }

    /// `e0 → r1 → e1 → … → ek`
    pub fn render(&self, g: &KnowledgeGraph) -> String {
        let mut out = g.entity_label(self.start).to_owned();
        for &(r, e) in &self.steps {
            out.push_str(" → ");
            out.push_str(g.relation_label(r));
            out.push_str(" → ");
            out.push_str(g.entity_label(e));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn graph(rows: &[(&str, &str, &str)]) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(rows.iter().copied()).unwrap()
    }

    fn labels(g: &KnowledgeGraph, list: &[(RelationId, EntityId)]) -> Vec<(String, String)> {
        list.iter()
            .map(|&(r, e)| (g.relation_label(r).to_owned(), g.entity_label(e).to_owned()))
            .collect()
    }

    fn write_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_sorts_neighbors() {
        let f = write_file("a\tr\tc\na\tr\tb\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        let a = g.entity("a").unwrap();
        assert_eq!(
            labels(&g, g.neighbors(a).unwrap()),
            vec![("r".into(), "b".into()), ("r".into(), "c".into())]
        );
    }

    #[test]
    fn duplicate_lines_collapse() {
        let f = write_file("a\tr\tb\na\tr\tb\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        assert_eq!(g.num_triples(), 1);
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let f = write_file("# header\n\na\tr\tb\n\n");
        let g = KnowledgeGraph::load(f.path()).unwrap();
        assert_eq!(g.num_triples(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_file("a\tr\tb\na\tr\n");
        match KnowledgeGraph::load(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_file("# only a comment\n");
        assert!(matches!(
            KnowledgeGraph::load(f.path()),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let g = graph(&[("a", "r", "b")]);
        assert!(g.neighbors(g.entity("b").unwrap()).unwrap().is_empty());
    }

    #[test]
    fn neighbors_of_unknown_id_fail() {
        let g = graph(&[("a", "r", "b")]);
        assert!(matches!(
            g.neighbors(EntityId(99)),
            Err(Error::UnknownEntity(_))
        ));
        assert!(matches!(
            g.require_entity("zzz"),
            Err(Error::UnknownEntity(_))
        ));
    }

    #[test]
    fn neighbors_two_relations() {
        let g = graph(&[("v", "r2", "b"), ("v", "r1", "a")]);
        let v = g.entity("v").unwrap();
        assert_eq!(
            labels(&g, g.neighbors(v).unwrap()),
            vec![("r1".into(), "a".into()), ("r2".into(), "b".into())]
        );
    }

    #[test]
    fn gold_paths_basic() {
        let g = graph(&[("a", "r1", "b"), ("b", "r2", "c"), ("a", "x", "d")]);
        let (a, c) = (g.entity("a").unwrap(), g.entity("c").unwrap());
        assert!(g.gold_paths(a, a, 3).is_empty());
        let paths = g.gold_paths(a, c, 2);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].relation_labels(&g), vec!["r1", "r2"]);
        assert!(g.gold_paths(a, c, 1).is_empty());
    }

    #[test]
    fn gold_paths_skip_cycles() {
        let g = graph(&[("a", "r", "b"), ("b", "r", "a"), ("b", "s", "c")]);
        let (a, c) = (g.entity("a").unwrap(), g.entity("c").unwrap());
        let paths = g.gold_paths(a, c, 4);
        assert_eq!(paths.len(), 1);
        assert!(paths[0].replays(&g));
    }

    #[test]
    fn render_uses_arrows() {
        let g = graph(&[("hinduism", "practiced_at_location", "Indonesia")]);
        let p = RelationPath::new(g.entity("hinduism").unwrap()).extended(
            g.relation("practiced_at_location").unwrap(),
            g.entity("Indonesia").unwrap(),
        );
        assert_eq!(p.render(&g), "hinduism → practiced_at_location → Indonesia");
    }
}
