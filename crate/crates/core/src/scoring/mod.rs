//! Text embeddings and the nonconformity score used throughout traversal and
//! answer filtering.
//!
//! Scores are oriented as distances: `0` means the two texts agree perfectly
//! and larger values mean worse agreement. A candidate passes a calibrated
//! threshold `q` when `score <= q`.

mod http;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use http::{HttpEmbeddingConfig, HttpEmbeddingProvider};

/// Similarity used to turn two embeddings into a nonconformity score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    #[default]
    Cosine,
    L1,
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::L1 => "l1",
        })
    }
}

impl FromStr for SimilarityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(SimilarityKind::Cosine),
            "l1" => Ok(SimilarityKind::L1),
            other => Err(Error::contract(format!("unknown similarity `{other}`"))),
        }
    }
}

/// Fixed-dimension real vector.
///
/// The indices of nonzero components are kept alongside the dense values so
/// that sparse bag-of-words vectors score in time proportional to their
/// support rather than their dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    support: Vec<u32>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Provider("embedding has zero dimension".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Provider(
                "embedding has non-finite components".into(),
            ));
        }
        let support = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i as u32)
            .collect();
        Ok(Self { values, support })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            support: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True for the all-zero vector (e.g. text without any token).
    pub fn is_zero(&self) -> bool {
        self.support.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.support
            .iter()
            .map(|&i| self.values[i as usize] * self.values[i as usize])
            .sum::<f64>()
            .sqrt()
    }

    fn dot(&self, other: &Embedding) -> f64 {
        // Summing over either support in ascending index order adds the same
        // nonzero products in the same order, so the result is symmetric.
        let (short, long) = if self.support.len() <= other.support.len() {
            (self, other)
        } else {
            (other, self)
        };
        short
            .support
            .iter()
            .map(|&i| short.values[i as usize] * long.values[i as usize])
            .sum()
    }

    fn l1_distance(&self, other: &Embedding) -> f64 {
        let (a, b) = (&self.support, &other.support);
        let (mut i, mut j) = (0, 0);
        let mut total = 0.0;
        while i < a.len() || j < b.len() {
            let ia = a.get(i).copied().unwrap_or(u32::MAX);
            let ib = b.get(j).copied().unwrap_or(u32::MAX);
            let idx = ia.min(ib);
            total += (self.values[idx as usize] - other.values[idx as usize]).abs();
            if ia == idx {
                i += 1;
            }
            if ib == idx {
                j += 1;
            }
        }
        total
    }
}

/// Lowercased alphanumeric tokens of `text`.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Seeded 64-bit hash of a token (FNV-1a followed by a splitmix64 finalizer).
pub fn token_hash(token: &str, seed: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in token.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Bucket a token is counted in for a hashed bag-of-words of dimension `dim`.
pub fn token_bucket(token: &str, dim: usize, seed: u64) -> usize {
    (token_hash(token, seed) % dim as u64) as usize
}

/// Hashed bag-of-words embedding, L2-normalized. Text without tokens embeds
/// to the zero vector.
pub fn hashed_bow_embed(text: &str, dim: usize, seed: u64) -> Embedding {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for tok in tokenize(text) {
        *counts.entry(token_bucket(&tok, dim, seed)).or_insert(0.0) += 1.0;
    }
    let mut emb = Embedding::zeros(dim);
    if counts.is_empty() {
        return emb;
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    let mut support: Vec<u32> = counts.keys().map(|&i| i as u32).collect();
    support.sort_unstable();
    for &i in &support {
        emb.values[i as usize] = counts[&(i as usize)] / norm;
    }
    emb.support = support;
    emb
}

/// Nonconformity between two embeddings.
///
/// Cosine: `1 - cos(a, b)` in `[0, 2]`, with a zero-vector operand scoring 2.
/// L1: `Σ |a_i - b_i|`.
pub fn nonconformity(a: &Embedding, b: &Embedding, kind: SimilarityKind) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::contract(format!(
            "embedding dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(match kind {
        SimilarityKind::Cosine => {
            if a.is_zero() || b.is_zero() {
                2.0
            } else if a == b {
                0.0
            } else {
                let cos = a.dot(b) / (a.norm() * b.norm());
                (1.0 - cos).clamp(0.0, 2.0)
            }
        }
        SimilarityKind::L1 => a.l1_distance(b),
    })
}

/// A deterministic text encoder.
pub trait EmbeddingProvider: Send + Sync {
    /// Stable identity used as a cache namespace.
    fn identity(&self) -> String;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>>;

    fn embed(&self, text: &str) -> Result<Embedding> {
        self.embed_batch(&[text])?
            .pop()
            .ok_or_else(|| Error::Provider("provider returned no embedding".into()))
    }
}

/// Built-in hashed bag-of-words encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBowProvider {
    pub dim: usize,
    pub seed: u64,
}

impl HashedBowProvider {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 8 {
            return Err(Error::contract(format!(
                "embedding dim must be >= 8, got {dim}"
            )));
        }
        Ok(Self { dim, seed })
    }
}

impl EmbeddingProvider for HashedBowProvider {
    fn identity(&self) -> String {
        format!("hashed-bow:dim={}:seed={}", self.dim, self.seed)
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        Ok(texts
            .iter()
            .map(|t| hashed_bow_embed(t, self.dim, self.seed))
            .collect())
    }
}

/// Nonconformity of two texts under `provider`.
pub fn score_pair(
    provider: &dyn EmbeddingProvider,
    a: &str,
    b: &str,
    kind: SimilarityKind,
) -> Result<f64> {
    let embs = provider.embed_batch(&[a, b])?;
    if embs.len() != 2 {
        return Err(Error::Provider(format!(
            "expected 2 embeddings, got {}",
            embs.len()
        )));
    }
    nonconformity(&embs[0], &embs[1], kind)
}

/// Concurrent embedding cache keyed by `(provider identity, text)`.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    entries: RwLock<HashMap<String, HashMap<String, Arc<Embedding>>>>,
}

impl EmbeddingCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, identity: &str, text: &str) -> Option<Arc<Embedding>> {
        self.entries.read().get(identity)?.get(text).cloned()
    }

    pub fn insert(&self, identity: &str, text: &str, emb: Arc<Embedding>) {
        self.entries
            .write()
            .entry(identity.to_owned())
            .or_default()
            .insert(text.to_owned(), emb);
    }

    pub fn len(&self) -> usize {
        self.entries.read().values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A provider, a similarity kind, and a shared embedding cache.
#[derive(Clone)]
pub struct Scorer {
    provider: Arc<dyn EmbeddingProvider>,
    identity: String,
    kind: SimilarityKind,
    cache: Arc<EmbeddingCache>,
}

impl fmt::Debug for Scorer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scorer")
            .field("provider", &self.identity)
            .field("kind", &self.kind)
            .finish()
    }
}

impl Scorer {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, kind: SimilarityKind) -> Self {
        let identity = provider.identity();
        Self {
            provider,
            identity,
            kind,
            cache: Arc::new(EmbeddingCache::new()),
        }
    }

    /// Scorer over the built-in hashed bag-of-words provider.
    pub fn builtin(dim: usize, seed: u64, kind: SimilarityKind) -> Result<Self> {
        Ok(Self::new(
            Arc::new(HashedBowProvider::new(dim, seed)?),
            kind,
        ))
    }

    pub fn with_cache(mut self, cache: Arc<EmbeddingCache>) -> Self {
        self.cache = cache;
        self
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn provider_identity(&self) -> &str {
        &self.identity
    }

    pub fn cache(&self) -> &Arc<EmbeddingCache> {
        &self.cache
    }

    pub fn embed(&self, text: &str) -> Result<Arc<Embedding>> {
        if let Some(e) = self.cache.get(&self.identity, text) {
            return Ok(e);
        }
        let emb = Arc::new(self.provider.embed(text)?);
        self.cache.insert(&self.identity, text, emb.clone());
        Ok(emb)
    }

    /// Embeds every uncached text in one provider batch.
    pub fn prefetch(&self, texts: &[&str]) -> Result<()> {
        let mut missing: Vec<&str> = texts
            .iter()
            .copied()
            .filter(|t| self.cache.get(&self.identity, t).is_none())
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if missing.is_empty() {
            return Ok(());
        }
        let embs = self.provider.embed_batch(&missing)?;
        if embs.len() != missing.len() {
            return Err(Error::Provider(format!(
                "expected {} embeddings, got {}",
                missing.len(),
                embs.len()
            )));
        }
        for (t, e) in missing.into_iter().zip(embs) {
            self.cache.insert(&self.identity, t, Arc::new(e));
        }
        Ok(())
    }

    pub fn score(&self, a: &str, b: &str) -> Result<f64> {
        let ea = self.embed(a)?;
        let eb = self.embed(b)?;
        nonconformity(&ea, &eb, self.kind)
    }
}
