//! Run configuration: built-in defaults, overlaid by a TOML file, overlaid by
//! `UAG_*` environment variables, overlaid by command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kgrisk_core::bench::SyntheticSpec;
use kgrisk_core::riskctl::FwerMethod;
use kgrisk_core::scoring::SimilarityKind;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Embedding backend: `builtin` or `http:URL`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ProviderSpec {
    #[default]
    Builtin,
    Http(String),
}

/// Generator backend: `mock` or `http:URL`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GeneratorSpec {
    #[default]
    Mock,
    Http(String),
}

fn http_endpoint(s: &str) -> Option<Result<String, String>> {
    let url = s.strip_prefix("http:")?;
    // accept both `http:URL` and a bare `http://host` URL
    let url = if url.starts_with("//") { s } else { url };
    Some(if url.is_empty() {
        Err("empty endpoint after `http:`".to_owned())
    } else {
        Ok(url.to_owned())
    })
}

impl FromStr for ProviderSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "builtin" {
            return Ok(Self::Builtin);
        }
        match http_endpoint(s) {
            Some(url) => url.map(Self::Http),
            None => Err(format!(
                "unknown provider `{s}` (expected builtin or http:URL)"
            )),
        }
    }
}

impl FromStr for GeneratorSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "mock" {
            return Ok(Self::Mock);
        }
        match http_endpoint(s) {
            Some(url) => url.map(Self::Http),
            None => Err(format!(
                "unknown generator `{s}` (expected mock or http:URL)"
            )),
        }
    }
}

impl fmt::Display for ProviderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Builtin => f.write_str("builtin"),
            Self::Http(url) => write!(f, "http:{url}"),
        }
    }
}

impl fmt::Display for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Mock => f.write_str("mock"),
            Self::Http(url) => write!(f, "http:{url}"),
        }
    }
}

macro_rules! string_conversions {
    ($t:ty) => {
        impl TryFrom<String> for $t {
            type Error = String;
            fn try_from(s: String) -> Result<Self, String> {
                s.parse()
            }
        }
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.to_string()
            }
        }
    };
}
string_conversions!(ProviderSpec);
string_conversions!(GeneratorSpec);

/// Synthetic benchmark shape. Its seed is derived from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_entities: usize,
    pub num_relations: usize,
    pub num_samples: usize,
    pub hop_distribution: Vec<(usize, f64)>,
    pub distractor_edge_factor: f64,
    pub vocabulary_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let d = SyntheticSpec::default();
        Self {
            num_entities: d.num_entities,
            num_relations: d.num_relations,
            num_samples: d.num_samples,
            hop_distribution: d.hop_distribution,
            distractor_edge_factor: d.distractor_edge_factor,
            vocabulary_size: d.vocabulary_size,
        }
    }
}

impl SyntheticConfig {
    pub fn to_spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            num_entities: self.num_entities,
            num_relations: self.num_relations,
            num_samples: self.num_samples,
            hop_distribution: self.hop_distribution.clone(),
            distractor_edge_factor: self.distractor_edge_factor,
            vocabulary_size: self.vocabulary_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Target end-to-end miscoverage for `calibrate`.
    pub alpha: f64,
    pub delta: f64,
    /// Target levels visited by `sweep`.
    pub alphas: Vec<f64>,
    /// Grid steps h1, h2, h3.
    pub grid_steps: [f64; 3],
    pub fwer: FwerMethod,
    pub max_hops: usize,
    pub frontier_budget: usize,
    pub similarity: SimilarityKind,
    pub provider: ProviderSpec,
    pub embedding_dim: usize,
    pub generator: GeneratorSpec,
    /// Keep unfiltered candidates when the generator fails.
    pub fail_open: bool,
    pub http_timeout_secs: f64,
    pub http_retries: u32,
    /// Quantile, LTT, validation, and test shares of the sample file.
    pub split_fractions: [f64; 4],
    pub topk: Vec<usize>,
    pub seed: u64,
    /// 0 means all available cores.
    pub workers: usize,
    pub graph: PathBuf,
    pub samples: PathBuf,
    pub artifact: PathBuf,
    pub report: PathBuf,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.2,
            delta: 0.05,
            alphas: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            grid_steps: [0.3, 0.3, 0.1],
            fwer: FwerMethod::Bonferroni,
            max_hops: 2,
            frontier_budget: kgrisk_core::retriever::DEFAULT_FRONTIER_BUDGET,
            similarity: SimilarityKind::Cosine,
            provider: ProviderSpec::Builtin,
            embedding_dim: 256,
            generator: GeneratorSpec::Mock,
            fail_open: false,
            http_timeout_secs: 30.0,
            http_retries: 2,
            split_fractions: [0.2, 0.2, 0.1, 0.5],
            topk: vec![1, 3, 5],
            seed: 7,
            workers: 0,
            graph: PathBuf::from("data/graph.tsv"),
            samples: PathBuf::from("data/samples.jsonl"),
            artifact: PathBuf::from("out/calibration.json"),
            report: PathBuf::from("out/report.csv"),
            synthetic: SyntheticConfig::default(),
        }
    }
}

fn open_unit(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CliError::invalid(format!(
            "{name} = {v} must lie in (0, 1)"
        )))
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("reading {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::invalid(format!("parsing {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        open_unit("alpha", self.alpha)?;
        open_unit("delta", self.delta)?;
        if self.alphas.is_empty() {
            return Err(CliError::invalid("alphas must not be empty"));
        }
        for &a in &self.alphas {
            open_unit("alphas entry", a)?;
        }
        for &h in &self.grid_steps {
            if !(h > 0.0 && h <= 1.0) {
                return Err(CliError::invalid(format!(
                    "grid step {h} must lie in (0, 1]"
                )));
            }
        }
        if self.max_hops == 0 {
            return Err(CliError::invalid("max_hops must be at least 1"));
        }
        if self.frontier_budget == 0 {
            return Err(CliError::invalid("frontier_budget must be at least 1"));
        }
        if self.embedding_dim < 8 {
            return Err(CliError::invalid("embedding_dim must be at least 8"));
        }
        if self.topk.contains(&0) {
            return Err(CliError::invalid("topk entries must be positive"));
        }
        Ok(())
    }

    /// TOML rendering used for the configuration echo.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("# unrenderable config: {e}\n"))
    }
}
