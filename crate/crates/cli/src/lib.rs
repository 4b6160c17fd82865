//! `kgrisk` command-line driver.
//!
//! Exit codes: 0 success, 2 invalid configuration or input, 3 no valid
//! configuration, 4 unknown entity, 5 external-service failure.

use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use kgrisk_core::riskctl::FwerMethod;
use kgrisk_core::scoring::SimilarityKind;

pub mod commands;
pub mod config;

pub use config::{GeneratorSpec, ProviderSpec, RunConfig};

pub const EXIT_INVALID: u8 = 2;
pub const EXIT_NO_VALID_CONFIGURATION: u8 = 3;
pub const EXIT_UNKNOWN_ENTITY: u8 = 4;
pub const EXIT_SERVICE: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(EXIT_INVALID, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<kgrisk_core::Error> for CliError {
    fn from(e: kgrisk_core::Error) -> Self {
        use kgrisk_core::Error as E;
        let code = match &e {
            E::UnknownEntity(_) => EXIT_UNKNOWN_ENTITY,
            E::Provider(_) | E::Generator(_) => EXIT_SERVICE,
            _ => EXIT_INVALID,
        };
        Self::new(code, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "kgrisk",
    version,
    about = "Risk-controlled question answering over knowledge graphs"
)]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command. Each mirrors a `UAG_*` variable and a
/// config-file key; flags win over the environment, which wins over the file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// TOML configuration file
    #[arg(long, env = "UAG_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "UAG_ALPHA", global = true)]
    pub alpha: Option<f64>,
    #[arg(long, env = "UAG_DELTA", global = true)]
    pub delta: Option<f64>,
    #[arg(long, env = "UAG_SEED", global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores); affects speed only
    #[arg(long, env = "UAG_WORKERS", global = true)]
    pub workers: Option<usize>,
    /// bonferroni | fixed-sequence
    #[arg(long, env = "UAG_FWER", global = true)]
    pub fwer: Option<FwerMethod>,
    /// cosine | l1
    #[arg(long, env = "UAG_SIMILARITY", global = true)]
    pub similarity: Option<SimilarityKind>,
    /// builtin | http:URL
    #[arg(long, env = "UAG_PROVIDER", global = true)]
    pub provider: Option<ProviderSpec>,
    /// mock | http:URL
    #[arg(long, env = "UAG_GENERATOR", global = true)]
    pub generator: Option<GeneratorSpec>,
    #[arg(long, env = "UAG_MAX_HOPS", global = true)]
    pub max_hops: Option<usize>,
    /// Triple file (TSV)
    #[arg(long, env = "UAG_GRAPH", global = true)]
    pub graph: Option<PathBuf>,
    /// Sample file (JSON lines)
    #[arg(long, env = "UAG_SAMPLES", global = true)]
    pub samples: Option<PathBuf>,
    /// Calibration artifact (JSON)
    #[arg(long, env = "UAG_ARTIFACT", global = true)]
    pub artifact: Option<PathBuf>,
    /// Metrics report (CSV)
    #[arg(long, env = "UAG_REPORT", global = true)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic triple file and sample file
    Generate,
    /// Select error rates on the calibration splits and write the artifact
    Calibrate,
    /// Answer one question with a saved calibration
    Predict {
        #[arg(long)]
        question: String,
        /// Topic entity label; repeat for several
        #[arg(long = "topic", required = true)]
        topics: Vec<String>,
    },
    /// Score a saved calibration and the top-K baselines on the test split
    Evaluate,
    /// Calibrate at each target level and report test metrics
    Sweep {
        /// Comma-separated target levels, replacing `alphas` from the config
        #[arg(long, env = "UAG_ALPHAS", value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        /// Write `alpha,method,metric,value` rows instead of one row per method
        #[arg(long)]
        long: bool,
    },
}

impl Overrides {
    /// Resolves defaults, then the config file, then these values.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    c.$field = v.clone();
                }
            )*};
        }
        apply!(alpha, delta, seed, workers, fwer, similarity, provider, generator, max_hops);
        apply!(graph, samples, artifact, report);
        c.validate()?;
        Ok(c)
    }
}

/// Resolves the configuration and runs the selected command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = cli.overrides.resolve()?;
    if let Command::Sweep {
        alphas: Some(alphas),
        ..
    } = &cli.command
    {
        config.alphas = alphas.clone();
        config.validate()?;
    }
    eprintln!("# resolved configuration\n{}", config.to_toml());

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| CliError::invalid(format!("worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Generate => commands::generate(&config),
        Command::Calibrate => commands::calibrate(&config),
        Command::Predict { question, topics } => commands::predict(&config, question, topics),
        Command::Evaluate => commands::evaluate(&config),
        Command::Sweep { long, .. } => commands::sweep(&config, *long),
    })
}
