use std::fs;
use std::path::Path;
use std::sync::Arc;

use kgrisk_core::bench::{
    self, apss, derive_seed, ecr, generate_synthetic, load_samples, split_samples, topk_baseline,
    MetricsReport, MetricsRow, Splits, SweepConfig,
};
use kgrisk_core::evaluator::{Generator, HttpGenerator, HttpGeneratorConfig, MockGenerator};
use kgrisk_core::riskctl::{
    control, lambda_grid, ControlSettings, ControlStatus, RiskControlResult, RiskPipeline,
};
use kgrisk_core::scoring::{HttpEmbeddingProvider, Scorer};
use kgrisk_core::{HttpSettings, KgqaPipeline, KnowledgeGraph, PipelineSettings};
use serde::{Deserialize, Serialize};

use crate::config::{GeneratorSpec, ProviderSpec, RunConfig};
use crate::{CliError, EXIT_INVALID, EXIT_NO_VALID_CONFIGURATION};

pub const ARTIFACT_FORMAT: &str = "kgrisk-calibration/1";

/// Saved outcome of `calibrate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub format: String,
    pub seed: u64,
    pub provider: String,
    pub generator: String,
    pub similarity: kgrisk_core::scoring::SimilarityKind,
    pub max_hops: usize,
    pub frontier_budget: usize,
    pub graph: String,
    pub samples: String,
    /// Quantile, LTT, validation, and test split sizes.
    pub split_sizes: [usize; 4],
    pub control: RiskControlResult,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::invalid(format!("creating {}: {e}", dir.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| CliError::invalid(format!("writing {}: {e}", path.display())))
}

fn scorer(config: &RunConfig) -> Result<Scorer, CliError> {
    Ok(match &config.provider {
        ProviderSpec::Builtin => Scorer::builtin(
            config.embedding_dim,
            derive_seed(config.seed, "embedding"),
            config.similarity,
        )?,
        ProviderSpec::Http(url) => Scorer::new(
            Arc::new(HttpEmbeddingProvider::new(http_settings(config, url))),
            config.similarity,
        ),
    })
}

fn http_settings(config: &RunConfig, url: &str) -> HttpSettings {
    HttpSettings {
        endpoint: url.to_owned(),
        timeout_secs: config.http_timeout_secs,
        retries: config.http_retries,
    }
}

fn generator(config: &RunConfig) -> Arc<dyn Generator> {
    match &config.generator {
        GeneratorSpec::Mock => Arc::new(MockGenerator),
        GeneratorSpec::Http(url) => Arc::new(HttpGenerator::new(HttpGeneratorConfig {
            http: http_settings(config, url),
            ..HttpGeneratorConfig::new(url.clone())
        })),
    }
}

fn pipeline(config: &RunConfig, graph: KnowledgeGraph) -> Result<KgqaPipeline, CliError> {
    let mut settings = PipelineSettings::new(config.max_hops);
    settings.limits.frontier_budget = config.frontier_budget;
    settings.fail_open = config.fail_open;
    Ok(KgqaPipeline::new(
        Arc::new(graph),
        scorer(config)?,
        generator(config),
        settings,
    ))
}

fn load_splits(config: &RunConfig) -> Result<Splits, CliError> {
    let samples = load_samples(&config.samples)?;
    Ok(split_samples(
        &samples,
        config.split_fractions,
        derive_seed(config.seed, "split"),
    )?)
}

fn split_sizes(s: &Splits) -> [usize; 4] {
    [
        s.quantile.len(),
        s.ltt.len(),
        s.validation.len(),
        s.test.len(),
    ]
}

pub fn generate(config: &RunConfig) -> Result<(), CliError> {
    let spec = config
        .synthetic
        .to_spec(derive_seed(config.seed, "synthetic"));
    let bench = generate_synthetic(&spec)?;
    write_file(&config.graph, &bench.graph.to_tsv())?;
    write_file(&config.samples, &bench::samples_to_jsonl(&bench.samples)?)?;
    println!(
        "wrote {} triples ({} entities, {} relations; {} planted, {} distractor) to {}",
        bench.graph.num_triples(),
        bench.graph.num_entities(),
        bench.graph.num_relations(),
        bench.planted_edges,
        bench.distractor_edges,
        config.graph.display()
    );
    println!(
        "wrote {} samples to {} (templates {})",
        bench.samples.len(),
        config.samples.display(),
        bench::TEMPLATE_VERSION
    );
    Ok(())
}

pub fn calibrate(config: &RunConfig) -> Result<(), CliError> {
    let graph = KnowledgeGraph::load(&config.graph)?;
    let splits = load_splits(config)?;
    let mut p = pipeline(config, graph)?;
    let [h1, h2, h3] = config.grid_steps;
    let grid = lambda_grid(h1, h2, h3)?;
    let settings = ControlSettings {
        alpha: config.alpha,
        delta: config.delta,
        fwer: config.fwer,
    };
    let result = control(
        &mut p,
        &grid,
        &settings,
        &splits.quantile,
        &splits.ltt,
        &splits.validation,
    )?;
    let artifact = CalibrationArtifact {
        format: ARTIFACT_FORMAT.to_owned(),
        seed: config.seed,
        provider: p.scorer().provider_identity().to_owned(),
        generator: config.generator.to_string(),
        similarity: config.similarity,
        max_hops: config.max_hops,
        frontier_budget: config.frontier_budget,
        graph: config.graph.display().to_string(),
        samples: config.samples.display().to_string(),
        split_sizes: split_sizes(&splits),
        control: result,
    };
    let mut json = serde_json::to_string_pretty(&artifact)
        .map_err(|e| CliError::invalid(format!("serializing artifact: {e}")))?;
    json.push('\n');
    write_file(&config.artifact, &json)?;

    let c = &artifact.control;
    println!(
        "tested {} configurations on {} LTT samples; {} valid",
        c.lambdas.len(),
        artifact.split_sizes[1],
        c.lambda_valid.len()
    );
    println!("wrote {}", config.artifact.display());
    match (c.status, c.selected) {
        (ControlStatus::Selected, Some(l)) => {
            println!("selected {l}");
            Ok(())
        }
        _ => Err(CliError::new(
            EXIT_NO_VALID_CONFIGURATION,
            format!(
                "no configuration controls the risk at alpha={} delta={}",
                c.alpha, c.delta
            ),
        )),
    }
}

fn load_artifact(config: &RunConfig) -> Result<CalibrationArtifact, CliError> {
    let path = &config.artifact;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::invalid(format!("reading {}: {e}", path.display())))?;
    let artifact: CalibrationArtifact = serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("parsing {}: {e}", path.display())))?;
    if artifact.format != ARTIFACT_FORMAT {
        return Err(CliError::invalid(format!(
            "unsupported artifact format `{}`",
            artifact.format
        )));
    }
    Ok(artifact)
}

/// Pipeline matching the artifact's scoring setup, plus its thresholds.
fn calibrated_pipeline(
    config: &RunConfig,
    artifact: &CalibrationArtifact,
) -> Result<(KgqaPipeline, kgrisk_core::riskctl::LambdaQuantiles), CliError> {
    let Some(quantiles) = artifact.control.quantiles else {
        return Err(CliError::new(
            EXIT_NO_VALID_CONFIGURATION,
            "artifact has no selected configuration",
        ));
    };
    let config = RunConfig {
        similarity: artifact.similarity,
        max_hops: artifact.max_hops,
        frontier_budget: artifact.frontier_budget,
        ..config.clone()
    };
    let graph = KnowledgeGraph::load(&config.graph)?;
    let p = pipeline(&config, graph)?;
    if p.scorer().provider_identity() != artifact.provider {
        return Err(CliError::new(
            EXIT_INVALID,
            format!(
                "embedding provider `{}` differs from the calibrated `{}`",
                p.scorer().provider_identity(),
                artifact.provider
            ),
        ));
    }
    Ok((p, quantiles))
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    question: &'a str,
    topics: &'a [String],
    answers: Vec<String>,
    paths: Vec<String>,
    generation: Option<&'a str>,
    degraded: bool,
    truncated: bool,
}

pub fn predict(config: &RunConfig, question: &str, topics: &[String]) -> Result<(), CliError> {
    let artifact = load_artifact(config)?;
    let (p, quantiles) = calibrated_pipeline(config, &artifact)?;
    let ids = topics
        .iter()
        .map(|t| p.graph().require_entity(t))
        .collect::<kgrisk_core::Result<Vec<_>>>()?;
    let prediction = p.predict(question, &ids, &quantiles)?;
    let answers = prediction.answer_labels(p.graph());
    for a in &answers {
        println!("{a}");
    }
    let record = PredictionRecord {
        question,
        topics,
        paths: prediction.supporting_paths(p.graph()),
        answers,
        generation: prediction.generation.as_deref(),
        degraded: prediction.degraded,
        truncated: prediction.retrieval.truncated,
    };
    println!(
        "{}",
        serde_json::to_string(&record).map_err(|e| CliError::invalid(e.to_string()))?
    );
    Ok(())
}

fn print_summary(report: &MetricsReport) {
    for r in &report.rows {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"));
        println!(
            "alpha={} {:<12} ecr={} apss={} truncated={}",
            r.alpha,
            r.method,
            fmt(r.ecr),
            fmt(r.apss),
            r.truncation_count
        );
    }
}

pub fn evaluate(config: &RunConfig) -> Result<(), CliError> {
    let artifact = load_artifact(config)?;
    let splits = load_splits(config)?;
    if splits.test.is_empty() {
        return Err(CliError::invalid("test split is empty"));
    }
    let gold: Vec<Vec<String>> = splits.test.iter().map(|s| s.answers.clone()).collect();
    let n_test = splits.test.len();
    let alpha = artifact.control.alpha;
    let mut rows = Vec::new();

    let (p, row) = match calibrated_pipeline(config, &artifact) {
        Ok((p, quantiles)) => {
            let outcomes = p.outcomes_with(&quantiles, &splits.test)?;
            let preds: Vec<Vec<String>> = outcomes.iter().map(|o| o.prediction.clone()).collect();
            let row = MetricsRow {
                alpha,
                method: bench::CALIBRATED.to_owned(),
                ecr: Some(ecr(&preds, &gold)?),
                apss: Some(apss(&preds)?),
                n_test,
                truncation_count: outcomes.iter().filter(|o| o.truncated).count(),
            };
            (p, row)
        }
        Err(e) if e.code == EXIT_NO_VALID_CONFIGURATION => {
            let graph = KnowledgeGraph::load(&config.graph)?;
            let row = MetricsRow {
                alpha,
                method: bench::CALIBRATED.to_owned(),
                ecr: None,
                apss: None,
                n_test,
                truncation_count: 0,
            };
            (pipeline(config, graph)?, row)
        }
        Err(e) => return Err(e),
    };
    rows.push(row);
    if let Some(ranked) = p.ranked_candidates(&splits.test)? {
        for &k in &config.topk {
            let preds = topk_baseline(&ranked, k);
            rows.push(MetricsRow {
                alpha,
                method: bench::topk_method(k),
                ecr: Some(ecr(&preds, &gold)?),
                apss: Some(apss(&preds)?),
                n_test,
                truncation_count: 0,
            });
        }
    }
    let report = MetricsReport { rows };
    write_file(&config.report, &report.to_csv())?;
    print_summary(&report);
    println!("wrote {}", config.report.display());
    Ok(())
}

pub fn sweep(config: &RunConfig, long: bool) -> Result<(), CliError> {
    let graph = KnowledgeGraph::load(&config.graph)?;
    let splits = load_splits(config)?;
    if splits.test.is_empty() {
        return Err(CliError::invalid("test split is empty"));
    }
    let mut p = pipeline(config, graph)?;
    let [h1, h2, h3] = config.grid_steps;
    let sweep_config = SweepConfig {
        alphas: config.alphas.clone(),
        delta: config.delta,
        fwer: config.fwer,
        grid: lambda_grid(h1, h2, h3)?,
        topk: config.topk.clone(),
    };
    let report = bench::sweep(&mut p, &splits, &sweep_config)?;
    let csv = if long {
        report.to_long_csv()
    } else {
        report.to_csv()
    };
    write_file(&config.report, &csv)?;
    print_summary(&report);
    println!("wrote {}", config.report.display());
    Ok(())
}
