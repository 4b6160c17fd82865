//! Synthetic benchmark, sample files, splits, and metric sweeps.

mod metrics;
mod samples;
mod synthetic;

pub use metrics::{apss, ecr, topk_baseline, MetricsReport, MetricsRow};
pub use samples::{
    load_samples, samples_to_jsonl, save_samples, split_samples, split_sizes, Splits,
};
pub use synthetic::{generate_synthetic, SyntheticBenchmark, SyntheticSpec, TEMPLATE_VERSION};

use crate::error::Result;
use crate::riskctl::{control, ControlSettings, FwerMethod, LambdaGrid, RiskPipeline};

/// Method label of the risk-controlled pipeline in sweep reports.
pub const CALIBRATED: &str = "calibrated";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub delta: f64,
    pub fwer: FwerMethod,
    pub grid: LambdaGrid,
    pub topk: Vec<usize>,
}

pub fn topk_method(k: usize) -> String {
    format!("top-{k}")
}

/// Runs the controller at every alpha and scores the selected configuration
/// and the top-K baselines on the test split.
pub fn sweep<P: RiskPipeline + ?Sized>(
    pipeline: &mut P,
    splits: &Splits,
    config: &SweepConfig,
) -> Result<MetricsReport> {
    let gold: Vec<Vec<String>> = splits.test.iter().map(|s| s.answers.clone()).collect();
    let n_test = splits.test.len();
    let mut rows = Vec::new();
    let mut baselines: Option<Vec<(usize, f64, f64)>> = None;

    for &alpha in &config.alphas {
        let settings = ControlSettings {
            alpha,
            delta: config.delta,
            fwer: config.fwer,
        };
        let result = control(
            pipeline,
            &config.grid,
            &settings,
            &splits.quantile,
            &splits.ltt,
            &splits.validation,
        )?;
        let row = match result.selected {
            Some(lambda) => {
                let outcomes = pipeline.outcomes(&lambda, &splits.test)?;
                let preds: Vec<Vec<String>> =
                    outcomes.iter().map(|o| o.prediction.clone()).collect();
                MetricsRow {
                    alpha,
                    method: CALIBRATED.to_owned(),
                    ecr: Some(ecr(&preds, &gold)?),
                    apss: Some(apss(&preds)?),
                    n_test,
                    truncation_count: outcomes.iter().filter(|o| o.truncated).count(),
                }
            }
            None => MetricsRow {
                alpha,
                method: CALIBRATED.to_owned(),
                ecr: None,
                apss: None,
                n_test,
                truncation_count: 0,
            },
        };
        rows.push(row);

        if baselines.is_none() && !config.topk.is_empty() {
            let mut out = Vec::new();
            if let Some(ranked) = pipeline.ranked_candidates(&splits.test)? {
                for &k in &config.topk {
                    let preds = topk_baseline(&ranked, k);
                    out.push((k, ecr(&preds, &gold)?, apss(&preds)?));
                }
            }
            baselines = Some(out);
        }
        for &(k, e, a) in baselines.iter().flatten() {
            rows.push(MetricsRow {
                alpha,
                method: topk_method(k),
                ecr: Some(e),
                apss: Some(a),
                n_test,
                truncation_count: 0,
            });
        }
    }
    Ok(MetricsReport { rows })
}

/// Independent sub-seed for a named stage, so stages do not share streams.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    crate::scoring::token_hash(label, base)
}
