//! Learn-Then-Test calibration of the per-component error rates.
//!
//! Each configuration `λ = (α₁, α₂, α₃)` of the grid is a null hypothesis
//! "expected miscoverage exceeds α". Its binomial-tail p-value is computed on
//! a dedicated split, a family-wise error rate procedure keeps the
//! configurations whose null is rejected, and the one with the smallest
//! average prediction set on a validation split is selected.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformal::ConformalQuantile;
use crate::error::{Error, Result};
use crate::sample::QASample;

/// Per-component error rates: path expansion, candidate collection, and
/// generator filtering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl LambdaConfig {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64) -> Result<Self> {
        for a in [alpha1, alpha2, alpha3] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::contract(format!("error rate {a} outside (0, 1]")));
            }
        }
        Ok(Self {
            alpha1,
            alpha2,
            alpha3,
        })
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.alpha1, self.alpha2, self.alpha3]
    }

    /// Lexicographic order on `(α₁, α₂, α₃)`.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        self.alpha1
            .total_cmp(&other.alpha1)
            .then(self.alpha2.total_cmp(&other.alpha2))
            .then(self.alpha3.total_cmp(&other.alpha3))
    }
}

impl fmt::Display for LambdaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.alpha1, self.alpha2, self.alpha3)
    }
}

/// Values `{h, 2h, …} ∪ {1}` not exceeding 1.
pub fn grid_axis(h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::contract(format!("grid step {h} outside (0, 1]")));
    }
    let mut axis = Vec::new();
    let mut k = 1u32;
    loop {
        // Rounded so that e.g. 3 × 0.1 is stored as 0.3.
        let v = ((f64::from(k) * h) * 1e12).round() / 1e12;
        if v > 1.0 + 1e-12 {
            break;
        }
        axis.push(v.min(1.0));
        k += 1;
    }
    if axis.last().is_none_or(|&last| last < 1.0) {
        axis.push(1.0);
    }
    Ok(axis)
}

/// Cartesian product of the three axes, in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub steps: [f64; 3],
    pub configs: Vec<LambdaConfig>,
}

impl LambdaGrid {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }
}

pub fn lambda_grid(h1: f64, h2: f64, h3: f64) -> Result<LambdaGrid> {
    let (a1, a2, a3) = (grid_axis(h1)?, grid_axis(h2)?, grid_axis(h3)?);
    let mut configs = Vec::with_capacity(a1.len() * a2.len() * a3.len());
    for &x in &a1 {
        for &y in &a2 {
            for &z in &a3 {
                configs.push(LambdaConfig {
                    alpha1: x,
                    alpha2: y,
                    alpha3: z,
                });
            }
        }
    }
    Ok(LambdaGrid {
        steps: [h1, h2, h3],
        configs,
    })
}

/// `P(Binom(n, alpha) <= loss_sum)`.
///
/// Terms are generated by the ratio recurrence outward from the mode and
/// normalized by their total, which avoids underflow of `(1 - alpha)^n` for
/// large `n` and keeps the relative error near machine precision.
pub fn binomial_tail_pvalue(n: usize, alpha: f64, loss_sum: usize) -> f64 {
    if loss_sum >= n {
        return 1.0;
    }
    if alpha <= 0.0 {
        return 1.0;
    }
    if alpha >= 1.0 {
        return 0.0;
    }
    let odds = alpha / (1.0 - alpha);
    // ratio(k) = t_{k+1} / t_k
    let ratio = |k: usize| (n - k) as f64 / (k + 1) as f64 * odds;
    let mode = (((n + 1) as f64 * alpha).floor() as usize).min(n);
    let mut terms = vec![0.0f64; n + 1];
    terms[mode] = 1.0;
    for k in mode..n {
        terms[k + 1] = terms[k] * ratio(k);
    }
    for k in (0..mode).rev() {
        terms[k] = terms[k + 1] / ratio(k);
    }
    let partial: f64 = terms[..=loss_sum].iter().sum();
    let total: f64 = partial + terms[loss_sum + 1..].iter().sum::<f64>();
    (partial / total).clamp(0.0, 1.0)
}

/// Family-wise error rate procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FwerMethod {
    #[default]
    Bonferroni,
    FixedSequence,
}

impl fmt::Display for FwerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FwerMethod::Bonferroni => "bonferroni",
            FwerMethod::FixedSequence => "fixed-sequence",
        })
    }
}

impl FromStr for FwerMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonferroni" => Ok(FwerMethod::Bonferroni),
            "fixed-sequence" => Ok(FwerMethod::FixedSequence),
            other => Err(Error::contract(format!("unknown FWER method `{other}`"))),
        }
    }
}

/// `{λ : p_λ <= delta / |Λ|}`.
pub fn fwer_bonferroni(p_values: &[(LambdaConfig, f64)], delta: f64) -> Vec<LambdaConfig> {
    if p_values.is_empty() {
        return Vec::new();
    }
    let threshold = delta / p_values.len() as f64;
    p_values
        .iter()
        .filter(|(_, p)| *p <= threshold)
        .map(|(l, _)| *l)
        .collect()
}

/// Tests in the given order at level `delta`, stopping at the first failure.
pub fn fwer_fixed_sequence(ordered: &[(LambdaConfig, f64)], delta: f64) -> Vec<LambdaConfig> {
    ordered
        .iter()
        .take_while(|(_, p)| *p <= delta)
        .map(|(l, _)| *l)
        .collect()
}

/// Binary miscoverage losses of one configuration over a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossVector {
    pub losses: Vec<u8>,
    pub sum: usize,
}

impl LossVector {
    pub fn from_outcomes(samples: &[QASample], outcomes: &[SampleOutcome]) -> Self {
        let losses: Vec<u8> = samples
            .iter()
            .zip(outcomes)
            .map(|(s, o)| u8::from(!s.is_covered_by(&o.prediction)))
            .collect();
        let sum = losses.iter().map(|&l| usize::from(l)).sum();
        Self { losses, sum }
    }

    pub fn n(&self) -> usize {
        self.losses.len()
    }
}

/// Prediction for one sample under one configuration.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleOutcome {
    /// Predicted answer labels.
    pub prediction: Vec<String>,
    pub truncated: bool,
    pub degraded: bool,
}

/// The three thresholds a configuration induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaQuantiles {
    pub step: ConformalQuantile,
    pub path: ConformalQuantile,
    pub answer: ConformalQuantile,
}

/// A calibratable prediction pipeline whose error rates are tuned here.
pub trait RiskPipeline: Sync {
    /// Computes calibration score sets from the quantile split.
    fn calibrate(&mut self, quantile_split: &[QASample]) -> Result<()>;

    fn quantiles(&self, lambda: &LambdaConfig) -> Result<LambdaQuantiles>;

    fn outcomes(&self, lambda: &LambdaConfig, samples: &[QASample]) -> Result<Vec<SampleOutcome>>;

    /// Outcomes for every configuration, indexed `[config][sample]`.
    fn outcomes_grid(
        &self,
        configs: &[LambdaConfig],
        samples: &[QASample],
    ) -> Result<Vec<Vec<SampleOutcome>>> {
        configs.iter().map(|l| self.outcomes(l, samples)).collect()
    }

    /// Candidates per sample ranked by ascending nonconformity to the
    /// question, when the pipeline can provide them.
    fn ranked_candidates(&self, _samples: &[QASample]) -> Result<Option<Vec<Vec<String>>>> {
        Ok(None)
    }
}

/// Loss of every sample under `lambda`.
pub fn empirical_losses<P: RiskPipeline + ?Sized>(
    pipeline: &P,
    lambda: &LambdaConfig,
    split: &[QASample],
) -> Result<LossVector> {
    let outcomes = pipeline.outcomes(lambda, split)?;
    Ok(LossVector::from_outcomes(split, &outcomes))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlSettings {
    pub alpha: f64,
    pub delta: f64,
    pub fwer: FwerMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlStatus {
    Selected,
    NoValidConfiguration,
}

/// Audit entry for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaReport {
    pub lambda: LambdaConfig,
    pub p_value: f64,
    pub loss_sum: usize,
    pub n: usize,
    pub truncated: usize,
    pub val_loss_sum: usize,
    pub val_apss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskControlResult {
    pub alpha: f64,
    pub delta: f64,
    pub fwer: FwerMethod,
    pub grid_steps: [f64; 3],
    pub status: ControlStatus,
    pub lambdas: Vec<LambdaReport>,
    pub lambda_valid: Vec<LambdaConfig>,
    pub selected: Option<LambdaConfig>,
    pub quantiles: Option<LambdaQuantiles>,
}

fn check_disjoint(splits: [&[QASample]; 3]) -> Result<()> {
    let mut seen = HashSet::new();
    for split in splits {
        for s in split {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::contract(format!(
                    "sample `{}` appears in more than one split",
                    s.id
                )));
            }
        }
    }
    Ok(())
}

/// Runs the full controller: calibrate, test every configuration, apply the
/// FWER procedure, and select the smallest-set valid configuration.
pub fn control<P: RiskPipeline + ?Sized>(
    pipeline: &mut P,
    grid: &LambdaGrid,
    settings: &ControlSettings,
    quantile_split: &[QASample],
    ltt_split: &[QASample],
    val_split: &[QASample],
) -> Result<RiskControlResult> {
    if !(settings.alpha > 0.0 && settings.alpha < 1.0) {
        return Err(Error::contract(format!(
            "alpha {} outside (0, 1)",
            settings.alpha
        )));
    }
    if !(settings.delta > 0.0 && settings.delta < 1.0) {
        return Err(Error::contract(format!(
            "delta {} outside (0, 1)",
            settings.delta
        )));
    }
    if quantile_split.is_empty() || ltt_split.is_empty() || val_split.is_empty() {
        return Err(Error::contract("calibration splits must be non-empty"));
    }
    if grid.is_empty() {
        return Err(Error::contract("empty configuration grid"));
    }
    check_disjoint([quantile_split, ltt_split, val_split])?;

    pipeline.calibrate(quantile_split)?;

    let ltt = pipeline.outcomes_grid(&grid.configs, ltt_split)?;
    let val = pipeline.outcomes_grid(&grid.configs, val_split)?;

    let mut lambdas = Vec::with_capacity(grid.len());
    for ((lambda, ltt_out), val_out) in grid.configs.iter().zip(&ltt).zip(&val) {
        let losses = LossVector::from_outcomes(ltt_split, ltt_out);
        let val_losses = LossVector::from_outcomes(val_split, val_out);
        let val_apss =
            val_out.iter().map(|o| o.prediction.len()).sum::<usize>() as f64 / val_out.len() as f64;
        lambdas.push(LambdaReport {
            lambda: *lambda,
            p_value: binomial_tail_pvalue(losses.n(), settings.alpha, losses.sum),
            loss_sum: losses.sum,
            n: losses.n(),
            truncated: ltt_out.iter().filter(|o| o.truncated).count(),
            val_loss_sum: val_losses.sum,
            val_apss,
        });
    }

    let lambda_valid = match settings.fwer {
        FwerMethod::Bonferroni => {
            let pv: Vec<(LambdaConfig, f64)> =
                lambdas.iter().map(|r| (r.lambda, r.p_value)).collect();
            fwer_bonferroni(&pv, settings.delta)
        }
        FwerMethod::FixedSequence => {
            let mut order: Vec<&LambdaReport> = lambdas.iter().collect();
            order.sort_by(|a, b| {
                a.val_loss_sum
                    .cmp(&b.val_loss_sum)
                    .then(b.val_apss.total_cmp(&a.val_apss))
                    .then(a.lambda.lex_cmp(&b.lambda))
            });
            let pv: Vec<(LambdaConfig, f64)> =
                order.iter().map(|r| (r.lambda, r.p_value)).collect();
            fwer_fixed_sequence(&pv, settings.delta)
        }
    };

    let selected = lambdas
        .iter()
        .filter(|r| lambda_valid.iter().any(|v| v == &r.lambda))
        .min_by(|a, b| {
            a.val_apss
                .total_cmp(&b.val_apss)
                .then(a.lambda.lex_cmp(&b.lambda))
        })
        .map(|r| r.lambda);
    let quantiles = selected
        .as_ref()
        .map(|l| pipeline.quantiles(l))
        .transpose()?;

    Ok(RiskControlResult {
        alpha: settings.alpha,
        delta: settings.delta,
        fwer: settings.fwer,
        grid_steps: grid.steps,
        status: if selected.is_some() {
            ControlStatus::Selected
        } else {
            ControlStatus::NoValidConfiguration
        },
        lambdas,
        lambda_valid,
        selected,
        quantiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(a: f64, b: f64, c: f64) -> LambdaConfig {
        LambdaConfig::new(a, b, c).unwrap()
    }

    #[test]
    fn grid_halves() {
        let g = lambda_grid(0.5, 0.5, 0.5).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.configs[0], l(0.5, 0.5, 0.5));
        assert_eq!(g.configs[7], l(1.0, 1.0, 1.0));
    }

    #[test]
    fn default_grid_has_160_configs() {
        assert_eq!(grid_axis(0.3).unwrap(), vec![0.3, 0.6, 0.9, 1.0]);
        let axis = grid_axis(0.1).unwrap();
        assert_eq!(axis.len(), 10);
        assert_eq!(axis[2], 0.3);
        assert_eq!(*axis.last().unwrap(), 1.0);
        let g = lambda_grid(0.3, 0.3, 0.1).unwrap();
        assert_eq!(g.len(), 160);
        assert!(g
            .configs
            .windows(2)
            .all(|w| w[0].lex_cmp(&w[1]) == Ordering::Less));
    }

    #[test]
    fn unit_grid() {
        assert_eq!(
            lambda_grid(1.0, 1.0, 1.0).unwrap().configs,
            vec![l(1.0, 1.0, 1.0)]
        );
        assert!(lambda_grid(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn pvalue_examples() {
        assert_eq!(binomial_tail_pvalue(10, 0.3, 10), 1.0);
        assert!((binomial_tail_pvalue(10, 0.3, 0) - 0.7f64.powi(10)).abs() < 1e-15);
        let two = 0.7f64.powi(10) + 10.0 * 0.3 * 0.7f64.powi(9);
        assert!((binomial_tail_pvalue(10, 0.3, 1) - two).abs() < 1e-15);
        assert!((binomial_tail_pvalue(10, 0.3, 1) - 0.149_308_3).abs() < 1e-7);
    }

    #[test]
    fn pvalue_at_zero_loss_is_closed_form() {
        let p = binomial_tail_pvalue(100, 0.2, 0);
        assert!((p / 0.8f64.powi(100) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bonferroni_threshold() {
        let mut pv: Vec<(LambdaConfig, f64)> = (1..=10)
            .map(|i| (l(f64::from(i) / 10.0, 1.0, 1.0), 0.9))
            .collect();
        assert!(fwer_bonferroni(&pv, 0.05).is_empty());
        pv[3].1 = 0.004;
        assert_eq!(fwer_bonferroni(&pv, 0.05), vec![pv[3].0]);
        let single = [(l(1.0, 1.0, 1.0), 0.04)];
        assert_eq!(fwer_bonferroni(&single, 0.05).len(), 1);
        assert!(fwer_bonferroni(&single, 0.03).is_empty());
    }

    #[test]
    fn fixed_sequence_prefix() {
        let seq = [
            (l(0.1, 1.0, 1.0), 0.01),
            (l(0.2, 1.0, 1.0), 0.02),
            (l(0.3, 1.0, 1.0), 0.3),
            (l(0.4, 1.0, 1.0), 0.01),
        ];
        assert_eq!(fwer_fixed_sequence(&seq, 0.05), vec![seq[0].0, seq[1].0]);
        assert!(fwer_fixed_sequence(&seq[2..], 0.05).is_empty());
        assert_eq!(fwer_fixed_sequence(&[(seq[0].0, 0.04)], 0.05).len(), 1);
    }

    #[test]
    fn fwer_method_parses() {
        assert_eq!(
            "fixed-sequence".parse::<FwerMethod>().unwrap(),
            FwerMethod::FixedSequence
        );
        assert!("holm".parse::<FwerMethod>().is_err());
    }

    #[test]
    fn lambda_rejects_out_of_range() {
        assert!(LambdaConfig::new(0.0, 0.5, 0.5).is_err());
        assert!(LambdaConfig::new(0.5, 1.1, 0.5).is_err());
    }
}
