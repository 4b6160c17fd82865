mod common;

use kgrisk_core::conformal::ConformalQuantile;
use kgrisk_core::riskctl::{
    binomial_tail_pvalue, control, fwer_bonferroni, fwer_fixed_sequence, grid_axis, lambda_grid,
    ControlSettings, ControlStatus, FwerMethod, LambdaConfig, LambdaQuantiles, RiskPipeline,
    SampleOutcome,
};
use kgrisk_core::{QASample, Result};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn grid_axes() {
    assert_eq!(grid_axis(0.3).unwrap(), vec![0.3, 0.6, 0.9, 1.0]);
    assert_eq!(grid_axis(0.5).unwrap(), vec![0.5, 1.0]);
    assert_eq!(grid_axis(1.0).unwrap(), vec![1.0]);
    assert_eq!(grid_axis(0.1).unwrap().len(), 10);
    assert_eq!(lambda_grid(0.3, 0.3, 0.1).unwrap().len(), 160);
    let g = lambda_grid(0.5, 0.5, 0.5).unwrap();
    assert_eq!(g.len(), 8);
    assert!(g.configs.windows(2).all(|w| w[0].lex_cmp(&w[1]).is_lt()));
    assert!(grid_axis(0.0).is_err());
    assert!(grid_axis(1.5).is_err());
}

#[test]
fn pvalue_matches_naive_cdf() {
    for n in 1..=200 {
        for alpha in [0.05, 0.2, 0.5] {
            for k in 0..=n {
                let got = binomial_tail_pvalue(n, alpha, k);
                let want = common::naive_binomial_cdf(n, alpha, k);
                assert!(
                    (got - want).abs() <= 1e-12,
                    "n={n} a={alpha} k={k}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn pvalue_closed_forms() {
    assert!((binomial_tail_pvalue(100, 0.2, 0) - 0.8f64.powi(100)).abs() < 1e-20);
    assert_eq!(binomial_tail_pvalue(10, 0.3, 10), 1.0);
    assert!((binomial_tail_pvalue(1, 0.25, 0) - 0.75).abs() < 1e-15);
}

proptest! {
    #[test]
    fn pvalue_monotone(n in 1usize..150, k in 0usize..150, a in 0.01f64..0.99, b in 0.01f64..0.99) {
        let k = k.min(n);
        if k < n {
            prop_assert!(binomial_tail_pvalue(n, a, k) <= binomial_tail_pvalue(n, a, k + 1) + 1e-15);
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(binomial_tail_pvalue(n, hi, k) <= binomial_tail_pvalue(n, lo, k) + 1e-15);
    }
}

#[test]
fn super_uniform_at_boundary() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (trials, n, alpha) = (5000, 50, 0.2);
    let ps: Vec<f64> = (0..trials)
        .map(|_| {
            let k = (0..n).filter(|_| rng.random::<f64>() < alpha).count();
            binomial_tail_pvalue(n, alpha, k)
        })
        .collect();
    for u in [0.01, 0.05, 0.1] {
        let rate = ps.iter().filter(|&&p| p <= u).count() as f64 / trials as f64;
        assert!(rate <= u + 0.02, "P(p <= {u}) = {rate}");
    }
}

fn lam(a: f64, b: f64, c: f64) -> LambdaConfig {
    LambdaConfig::new(a, b, c).unwrap()
}

#[test]
fn fwer_examples() {
    let pv = vec![
        (lam(0.3, 0.3, 0.1), 0.001),
        (lam(0.3, 0.3, 0.2), 0.02),
        (lam(0.6, 0.3, 0.1), 0.5),
    ];
    // threshold 0.05 / 3
    assert_eq!(fwer_bonferroni(&pv, 0.05), vec![lam(0.3, 0.3, 0.1)]);
    assert_eq!(
        fwer_fixed_sequence(&pv, 0.05),
        vec![lam(0.3, 0.3, 0.1), lam(0.3, 0.3, 0.2)]
    );
    let reordered = vec![pv[2], pv[0], pv[1]];
    assert!(fwer_fixed_sequence(&reordered, 0.05).is_empty());
    assert!(fwer_bonferroni(&[], 0.05).is_empty());
}

/// Hardness encoded in the id as `sHHH-…`.
fn hardness_of(id: &str) -> f64 {
    id[1..4].parse::<f64>().unwrap() / 1000.0
}

/// Pipeline whose coverage is a known function of the configuration: each
/// sample has a hardness `h` and is covered iff `h >= alpha1 + alpha2 + alpha3 - 1`;
/// covered predictions have size `1 + 10 * (1 - alpha3)`.
struct Synthetic {
    calibrated: bool,
}

impl RiskPipeline for Synthetic {
    fn calibrate(&mut self, _: &[QASample]) -> Result<()> {
        self.calibrated = true;
        Ok(())
    }

    fn quantiles(&self, l: &LambdaConfig) -> Result<LambdaQuantiles> {
        let q = |a: f64| ConformalQuantile {
            alpha: a,
            n: 1,
            rank: 1,
            value: 1.0 - a,
        };
        Ok(LambdaQuantiles {
            step: q(l.alpha1),
            path: q(l.alpha2),
            answer: q(l.alpha3),
        })
    }

    fn outcomes(&self, l: &LambdaConfig, samples: &[QASample]) -> Result<Vec<SampleOutcome>> {
        assert!(self.calibrated);
        let cut = l.alpha1 + l.alpha2 + l.alpha3 - 1.0;
        Ok(samples
            .iter()
            .map(|s| {
                let size = 1 + (10.0 * (1.0 - l.alpha3)).round() as usize;
                let mut prediction: Vec<String> = (0..size).map(|i| format!("x{i}")).collect();
                if hardness_of(&s.id) >= cut {
                    prediction[0] = s.answers[0].clone();
                }
                SampleOutcome {
                    prediction,
                    ..Default::default()
                }
            })
            .collect())
    }
}

fn samples(range: std::ops::Range<usize>, rng: &mut ChaCha8Rng) -> Vec<QASample> {
    range
        .map(|i| QASample {
            id: format!("s{:03}-{i}", rng.random_range(0..1000)),
            question: "q".into(),
            topic_entities: vec!["t".into()],
            answers: vec![format!("a{i}")],
        })
        .collect()
}

#[test]
fn control_matches_manual_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = samples(0..50, &mut rng);
    let ltt = samples(50..250, &mut rng);
    let val = samples(250..350, &mut rng);
    let grid = lambda_grid(0.3, 0.3, 0.1).unwrap();
    for fwer in [FwerMethod::Bonferroni, FwerMethod::FixedSequence] {
        let settings = ControlSettings {
            alpha: 0.2,
            delta: 0.05,
            fwer,
        };
        let mut p = Synthetic { calibrated: false };
        let res = control(&mut p, &grid, &settings, &q, &ltt, &val).unwrap();

        // manual: loss counts from the closed-form coverage rule
        let loss = |l: &LambdaConfig, split: &[QASample]| {
            let cut = l.alpha1 + l.alpha2 + l.alpha3 - 1.0;
            split.iter().filter(|s| hardness_of(&s.id) < cut).count()
        };
        let mut reports = Vec::new();
        for l in &grid.configs {
            let k = loss(l, &ltt);
            let p = common::naive_binomial_cdf(ltt.len(), 0.2, k);
            let size = 1 + (10.0 * (1.0 - l.alpha3)).round() as usize;
            reports.push((*l, p, k, loss(l, &val), size as f64));
        }
        for (r, m) in res.lambdas.iter().zip(&reports) {
            assert_eq!(r.lambda, m.0);
            assert_eq!(r.loss_sum, m.2);
            assert!((r.p_value - m.1).abs() < 1e-12);
        }
        let valid: Vec<LambdaConfig> = match fwer {
            FwerMethod::Bonferroni => reports
                .iter()
                .filter(|m| m.1 <= 0.05 / grid.len() as f64)
                .map(|m| m.0)
                .collect(),
            FwerMethod::FixedSequence => {
                let mut order = reports.clone();
                order.sort_by(|a, b| {
                    a.3.cmp(&b.3)
                        .then(b.4.total_cmp(&a.4))
                        .then(a.0.lex_cmp(&b.0))
                });
                order
                    .iter()
                    .take_while(|m| m.1 <= 0.05)
                    .map(|m| m.0)
                    .collect()
            }
        };
        let mut got_valid = res.lambda_valid.clone();
        let mut want_valid = valid.clone();
        got_valid.sort_by(|a, b| a.lex_cmp(b));
        want_valid.sort_by(|a, b| a.lex_cmp(b));
        assert_eq!(got_valid, want_valid, "{fwer}");
        assert!(!want_valid.is_empty());
        let best = reports
            .iter()
            .filter(|m| valid.contains(&m.0))
            .min_by(|a, b| a.4.total_cmp(&b.4).then(a.0.lex_cmp(&b.0)))
            .unwrap();
        assert_eq!(res.selected, Some(best.0));
        assert_eq!(res.status, ControlStatus::Selected);
        assert_eq!(res.quantiles.unwrap().answer.alpha, best.0.alpha3);
    }
}

struct Constant(bool);

impl RiskPipeline for Constant {
    fn calibrate(&mut self, _: &[QASample]) -> Result<()> {
        Ok(())
    }
    fn quantiles(&self, _: &LambdaConfig) -> Result<LambdaQuantiles> {
        let q = ConformalQuantile::admit_all();
        Ok(LambdaQuantiles {
            step: q,
            path: q,
            answer: q,
        })
    }
    fn outcomes(&self, _: &LambdaConfig, samples: &[QASample]) -> Result<Vec<SampleOutcome>> {
        Ok(samples
            .iter()
            .map(|s| SampleOutcome {
                prediction: if self.0 { s.answers.clone() } else { vec![] },
                ..Default::default()
            })
            .collect())
    }
}

fn plain(range: std::ops::Range<usize>) -> Vec<QASample> {
    range
        .map(|i| QASample {
            id: format!("p{i}"),
            question: "q".into(),
            topic_entities: vec!["t".into()],
            answers: vec!["a".into()],
        })
        .collect()
}

#[test]
fn always_covering_pipeline_validates_whole_grid() {
    let grid = lambda_grid(0.5, 0.5, 0.5).unwrap();
    let settings = ControlSettings {
        alpha: 0.2,
        delta: 0.05,
        fwer: FwerMethod::Bonferroni,
    };
    let res = control(
        &mut Constant(true),
        &grid,
        &settings,
        &plain(0..10),
        &plain(10..110),
        &plain(110..120),
    )
    .unwrap();
    assert_eq!(res.lambda_valid.len(), grid.len());
    for r in &res.lambdas {
        assert!((r.p_value - 0.8f64.powi(100)).abs() < 1e-20);
    }
    // equal set sizes everywhere: lexicographically smallest wins
    assert_eq!(res.selected, Some(grid.configs[0]));
}

#[test]
fn never_covering_pipeline_has_no_valid_configuration() {
    let grid = lambda_grid(0.5, 0.5, 0.5).unwrap();
    let settings = ControlSettings {
        alpha: 0.2,
        delta: 0.05,
        fwer: FwerMethod::FixedSequence,
    };
    let res = control(
        &mut Constant(false),
        &grid,
        &settings,
        &plain(0..10),
        &plain(10..110),
        &plain(110..120),
    )
    .unwrap();
    assert_eq!(res.status, ControlStatus::NoValidConfiguration);
    assert!(res.selected.is_none() && res.quantiles.is_none());
}

#[test]
fn overlapping_or_empty_splits_rejected() {
    let grid = lambda_grid(0.5, 0.5, 0.5).unwrap();
    let settings = ControlSettings {
        alpha: 0.2,
        delta: 0.05,
        fwer: FwerMethod::Bonferroni,
    };
    assert!(control(
        &mut Constant(true),
        &grid,
        &settings,
        &plain(0..10),
        &plain(5..20),
        &plain(30..40)
    )
    .is_err());
    assert!(control(
        &mut Constant(true),
        &grid,
        &settings,
        &plain(0..10),
        &[],
        &plain(30..40)
    )
    .is_err());
    let bad = ControlSettings {
        alpha: 1.0,
        ..settings
    };
    assert!(control(
        &mut Constant(true),
        &grid,
        &bad,
        &plain(0..10),
        &plain(10..20),
        &plain(30..40)
    )
    .is_err());
}

#[test]
fn result_round_trips_through_json() {
    let grid = lambda_grid(0.5, 0.5, 0.5).unwrap();
    let settings = ControlSettings {
        alpha: 0.2,
        delta: 0.05,
        fwer: FwerMethod::Bonferroni,
    };
    let res = control(
        &mut Constant(true),
        &grid,
        &settings,
        &plain(0..10),
        &plain(10..60),
        &plain(60..70),
    )
    .unwrap();
    let json = serde_json::to_string(&res).unwrap();
    assert!(json.contains("\"inf\""));
    let back: kgrisk_core::riskctl::RiskControlResult = serde_json::from_str(&json).unwrap();
    assert_eq!(back, res);
}
