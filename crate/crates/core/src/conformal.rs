//! Split conformal prediction: calibration score sets, the finite-sample
//! quantile, and threshold-based prediction sets.

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calibration nonconformity scores.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite calibration score {bad}"
            )));
        }
        Ok(Self { scores })
    }

    pub fn push(&mut self, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::contract(format!(
                "non-finite calibration score {score}"
            )));
        }
        self.scores.push(score);
        Ok(())
    }

    pub fn extend(&mut self, other: &ScoreSet) {
        self.scores.extend_from_slice(&other.scores);
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Calibrated threshold `q_alpha` together with the rank it was read at.
///
/// `value` is `+inf` when the rank exceeds `n` (every candidate admitted) and
/// `-inf` when the rank is `<= 0` (no candidate admitted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalQuantile {
    pub alpha: f64,
    pub n: usize,
    pub rank: i64,
    #[serde(serialize_with = "ser_extended", deserialize_with = "de_extended")]
    pub value: f64,
}

impl ConformalQuantile {
    /// Threshold that admits every finite score.
    pub fn admit_all() -> Self {
        Self {
            alpha: 0.0,
            n: 0,
            rank: 1,
            value: f64::INFINITY,
        }
    }

    /// Threshold that admits nothing.
    pub fn admit_none() -> Self {
        Self {
            alpha: 1.0,
            n: 0,
            rank: 0,
            value: f64::NEG_INFINITY,
        }
    }

    pub fn admits(&self, score: f64) -> bool {
        score <= self.value
    }

    pub fn admits_nothing(&self) -> bool {
        self.value == f64::NEG_INFINITY
    }

    pub fn admits_everything(&self) -> bool {
        self.value == f64::INFINITY
    }
}

/// `ceil` that snaps values within `1e-9` of an integer onto it, so that
/// decimal error rates like `0.3` produce the rank their decimal value implies.
fn snapped_ceil(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 {
        r as i64
    } else {
        x.ceil() as i64
    }
}

/// Conformal rank `k = ceil((n + 1)(1 - alpha))`.
pub fn conformal_rank(n: usize, alpha: f64) -> i64 {
    snapped_ceil((n as f64 + 1.0) * (1.0 - alpha))
}

/// Finite-sample conformal quantile: the `k`-th smallest score with
/// `k = ceil((n + 1)(1 - alpha))`.
pub fn conformal_quantile(scores: &ScoreSet, alpha: f64) -> Result<ConformalQuantile> {
    if scores.is_empty() {
        return Err(Error::contract("conformal quantile of an empty score set"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::contract(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let n = scores.len();
    let rank = conformal_rank(n, alpha);
    let value = if rank <= 0 {
        f64::NEG_INFINITY
    } else if rank as usize > n {
        f64::INFINITY
    } else {
        let mut buf = scores.scores().to_vec();
        let (_, kth, _) = buf.select_nth_unstable_by(rank as usize - 1, f64::total_cmp);
        *kth
    };
    Ok(ConformalQuantile {
        alpha,
        n,
        rank,
        value,
    })
}

/// Items whose score is at most the threshold, in input order.
pub fn prediction_set<T: Clone>(candidates: &[(T, f64)], q: &ConformalQuantile) -> Vec<T> {
    candidates
        .iter()
        .filter(|(_, s)| q.admits(*s))
        .map(|(item, _)| item.clone())
        .collect()
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if *v == f64::INFINITY {
        s.serialize_str("inf")
    } else if *v == f64::NEG_INFINITY {
        s.serialize_str("-inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_extended<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Repr::Str(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
        Repr::Str(s) => Err(de::Error::custom(format!("invalid quantile value `{s}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[f64]) -> ScoreSet {
        ScoreSet::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rank_four_of_four() {
        let q = conformal_quantile(&set(&[0.3, 0.1, 0.4, 0.2]), 0.25).unwrap();
        assert_eq!(q.rank, 4);
        assert_eq!(q.value, 0.4);
        // Cross-check: smallest threshold t with |{s <= t}| >= k.
        let scores = [0.3, 0.1, 0.4, 0.2];
        let t = scores
            .iter()
            .copied()
            .filter(|t| scores.iter().filter(|s| **s <= *t).count() >= 4)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(q.value, t);
    }

    #[test]
    fn single_score() {
        let q = conformal_quantile(&set(&[0.5]), 0.5).unwrap();
        assert_eq!(q.rank, 1);
        assert_eq!(q.value, 0.5);
    }

    #[test]
    fn insufficient_data_is_infinite() {
        let q = conformal_quantile(&set(&[0.1, 0.2, 0.3, 0.4]), 0.1).unwrap();
        assert_eq!(q.rank, 5);
        assert_eq!(q.value, f64::INFINITY);
    }

    #[test]
    fn alpha_one_is_empty_threshold() {
        let q = conformal_quantile(&set(&[0.1, 0.2]), 1.0).unwrap();
        assert_eq!(q.rank, 0);
        assert!(q.admits_nothing());
        assert!(!q.admits(-1e300));
    }

    #[test]
    fn decimal_alpha_rank_is_snapped() {
        // (9 + 1)(1 - 0.3) = 7 in decimal arithmetic.
        assert_eq!(conformal_rank(9, 0.3), 7);
        assert_eq!(conformal_rank(99, 0.1), 90);
    }

    #[test]
    fn invalid_inputs() {
        assert!(conformal_quantile(&ScoreSet::default(), 0.1).is_err());
        assert!(conformal_quantile(&set(&[1.0]), 0.0).is_err());
        assert!(conformal_quantile(&set(&[1.0]), 1.5).is_err());
        assert!(ScoreSet::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn ties_count_separately() {
        let q = conformal_quantile(&set(&[0.2, 0.2, 0.2, 0.9]), 0.4).unwrap();
        assert_eq!(q.rank, 3);
        assert_eq!(q.value, 0.2);
    }

    #[test]
    fn input_is_not_mutated() {
        let s = set(&[0.5, 0.1, 0.3]);
        let before = s.clone();
        conformal_quantile(&s, 0.5).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn prediction_set_rules() {
        let cands = vec![("a", 0.1), ("b", 0.5)];
        let mut q = ConformalQuantile::admit_all();
        assert_eq!(prediction_set(&cands, &q), vec!["a", "b"]);
        q.value = 0.3;
        assert_eq!(prediction_set(&cands, &q), vec!["a"]);
        assert!(prediction_set(&cands, &ConformalQuantile::admit_none()).is_empty());
    }

    #[test]
    fn serializes_infinities_as_strings() {
        let q = conformal_quantile(&set(&[0.1]), 0.1).unwrap();
        let json = serde_json::to_string(&q).unwrap();
        assert!(json.contains("\"value\":\"inf\""), "{json}");
        let back: ConformalQuantile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, q);
        let neg = ConformalQuantile::admit_none();
        let back: ConformalQuantile =
            serde_json::from_str(&serde_json::to_string(&neg).unwrap()).unwrap();
        assert_eq!(back.value, f64::NEG_INFINITY);
    }
}
