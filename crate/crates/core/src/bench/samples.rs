use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sample::QASample;

/// Reads newline-delimited JSON samples. Blank lines are skipped.
pub fn load_samples(path: impl AsRef<Path>) -> Result<Vec<QASample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_owned(),
            line: idx + 1,
            message,
        };
        let sample: QASample = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        sample.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(sample);
    }
    Ok(out)
}

/// Newline-delimited JSON rendering of `samples`.
pub fn samples_to_jsonl(samples: &[QASample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_samples(path: impl AsRef<Path>, samples: &[QASample]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, samples_to_jsonl(samples)?).map_err(|e| Error::io(path, e))
}

/// Quantile-calibration, LTT, validation, and test partitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub quantile: Vec<QASample>,
    pub ltt: Vec<QASample>,
    pub validation: Vec<QASample>,
    pub test: Vec<QASample>,
}

/// Slice sizes: floor of each share, remainder handed out by largest
/// fractional part (ties to the earlier slice).
pub fn split_sizes(n: usize, fractions: [f64; 4]) -> Result<[usize; 4]> {
    if fractions.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::contract("split fractions must be positive"));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "split fractions sum to {total}, expected 1"
        )));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| n as f64 * f).collect();
    let mut sizes = [0usize; 4];
    for (s, x) in sizes.iter_mut().zip(&exact) {
        *s = (x + 1e-9).floor() as usize;
    }
    let mut remaining = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - sizes[a] as f64;
        let fb = exact[b] - sizes[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    if sizes.contains(&0) {
        return Err(Error::contract(format!(
            "split of {n} samples by {fractions:?} leaves an empty slice"
        )));
    }
    Ok(sizes)
}

/// Seeded shuffle followed by contiguous slicing.
pub fn split_samples(samples: &[QASample], fractions: [f64; 4], seed: u64) -> Result<Splits> {
    let sizes = split_sizes(samples.len(), fractions)?;
    let mut shuffled = samples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut it = shuffled.into_iter();
    let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<_>>();
    Ok(Splits {
        quantile: take(sizes[0]),
        ltt: take(sizes[1]),
        validation: take(sizes[2]),
        test: take(sizes[3]),
    })
}
