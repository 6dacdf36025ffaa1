//! The fourteen per-stream features.
//!
//! Size, Min, Max, Mean, LongestRunOfZeros, Increasing and Decreasing come
//! from the streaming summary and cover every observed point. The remaining
//! seven are computed from the retained values (all of them, unless the
//! stream outgrew the retention buffers).
//!
//! Skewness divides the population third moment by the *sample* variance
//! raised to 3/2, and kurtosis divides the population fourth moment by the
//! sample standard deviation to the fourth, minus 3. This mix is deliberate;
//! do not replace it with a textbook estimator.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::ingest::StreamSummary;

pub const FEATURE_COUNT: usize = 14;

/// Column names, in the order used by [`FeatureVector::to_array`] and the
/// features CSV.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "size",
    "min",
    "max",
    "mean",
    "median",
    "std_dev",
    "iqr",
    "skewness",
    "kurtosis",
    "gini",
    "mode",
    "longest_zero_run",
    "increasing",
    "decreasing",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub size: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    pub std_dev: f64,
    pub iqr: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub gini: f64,
    pub mode: f64,
    pub longest_zero_run: f64,
    pub increasing: f64,
    pub decreasing: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.size,
            self.min,
            self.max,
            self.mean,
            self.median,
            self.std_dev,
            self.iqr,
            self.skewness,
            self.kurtosis,
            self.gini,
            self.mode,
            self.longest_zero_run,
            self.increasing,
            self.decreasing,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        Self {
            size: a[0],
            min: a[1],
            max: a[2],
            mean: a[3],
            median: a[4],
            std_dev: a[5],
            iqr: a[6],
            skewness: a[7],
            kurtosis: a[8],
            gini: a[9],
            mode: a[10],
            longest_zero_run: a[11],
            increasing: a[12],
            decreasing: a[13],
        }
    }

    /// Lexicographic order over the feature array using IEEE total order.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.to_array()
            .iter()
            .zip(other.to_array().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Quartiles by the exclusive-halves method: Q1 and Q3 are medians of the
/// lower and upper halves, leaving out the middle element when the count is
/// odd. A single value is its own quartiles.
pub fn quartiles(sorted: &[f64]) -> Result<(f64, f64, f64)> {
    let n = sorted.len();
    match n {
        0 => Err(Error::Domain("quartiles of an empty sample".into())),
        1 => Ok((sorted[0], sorted[0], sorted[0])),
        _ => Ok((
            median_sorted(&sorted[..n / 2]),
            median_sorted(sorted),
            median_sorted(&sorted[(n + 1) / 2..]),
        )),
    }
}

/// Gini coefficient over values sorted ascending, applied verbatim to
/// negative and mixed-sign data. A zero total yields 0.
pub fn gini_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let total: f64 = sorted.iter().sum();
    if sorted.is_empty() || total == 0.0 {
        return 0.0;
    }
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| (i + 1) as f64 * x)
        .sum();
    2.0 * weighted / (n * total) - (n + 1.0) / n
}

pub fn gini(xs: &[f64]) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    gini_sorted(&sorted)
}

/// Smallest of the most frequent values in an ascending slice.
fn mode_sorted(sorted: &[f64]) -> f64 {
    let mut best = sorted[0];
    let mut best_count = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > best_count {
            best_count = j - i;
            best = sorted[i];
        }
        i = j;
    }
    best
}

/// Sample standard deviation, skewness, and excess kurtosis of `xs`.
/// Degenerate samples (fewer than two points, or all equal) give zeros.
pub fn shape_moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len();
    if n < 2 {
        return (0.0, 0.0, 0.0);
    }
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if lo == hi {
        return (0.0, 0.0, 0.0);
    }
    let nf = n as f64;
    let mean = xs.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let var = m2 / (nf - 1.0);
    if var == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let std = var.sqrt();
    let skew = (m3 / nf) / var.powf(1.5);
    let kurt = (m4 / nf) / (var * var) - 3.0;
    (std, skew, kurt)
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Turns a finished, unflagged stream summary into its feature vector.
pub fn extract_features(s: &StreamSummary) -> Result<FeatureVector> {
    if s.size() == 0 {
        return Err(Error::Domain("cannot featurize an empty stream".into()));
    }
    if s.nan_seen() || s.inf_seen() {
        return Err(Error::Domain(
            "stream saw NaN or Infinity; it belongs in a bucket, not a feature vector".into(),
        ));
    }

    let retained = s.retained();
    let mut sorted = retained.clone();
    sorted.sort_by(f64::total_cmp);
    let (q1, median, q3) = quartiles(&sorted)?;
    let (std_dev, skewness, kurtosis) = shape_moments(&retained);

    let fv = FeatureVector {
        size: s.size() as f64,
        min: s.min(),
        max: s.max(),
        mean: s.sum() / s.size() as f64,
        median,
        std_dev,
        iqr: q3 - q1,
        skewness,
        kurtosis,
        gini: gini_sorted(&sorted),
        mode: mode_sorted(&sorted),
        longest_zero_run: s.longest_zero_run() as f64,
        increasing: flag(s.increasing()),
        decreasing: flag(s.decreasing()),
    };
    // Fold -0.0 into 0.0 so equal streams give bitwise-equal vectors.
    Ok(FeatureVector::from_array(fv.to_array().map(|x| x + 0.0)))
}

/// Convenience for tests and tools: featurize a complete in-memory stream
/// with unbounded retention.
pub fn features_of(values: &[f64]) -> Result<FeatureVector> {
    let cap = values.len().max(1);
    let retention = crate::ingest::RetentionConfig { lead: cap, trail: 1 };
    extract_features(&StreamSummary::from_values(retention, values.iter().copied()))
}
