//! Per-channel clustering of feature vectors into profile-element
//! candidates.
//!
//! Tests whose stream saw a NaN go to one bucket, tests that saw an infinity
//! (and no NaN) to another; everything else is clustered with k-means over
//! z-scored features. Identical vectors are collapsed before clustering so a
//! channel where every test behaves the same always yields one cluster.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureVector, FEATURE_COUNT};
use crate::ingest::StreamSummary;
use crate::seed::{self, Rng};
use crate::trace::ChannelKey;

/// How many clusters to ask for at a channel reached by `n` tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KPolicy {
    Fixed(usize),
    /// Percentage of `n`, stored in thousandths of a percent (0.5% = 500).
    Percent(u32),
}

impl KPolicy {
    pub fn percent(p: f64) -> Result<Self> {
        let milli = (p * 1000.0).round();
        if !(milli > 0.0 && milli <= 100_000.0) || (p * 1000.0 - milli).abs() > 1e-6 {
            return Err(Error::config(
                "k",
                format!("percentage must be in (0, 100] with at most 3 decimals, got {p}"),
            ));
        }
        Ok(KPolicy::Percent(milli as u32))
    }

    pub fn fixed(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::config("k", format!("fixed k must be at least 2, got {k}")));
        }
        Ok(KPolicy::Fixed(k))
    }

    /// Profile label, e.g. `sstate_k@0.5%`.
    pub fn profile_name(&self) -> String {
        format!("sstate_k@{self}")
    }

    /// A filesystem-friendly rendering, e.g. `k0.5pct`.
    pub fn file_tag(&self) -> String {
        match self {
            KPolicy::Fixed(k) => format!("k{k}"),
            KPolicy::Percent(_) => format!("k{}pct", self.to_string().trim_end_matches('%')),
        }
    }
}

impl fmt::Display for KPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            KPolicy::Fixed(k) => write!(f, "{k}"),
            KPolicy::Percent(milli) => {
                let whole = milli / 1000;
                let frac = milli % 1000;
                if frac == 0 {
                    write!(f, "{whole}%")
                } else {
                    let digits = format!("{frac:03}");
                    write!(f, "{whole}.{}%", digits.trim_end_matches('0'))
                }
            }
        }
    }
}

impl FromStr for KPolicy {
    type Err = Error;

    /// Accepts `2` (fixed) or `0.5%` (percentage of the reaching tests).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(p) = s.strip_suffix('%') {
            let p: f64 = p
                .trim()
                .parse()
                .map_err(|_| Error::config("k", format!("bad percentage `{s}`")))?;
            KPolicy::percent(p)
        } else {
            let k: usize = s
                .parse()
                .map_err(|_| Error::config("k", format!("bad k `{s}`")))?;
            KPolicy::fixed(k)
        }
    }
}

/// Number of clusters for a channel reached by `n` tests: never more than
/// `n`, and at least 2 for percentage policies (rounding half up).
pub fn choose_k(n: usize, policy: KPolicy) -> usize {
    match policy {
        KPolicy::Fixed(k) => k.min(n),
        KPolicy::Percent(milli) => {
            let raw = (u128::from(milli) * n as u128 + 50_000) / 100_000;
            (raw as usize).max(2).min(n)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    /// Independent k-means++ initializations; the lowest-inertia run wins.
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop when no centroid moves farther than this (standardized units).
    pub tolerance: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 100,
            tolerance: 1e-9,
        }
    }
}

pub fn kmeans(vectors: &[FeatureVector], k: usize, seed: u64) -> Vec<usize> {
    kmeans_with(vectors, k, seed, &KMeansParams::default())
}

/// Cluster `vectors` into at most `k` non-empty groups. Labels are dense and
/// numbered by first appearance in the input.
pub fn kmeans_with(vectors: &[FeatureVector], k: usize, seed: u64, params: &KMeansParams) -> Vec<usize> {
    let n = vectors.len();
    if n == 0 {
        return Vec::new();
    }

    // Collapse exact duplicates into weighted points.
    let mut index: HashMap<[u64; FEATURE_COUNT], usize> = HashMap::new();
    let mut reps: Vec<[f64; FEATURE_COUNT]> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut group_of = Vec::with_capacity(n);
    for v in vectors {
        let arr = v.to_array();
        let g = *index.entry(arr.map(f64::to_bits)).or_insert_with(|| {
            reps.push(arr);
            weights.push(0.0);
            reps.len() - 1
        });
        weights[g] += 1.0;
        group_of.push(g);
    }
    let m = reps.len();
    if m == 1 || k <= 1 {
        return vec![0; n];
    }

    let points = standardize(&reps, &weights);
    let k = k.min(m);
    let mut rng = seed::rng(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..params.restarts.max(1) {
        let centers = init_plus_plus(&points, &weights, k, &mut rng);
        let (labels, inertia) = lloyd(&points, &weights, centers, params);
        if best.as_ref().map_or(true, |(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    let (_, group_labels) = best.expect("at least one restart");

    let mut relabel: HashMap<usize, usize> = HashMap::new();
    group_of
        .iter()
        .map(|&g| {
            let next = relabel.len();
            *relabel.entry(group_labels[g]).or_insert(next)
        })
        .collect()
}

/// Weighted per-dimension z-scores; constant dimensions are dropped.
fn standardize(reps: &[[f64; FEATURE_COUNT]], weights: &[f64]) -> Vec<Vec<f64>> {
    let total: f64 = weights.iter().sum();
    let mut kept: Vec<(usize, f64, f64)> = Vec::new();
    for j in 0..FEATURE_COUNT {
        let lo = reps.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
        let hi = reps.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
        if lo == hi {
            continue;
        }
        let mean = reps.iter().zip(weights).map(|(r, w)| w * r[j]).sum::<f64>() / total;
        let var = reps
            .iter()
            .zip(weights)
            .map(|(r, w)| w * (r[j] - mean) * (r[j] - mean))
            .sum::<f64>()
            / total;
        let sd = var.sqrt();
        if sd > 0.0 && sd.is_finite() {
            kept.push((j, mean, sd));
        }
    }
    reps.iter()
        .map(|r| kept.iter().map(|&(j, mean, sd)| (r[j] - mean) / sd).collect())
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index drawn with probability proportional to `mass`.
fn sample(mass: &[f64], rng: &mut Rng) -> Option<usize> {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in mass.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(i);
        if target < acc {
            return Some(i);
        }
    }
    last
}

fn init_plus_plus(points: &[Vec<f64>], weights: &[f64], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let first = sample(weights, rng).unwrap_or(0);
    let mut centers = vec![points[first].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let mass: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        let Some(next) = sample(&mass, rng) else { break };
        let c = points[next].clone();
        for (slot, p) in d2.iter_mut().zip(points) {
            *slot = slot.min(dist2(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Weighted centroids of the non-empty clusters, with labels renumbered to
/// skip the empty ones.
fn centroids(points: &[Vec<f64>], weights: &[f64], labels: &mut [usize], k: usize) -> Vec<Vec<f64>> {
    let d = points[0].len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut mass = vec![0.0; k];
    for ((p, &w), &l) in points.iter().zip(weights).zip(labels.iter()) {
        mass[l] += w;
        for (s, x) in sums[l].iter_mut().zip(p) {
            *s += w * x;
        }
    }
    let mut remap = vec![usize::MAX; k];
    let mut out = Vec::with_capacity(k);
    for c in 0..k {
        if mass[c] > 0.0 {
            remap[c] = out.len();
            out.push(sums[c].iter().map(|s| s / mass[c]).collect());
        }
    }
    for l in labels.iter_mut() {
        *l = remap[*l];
    }
    out
}

fn lloyd(
    points: &[Vec<f64>],
    weights: &[f64],
    mut centers: Vec<Vec<f64>>,
    params: &KMeansParams,
) -> (Vec<usize>, f64) {
    let mut labels = assign(points, &centers);
    for _ in 0..params.max_iters {
        let k = centers.len();
        let next = centroids(points, weights, &mut labels, k);
        let shift = if next.len() == k {
            centers
                .iter()
                .zip(&next)
                .map(|(a, b)| dist2(a, b).sqrt())
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        centers = next;
        labels = assign(points, &centers);
        if shift < params.tolerance {
            break;
        }
    }
    let k = centers.len();
    let centers = centroids(points, weights, &mut labels, k);
    let inertia = points
        .iter()
        .zip(weights)
        .zip(&labels)
        .map(|((p, w), &l)| w * dist2(p, &centers[l]))
        .sum();
    (labels, inertia)
}

/// What one test contributed at one channel.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Features(FeatureVector),
    /// The stream contained at least one NaN.
    Nan,
    /// The stream contained an infinity and no NaN.
    Inf,
}

impl Observation {
    pub fn from_summary(s: &StreamSummary) -> Result<Self> {
        if s.nan_seen() {
            Ok(Observation::Nan)
        } else if s.inf_seen() {
            Ok(Observation::Inf)
        } else {
            extract_features(s).map(Observation::Features)
        }
    }
}

/// Outcome of clustering one channel. Members are suite indices, sorted;
/// clusters are ordered by their first member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelClusters {
    pub key: ChannelKey,
    pub clusters: Vec<Vec<usize>>,
    pub nan_bucket: Vec<usize>,
    pub inf_bucket: Vec<usize>,
}

impl ChannelClusters {
    /// Every test appears exactly once across clusters and buckets.
    pub fn check_partition(&self, executed: &[usize]) -> Result<()> {
        let mut seen: Vec<usize> = self
            .clusters
            .iter()
            .flatten()
            .chain(&self.nan_bucket)
            .chain(&self.inf_bucket)
            .copied()
            .collect();
        seen.sort_unstable();
        let mut expected = executed.to_vec();
        expected.sort_unstable();
        if seen != expected || self.clusters.iter().any(Vec::is_empty) {
            return Err(Error::Invariant(format!(
                "clusters at {} do not partition the tests that reached it",
                self.key
            )));
        }
        Ok(())
    }
}

/// Per-channel seed, independent of channel iteration order.
pub fn channel_seed(seed: u64, key: &ChannelKey) -> u64 {
    seed::derive_seed(seed, seed::fnv1a64(key.to_string().as_bytes()))
}

pub fn cluster_channel(
    key: &ChannelKey,
    table: &[(usize, Observation)],
    policy: KPolicy,
    seed: u64,
    params: &KMeansParams,
) -> ChannelClusters {
    let mut nan_bucket = Vec::new();
    let mut inf_bucket = Vec::new();
    let mut rest: Vec<(usize, FeatureVector)> = Vec::new();
    for (test, obs) in table {
        match obs {
            Observation::Nan => nan_bucket.push(*test),
            Observation::Inf => inf_bucket.push(*test),
            Observation::Features(fv) => rest.push((*test, *fv)),
        }
    }
    nan_bucket.sort_unstable();
    inf_bucket.sort_unstable();

    // Canonical presentation order makes the result independent of how
    // tests were enumerated.
    rest.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    if !rest.is_empty() {
        let k = choose_k(rest.len(), policy);
        let vectors: Vec<FeatureVector> = rest.iter().map(|(_, v)| *v).collect();
        let labels = kmeans_with(&vectors, k, channel_seed(seed, key), params);
        let count = labels.iter().max().map_or(0, |m| m + 1);
        clusters = vec![Vec::new(); count];
        for ((test, _), label) in rest.iter().zip(labels) {
            clusters[label].push(*test);
        }
        for c in &mut clusters {
            c.sort_unstable();
        }
        clusters.sort_by_key(|c| c[0]);
    }

    ChannelClusters {
        key: key.clone(),
        clusters,
        nan_bucket,
        inf_bucket,
    }
}

/// Cluster every channel in parallel; output follows the map's key order.
pub fn cluster_channels<'a, I>(channels: I, policy: KPolicy, seed: u64, params: &KMeansParams) -> Vec<ChannelClusters>
where
    I: IntoIterator<Item = (&'a ChannelKey, &'a Vec<(usize, Observation)>)>,
{
    let work: Vec<_> = channels.into_iter().collect();
    work.into_par_iter()
        .map(|(key, table)| cluster_channel(key, table, policy, seed, params))
        .collect()
}
