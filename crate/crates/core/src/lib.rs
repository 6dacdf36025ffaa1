//! Substate profiling: summarize the values a program computes at capture
//! points, cluster tests by those summaries, and use the clusters as
//! coverage elements for greedy test suite reduction.
//!
//! Pipeline: [`ingest`] reads per-test traces into streaming summaries,
//! [`features`] turns each summary into a 14-feature vector, [`cluster`]
//! groups the tests reaching a channel with k-means, [`profile`] assembles
//! the binary test × element matrix, and [`reduce`] runs greedy set cover
//! and the averaging protocols. [`experiment`] ties them into a sweep driven
//! by a [`config::SweepConfig`].

pub mod cluster;
pub mod config;
pub mod error;
pub mod experiment;
pub mod features;
pub mod ingest;
pub mod profile;
pub mod reduce;
pub mod seed;
pub mod trace;

pub use cluster::{choose_k, kmeans, ChannelClusters, KMeansParams, KPolicy, Observation};
pub use config::SweepConfig;
pub use error::{Error, Result};
pub use features::{extract_features, FeatureVector, FEATURE_COUNT, FEATURE_NAMES};
pub use ingest::{ingest_suite, ingest_trace, IngestedTrace, RetentionConfig, StreamSummary};
pub use profile::{combine_matrices, generate_profiles, DefectMap, ProfileElement, ProfileMatrix};
pub use reduce::{
    df_pct, greedy_reduce, rd_pct, run_experiment, single_failure_experiment, verdict, Comparison,
    ExperimentReport, ReductionRun,
};
pub use trace::{
    string_metrics, CaptureKind, CapturePoint, Channel, ChannelKey, StringMetrics, TestLabel, Verdict,
};
