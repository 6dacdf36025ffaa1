//! Single-pass ingestion of per-test trace files into per-channel stream
//! summaries.
//!
//! Each channel keeps the streaming ("simple") statistics over every point it
//! sees, plus the first `lead` and the last `trail` values for the features
//! that need the data itself. Memory per channel is bounded by
//! `lead + trail` regardless of stream length.
//!
//! Wire format, one JSON object per line:
//!
//! ```text
//! {"k":"def","m":"A.f(I)I","o":12,"t":0,"v":3.5}
//! {"k":"ret","m":"A.f(I)I","o":20,"t":0,"v":"NaN"}
//! {"k":"entry","m":"A.g(Ljava/lang/String;)V","o":0,"t":1,"s":"0101"}
//! {"k":"def","m":"A.g(Ljava/lang/String;)V","o":7,"t":1,"sm":[9000,12,3.1]}
//! ```

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::trace::{
    CaptureKind, CapturePoint, ChannelKey, StringMetrics, TraceEvent, ValuePayload,
};

pub const MANIFEST_FILE: &str = "tests.txt";
pub const TRACE_EXT: &str = "trace";

/// How many leading and trailing values each channel retains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetentionConfig {
    pub lead: usize,
    pub trail: usize,
}

impl Default for RetentionConfig {
    fn default() -> Self {
        Self {
            lead: 2000,
            trail: 2000,
        }
    }
}

impl RetentionConfig {
    pub fn new(lead: usize, trail: usize) -> Result<Self> {
        if lead == 0 {
            return Err(Error::config("v_lead", "must be at least 1"));
        }
        if trail == 0 {
            return Err(Error::config("v_trail", "must be at least 1"));
        }
        Ok(Self { lead, trail })
    }

    pub fn capacity(&self) -> usize {
        self.lead + self.trail
    }
}

/// Running statistics for one channel within one test.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamSummary {
    size: u64,
    min: f64,
    max: f64,
    sum: f64,
    increasing: bool,
    decreasing: bool,
    longest_zero_run: u64,
    current_zero_run: u64,
    head: Vec<f64>,
    tail: VecDeque<f64>,
    nan_seen: bool,
    inf_seen: bool,
    last_finite: Option<f64>,
    retention: RetentionConfig,
}

impl StreamSummary {
    pub fn new(retention: RetentionConfig) -> Self {
        Self {
            size: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            sum: 0.0,
            increasing: true,
            decreasing: true,
            longest_zero_run: 0,
            current_zero_run: 0,
            head: Vec::new(),
            tail: VecDeque::new(),
            nan_seen: false,
            inf_seen: false,
            last_finite: None,
            retention,
        }
    }

    pub fn from_values(retention: RetentionConfig, values: impl IntoIterator<Item = f64>) -> Self {
        let mut s = Self::new(retention);
        for x in values {
            s.update(x);
        }
        s
    }

    /// Fold one observed value into the summary.
    ///
    /// NaN only raises `nan_seen`. Infinities raise `inf_seen` and move
    /// min/max but stay out of the sum and the monotonicity checks. Every
    /// value, including non-finite ones, counts toward `size` and is retained.
    pub fn update(&mut self, x: f64) {
        self.size += 1;
        if x.is_nan() {
            self.nan_seen = true;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
            if x.is_infinite() {
                self.inf_seen = true;
            } else {
                self.sum += x;
                if let Some(prev) = self.last_finite {
                    if x < prev {
                        self.increasing = false;
                    }
                    if x > prev {
                        self.decreasing = false;
                    }
                }
                self.last_finite = Some(x);
            }
        }

        if x == 0.0 {
            self.current_zero_run += 1;
            self.longest_zero_run = self.longest_zero_run.max(self.current_zero_run);
        } else {
            self.current_zero_run = 0;
        }

        if self.head.len() < self.retention.lead {
            self.head.push(x);
        } else {
            if self.tail.len() == self.retention.trail {
                self.tail.pop_front();
            }
            self.tail.push_back(x);
        }
    }

    pub fn size(&self) -> u64 {
        self.size
    }
    pub fn min(&self) -> f64 {
        self.min
    }
    pub fn max(&self) -> f64 {
        self.max
    }
    pub fn sum(&self) -> f64 {
        self.sum
    }
    pub fn increasing(&self) -> bool {
        self.increasing
    }
    pub fn decreasing(&self) -> bool {
        self.decreasing
    }
    pub fn longest_zero_run(&self) -> u64 {
        self.longest_zero_run
    }
    pub fn nan_seen(&self) -> bool {
        self.nan_seen
    }
    pub fn inf_seen(&self) -> bool {
        self.inf_seen
    }
    pub fn head(&self) -> &[f64] {
        &self.head
    }
    pub fn tail(&self) -> &VecDeque<f64> {
        &self.tail
    }
    pub fn retention(&self) -> RetentionConfig {
        self.retention
    }

    /// True when more points were seen than could be retained.
    pub fn truncated(&self) -> bool {
        self.size as usize > self.head.len() + self.tail.len()
    }

    /// Retained values in stream order: head followed by tail. Equal to the
    /// full stream whenever `size <= lead + trail`.
    pub fn retained(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.head.len() + self.tail.len());
        out.extend_from_slice(&self.head);
        out.extend(self.tail.iter().copied());
        out
    }
}

pub type TestTrace = BTreeMap<ChannelKey, StreamSummary>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    k: String,
    m: String,
    o: u32,
    t: u32,
    #[serde(default)]
    v: Option<Value>,
    #[serde(default)]
    s: Option<String>,
    #[serde(default)]
    sm: Option<(u64, u64, f64)>,
}

/// Parse one trace record. `line` is only used for error messages.
pub fn parse_event(text: &str, line: usize) -> Result<TraceEvent> {
    let err = |msg: String| Error::Parse {
        file: None,
        line,
        msg,
    };
    let raw: RawEvent =
        serde_json::from_str(text).map_err(|e| err(format!("malformed record: {e}")))?;
    let kind: CaptureKind = raw.k.parse().map_err(|e: Error| err(e.to_string()))?;
    let point = CapturePoint::new(raw.m, raw.o, raw.t).map_err(|e| err(e.to_string()))?;
    let payload = match (raw.v, raw.s, raw.sm) {
        (Some(v), None, None) => ValuePayload::Number(parse_number(&v).map_err(err)?),
        (None, Some(s), None) => ValuePayload::Text(s),
        (None, None, Some((len, rich, ent))) => {
            ValuePayload::Metrics(StringMetrics::new(len, rich, ent).map_err(|e| err(e.to_string()))?)
        }
        _ => {
            return Err(err(
                "record must carry exactly one of \"v\", \"s\", \"sm\"".to_string(),
            ))
        }
    };
    Ok(TraceEvent {
        kind,
        point,
        payload,
    })
}

fn parse_number(v: &Value) -> std::result::Result<f64, String> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| format!("number {n} is not representable as f64")),
        Value::String(s) => match s.as_str() {
            "NaN" => Ok(f64::NAN),
            "Infinity" => Ok(f64::INFINITY),
            "-Infinity" => Ok(f64::NEG_INFINITY),
            other => Err(format!("unknown numeric token \"{other}\"")),
        },
        other => Err(format!("\"v\" must be a number or non-finite token, got {other}")),
    }
}

/// Parsed trace of one test plus bookkeeping used by `validate`.
#[derive(Debug, Clone, Default)]
pub struct IngestedTrace {
    pub channels: TestTrace,
    pub events: u64,
}

/// Stream a trace through `update` for every channel it touches. Blank lines
/// are skipped.
pub fn ingest_trace<R: BufRead>(reader: R, retention: RetentionConfig) -> Result<IngestedTrace> {
    let mut out = IngestedTrace::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            file: None,
            line: lineno,
            msg: format!("unreadable line: {e}"),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let event = parse_event(&line, lineno)?;
        out.events += 1;
        for (key, x) in event.channel_values() {
            out.channels
                .entry(key)
                .or_insert_with(|| StreamSummary::new(retention))
                .update(x);
        }
    }
    Ok(out)
}

pub fn ingest_trace_file(path: &Path, retention: RetentionConfig) -> Result<IngestedTrace> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_trace(BufReader::new(file), retention).map_err(|e| e.in_file(path))
}

/// Test ids of a trace directory in suite order: from `tests.txt` when
/// present, else every `*.trace` file sorted by name.
pub fn discover_tests(dir: &Path) -> Result<Vec<String>> {
    let manifest = dir.join(MANIFEST_FILE);
    let ids: Vec<String> = if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect()
    } else {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some(TRACE_EXT) {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        ids
    };
    let mut seen = std::collections::HashSet::new();
    for id in &ids {
        if !seen.insert(id) {
            return Err(Error::Input(format!("test id `{id}` listed twice")));
        }
    }
    Ok(ids)
}

pub fn trace_path(dir: &Path, test_id: &str) -> PathBuf {
    dir.join(format!("{test_id}.{TRACE_EXT}"))
}

/// Ingest every test of a trace directory. Tests are read in parallel on
/// the current rayon pool; the result is in suite order.
pub fn ingest_suite(dir: &Path, retention: RetentionConfig) -> Result<Vec<(String, IngestedTrace)>> {
    let ids = discover_tests(dir)?;
    ids.into_par_iter()
        .map(|id| {
            let trace = ingest_trace_file(&trace_path(dir, &id), retention)?;
            Ok((id, trace))
        })
        .collect()
}
