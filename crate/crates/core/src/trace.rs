//! Capture points, trace events, and the channel identity rules that let
//! value streams be matched across tests.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A program location where state is recorded.
///
/// Two capture points match across tests only if all three attributes agree.
/// `thread` is a logical index in thread-creation order, not an OS id, so the
/// same point lines up between runs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CapturePoint {
    pub method: String,
    pub offset: u32,
    pub thread: u32,
}

impl CapturePoint {
    pub fn new(method: impl Into<String>, offset: u32, thread: u32) -> Result<Self> {
        let method = method.into();
        if method.is_empty() {
            return Err(Error::Input("capture point method signature is empty".into()));
        }
        Ok(Self {
            method,
            offset,
            thread,
        })
    }
}

impl fmt::Display for CapturePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}@{}", self.method, self.offset, self.thread)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CaptureKind {
    /// Function entry; the value is a formal parameter.
    Entry,
    /// Definition statement; the value is the one just assigned.
    Def,
    /// Return statement; the value is the returned one.
    Ret,
}

impl CaptureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CaptureKind::Entry => "entry",
            CaptureKind::Def => "def",
            CaptureKind::Ret => "ret",
        }
    }
}

impl fmt::Display for CaptureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaptureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entry" => Ok(CaptureKind::Entry),
            "def" => Ok(CaptureKind::Def),
            "ret" => Ok(CaptureKind::Ret),
            other => Err(Error::Input(format!("unknown capture kind `{other}`"))),
        }
    }
}

/// Which numeric stream a capture feeds. Strings fan out into three channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Value,
    StrLen,
    StrRich,
    StrEnt,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Value => "value",
            Channel::StrLen => "str_len",
            Channel::StrRich => "str_rich",
            Channel::StrEnt => "str_ent",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value" => Ok(Channel::Value),
            "str_len" => Ok(Channel::StrLen),
            "str_rich" => Ok(Channel::StrRich),
            "str_ent" => Ok(Channel::StrEnt),
            other => Err(Error::Input(format!("unknown channel `{other}`"))),
        }
    }
}

/// Identity of one value stream. Ordering is (method, offset, thread, kind,
/// channel) and is what fixes profile column order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChannelKey {
    pub point: CapturePoint,
    pub kind: CaptureKind,
    pub channel: Channel,
}

impl fmt::Display for ChannelKey {
    /// `<method>@<offset>@<thread>/<kind>/<channel>`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.point, self.kind, self.channel)
    }
}

/// Length, distinct-character count, and base-2 Shannon entropy of a string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StringMetrics {
    pub length: u64,
    pub richness: u64,
    pub entropy: f64,
}

impl StringMetrics {
    /// Validate metrics carried in a trace (`"sm"` records).
    pub fn new(length: u64, richness: u64, entropy: f64) -> Result<Self> {
        if richness > length {
            return Err(Error::Input(format!(
                "string richness {richness} exceeds length {length}"
            )));
        }
        if !(entropy >= 0.0) || !entropy.is_finite() {
            return Err(Error::Input(format!(
                "string entropy must be finite and non-negative, got {entropy}"
            )));
        }
        Ok(Self {
            length,
            richness,
            entropy,
        })
    }
}

/// Computes the three string measures over Unicode scalar values.
pub fn string_metrics(s: &str) -> StringMetrics {
    let mut counts: HashMap<char, u64> = HashMap::new();
    let mut length = 0u64;
    for c in s.chars() {
        *counts.entry(c).or_insert(0) += 1;
        length += 1;
    }
    if length == 0 {
        return StringMetrics {
            length: 0,
            richness: 0,
            entropy: 0.0,
        };
    }
    // Sum in a fixed order so the result does not depend on hash iteration.
    let mut freq: Vec<u64> = counts.values().copied().collect();
    freq.sort_unstable();
    let n = length as f64;
    let entropy = freq
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0);
    StringMetrics {
        length,
        richness: counts.len() as u64,
        entropy,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValuePayload {
    /// Any numeric capture, narrowed to f64. May be NaN or infinite.
    Number(f64),
    Text(String),
    /// Metrics precomputed by the tracer for strings too long to ship.
    Metrics(StringMetrics),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub kind: CaptureKind,
    pub point: CapturePoint,
    pub payload: ValuePayload,
}

impl TraceEvent {
    /// Fan the event out into `(channel, value)` pairs: one for numbers,
    /// three (length, richness, entropy) for strings.
    pub fn channel_values(&self) -> Vec<(ChannelKey, f64)> {
        let key = |channel| ChannelKey {
            point: self.point.clone(),
            kind: self.kind,
            channel,
        };
        match &self.payload {
            ValuePayload::Number(x) => vec![(key(Channel::Value), *x)],
            ValuePayload::Text(s) => metric_values(string_metrics(s), key),
            ValuePayload::Metrics(m) => metric_values(*m, key),
        }
    }
}

fn metric_values(
    m: StringMetrics,
    key: impl Fn(Channel) -> ChannelKey,
) -> Vec<(ChannelKey, f64)> {
    vec![
        (key(Channel::StrLen), m.length as f64),
        (key(Channel::StrRich), m.richness as f64),
        (key(Channel::StrEnt), m.entropy),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pass" => Ok(Verdict::Pass),
            "fail" => Ok(Verdict::Fail),
            other => Err(Error::Input(format!("unknown verdict `{other}`"))),
        }
    }
}

/// Externally supplied outcome of one test. Failing tests name the defect
/// they reveal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestLabel {
    pub test_id: String,
    pub verdict: Verdict,
    pub defect: Option<String>,
}

impl TestLabel {
    pub fn pass(test_id: impl Into<String>) -> Self {
        Self {
            test_id: test_id.into(),
            verdict: Verdict::Pass,
            defect: None,
        }
    }

    pub fn fail(test_id: impl Into<String>, defect: impl Into<String>) -> Self {
        Self {
            test_id: test_id.into(),
            verdict: Verdict::Fail,
            defect: Some(defect.into()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.verdict, &self.defect) {
            (Verdict::Fail, None) => Err(Error::Input(format!(
                "failing test `{}` has no defect id",
                self.test_id
            ))),
            (Verdict::Pass, Some(d)) => Err(Error::Input(format!(
                "passing test `{}` names defect `{d}`",
                self.test_id
            ))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn def(payload: ValuePayload) -> TraceEvent {
        TraceEvent {
            kind: CaptureKind::Def,
            point: CapturePoint::new("A.f()V", 4, 0).unwrap(),
            payload,
        }
    }

    fn round3(x: f64) -> f64 {
        (x * 1000.0).round() / 1000.0
    }

    #[test]
    fn binary_string_metrics() {
        let m = string_metrics("00101111");
        assert_eq!((m.length, m.richness), (8, 2));
        assert_eq!(round3(m.entropy), 0.954);
        assert_eq!(round3(string_metrics("01111101").entropy), 0.811);
        assert!((string_metrics("11101111").entropy - 0.5435644431995964).abs() < 1e-12);
        assert!((string_metrics("00010000").entropy - 0.5435644431995964).abs() < 1e-12);
    }

    #[test]
    fn degenerate_strings() {
        assert_eq!(
            string_metrics(""),
            StringMetrics {
                length: 0,
                richness: 0,
                entropy: 0.0
            }
        );
        let m = string_metrics("aaaa");
        assert_eq!((m.length, m.richness, m.entropy), (4, 1, 0.0));
    }

    #[test]
    fn counts_chars_not_bytes() {
        let m = string_metrics("héé");
        assert_eq!((m.length, m.richness), (3, 2));
    }

    #[test]
    fn numeric_event_feeds_value_channel() {
        let pairs = def(ValuePayload::Number(32.0)).channel_values();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].0.channel, Channel::Value);
        assert_eq!(pairs[0].1, 32.0);
    }

    #[test]
    fn string_event_feeds_three_channels() {
        let pairs = def(ValuePayload::Text("00101111".into())).channel_values();
        let channels: Vec<_> = pairs.iter().map(|(k, _)| k.channel).collect();
        assert_eq!(
            channels,
            [Channel::StrLen, Channel::StrRich, Channel::StrEnt]
        );
        assert_eq!(pairs[0].1, 8.0);
        assert_eq!(pairs[1].1, 2.0);
        assert_eq!(round3(pairs[2].1), 0.954);
    }

    #[test]
    fn carried_metrics_pass_through() {
        let m = StringMetrics::new(8, 2, 0.543).unwrap();
        let pairs = def(ValuePayload::Metrics(m)).channel_values();
        let values: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        assert_eq!(values, [8.0, 2.0, 0.543]);
    }

    #[test]
    fn metrics_validation() {
        assert!(StringMetrics::new(2, 3, 0.0).is_err());
        assert!(StringMetrics::new(2, 1, -0.1).is_err());
        assert!(StringMetrics::new(2, 1, f64::NAN).is_err());
    }

    #[test]
    fn channel_key_display() {
        let key = ChannelKey {
            point: CapturePoint::new("A.f()V", 4, 1).unwrap(),
            kind: CaptureKind::Ret,
            channel: Channel::StrEnt,
        };
        assert_eq!(key.to_string(), "A.f()V@4@1/ret/str_ent");
    }

    #[test]
    fn label_rules() {
        assert!(TestLabel::pass("t1").validate().is_ok());
        assert!(TestLabel::fail("t1", "d1").validate().is_ok());
        let bad = TestLabel {
            test_id: "t".into(),
            verdict: Verdict::Fail,
            defect: None,
        };
        assert!(bad.validate().is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn entropy_bounded_and_permutation_invariant(s in "[a-e]{0,40}", seed in any::<u64>()) {
                let m = string_metrics(&s);
                prop_assert!(m.richness <= m.length);
                prop_assert!(m.entropy >= 0.0);
                if m.richness >= 1 {
                    prop_assert!(m.entropy <= (m.richness as f64).log2() + 1e-12);
                }
                let mut chars: Vec<char> = s.chars().collect();
                // cheap deterministic shuffle
                let len = chars.len();
                if len > 1 {
                    let mut state = seed;
                    for i in (1..len).rev() {
                        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        chars.swap(i, (state >> 33) as usize % (i + 1));
                    }
                }
                let shuffled: String = chars.into_iter().collect();
                prop_assert!((string_metrics(&shuffled).entropy - m.entropy).abs() < 1e-12);
            }
        }
    }
}
