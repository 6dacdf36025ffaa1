//! Sweep configuration.
//!
//! Flat `key: value` lines; `#` starts a comment, blank lines are ignored.
//! Lists are comma separated.
//!
//! ```text
//! k_specs: 2, 0.5%, 1%
//! structural_inputs: BB=bb.csv, BBE=bbe.csv, DUP=dup.csv
//! include_all: true
//! combinations: BB+2, ALL+0.5%
//! replications: 100
//! rq2: true
//! seed: 0
//! ```
//!
//! Omitted keys keep their defaults. When `combinations` is omitted, every
//! available structural profile is paired with `2`, `0.5%`, `1%` and `2%`.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cluster::KPolicy;
use crate::error::{Error, Result};

/// Name of the concatenated structural profile.
pub const ALL_PROFILE: &str = "ALL";

pub const KEYS: [&str; 7] = [
    "k_specs",
    "structural_inputs",
    "include_all",
    "combinations",
    "replications",
    "rq2",
    "seed",
];

pub fn default_k_specs() -> Vec<KPolicy> {
    let mut ks = vec![KPolicy::Fixed(2)];
    ks.extend(
        [500, 1000, 1500, 2000, 3000, 4000, 5000, 6000, 7000, 8000, 9000, 10_000]
            .into_iter()
            .map(KPolicy::Percent),
    );
    ks
}

/// Default k values paired with structural profiles.
pub fn default_combination_ks() -> [KPolicy; 4] {
    [
        KPolicy::Fixed(2),
        KPolicy::Percent(500),
        KPolicy::Percent(1000),
        KPolicy::Percent(2000),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuralInput {
    pub name: String,
    pub path: PathBuf,
}

/// A structural profile paired with a Substate k.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Combination {
    pub structural: String,
    pub k: KPolicy,
}

impl fmt::Display for Combination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.structural, self.k)
    }
}

impl FromStr for Combination {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, k) = s
            .trim()
            .rsplit_once('+')
            .ok_or_else(|| Error::config("combinations", format!("`{s}` is not NAME+K")))?;
        if !valid_name(name) {
            return Err(Error::config("combinations", format!("bad profile name in `{s}`")));
        }
        let k = k.parse().map_err(|e| rekey(e, "combinations"))?;
        Ok(Combination {
            structural: name.to_string(),
            k,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepConfig {
    pub k_specs: Vec<KPolicy>,
    pub structural_inputs: Vec<StructuralInput>,
    pub include_all: bool,
    /// `None` means the default pairing over available structural profiles.
    pub combinations: Option<Vec<Combination>>,
    pub replications: usize,
    pub rq2: bool,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            k_specs: default_k_specs(),
            structural_inputs: Vec::new(),
            include_all: true,
            combinations: None,
            replications: 100,
            rq2: true,
            seed: 0,
        }
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
}

fn rekey(e: Error, key: &str) -> Error {
    match e {
        Error::Config { msg, .. } => Error::config(key, msg),
        other => Error::config(key, other.to_string()),
    }
}

fn list(value: &str) -> Vec<&str> {
    let v = value.trim();
    let v = v
        .strip_prefix('[')
        .and_then(|v| v.strip_suffix(']'))
        .unwrap_or(v);
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::config(key, format!("expected true or false, got `{other}`"))),
    }
}

impl SweepConfig {
    /// Set one field from its textual form. Used by the file loader and by
    /// command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k_specs" => {
                let ks = list(value)
                    .into_iter()
                    .map(|s| s.parse::<KPolicy>().map_err(|e| rekey(e, key)))
                    .collect::<Result<Vec<_>>>()?;
                if ks.is_empty() {
                    return Err(Error::config(key, "at least one k is required"));
                }
                self.k_specs = ks;
            }
            "structural_inputs" => {
                let mut inputs = Vec::new();
                for item in list(value) {
                    let (name, path) = item
                        .split_once('=')
                        .ok_or_else(|| Error::config(key, format!("`{item}` is not NAME=PATH")))?;
                    let name = name.trim();
                    if !valid_name(name) || name == ALL_PROFILE {
                        return Err(Error::config(key, format!("bad profile name `{name}`")));
                    }
                    if path.trim().is_empty() {
                        return Err(Error::config(key, format!("`{name}` has an empty path")));
                    }
                    inputs.push(StructuralInput {
                        name: name.to_string(),
                        path: PathBuf::from(path.trim()),
                    });
                }
                self.structural_inputs = inputs;
            }
            "include_all" => self.include_all = parse_bool(key, value)?,
            "combinations" => {
                self.combinations = Some(
                    list(value)
                        .into_iter()
                        .map(str::parse)
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            "replications" => {
                let n: usize = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(key, format!("expected a count, got `{}`", value.trim())))?;
                if n == 0 {
                    return Err(Error::config(key, "must be at least 1"));
                }
                self.replications = n;
            }
            "rq2" => self.rq2 = parse_bool(key, value)?,
            "seed" => {
                self.seed = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::config(key, format!("expected an unsigned integer, got `{}`", value.trim())))?;
            }
            other => return Err(Error::config(other, "unknown key")),
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for s in &self.structural_inputs {
            if !names.insert(s.name.as_str()) {
                return Err(Error::config(
                    "structural_inputs",
                    format!("duplicate profile name `{}`", s.name),
                ));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SweepConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once(':').ok_or_else(|| {
                Error::config("?", format!("line {}: expected `key: value`", i + 1))
            })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::config(key, format!("line {}: unknown key", i + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::config(key, format!("line {}: given twice", i + 1)));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form; `parse(to_text())` gives back the same config.
    pub fn to_text(&self) -> String {
        let join = |items: Vec<String>| items.join(", ");
        let mut out = String::new();
        out.push_str(&format!(
            "k_specs: {}\n",
            join(self.k_specs.iter().map(ToString::to_string).collect())
        ));
        if !self.structural_inputs.is_empty() {
            out.push_str(&format!(
                "structural_inputs: {}\n",
                join(
                    self.structural_inputs
                        .iter()
                        .map(|s| format!("{}={}", s.name, s.path.display()))
                        .collect()
                )
            ));
        }
        out.push_str(&format!("include_all: {}\n", self.include_all));
        if let Some(c) = &self.combinations {
            out.push_str(&format!(
                "combinations: {}\n",
                join(c.iter().map(ToString::to_string).collect())
            ));
        }
        out.push_str(&format!("replications: {}\n", self.replications));
        out.push_str(&format!("rq2: {}\n", self.rq2));
        out.push_str(&format!("seed: {}\n", self.seed));
        out
    }

    /// Structural profile names in report order, ALL last when built.
    pub fn structural_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.structural_inputs.iter().map(|s| s.name.clone()).collect();
        if self.include_all && self.structural_inputs.len() > 1 {
            names.push(ALL_PROFILE.to_string());
        }
        names
    }

    /// Combinations to run. Explicit pairings must name available profiles.
    pub fn resolved_combinations(&self) -> Result<Vec<Combination>> {
        let names = self.structural_names();
        match &self.combinations {
            None => Ok(names
                .iter()
                .flat_map(|n| {
                    default_combination_ks().into_iter().map(move |k| Combination {
                        structural: n.clone(),
                        k,
                    })
                })
                .collect()),
            Some(list) => {
                for c in list {
                    if !names.contains(&c.structural) {
                        return Err(Error::config(
                            "combinations",
                            format!("`{c}` names an unavailable structural profile"),
                        ));
                    }
                }
                Ok(list.clone())
            }
        }
    }
}
