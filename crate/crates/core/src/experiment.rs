//! End-to-end pipeline: traces to observation tables to Substate matrices,
//! and the experiment sweep comparing them with structural profiles.

use std::collections::BTreeMap;
use std::io::Write;

use crate::cluster::{cluster_channels, KMeansParams, KPolicy, Observation};
use crate::config::{SweepConfig, ALL_PROFILE};
use crate::error::{Error, Result};
use crate::features::FEATURE_NAMES;
use crate::ingest::IngestedTrace;
use crate::profile::{combine_matrices, generate_profiles_with, DefectMap, ProfileMatrix};
use crate::reduce::{
    combined_beats, run_experiment, single_failure_experiment, verdict, Comparison, ExperimentId,
    ExperimentOutcome, ExperimentReport,
};
use crate::trace::{ChannelKey, TestLabel};

/// Per channel: the tests that reached it (suite indices, ascending) and
/// what each contributed.
pub type ObservationTable = BTreeMap<ChannelKey, Vec<(usize, Observation)>>;

/// Turn ingested traces (in suite order) into an observation table.
pub fn observations(traces: &[(String, IngestedTrace)]) -> Result<ObservationTable> {
    let mut table = ObservationTable::new();
    for (t, (id, trace)) in traces.iter().enumerate() {
        for (key, summary) in &trace.channels {
            let obs = Observation::from_summary(summary)
                .map_err(|e| Error::Invariant(format!("test `{id}`, channel {key}: {e}")))?;
            table.entry(key.clone()).or_default().push((t, obs));
        }
    }
    Ok(table)
}

/// Cluster every channel with `policy` and assemble the profile matrix.
pub fn substate_matrix(
    table: &ObservationTable,
    test_ids: &[String],
    policy: KPolicy,
    seed: u64,
    params: &KMeansParams,
) -> Result<ProfileMatrix> {
    substate_matrix_with(table, test_ids, policy, seed, params, false)
}

pub fn substate_matrix_with(
    table: &ObservationTable,
    test_ids: &[String],
    policy: KPolicy,
    seed: u64,
    params: &KMeansParams,
    keep_universal: bool,
) -> Result<ProfileMatrix> {
    let clusters = cluster_channels(table.iter(), policy, seed, params);
    for cc in &clusters {
        let executed: Vec<usize> = table[&cc.key].iter().map(|(t, _)| *t).collect();
        cc.check_partition(&executed)?;
    }
    generate_profiles_with(&clusters, test_ids, keep_universal)
}

/// Reorder a matrix's rows to follow `test_ids`. The test sets must match.
pub fn align_rows(m: &ProfileMatrix, test_ids: &[String], name: &str) -> Result<ProfileMatrix> {
    if m.n_tests() != test_ids.len() {
        return Err(Error::Input(format!(
            "`{name}` has {} tests, the suite has {}",
            m.n_tests(),
            test_ids.len()
        )));
    }
    let keep = test_ids
        .iter()
        .map(|id| {
            m.test_index(id)
                .ok_or_else(|| Error::Input(format!("`{name}` has no row for test `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(m.restrict(&keep))
}

/// Rows of the features CSV: one per (channel, test).
pub fn write_features_csv<W: Write>(table: &ObservationTable, test_ids: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Input(format!("writing features CSV: {e}"));
    let mut header = vec!["channel", "test_id", "status"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header).map_err(err)?;
    for (key, rows) in table {
        for (t, obs) in rows {
            let mut record = vec![key.to_string(), test_ids[*t].clone()];
            match obs {
                Observation::Features(fv) => {
                    record.push("ok".into());
                    record.extend(fv.to_array().iter().map(|x| format_value(*x)));
                }
                Observation::Nan => {
                    record.push("nan".into());
                    record.extend(std::iter::repeat_n(String::new(), FEATURE_NAMES.len()));
                }
                Observation::Inf => {
                    record.push("inf".into());
                    record.extend(std::iter::repeat_n(String::new(), FEATURE_NAMES.len()));
                }
            }
            w.write_record(&record).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::Input(format!("writing features CSV: {e}")))
}

/// Shortest round-trip rendering.
fn format_value(x: f64) -> String {
    format!("{x}")
}

/// Everything the sweep needs besides the config.
pub struct SweepInputs<'a> {
    pub test_ids: &'a [String],
    pub table: &'a ObservationTable,
    /// Structural matrices by name, rows in any order.
    pub structural: Vec<(String, ProfileMatrix)>,
    pub labels: &'a [TestLabel],
    pub rq2_keep_others: bool,
    pub params: KMeansParams,
    pub keep_universal: bool,
    /// Written into every report row.
    pub config_id: String,
}

#[derive(Debug, Clone)]
pub struct VerdictRow {
    pub section: &'static str,
    pub baseline: String,
    /// A k spec, or `overall`.
    pub k: String,
    pub comparison: Comparison,
}

#[derive(Debug, Clone)]
pub struct CombinationRow {
    pub combination: String,
    pub beats_structural: bool,
    pub beats_substate: bool,
}

impl CombinationRow {
    pub fn better(&self) -> bool {
        self.beats_structural && self.beats_substate
    }
}

#[derive(Debug, Clone)]
pub struct Section {
    pub name: &'static str,
    pub outcomes: Vec<ExperimentOutcome>,
}

impl Section {
    pub fn reports(&self) -> Vec<&ExperimentReport> {
        self.outcomes.iter().map(|o| &o.report).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub defects: Vec<String>,
    pub rq1: Section,
    pub rq2: Option<Section>,
    pub rq4: Section,
    pub combination_rows: Vec<CombinationRow>,
    pub verdicts: Vec<VerdictRow>,
    /// Substate matrices built during the sweep, in first-use order.
    pub substate: Vec<(KPolicy, ProfileMatrix)>,
}

struct MatrixCache<'a> {
    inputs: &'a SweepInputs<'a>,
    seed: u64,
    built: Vec<(KPolicy, ProfileMatrix)>,
}

impl MatrixCache<'_> {
    fn get(&mut self, k: KPolicy) -> Result<&ProfileMatrix> {
        if let Some(i) = self.built.iter().position(|(p, _)| *p == k) {
            return Ok(&self.built[i].1);
        }
        let m = substate_matrix_with(
            self.inputs.table,
            self.inputs.test_ids,
            k,
            self.seed,
            &self.inputs.params,
            self.inputs.keep_universal,
        )?;
        self.built.push((k, m));
        Ok(&self.built.last().expect("just pushed").1)
    }
}

/// Run the configured sweep: reduction with every profile (plain and single
/// failure per defect), combined profiles, and verdicts against each
/// structural baseline.
pub fn run_sweep(cfg: &SweepConfig, inputs: &SweepInputs<'_>) -> Result<SweepResult> {
    cfg.validate()?;
    let test_ids = inputs.test_ids;
    if test_ids.is_empty() {
        return Err(Error::Input("the suite has no tests".into()));
    }
    let defects = DefectMap::new(test_ids, inputs.labels)?;

    let mut structural: Vec<(String, ProfileMatrix)> = Vec::new();
    for input in &cfg.structural_inputs {
        let (_, m) = inputs
            .structural
            .iter()
            .find(|(n, _)| *n == input.name)
            .ok_or_else(|| Error::Input(format!("structural profile `{}` was not loaded", input.name)))?;
        structural.push((input.name.clone(), align_rows(m, test_ids, &input.name)?));
    }
    if cfg.include_all && structural.len() > 1 {
        let parts: Vec<(&str, &ProfileMatrix)> = structural.iter().map(|(n, m)| (n.as_str(), m)).collect();
        let all = combine_matrices(&parts)?;
        structural.push((ALL_PROFILE.to_string(), all));
    }
    let combinations = cfg.resolved_combinations()?;

    let mut cache = MatrixCache {
        inputs,
        seed: cfg.seed,
        built: Vec::new(),
    };
    type Runner<'r> = dyn Fn(ExperimentId<'_>, &ProfileMatrix) -> Result<ExperimentOutcome> + 'r;
    let plain: Box<Runner<'_>> =
        Box::new(|eid, m| run_experiment(eid, m, &defects, cfg.replications, cfg.seed));
    let single: Box<Runner<'_>> =
        Box::new(|eid, m| single_failure_experiment(eid, m, &defects, cfg.seed, inputs.rq2_keep_others));

    let run_section = |name: &'static str, runner: &Runner<'_>, cache: &mut MatrixCache<'_>| -> Result<Section> {
        let mut outcomes = Vec::new();
        for (sname, m) in &structural {
            outcomes.push(runner(
                ExperimentId {
                    config_id: &inputs.config_id,
                    profile: sname,
                    k_spec: None,
                },
                m,
            )?);
        }
        for &k in &cfg.k_specs {
            let m = cache.get(k)?;
            let ks = k.to_string();
            outcomes.push(runner(
                ExperimentId {
                    config_id: &inputs.config_id,
                    profile: &k.profile_name(),
                    k_spec: Some(&ks),
                },
                m,
            )?);
        }
        Ok(Section { name, outcomes })
    };

    let rq1 = run_section("rq1", plain.as_ref(), &mut cache)?;
    let rq2 = if cfg.rq2 {
        Some(run_section("rq2", single.as_ref(), &mut cache)?)
    } else {
        None
    };

    let mut verdicts = Vec::new();
    for section in std::iter::once(&rq1).chain(rq2.as_ref()) {
        let reports = section.reports();
        let substate: Vec<ExperimentReport> = reports
            .iter()
            .filter(|r| r.k_spec.is_some())
            .map(|r| (*r).clone())
            .collect();
        for base in reports.iter().filter(|r| r.k_spec.is_none()) {
            let v = verdict(base, &substate);
            for (k, c) in v.per_k {
                verdicts.push(VerdictRow {
                    section: section.name,
                    baseline: base.profile.clone(),
                    k,
                    comparison: c,
                });
            }
            verdicts.push(VerdictRow {
                section: section.name,
                baseline: base.profile.clone(),
                k: "overall".into(),
                comparison: v.overall,
            });
        }
    }

    let mut rq4 = Vec::new();
    let mut combination_rows = Vec::new();
    for combo in &combinations {
        let (_, smat) = structural
            .iter()
            .find(|(n, _)| *n == combo.structural)
            .expect("resolved combinations name loaded profiles");
        let kname = combo.k.profile_name();
        let ks = combo.k.to_string();
        let kmat = cache.get(combo.k)?.clone();
        let combined = combine_matrices(&[(combo.structural.as_str(), smat), (kname.as_str(), &kmat)])?;
        let label = combo.to_string();
        let outcome = plain(
            ExperimentId {
                config_id: &inputs.config_id,
                profile: &label,
                k_spec: Some(&ks),
            },
            &combined,
        )?;
        let struct_report = rq1
            .outcomes
            .iter()
            .find(|o| o.report.profile == combo.structural)
            .map(|o| o.report.clone())
            .expect("structural reports are in rq1");
        let sub_report = match rq1.outcomes.iter().find(|o| o.report.profile == kname) {
            Some(o) => o.report.clone(),
            None => {
                plain(
                    ExperimentId {
                        config_id: &inputs.config_id,
                        profile: &kname,
                        k_spec: Some(&ks),
                    },
                    &kmat,
                )?
                .report
            }
        };
        combination_rows.push(CombinationRow {
            combination: label,
            beats_structural: combined_beats(&outcome.report, &struct_report),
            beats_substate: combined_beats(&outcome.report, &sub_report),
        });
        rq4.push(outcome);
    }

    Ok(SweepResult {
        defects: defects.defects.clone(),
        rq1,
        rq2,
        rq4: Section {
            name: "rq4",
            outcomes: rq4,
        },
        combination_rows,
        verdicts,
        substate: cache.built,
    })
}

/// Percentages are written with six decimals.
fn pct(x: f64) -> String {
    format!("{x:.6}")
}

/// Report CSV: one row per configuration, one reveal-frequency column per
/// defect.
pub fn write_report_csv<W: Write>(reports: &[&ExperimentReport], defects: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Input(format!("writing report CSV: {e}"));
    let mut header: Vec<String> = ["config_id", "profile", "k_spec", "replications", "rd_pct", "df_pct"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(defects.iter().map(|d| format!("reveal:{d}")));
    w.write_record(&header).map_err(err)?;
    for r in reports {
        let mut rec = vec![
            r.config_id.clone(),
            r.profile.clone(),
            r.k_spec.clone().unwrap_or_default(),
            r.replications.to_string(),
            pct(r.rd_pct),
            pct(r.df_pct),
        ];
        for d in defects {
            let f = r
                .reveal
                .iter()
                .find(|(name, _)| name == d)
                .map_or(0.0, |(_, f)| *f);
            rec.push(pct(f));
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| Error::Input(format!("writing report CSV: {e}")))
}

pub fn write_verdicts_csv<W: Write>(rows: &[VerdictRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Input(format!("writing verdict CSV: {e}"));
    w.write_record(["section", "baseline", "k_spec", "verdict"]).map_err(err)?;
    for r in rows {
        w.write_record([r.section, &r.baseline, &r.k, r.comparison.as_str()])
            .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Input(format!("writing verdict CSV: {e}")))
}

pub fn write_combinations_csv<W: Write>(rows: &[CombinationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| Error::Input(format!("writing combination CSV: {e}"));
    w.write_record(["combination", "beats_structural", "beats_substate", "better"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.combination.as_str(),
            &r.beats_structural.to_string(),
            &r.beats_substate.to_string(),
            &r.better().to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Input(format!("writing combination CSV: {e}")))
}
