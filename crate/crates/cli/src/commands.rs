use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde_json::json;
use substate_core::config::SweepConfig;
use substate_core::experiment::{
    observations, run_sweep, substate_matrix_with, write_combinations_csv, write_features_csv,
    write_report_csv, write_verdicts_csv, ObservationTable, SweepInputs,
};
use substate_core::ingest::{discover_tests, ingest_suite, ingest_trace_file, trace_path, IngestedTrace};
use substate_core::profile::{combine_matrices, read_labels_file};
use substate_core::reduce::{ExperimentId, ExperimentOutcome};
use substate_core::{
    run_experiment, single_failure_experiment, DefectMap, KMeansParams, KPolicy, ProfileMatrix, RetentionConfig,
};

use crate::output::{config_hash, timed, write_file, Layout};
use crate::{ExperimentArgs, ProfileArgs, ReduceArgs, RetentionArgs};

fn retention(args: &RetentionArgs) -> Result<RetentionConfig> {
    Ok(RetentionConfig::new(args.v_lead, args.v_trail)?)
}

fn retention_text(r: &RetentionConfig) -> String {
    format!("v_lead: {}\nv_trail: {}\n", r.lead, r.trail)
}

fn require_dir(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(substate_core::Error::Input(format!("{} is not a directory", dir.display())).into());
    }
    Ok(())
}

/// Ingest a trace directory; an empty suite is an error.
fn load_suite(dir: &Path, r: RetentionConfig) -> Result<(Vec<String>, ObservationTable)> {
    require_dir(dir)?;
    let suite = timed("ingest", || ingest_suite(dir, r))?;
    if suite.is_empty() {
        bail!(substate_core::Error::Input(format!("no traces in {}", dir.display())));
    }
    let ids: Vec<String> = suite.iter().map(|(id, _)| id.clone()).collect();
    let table = timed("features", || observations(&suite))?;
    Ok((ids, table))
}

pub fn validate(dir: &Path) -> Result<()> {
    require_dir(dir)?;
    let ids = discover_tests(dir)?;
    if ids.is_empty() {
        bail!(substate_core::Error::Input(format!("no traces in {}", dir.display())));
    }
    let r = RetentionConfig::default();
    let results: Vec<substate_core::Result<IngestedTrace>> = timed("ingest", || {
        ids.par_iter()
            .map(|id| ingest_trace_file(&trace_path(dir, id), r))
            .collect()
    });

    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<24} {:>8} {:>8} {:>6} {:>6}", "test_id", "events", "channels", "nan", "inf")?;
    let mut failures = Vec::new();
    let mut channels = std::collections::BTreeSet::new();
    for (id, res) in ids.iter().zip(results) {
        match res {
            Ok(trace) => {
                let nan = trace.channels.values().filter(|s| s.nan_seen()).count();
                let inf = trace.channels.values().filter(|s| s.inf_seen()).count();
                writeln!(
                    out,
                    "{:<24} {:>8} {:>8} {:>6} {:>6}",
                    id,
                    trace.events,
                    trace.channels.len(),
                    nan,
                    inf
                )?;
                channels.extend(trace.channels.into_keys());
            }
            Err(e) => {
                writeln!(out, "{id:<24} {:>8}", "ERROR")?;
                failures.push(e);
            }
        }
    }
    writeln!(out, "{} tests, {} distinct channels", ids.len(), channels.len())?;
    if failures.is_empty() {
        return Ok(());
    }
    for e in &failures[1..] {
        eprintln!("error: {e}");
    }
    let first = failures.into_iter().next().expect("non-empty");
    Err(anyhow::Error::new(first))
}

pub fn features(dir: &Path, out: &Path, args: &RetentionArgs) -> Result<()> {
    let r = retention(args)?;
    let (ids, table) = load_suite(dir, r)?;
    let layout = Layout::create(out)?;
    let hash = config_hash(&format!("features\n{}", retention_text(&r)));
    let path = layout.features(&format!("features-{hash}.csv"));
    write_file(&path, |w| Ok(write_features_csv(&table, &ids, w)?))?;
    println!("{}", path.display());
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<SweepConfig> {
    let Some(path) = path else {
        return Ok(SweepConfig::default());
    };
    let mut cfg = SweepConfig::load(path)?;
    // Structural paths in a config file are relative to the file.
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for s in &mut cfg.structural_inputs {
        if s.path.is_relative() {
            s.path = base.join(&s.path);
        }
    }
    Ok(cfg)
}

fn parse_ks(specs: &[String]) -> Result<Vec<KPolicy>> {
    specs
        .iter()
        .map(|s| s.parse::<KPolicy>().map_err(anyhow::Error::from))
        .collect()
}

pub fn profile(args: &ProfileArgs) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let ks = if args.k.is_empty() {
        cfg.k_specs.clone()
    } else {
        parse_ks(&args.k)?
    };
    let seed = args.seed.unwrap_or(cfg.seed);
    let r = retention(&args.retention)?;
    let (ids, table) = load_suite(&args.trace_dir, r)?;
    let layout = Layout::create(&args.out)?;
    let ks_text: Vec<String> = ks.iter().map(ToString::to_string).collect();
    let hash = config_hash(&format!(
        "profile\nk_specs: {}\nseed: {seed}\nkeep_universal: {}\n{}",
        ks_text.join(", "),
        args.keep_universal,
        retention_text(&r)
    ));
    let params = KMeansParams::default();
    for k in ks {
        let m = timed(&format!("cluster {k}"), || {
            substate_matrix_with(&table, &ids, k, seed, &params, args.keep_universal)
        })?;
        let path = layout.profiles(&format!("sstate_{}-{hash}.csv", k.file_tag()));
        write_file(&path, |w| Ok(m.write_csv(w)?))?;
        println!("{}\t{} elements\t{}", k, m.n_elements(), path.display());
    }
    Ok(())
}

fn selection_lines(section: &str, outcome: &ExperimentOutcome) -> Vec<String> {
    outcome
        .replications
        .iter()
        .map(|r| {
            json!({
                "section": section,
                "profile": outcome.report.profile,
                "k_spec": outcome.report.k_spec,
                "replication": r.index,
                "seed": r.seed,
                "selected": r.selected,
            })
            .to_string()
        })
        .collect()
}

fn write_selections(path: &Path, lines: &[String]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_file(path, |w| {
        for line in lines {
            writeln!(w, "{line}")?;
        }
        Ok(())
    })
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(config_hash(&String::from_utf8_lossy(&bytes)))
}

pub fn reduce(args: &ReduceArgs) -> Result<()> {
    if args.replications == 0 {
        bail!(substate_core::Error::Config {
            key: "replications".into(),
            msg: "must be at least 1".into()
        });
    }
    let m = ProfileMatrix::read_csv_file(&args.matrix, args.keep_universal)?;
    let labels = read_labels_file(&args.labels)?;
    let defects = DefectMap::new(m.test_ids(), &labels)?;
    let profile = args
        .matrix
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("matrix")
        .to_string();
    let hash = config_hash(&format!(
        "reduce\nmatrix: {}\nlabels: {}\nseed: {}\nreplications: {}\nsingle_failure: {}\nrq2_keep_others: {}\nkeep_universal: {}\n",
        file_digest(&args.matrix)?,
        file_digest(&args.labels)?,
        args.seed,
        args.replications,
        args.single_failure,
        args.rq2_keep_others,
        args.keep_universal
    ));
    let id = ExperimentId {
        config_id: &hash,
        profile: &profile,
        k_spec: None,
    };
    let rq1 = timed("reduce", || run_experiment(id, &m, &defects, args.replications, args.seed))?;
    let rq2 = if args.single_failure {
        Some(timed("reduce single-failure", || {
            single_failure_experiment(id, &m, &defects, args.seed, args.rq2_keep_others)
        })?)
    } else {
        None
    };

    let layout = Layout::create(&args.out)?;
    let path = layout.reports(&format!("reduce-{hash}.csv"));
    write_file(&path, |w| Ok(write_report_csv(&[&rq1.report], &defects.defects, w)?))?;
    println!("{}", path.display());
    println!(
        "{profile}: rd% {:.2} df% {:.2} over {} replications",
        rq1.report.rd_pct, rq1.report.df_pct, rq1.report.replications
    );
    let mut lines = selection_lines("rq1", &rq1);
    if let Some(rq2) = &rq2 {
        let path = layout.reports(&format!("reduce-rq2-{hash}.csv"));
        write_file(&path, |w| Ok(write_report_csv(&[&rq2.report], &defects.defects, w)?))?;
        println!("{}", path.display());
        println!(
            "{profile} (single failure): rd% {:.2} df% {:.2} over {} replications",
            rq2.report.rd_pct, rq2.report.df_pct, rq2.report.replications
        );
        lines.extend(selection_lines("rq2", rq2));
    }
    if let Some(log) = &args.log_selections {
        write_selections(log, &lines)?;
    }
    Ok(())
}

fn build_config(args: &ExperimentArgs) -> Result<SweepConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    let mut overrides: Vec<(&str, String)> = Vec::new();
    if !args.k.is_empty() {
        overrides.push(("k_specs", args.k.join(",")));
    }
    let fields = [
        ("k_specs", &args.k_specs),
        ("structural_inputs", &args.structural_inputs),
        ("include_all", &args.include_all),
        ("combinations", &args.combinations),
        ("replications", &args.replications),
        ("rq2", &args.rq2),
        ("seed", &args.seed),
    ];
    for (key, value) in fields {
        if let Some(v) = value {
            overrides.push((key, v.clone()));
        }
    }
    for (key, value) in overrides {
        cfg.set(key, &value)?;
    }
    Ok(cfg)
}

pub fn experiment(args: &ExperimentArgs) -> Result<()> {
    let cfg = build_config(args)?;
    let r = retention(&args.retention)?;
    let effective = format!(
        "{}{}keep_universal: {}\nrq2_keep_others: {}\n",
        cfg.to_text(),
        retention_text(&r),
        args.keep_universal,
        args.rq2_keep_others
    );
    let hash = config_hash(&effective);

    let labels = read_labels_file(&args.labels)?;
    let mut structural = Vec::new();
    for input in &cfg.structural_inputs {
        let m = ProfileMatrix::read_csv_file(&input.path, args.keep_universal)?;
        structural.push((input.name.clone(), m));
    }
    let (ids, table) = load_suite(&args.trace_dir, r)?;
    let inputs = SweepInputs {
        test_ids: &ids,
        table: &table,
        structural,
        labels: &labels,
        rq2_keep_others: args.rq2_keep_others,
        params: KMeansParams::default(),
        keep_universal: args.keep_universal,
        config_id: hash.clone(),
    };
    let result = timed("sweep", || run_sweep(&cfg, &inputs))?;

    let layout = Layout::create(&args.out)?;
    let mut written: Vec<PathBuf> = Vec::new();
    let cfg_path = layout.reports(&format!("config-{hash}.txt"));
    write_file(&cfg_path, |w| Ok(w.write_all(effective.as_bytes())?))?;
    written.push(cfg_path);
    for (k, m) in &result.substate {
        let path = layout.profiles(&format!("sstate_{}-{hash}.csv", k.file_tag()));
        write_file(&path, |w| Ok(m.write_csv(w)?))?;
        written.push(path);
    }
    let mut sections = vec![&result.rq1];
    sections.extend(result.rq2.as_ref());
    sections.push(&result.rq4);
    let mut lines = Vec::new();
    for section in &sections {
        let path = layout.reports(&format!("{}-{hash}.csv", section.name));
        write_file(&path, |w| Ok(write_report_csv(&section.reports(), &result.defects, w)?))?;
        written.push(path);
        for o in &section.outcomes {
            lines.extend(selection_lines(section.name, o));
        }
    }
    let path = layout.reports(&format!("combinations-{hash}.csv"));
    write_file(&path, |w| Ok(write_combinations_csv(&result.combination_rows, w)?))?;
    written.push(path);
    let path = layout.reports(&format!("verdicts-{hash}.csv"));
    write_file(&path, |w| Ok(write_verdicts_csv(&result.verdicts, w)?))?;
    written.push(path);
    if let Some(log) = &args.log_selections {
        write_selections(log, &lines)?;
    }

    let mut out = std::io::stdout().lock();
    for section in &sections {
        for rep in section.reports() {
            writeln!(
                out,
                "{:<4} {:<24} rd% {:>7.2} df% {:>7.2}",
                section.name, rep.profile, rep.rd_pct, rep.df_pct
            )?;
        }
    }
    for v in result.verdicts.iter().filter(|v| v.k == "overall") {
        writeln!(out, "{} vs {}: {}", v.section, v.baseline, v.comparison.as_str())?;
    }
    for path in written {
        writeln!(out, "{}", path.display())?;
    }
    Ok(())
}

pub fn combine(inputs: &[String], out: &Path, keep_universal: bool) -> Result<()> {
    let mut loaded = Vec::new();
    for item in inputs {
        let (name, path) = item
            .split_once('=')
            .ok_or_else(|| anyhow!(substate_core::Error::Input(format!("`{item}` is not NAME=PATH"))))?;
        let m = ProfileMatrix::read_csv_file(Path::new(path), keep_universal)?;
        loaded.push((name.to_string(), m));
    }
    let parts: Vec<(&str, &ProfileMatrix)> = loaded.iter().map(|(n, m)| (n.as_str(), m)).collect();
    let combined = combine_matrices(&parts)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_file(out, |w| Ok(combined.write_csv(w)?))?;
    println!(
        "{} tests, {} elements, {} universal dropped\t{}",
        combined.n_tests(),
        combined.n_elements(),
        combined.universal_dropped(),
        out.display()
    );
    Ok(())
}
