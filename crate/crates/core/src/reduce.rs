//! Greedy set-cover test suite reduction and the averaging protocols built
//! on it.

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::profile::{DefectMap, ProfileMatrix};
use crate::seed;

/// One greedy run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionRun {
    /// Suite indices in selection order.
    pub selected: Vec<usize>,
    /// Elements covered at termination.
    pub covered: usize,
    /// Elements no test covers (only possible with hand-made inputs).
    pub uncoverable: Vec<usize>,
    pub seed: u64,
}

/// Repeatedly pick the test covering the most still-uncovered elements,
/// breaking ties uniformly at random, until nothing coverable is left.
///
/// If the matrix lost universal elements during normalization and nothing
/// else needs covering, one test is drawn at random: that is what greedy
/// would have done on the unnormalized matrix.
pub fn greedy_reduce(m: &ProfileMatrix, seed: u64) -> ReductionRun {
    let mut rng = seed::rng(seed);
    let rows = m.rows();
    let mut gain: Vec<usize> = rows.iter().map(Vec::len).collect();
    let mut covered_flag = vec![false; m.n_elements()];
    let mut covered = 0;
    let mut selected = Vec::new();
    let mut ties = Vec::new();
    loop {
        let best = gain.iter().copied().max().unwrap_or(0);
        if best == 0 {
            break;
        }
        ties.clear();
        ties.extend(gain.iter().enumerate().filter(|(_, &g)| g == best).map(|(t, _)| t));
        let pick = ties[rng.random_range(0..ties.len())];
        selected.push(pick);
        for &e in &rows[pick] {
            if !covered_flag[e] {
                covered_flag[e] = true;
                covered += 1;
                for &t in &m.elements()[e].members {
                    gain[t] -= 1;
                }
            }
        }
    }
    if selected.is_empty() && m.universal_dropped() > 0 && m.n_tests() > 0 {
        selected.push(rng.random_range(0..m.n_tests()));
    }
    let uncoverable = m
        .elements()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.members.is_empty())
        .map(|(i, _)| i)
        .collect();
    ReductionRun {
        selected,
        covered,
        uncoverable,
        seed,
    }
}

/// Percentage reduction in suite size.
pub fn rd_pct(total: usize, selected: usize) -> f64 {
    debug_assert!(total >= 1 && selected <= total);
    (1.0 - selected as f64 / total as f64) * 100.0
}

/// Percentage of the suite's defects revealed by `selected`.
pub fn df_pct(selected: &[usize], defects: &DefectMap) -> Result<f64> {
    let revealed = revealed_defects(selected, defects);
    let basis = defect_basis(defects);
    if basis == 0 {
        return Err(Error::Domain("no failing test reveals any defect".into()));
    }
    Ok(100.0 * revealed.iter().filter(|&&r| r).count() as f64 / basis as f64)
}

fn revealed_defects(selected: &[usize], defects: &DefectMap) -> Vec<bool> {
    let mut revealed = vec![false; defects.defects.len()];
    for &t in selected {
        if let Some(d) = defects.defect_of[t] {
            revealed[d] = true;
        }
    }
    revealed
}

/// Defects with at least one failing test among the rows.
fn defect_basis(defects: &DefectMap) -> usize {
    let mut present = vec![false; defects.defects.len()];
    for d in defects.defect_of.iter().flatten() {
        present[*d] = true;
    }
    present.iter().filter(|&&p| p).count()
}

/// Averages over seeded replications.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub config_id: String,
    pub profile: String,
    pub k_spec: Option<String>,
    pub replications: usize,
    pub rd_pct: f64,
    pub df_pct: f64,
    /// Per defect: fraction of replications whose selection revealed it.
    pub reveal: Vec<(String, f64)>,
}

/// What a single replication contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub selected: Vec<String>,
    pub rd_pct: f64,
    pub df_pct: f64,
    revealed: Vec<bool>,
}

/// Replications plus their averaged report.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub replications: Vec<Replication>,
}

fn summarize(
    config_id: &str,
    profile: &str,
    k_spec: Option<&str>,
    defects: &DefectMap,
    reps: Vec<Replication>,
) -> ExperimentOutcome {
    // Sum in replication order so parallel and sequential runs agree bitwise.
    let n = reps.len() as f64;
    let rd = reps.iter().map(|r| r.rd_pct).sum::<f64>() / n;
    let df = reps.iter().map(|r| r.df_pct).sum::<f64>() / n;
    let reveal = defects
        .defects
        .iter()
        .enumerate()
        .map(|(d, name)| {
            let hits = reps.iter().filter(|r| r.revealed[d]).count();
            (name.clone(), hits as f64 / n)
        })
        .collect();
    ExperimentOutcome {
        report: ExperimentReport {
            config_id: config_id.to_string(),
            profile: profile.to_string(),
            k_spec: k_spec.map(String::from),
            replications: reps.len(),
            rd_pct: rd,
            df_pct: df,
            reveal,
        },
        replications: reps,
    }
}

/// Identifies an experiment configuration in reports.
#[derive(Debug, Clone, Copy)]
pub struct ExperimentId<'a> {
    pub config_id: &'a str,
    pub profile: &'a str,
    pub k_spec: Option<&'a str>,
}

/// Run greedy `replications` times with seeds derived from `seed` and
/// average rd%/df%. Replications run on the current rayon pool.
pub fn run_experiment(
    id: ExperimentId<'_>,
    m: &ProfileMatrix,
    defects: &DefectMap,
    replications: usize,
    seed: u64,
) -> Result<ExperimentOutcome> {
    if replications == 0 {
        return Err(Error::Domain("replications must be at least 1".into()));
    }
    if defect_basis(defects) == 0 {
        return Err(Error::Domain("no failing test reveals any defect".into()));
    }
    if defects.defect_of.len() != m.n_tests() {
        return Err(Error::Invariant("labels are not aligned with matrix rows".into()));
    }
    let reps: Vec<Replication> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let rep_seed = seed::derive_seed(seed, r as u64);
            let run = greedy_reduce(m, rep_seed);
            let revealed = revealed_defects(&run.selected, defects);
            let df = df_pct(&run.selected, defects).expect("basis checked above");
            Replication {
                index: r,
                seed: rep_seed,
                selected: run.selected.iter().map(|&t| m.test_ids()[t].clone()).collect(),
                rd_pct: rd_pct(m.n_tests(), run.selected.len()),
                df_pct: df,
                revealed,
            }
        })
        .collect();
    Ok(summarize(id.config_id, id.profile, id.k_spec, defects, reps))
}

/// Stream id separating failure sampling from the greedy tie-breaking
/// stream of the same replication.
const SAMPLING_STREAM: u64 = 0x5157_0002;

/// Single-failure-per-defect protocol. Each replication keeps one randomly
/// chosen failing test per defect and reduces the resulting suite; the run
/// count is ten times the number of failing tests.
///
/// With `keep_others` the unsampled failing tests stay in the suite as
/// ordinary (non-revealing) tests instead of being removed.
pub fn single_failure_experiment(
    id: ExperimentId<'_>,
    m: &ProfileMatrix,
    defects: &DefectMap,
    seed: u64,
    keep_others: bool,
) -> Result<ExperimentOutcome> {
    let n_defects = defect_basis(defects);
    if n_defects == 0 {
        return Err(Error::Domain("no failing test reveals any defect".into()));
    }
    let replications = single_failure_replications(defects);
    let failing: Vec<Vec<usize>> = (0..defects.defects.len())
        .map(|d| defects.failing_tests(d))
        .collect();

    let reps: Vec<Replication> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let rep_seed = seed::derive_seed(seed, r as u64);
            let mut sampler = seed::rng(seed::derive_seed(rep_seed, SAMPLING_STREAM));
            let mut chosen = vec![false; m.n_tests()];
            for tests in failing.iter().filter(|t| !t.is_empty()) {
                chosen[tests[sampler.random_range(0..tests.len())]] = true;
            }
            let (keep, sub_defects): (Vec<usize>, DefectMap) = if keep_others {
                let keep: Vec<usize> = (0..m.n_tests()).collect();
                let mut d = defects.clone();
                for (t, slot) in d.defect_of.iter_mut().enumerate() {
                    if !chosen[t] {
                        *slot = None;
                    }
                }
                (keep, d)
            } else {
                let keep: Vec<usize> = (0..m.n_tests())
                    .filter(|&t| defects.defect_of[t].is_none() || chosen[t])
                    .collect();
                let d = defects.restrict(&keep);
                (keep, d)
            };
            let sub = if keep.len() == m.n_tests() {
                m.clone()
            } else {
                m.restrict(&keep)
            };
            let run = greedy_reduce(&sub, rep_seed);
            let revealed = revealed_defects(&run.selected, &sub_defects);
            Replication {
                index: r,
                seed: rep_seed,
                selected: run.selected.iter().map(|&t| sub.test_ids()[t].clone()).collect(),
                rd_pct: rd_pct(sub.n_tests(), run.selected.len()),
                df_pct: df_pct(&run.selected, &sub_defects).expect("every defect keeps one failure"),
                revealed,
            }
        })
        .collect();
    Ok(summarize(id.config_id, id.profile, id.k_spec, defects, reps))
}

/// Ten times the number of failing tests.
pub fn single_failure_replications(defects: &DefectMap) -> usize {
    10 * defects.failure_count()
}

/// Comparison outcome between a Substate configuration and a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    SubstateBetter,
    BaselineBetter,
    Tie,
}

impl Comparison {
    pub fn as_str(self) -> &'static str {
        match self {
            Comparison::SubstateBetter => "substate_better",
            Comparison::BaselineBetter => "struct_better",
            Comparison::Tie => "tie",
        }
    }
}

/// Maximum rd% a configuration may give up (in percentage points) and still
/// win on df%.
pub const RD_SLACK: f64 = 20.0;

const EPS: f64 = 1e-9;

fn wins(a: &ExperimentReport, b: &ExperimentReport) -> bool {
    a.df_pct > b.df_pct + EPS && (b.rd_pct - a.rd_pct) < RD_SLACK
}

pub fn compare(baseline: &ExperimentReport, substate: &ExperimentReport) -> Comparison {
    if wins(substate, baseline) {
        Comparison::SubstateBetter
    } else if wins(baseline, substate) {
        Comparison::BaselineBetter
    } else {
        Comparison::Tie
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictSummary {
    pub per_k: Vec<(String, Comparison)>,
    pub overall: Comparison,
}

/// Compare each Substate report with the structural baseline. Overall, the
/// Substate side wins if any k wins; otherwise the baseline wins if it beats
/// any k; otherwise it is a tie.
pub fn verdict(baseline: &ExperimentReport, substate: &[ExperimentReport]) -> VerdictSummary {
    let per_k: Vec<(String, Comparison)> = substate
        .iter()
        .map(|r| {
            (
                r.k_spec.clone().unwrap_or_else(|| r.profile.clone()),
                compare(baseline, r),
            )
        })
        .collect();
    let overall = if per_k.iter().any(|(_, c)| *c == Comparison::SubstateBetter) {
        Comparison::SubstateBetter
    } else if per_k.iter().any(|(_, c)| *c == Comparison::BaselineBetter) {
        Comparison::BaselineBetter
    } else {
        Comparison::Tie
    };
    VerdictSummary { per_k, overall }
}

/// A combined profile is better than a component if it reveals more
/// defects, or the same with a higher rd%.
pub fn combined_beats(combined: &ExperimentReport, component: &ExperimentReport) -> bool {
    combined.df_pct > component.df_pct + EPS
        || ((combined.df_pct - component.df_pct).abs() <= EPS && combined.rd_pct > component.rd_pct + EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::ProfileElement;
    use crate::trace::TestLabel;

    fn matrix(csv: &str) -> ProfileMatrix {
        ProfileMatrix::read_csv(csv.as_bytes(), false).unwrap()
    }

    fn report(rd: f64, df: f64) -> ExperimentReport {
        ExperimentReport {
            config_id: "x".into(),
            profile: "p".into(),
            k_spec: Some("1%".into()),
            replications: 1,
            rd_pct: rd,
            df_pct: df,
            reveal: vec![],
        }
    }

    const ID: ExperimentId<'static> = ExperimentId {
        config_id: "test",
        profile: "p",
        k_spec: None,
    };

    #[test]
    fn identity_selects_everything() {
        let n = 5;
        let elements = (0..n)
            .map(|i| ProfileElement {
                id: format!("e{i}"),
                members: vec![i],
            })
            .collect();
        let ids = (0..n).map(|i| format!("t{i}")).collect();
        let m = ProfileMatrix::new(ids, elements, false).unwrap();
        let run = greedy_reduce(&m, 1);
        let mut sel = run.selected.clone();
        sel.sort_unstable();
        assert_eq!(sel, vec![0, 1, 2, 3, 4]);
        assert_eq!(run.covered, 5);
    }

    #[test]
    fn zero_column_matrix_selects_nothing() {
        let m = ProfileMatrix::new(vec!["a".into(), "b".into()], vec![], false).unwrap();
        assert!(greedy_reduce(&m, 0).selected.is_empty());
    }

    #[test]
    fn universal_only_matrix_selects_one() {
        let m = matrix("test_id,e1\na,1\nb,1\nc,1\n");
        assert_eq!(m.n_elements(), 0);
        assert_eq!(greedy_reduce(&m, 0).selected.len(), 1);
    }

    #[test]
    fn greedy_prefers_larger_gain() {
        let m = matrix("test_id,e1,e2,e3\na,1,1,0\nb,1,0,0\nc,0,0,1\n");
        for s in 0..20 {
            let run = greedy_reduce(&m, s);
            assert_eq!(run.selected, vec![0, 2]);
        }
    }

    #[test]
    fn rd_examples() {
        assert_eq!(rd_pct(1000, 100), 90.0);
        assert!((rd_pct(6, 2) - 66.6667).abs() < 1e-3);
        assert_eq!(rd_pct(7, 7), 0.0);
    }

    #[test]
    fn df_examples() {
        let ids: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        let labels: Vec<TestLabel> = (0..6)
            .map(|i| {
                if i == 0 {
                    TestLabel::pass("t0")
                } else {
                    TestLabel::fail(format!("t{i}"), format!("d{i}"))
                }
            })
            .collect();
        let d = DefectMap::new(&ids, &labels).unwrap();
        assert_eq!(df_pct(&[1, 2, 3, 4, 5], &d).unwrap(), 100.0);
        assert_eq!(df_pct(&[0, 1, 2, 3, 4], &d).unwrap(), 80.0);
        let none = DefectMap::new(&ids[..1], &labels).unwrap();
        assert!(matches!(df_pct(&[0], &none), Err(Error::Domain(_))));
    }

    #[test]
    fn no_tie_matrix_is_replication_invariant() {
        let m = matrix("test_id,e1,e2,e3\na,1,1,0\nb,1,0,0\nc,0,0,1\n");
        let labels = [TestLabel::pass("a"), TestLabel::fail("b", "d"), TestLabel::pass("c")];
        let d = DefectMap::new(m.test_ids(), &labels).unwrap();
        let one = run_experiment(ID, &m, &d, 1, 5).unwrap().report;
        let many = run_experiment(ID, &m, &d, 37, 5).unwrap().report;
        assert!((one.rd_pct - many.rd_pct).abs() < 1e-9);
        assert_eq!(one.df_pct, many.df_pct);
        assert_eq!(many.df_pct, 0.0);
    }

    #[test]
    fn replication_count_for_single_failure() {
        let ids: Vec<String> = (0..6).map(|i| format!("t{i}")).collect();
        let labels = vec![
            TestLabel::pass("t0"),
            TestLabel::fail("t1", "A"),
            TestLabel::fail("t2", "A"),
            TestLabel::fail("t3", "B"),
            TestLabel::fail("t4", "B"),
            TestLabel::fail("t5", "B"),
        ];
        let d = DefectMap::new(&ids, &labels).unwrap();
        assert_eq!(single_failure_replications(&d), 50);
    }

    #[test]
    fn single_failure_is_noop_with_one_failure_per_defect() {
        let m = matrix("test_id,e1,e2,e3\na,1,0,0\nb,1,1,0\nc,0,1,1\nd,0,0,1\n");
        let labels = [
            TestLabel::pass("a"),
            TestLabel::fail("b", "X"),
            TestLabel::pass("c"),
            TestLabel::fail("d", "Y"),
        ];
        let d = DefectMap::new(m.test_ids(), &labels).unwrap();
        let single = single_failure_experiment(ID, &m, &d, 11, false).unwrap();
        let plain = run_experiment(ID, &m, &d, single.report.replications, 11).unwrap();
        assert_eq!(single.report, plain.report);
    }

    #[test]
    fn verdict_examples() {
        let base = report(89.0, 66.0);
        assert_eq!(compare(&base, &report(80.0, 100.0)), Comparison::SubstateBetter);
        assert_eq!(compare(&base, &report(49.0, 100.0)), Comparison::Tie);
        assert_eq!(compare(&base, &report(89.0, 66.0)), Comparison::Tie);
        assert_eq!(compare(&report(80.0, 100.0), &report(89.0, 66.0)), Comparison::BaselineBetter);
        let v = verdict(&base, &[report(49.0, 100.0), report(80.0, 100.0)]);
        assert_eq!(v.per_k[0].1, Comparison::Tie);
        assert_eq!(v.overall, Comparison::SubstateBetter);
    }

    #[test]
    fn combined_rule() {
        assert!(combined_beats(&report(78.0, 92.0), &report(88.0, 58.0)));
        assert!(combined_beats(&report(78.0, 92.0), &report(84.0, 86.0)));
        assert!(!combined_beats(&report(82.0, 86.0), &report(84.0, 86.0)));
        assert!(combined_beats(&report(85.0, 86.0), &report(84.0, 86.0)));
    }
}
