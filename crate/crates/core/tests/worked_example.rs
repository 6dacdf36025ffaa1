//! The binary-to-decimal example: six tests, two failing with the same
//! overflow defect. Trace fixture in `fixtures/binary_to_decimal`.

use std::path::PathBuf;

use substate_core::experiment::{observations, substate_matrix, ObservationTable};
use substate_core::ingest::ingest_suite;
use substate_core::profile::{combine_matrices, read_labels_file};
use substate_core::{
    greedy_reduce, run_experiment, CaptureKind, Channel, DefectMap, KMeansParams, KPolicy, Observation,
    ProfileMatrix, RetentionConfig,
};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/binary_to_decimal")
}

fn load() -> (Vec<String>, ObservationTable) {
    let suite = ingest_suite(&fixture(), RetentionConfig::default()).unwrap();
    let ids = suite.iter().map(|(id, _)| id.clone()).collect();
    (ids, observations(&suite).unwrap())
}

fn channel<'a>(table: &'a ObservationTable, offset: u32, kind: CaptureKind, ch: Channel) -> &'a [(usize, Observation)] {
    table
        .iter()
        .find(|(k, _)| {
            k.point.method.contains("decimal(") && k.point.offset == offset && k.kind == kind && k.channel == ch
        })
        .map(|(_, v)| v.as_slice())
        .expect("channel present")
}

// Independent oracle (straightforward two-pass formulas in double precision).
const CP7: [(&str, [f64; 14]); 6] = [
    ("t1", [5.0, 1.0, 32.0, 9.4, 4.0, 12.915107432770352, 18.5, 0.9641488772551557, -1.061210772389282, 0.5787234042553191, 1.0, 0.0, 0.0, 1.0]),
    ("t2", [5.0, 1.0, 64.0, 18.6, 8.0, 25.996153561632923, 37.5, 0.9540437523231177, -1.0720888596865152, 0.5935483870967742, 1.0, 0.0, 0.0, 1.0]),
    ("t3", [5.0, 4.0, 64.0, 24.8, 16.0, 24.39672109116305, 42.0, 0.6361510607104346, -1.5113978494623657, 0.46451612903225814, 4.0, 0.0, 0.0, 1.0]),
    ("t4", [6.0, 1.0, 64.0, 20.833333333333332, 12.0, 23.886537351961813, 28.0, 0.8196996989239537, -1.0799661081285261, 0.5426666666666666, 1.0, 0.0, 0.0, 1.0]),
    ("t5", [7.0, -128.0, 64.0, -2.4285714285714284, 4.0, 59.92733695306103, 31.0, -1.0916360440140649, -0.014586774246792444, -10.823529411764705, -128.0, 0.0, 0.0, 0.0]),
    ("t6", [5.0, -128.0, 32.0, -15.0, 4.0, 64.33506042586733, 87.5, -0.9751496727262944, -1.0264636918542358, -1.7866666666666666, -128.0, 0.0, 0.0, 0.0]),
];

#[test]
fn suite_shape() {
    let (ids, table) = load();
    assert_eq!(ids, ["t1", "t2", "t3", "t4", "t5", "t6"]);
    // two string entries (three channels each) and seven numeric points
    assert_eq!(table.len(), 13);
    assert!(table.values().all(|rows| rows.len() == 6));
}

#[test]
fn increment_features_match_oracle() {
    let (_, table) = load();
    let rows = channel(&table, 24, CaptureKind::Def, Channel::Value);
    for ((t, obs), (name, expected)) in rows.iter().zip(CP7) {
        let Observation::Features(fv) = obs else {
            panic!("{name}: no features")
        };
        assert_eq!(*t, name[1..].parse::<usize>().unwrap() - 1);
        for (j, (got, want)) in fv.to_array().iter().zip(expected).enumerate() {
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{name} feature {j}: {got} vs {want}");
        }
    }
}

/// Exhaustive best 2-partition (standardized squared error) of scalar
/// observations; ties cannot occur for the values used here.
fn best_bipartition_1d(xs: &[f64]) -> Vec<usize> {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let z: Vec<f64> = xs.iter().map(|x| (x - mean) / sd).collect();
    let sse = |idx: &[usize]| {
        let m = idx.iter().map(|&i| z[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (z[i] - m).powi(2)).sum::<f64>()
    };
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 1..(1u32 << n) - 1 {
        let a: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let b: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 0).collect();
        let cost = sse(&a) + sse(&b);
        if cost < best.0 {
            let side = if a.contains(&0) { b } else { a };
            best = (cost, side);
        }
    }
    best.1
}

fn members_of(m: &ProfileMatrix, needle: &str) -> Vec<Vec<usize>> {
    m.elements()
        .iter()
        .filter(|e| e.id.contains(needle))
        .map(|e| e.members.clone())
        .collect()
}

#[test]
fn k2_profile_elements() {
    let (ids, table) = load();
    let m = substate_matrix(&table, &ids, KPolicy::Fixed(2), 0, &KMeansParams::default()).unwrap();
    assert_eq!(m.n_elements(), 10);
    let t5 = vec![4];
    let rest_of_t5 = vec![0, 1, 2, 3, 5];
    let failing = vec![4, 5];
    let passing = vec![0, 1, 2, 3];
    let main = "main([Ljava/lang/String;)V@0@0/entry/str_ent";
    let dec = "decimal(Ljava/lang/String;)I@0@0/entry/str_ent";
    assert_eq!(members_of(&m, main), [rest_of_t5.clone(), t5.clone()]);
    assert_eq!(members_of(&m, dec), [rest_of_t5, t5]);
    assert_eq!(members_of(&m, "I@24@0/def/value"), [passing.clone(), failing.clone()]);
    assert_eq!(members_of(&m, "I@29@0/def/value"), [passing, failing]);

    // The return channel follows the exact minimum-error split of its
    // scalar values.
    let returns = [47.0, 93.0, 124.0, 125.0, -17.0, -75.0];
    let minority = best_bipartition_1d(&returns);
    let ret = members_of(&m, "I@44@0/ret/value");
    assert_eq!(ret.len(), 2);
    assert!(ret.contains(&minority), "{ret:?} vs {minority:?}");
    // lengths and richness at both entries, plus the four constant points
    assert_eq!(m.universal_dropped(), 8);
}

#[test]
fn percent_policy_floors_to_two() {
    let (ids, table) = load();
    let params = KMeansParams::default();
    let k2 = substate_matrix(&table, &ids, KPolicy::Fixed(2), 3, &params).unwrap();
    let p10 = substate_matrix(&table, &ids, KPolicy::Percent(10_000), 3, &params).unwrap();
    assert_eq!(k2, p10);
}

#[test]
fn greedy_always_keeps_the_unique_failure() {
    let (ids, table) = load();
    let m = substate_matrix(&table, &ids, KPolicy::Fixed(2), 0, &KMeansParams::default()).unwrap();
    let labels = read_labels_file(&fixture().join("labels.csv")).unwrap();
    let defects = DefectMap::new(&ids, &labels).unwrap();
    for seed in 0..200 {
        assert!(greedy_reduce(&m, seed).selected.contains(&4));
    }
    let id = substate_core::reduce::ExperimentId {
        config_id: "x",
        profile: "sstate_k@2",
        k_spec: Some("2"),
    };
    let out = run_experiment(id, &m, &defects, 100, 0).unwrap();
    assert_eq!(out.report.df_pct, 100.0);
    assert!(out.replications.iter().all(|r| r.selected.iter().any(|t| t == "t5")));
}

#[test]
fn structural_profiles_are_all_universal() {
    let dir = fixture();
    let bb = ProfileMatrix::read_csv_file(&dir.join("bb.csv"), false).unwrap();
    let bbe = ProfileMatrix::read_csv_file(&dir.join("bbe.csv"), false).unwrap();
    let dup = ProfileMatrix::read_csv_file(&dir.join("dup.csv"), false).unwrap();
    assert_eq!((bb.n_elements(), bbe.n_elements(), dup.n_elements()), (0, 0, 0));
    assert_eq!((bb.universal_dropped(), bbe.universal_dropped(), dup.universal_dropped()), (8, 4, 7));
    let all = combine_matrices(&[("BB", &bb), ("BBE", &bbe), ("DUP", &dup)]).unwrap();
    assert_eq!(all.n_elements(), 0);
    for seed in 0..50 {
        assert_eq!(greedy_reduce(&all, seed).selected.len(), 1);
    }
}
