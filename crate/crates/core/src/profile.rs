//! Binary profile matrices: tests × profile elements.
//!
//! Substate matrices are assembled from per-channel clusters; structural
//! matrices (basic blocks, branches, def-use pairs) are loaded from CSV. Both
//! go through the same normalization: elements covered by every test are
//! dropped. The number dropped is remembered so reduction can still account
//! for them (any single test covers them all).
//!
//! CSV layout, shared by input and output:
//!
//! ```text
//! test_id,<elem1>,<elem2>,...
//! t1,1,0,...
//! ```

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::cluster::ChannelClusters;
use crate::error::{Error, Result};
use crate::trace::{TestLabel, Verdict};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileElement {
    pub id: String,
    /// Sorted suite indices of the covering tests.
    pub members: Vec<usize>,
}

/// Column-major sparse binary matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProfileMatrix {
    test_ids: Vec<String>,
    elements: Vec<ProfileElement>,
    universal_dropped: usize,
}

impl ProfileMatrix {
    /// Build a matrix, dropping universal elements unless `keep_universal`.
    /// Elements with no members are rejected.
    pub fn new(test_ids: Vec<String>, elements: Vec<ProfileElement>, keep_universal: bool) -> Result<Self> {
        let n = test_ids.len();
        let mut seen = HashSet::new();
        for id in &test_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Input(format!("duplicate test id `{id}`")));
            }
        }
        let mut ids = HashSet::new();
        let mut kept = Vec::with_capacity(elements.len());
        let mut universal_dropped = 0;
        for mut e in elements {
            if !ids.insert(e.id.clone()) {
                return Err(Error::Input(format!("duplicate element id `{}`", e.id)));
            }
            e.members.sort_unstable();
            e.members.dedup();
            if e.members.last().is_some_and(|&m| m >= n) {
                return Err(Error::Input(format!("element `{}` names a test outside the suite", e.id)));
            }
            if e.members.is_empty() {
                return Err(Error::Input(format!("element `{}` is covered by no test", e.id)));
            }
            if e.members.len() == n && !keep_universal {
                universal_dropped += 1;
                continue;
            }
            kept.push(e);
        }
        Ok(Self {
            test_ids,
            elements: kept,
            universal_dropped,
        })
    }

    pub fn test_ids(&self) -> &[String] {
        &self.test_ids
    }
    pub fn elements(&self) -> &[ProfileElement] {
        &self.elements
    }
    pub fn n_tests(&self) -> usize {
        self.test_ids.len()
    }
    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }
    /// Elements dropped because every test covered them.
    pub fn universal_dropped(&self) -> usize {
        self.universal_dropped
    }

    pub fn get(&self, test: usize, element: usize) -> bool {
        self.elements[element].members.binary_search(&test).is_ok()
    }

    pub fn row(&self, test: usize) -> Vec<bool> {
        (0..self.n_elements()).map(|e| self.get(test, e)).collect()
    }

    /// Elements covered by each test.
    pub fn rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_tests()];
        for (e, el) in self.elements.iter().enumerate() {
            for &t in &el.members {
                rows[t].push(e);
            }
        }
        rows
    }

    pub fn test_index(&self, test_id: &str) -> Option<usize> {
        self.test_ids.iter().position(|t| t == test_id)
    }

    /// Keep only the listed tests (in the given order). Columns are kept even
    /// if they become empty or universal within the subset.
    pub fn restrict(&self, keep: &[usize]) -> ProfileMatrix {
        let mut new_index = vec![usize::MAX; self.n_tests()];
        for (i, &t) in keep.iter().enumerate() {
            new_index[t] = i;
        }
        let elements = self
            .elements
            .iter()
            .map(|e| {
                let mut members: Vec<usize> = e
                    .members
                    .iter()
                    .filter_map(|&t| (new_index[t] != usize::MAX).then_some(new_index[t]))
                    .collect();
                members.sort_unstable();
                ProfileElement {
                    id: e.id.clone(),
                    members,
                }
            })
            .collect();
        ProfileMatrix {
            test_ids: keep.iter().map(|&t| self.test_ids[t].clone()).collect(),
            elements,
            universal_dropped: self.universal_dropped,
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        let csv_err = |e: csv::Error| Error::Input(format!("writing matrix CSV: {e}"));
        let mut header = vec!["test_id"];
        header.extend(self.elements.iter().map(|e| e.id.as_str()));
        w.write_record(&header).map_err(csv_err)?;
        let rows = self.rows();
        for (t, id) in self.test_ids.iter().enumerate() {
            let mut cells = vec!["0"; self.n_elements()];
            for &e in &rows[t] {
                cells[e] = "1";
            }
            let mut record = vec![id.as_str()];
            record.extend(cells);
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Input(format!("writing matrix CSV: {e}")))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ids are UTF-8")
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parse a coverage matrix. Ragged rows, cells other than `0`/`1`,
    /// duplicate ids, and never-covered columns are errors.
    pub fn read_csv<R: Read>(input: R, keep_universal: bool) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(input);
        let mut records = r.records();
        let header = match records.next() {
            None => return Err(Error::Input("matrix file is empty".into())),
            Some(rec) => rec.map_err(|e| Error::Input(format!("matrix header: {e}")))?,
        };
        if header.get(0) != Some("test_id") {
            return Err(Error::Input("matrix header must start with `test_id`".into()));
        }
        let element_ids: Vec<String> = header.iter().skip(1).map(String::from).collect();
        let width = header.len();
        let mut test_ids = Vec::new();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); element_ids.len()];
        for (i, rec) in records.enumerate() {
            let row = i + 2;
            let rec = rec.map_err(|e| Error::Input(format!("matrix row {row}: {e}")))?;
            if rec.len() != width {
                return Err(Error::Input(format!(
                    "matrix row {row}: expected {width} cells, found {}",
                    rec.len()
                )));
            }
            let t = test_ids.len();
            test_ids.push(rec[0].to_string());
            for (c, cell) in rec.iter().skip(1).enumerate() {
                match cell {
                    "1" => members[c].push(t),
                    "0" => {}
                    other => {
                        return Err(Error::Input(format!(
                            "matrix row {row}, column {} (`{}`): cell `{other}` is not 0 or 1",
                            c + 2,
                            element_ids[c]
                        )))
                    }
                }
            }
        }
        if test_ids.is_empty() {
            return Err(Error::Input("matrix has no test rows".into()));
        }
        let elements = element_ids
            .into_iter()
            .zip(members)
            .map(|(id, members)| ProfileElement { id, members })
            .collect();
        ProfileMatrix::new(test_ids, elements, keep_universal)
    }

    pub fn read_csv_file(path: &Path, keep_universal: bool) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, keep_universal).map_err(|e| match e {
            Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

/// Element id for cluster `ordinal` (or a bucket) of a channel.
fn element_id(cc: &ChannelClusters, suffix: &str) -> String {
    format!("{}#{suffix}", cc.key)
}

/// Turn per-channel clusters into a Substate profile matrix. Columns follow
/// channel-key order, then cluster ordinal, then the NaN and Infinity
/// buckets. Universal elements are dropped.
pub fn generate_profiles(channels: &[ChannelClusters], test_ids: &[String]) -> Result<ProfileMatrix> {
    generate_profiles_with(channels, test_ids, false)
}

pub fn generate_profiles_with(
    channels: &[ChannelClusters],
    test_ids: &[String],
    keep_universal: bool,
) -> Result<ProfileMatrix> {
    let mut sorted: Vec<&ChannelClusters> = channels.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let mut elements = Vec::new();
    for cc in sorted {
        for (ordinal, members) in cc.clusters.iter().enumerate() {
            elements.push(ProfileElement {
                id: element_id(cc, &format!("c{ordinal}")),
                members: members.clone(),
            });
        }
        for (bucket, suffix) in [(&cc.nan_bucket, "nan"), (&cc.inf_bucket, "inf")] {
            if !bucket.is_empty() {
                elements.push(ProfileElement {
                    id: element_id(cc, suffix),
                    members: bucket.clone(),
                });
            }
        }
    }
    ProfileMatrix::new(test_ids.to_vec(), elements, keep_universal)
}

/// Concatenate columns of matrices over the same test set. Rows follow the
/// first matrix. With more than one input, element ids are prefixed with
/// `<tag>:`.
pub fn combine_matrices(parts: &[(&str, &ProfileMatrix)]) -> Result<ProfileMatrix> {
    let Some((_, first)) = parts.first() else {
        return Err(Error::Input("nothing to combine".into()));
    };
    if parts.len() == 1 {
        return Ok((*first).clone());
    }
    let base: BTreeSet<&str> = first.test_ids.iter().map(String::as_str).collect();
    let mut elements = Vec::new();
    let mut universal_dropped = 0;
    for (tag, m) in parts {
        let other: BTreeSet<&str> = m.test_ids.iter().map(String::as_str).collect();
        if other != base || m.n_tests() != first.n_tests() {
            let diff: Vec<&str> = base.symmetric_difference(&other).copied().collect();
            return Err(Error::Input(format!(
                "cannot combine `{tag}`: test sets differ by {diff:?}"
            )));
        }
        let to_first: Vec<usize> = m
            .test_ids
            .iter()
            .map(|id| first.test_index(id).expect("same test set"))
            .collect();
        for e in &m.elements {
            let mut members: Vec<usize> = e.members.iter().map(|&t| to_first[t]).collect();
            members.sort_unstable();
            elements.push(ProfileElement {
                id: format!("{tag}:{}", e.id),
                members,
            });
        }
        universal_dropped += m.universal_dropped;
    }
    let mut combined = ProfileMatrix::new(first.test_ids.clone(), elements, true)?;
    combined.universal_dropped = universal_dropped;
    Ok(combined)
}

/// Parse a labels CSV (`test_id,verdict,defect_id`).
pub fn read_labels<R: Read>(input: R) -> Result<Vec<TestLabel>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = r
        .headers()
        .map_err(|e| Error::Input(format!("labels header: {e}")))?
        .clone();
    let expected = ["test_id", "verdict", "defect_id"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Input(format!(
            "labels header must be `{}`",
            expected.join(",")
        )));
    }
    let mut seen = HashSet::new();
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::Input(format!("labels row {row}: {e}")))?;
        let verdict: Verdict = rec[1]
            .parse()
            .map_err(|e: Error| Error::Input(format!("labels row {row}: {e}")))?;
        let defect = (!rec[2].is_empty()).then(|| rec[2].to_string());
        let label = TestLabel {
            test_id: rec[0].to_string(),
            verdict,
            defect,
        };
        label
            .validate()
            .map_err(|e| Error::Input(format!("labels row {row}: {e}")))?;
        if !seen.insert(label.test_id.clone()) {
            return Err(Error::Input(format!(
                "labels row {row}: duplicate test id `{}`",
                label.test_id
            )));
        }
        labels.push(label);
    }
    Ok(labels)
}

pub fn read_labels_file(path: &Path) -> Result<Vec<TestLabel>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(file).map_err(|e| match e {
        Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Defect revealed by each matrix row (None for passing tests), plus the
/// defect names in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefectMap {
    pub defects: Vec<String>,
    pub defect_of: Vec<Option<usize>>,
}

impl DefectMap {
    /// Align labels with a matrix's rows. Every test in the matrix must be
    /// labeled; extra labels are ignored.
    pub fn new(test_ids: &[String], labels: &[TestLabel]) -> Result<Self> {
        let by_id: HashMap<&str, &TestLabel> =
            labels.iter().map(|l| (l.test_id.as_str(), l)).collect();
        let mut defects: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut defect_of = Vec::with_capacity(test_ids.len());
        for id in test_ids {
            let label = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Input(format!("test `{id}` has no label")))?;
            defect_of.push(match (&label.verdict, &label.defect) {
                (Verdict::Fail, Some(d)) => Some(*index.entry(d.clone()).or_insert_with(|| {
                    defects.push(d.clone());
                    defects.len() - 1
                })),
                _ => None,
            });
        }
        Ok(Self { defects, defect_of })
    }

    pub fn failing_tests(&self, defect: usize) -> Vec<usize> {
        self.defect_of
            .iter()
            .enumerate()
            .filter_map(|(t, d)| (*d == Some(defect)).then_some(t))
            .collect()
    }

    pub fn failure_count(&self) -> usize {
        self.defect_of.iter().filter(|d| d.is_some()).count()
    }

    pub fn restrict(&self, keep: &[usize]) -> DefectMap {
        DefectMap {
            defects: self.defects.clone(),
            defect_of: keep.iter().map(|&t| self.defect_of[t]).collect(),
        }
    }
}
