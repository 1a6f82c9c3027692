//! Feature catalogs, binary datasets and the procedures that move rows
//! between feature spaces: CSV ingestion, catalog alignment, stratified
//! splitting and the common-feature merge used for hybrid training.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const BENIGN: u8 = 0;
pub const MALWARE: u8 = 1;

/// Ordered, duplicate-free list of feature names defining an input space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureCatalog {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl FeatureCatalog {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::EmptyCatalog);
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.contains([',', '\n', '\r']) {
                return Err(Error::InvalidFeatureName(name.clone()));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::DuplicateFeatureName(name.clone()));
            }
        }
        Ok(FeatureCatalog { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Newline-delimited name list.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for n in &self.names {
            out.push_str(n);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        FeatureCatalog::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned),
        )
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

impl TryFrom<Vec<String>> for FeatureCatalog {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        FeatureCatalog::new(names)
    }
}

impl From<FeatureCatalog> for Vec<String> {
    fn from(c: FeatureCatalog) -> Self {
        c.names
    }
}

/// Rows of 0/1 features with benign(0)/malware(1) labels, bound to a catalog.
///
/// Cells are stored row-major. Each row also carries the index it had in its
/// source file (`row_ids`) and, optionally, a source-domain tag; both survive
/// subsetting, alignment and merging so that reports can audit which rows
/// were used where.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    catalog: Arc<FeatureCatalog>,
    cells: Vec<u8>,
    labels: Vec<u8>,
    tags: Option<Vec<Arc<str>>>,
    row_ids: Vec<u64>,
}

impl BinaryDataset {
    pub fn new(catalog: FeatureCatalog, rows: Vec<Vec<u8>>, labels: Vec<u8>) -> Result<Self> {
        let width = catalog.len();
        let mut cells = Vec::with_capacity(rows.len() * width);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(Error::MalformedDataset(format!(
                    "row {i} has width {}, catalog has {width}",
                    row.len()
                )));
            }
            cells.extend_from_slice(row);
        }
        Self::from_flat(Arc::new(catalog), cells, labels)
    }

    pub fn from_flat(catalog: Arc<FeatureCatalog>, cells: Vec<u8>, labels: Vec<u8>) -> Result<Self> {
        let n = labels.len();
        let row_ids = (0..n as u64).collect();
        Self::from_parts(catalog, cells, labels, None, row_ids)
    }

    fn from_parts(
        catalog: Arc<FeatureCatalog>,
        cells: Vec<u8>,
        labels: Vec<u8>,
        tags: Option<Vec<Arc<str>>>,
        row_ids: Vec<u64>,
    ) -> Result<Self> {
        if cells.len() != labels.len() * catalog.len() {
            return Err(Error::MalformedDataset(format!(
                "{} cells for {} rows of width {}",
                cells.len(),
                labels.len(),
                catalog.len()
            )));
        }
        if let Some(i) = cells.iter().position(|&c| c > 1) {
            return Err(Error::NonBinaryValue {
                row: i / catalog.len() + 1,
                column: catalog.name(i % catalog.len()).to_owned(),
                value: cells[i].to_string(),
            });
        }
        if let Some(i) = labels.iter().position(|&c| c > 1) {
            return Err(Error::NonBinaryValue {
                row: i + 1,
                column: "<label>".into(),
                value: labels[i].to_string(),
            });
        }
        if tags.as_ref().is_some_and(|t| t.len() != labels.len()) || row_ids.len() != labels.len() {
            return Err(Error::MalformedDataset("per-row metadata length mismatch".into()));
        }
        Ok(BinaryDataset {
            catalog,
            cells,
            labels,
            tags,
            row_ids,
        })
    }

    pub fn catalog(&self) -> &FeatureCatalog {
        &self.catalog
    }

    pub fn shared_catalog(&self) -> Arc<FeatureCatalog> {
        Arc::clone(&self.catalog)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.catalog.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let w = self.n_features();
        &self.cells[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        self.cells.chunks_exact(self.n_features())
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn tags(&self) -> Option<&[Arc<str>]> {
        self.tags.as_deref()
    }

    pub fn tag(&self, i: usize) -> Option<&str> {
        self.tags.as_ref().map(|t| &*t[i])
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    pub fn column(&self, f: usize) -> Vec<u8> {
        self.rows().map(|r| r[f]).collect()
    }

    /// `[benign, malware]` row counts.
    pub fn class_counts(&self) -> [usize; 2] {
        let malware = self.labels.iter().filter(|&&l| l == MALWARE).count();
        [self.labels.len() - malware, malware]
    }

    /// Row counts per domain tag; untagged rows count under `""`.
    pub fn tag_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for i in 0..self.n_rows() {
            *out.entry(self.tag(i).unwrap_or("").to_owned()).or_insert(0) += 1;
        }
        out
    }

    /// Tags every row with `domain`, replacing existing tags.
    pub fn with_domain(mut self, domain: &str) -> Self {
        let tag: Arc<str> = Arc::from(domain);
        self.tags = Some(vec![tag; self.n_rows()]);
        self
    }

    pub fn subset(&self, indices: &[usize]) -> BinaryDataset {
        let w = self.n_features();
        let mut cells = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            cells.extend_from_slice(self.row(i));
        }
        BinaryDataset {
            catalog: Arc::clone(&self.catalog),
            cells,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            tags: self
                .tags
                .as_ref()
                .map(|t| indices.iter().map(|&i| Arc::clone(&t[i])).collect()),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Indices of rows whose tag equals `domain`.
    pub fn indices_with_tag(&self, domain: &str) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&i| self.tag(i) == Some(domain))
            .collect()
    }

    fn require_rows_per_class(&self, need: usize) -> Result<[usize; 2]> {
        let counts = self.class_counts();
        for (class, &have) in counts.iter().enumerate() {
            if have < need {
                return Err(Error::InsufficientClassRows {
                    class: class as u8,
                    have,
                    need,
                });
            }
        }
        Ok(counts)
    }
}

fn parse_bit(raw: &str) -> Option<u8> {
    match raw.trim() {
        "0" => Some(0),
        "1" => Some(1),
        _ => None,
    }
}

/// Parses a header-first CSV whose non-label columns are literal `0`/`1`.
///
/// Row numbers in [`Error::NonBinaryValue`] are 1-based data rows (the header
/// is not counted).
pub fn read_csv<R: Read>(reader: R, label_column: &str) -> Result<BinaryDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let label_pos = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_owned()))?;
    let feature_names: Vec<&str> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_pos)
        .map(|(_, h)| h)
        .collect();
    let catalog = FeatureCatalog::new(feature_names.iter().copied())?;

    let mut cells = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        for (c, raw) in record.iter().enumerate() {
            let bit = parse_bit(raw).ok_or_else(|| Error::NonBinaryValue {
                row: r + 1,
                column: header.get(c).unwrap_or("?").to_owned(),
                value: raw.to_owned(),
            })?;
            if c == label_pos {
                labels.push(bit);
            } else {
                cells.push(bit);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    BinaryDataset::from_flat(Arc::new(catalog), cells, labels)
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<BinaryDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(BufReader::new(file), label_column)
}

pub fn write_csv<W: Write>(data: &BinaryDataset, label_column: &str, out: W) -> Result<()> {
    if data.catalog.contains(label_column) {
        return Err(Error::DuplicateFeatureName(label_column.to_owned()));
    }
    let mut wtr = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = data.catalog.names().iter().map(String::as_str).collect();
    header.push(label_column);
    wtr.write_record(&header)?;
    let mut record: Vec<&str> = Vec::with_capacity(header.len());
    for (row, &label) in data.rows().zip(data.labels()) {
        record.clear();
        record.extend(row.iter().map(|&b| if b == 1 { "1" } else { "0" }));
        record.push(if label == 1 { "1" } else { "0" });
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Reads a catalog written one name per line.
pub fn read_catalog<R: BufRead>(reader: R) -> Result<FeatureCatalog> {
    let mut names = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<catalog>", e))?;
        let line = line.trim();
        if !line.is_empty() {
            names.push(line.to_owned());
        }
    }
    FeatureCatalog::new(names)
}

/// Re-expresses `data` in the `target` feature space: target features the
/// data lacks become all-zero columns, data features outside the target are
/// dropped, and column order follows the target exactly.
pub fn align_to_catalog(data: &BinaryDataset, target: &FeatureCatalog) -> BinaryDataset {
    if data.catalog() == target {
        return data.clone();
    }
    let source: Vec<Option<usize>> = target
        .names()
        .iter()
        .map(|n| data.catalog.position(n))
        .collect();
    let mut cells = Vec::with_capacity(data.n_rows() * target.len());
    for row in data.rows() {
        cells.extend(source.iter().map(|s| s.map_or(0, |j| row[j])));
    }
    BinaryDataset {
        catalog: Arc::new(target.clone()),
        cells,
        labels: data.labels.clone(),
        tags: data.tags.clone(),
        row_ids: data.row_ids.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: BinaryDataset,
    pub test: BinaryDataset,
    /// Row positions in the input dataset, ascending.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Rows of each class, shuffled by a per-class stream.
fn shuffled_by_class(data: &BinaryDataset, seed: u64, tag: &str) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, &l) in data.labels().iter().enumerate() {
        by_class[l as usize].push(i);
    }
    for (class, idx) in by_class.iter_mut().enumerate() {
        idx.shuffle(&mut seed::stream(seed, tag, class as u64));
    }
    by_class
}

/// Per-class split with `round_half_up(count * test_fraction)` test rows.
pub fn stratified_split(data: &BinaryDataset, test_fraction: f64, seed: u64) -> Result<SplitPair> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    data.require_rows_per_class(2)?;
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for idx in shuffled_by_class(data, seed, "stratified-split") {
        let n_test = (idx.len() as f64 * test_fraction + 0.5).floor() as usize;
        test_indices.extend_from_slice(&idx[..n_test]);
        train_indices.extend_from_slice(&idx[n_test..]);
    }
    train_indices.sort_unstable();
    test_indices.sort_unstable();
    Ok(SplitPair {
        train: data.subset(&train_indices),
        test: data.subset(&test_indices),
        train_indices,
        test_indices,
    })
}

/// `k` disjoint, exhaustive row-index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSet {
    pub folds: Vec<Vec<usize>>,
}

impl FoldSet {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// `(train, test)` row indices for fold `i`.
    pub fn split(&self, i: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        train.sort_unstable();
        (train, self.folds[i].clone())
    }
}

/// Deals each class's shuffled rows round-robin over the folds. The dealing
/// position carries over from one class to the next, so per-class counts per
/// fold differ by at most one and fold sizes stay balanced.
pub fn stratified_kfold(data: &BinaryDataset, k: usize, seed: u64) -> Result<FoldSet> {
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k = {k}, need at least 2 folds")));
    }
    data.require_rows_per_class(k)?;
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for idx in shuffled_by_class(data, seed, "stratified-kfold") {
        for i in idx {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldSet { folds })
}

/// Names present in both catalogs, in `a`'s order.
pub fn catalog_intersection(a: &FeatureCatalog, b: &FeatureCatalog) -> Result<FeatureCatalog> {
    let common: Vec<&str> = a
        .names()
        .iter()
        .filter(|n| b.contains(n))
        .map(String::as_str)
        .collect();
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    FeatureCatalog::new(common)
}

/// Projects both datasets onto their common features, concatenates them and
/// shuffles the rows. Untagged rows are tagged `a` or `b` by operand.
pub fn merge_common(a: &BinaryDataset, b: &BinaryDataset, seed: u64) -> Result<BinaryDataset> {
    let common = catalog_intersection(a.catalog(), b.catalog())?;
    let pa = align_to_catalog(a, &common);
    let pb = align_to_catalog(b, &common);
    let tags_of = |d: &BinaryDataset, default: &str| -> Vec<Arc<str>> {
        match &d.tags {
            Some(t) => t.clone(),
            None => vec![Arc::from(default); d.n_rows()],
        }
    };
    let mut tags = tags_of(&pa, "a");
    tags.extend(tags_of(&pb, "b"));
    let mut cells = pa.cells;
    cells.extend(pb.cells);
    let mut labels = pa.labels;
    labels.extend(pb.labels);
    let mut row_ids = pa.row_ids;
    row_ids.extend(pb.row_ids);

    let concatenated = BinaryDataset {
        catalog: Arc::new(common),
        cells,
        labels,
        tags: Some(tags),
        row_ids,
    };
    let mut order: Vec<usize> = (0..concatenated.n_rows()).collect();
    order.shuffle(&mut seed::stream(seed, "merge-common", 0));
    Ok(concatenated.subset(&order))
}

/// Asserts two datasets share no `(tag, row id)` pair.
pub fn assert_disjoint_rows(a: &BinaryDataset, b: &BinaryDataset) -> Result<()> {
    let seen: HashSet<(Option<&str>, u64)> = (0..a.n_rows())
        .map(|i| (a.tag(i), a.row_ids[i]))
        .collect();
    for i in 0..b.n_rows() {
        if seen.contains(&(b.tag(i), b.row_ids[i])) {
            return Err(Error::Invariant(format!(
                "row {} of domain {:?} appears on both sides",
                b.row_ids[i],
                b.tag(i)
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat(names: &[&str]) -> FeatureCatalog {
        FeatureCatalog::new(names.iter().copied()).unwrap()
    }

    fn balanced(n_benign: usize, n_malware: usize) -> BinaryDataset {
        let rows: Vec<Vec<u8>> = (0..n_benign + n_malware)
            .map(|i| vec![(i % 2) as u8, (i % 3 == 0) as u8])
            .collect();
        let labels = (0..n_benign + n_malware)
            .map(|i| u8::from(i >= n_benign))
            .collect();
        BinaryDataset::new(cat(&["x", "y"]), rows, labels).unwrap()
    }

    #[test]
    fn loads_minimal_csv() {
        let d = read_csv("a,b,Result\n1,0,1\n0,0,0\n".as_bytes(), "Result").unwrap();
        assert_eq!(d.catalog().names(), ["a", "b"]);
        assert_eq!(d.row(0), [1, 0]);
        assert_eq!(d.row(1), [0, 0]);
        assert_eq!(d.labels(), [1, 0]);
        assert!(d.tags().is_none());
    }

    #[test]
    fn label_column_may_be_anywhere_and_cells_are_trimmed() {
        let d = read_csv("Result, a ,b\n 1 ,0,1\n".as_bytes(), "Result").unwrap();
        assert_eq!(d.catalog().names(), ["a", "b"]);
        assert_eq!(d.row(0), [0, 1]);
        assert_eq!(d.labels(), [1]);
    }

    #[test]
    fn csv_errors() {
        let err = read_csv("a,b,Result\n1,2,1\n".as_bytes(), "Result").unwrap_err();
        assert!(matches!(err, Error::NonBinaryValue { row: 1, ref column, .. } if column == "b"));
        let err = read_csv("a,a,Result\n1,0,1\n".as_bytes(), "Result").unwrap_err();
        assert!(matches!(err, Error::DuplicateFeatureName(ref n) if n == "a"));
        let err = read_csv("a,b,class\n1,0,1\n".as_bytes(), "Result").unwrap_err();
        assert!(matches!(err, Error::MissingLabelColumn(_)));
        let err = read_csv("a,b,Result\n".as_bytes(), "Result").unwrap_err();
        assert!(matches!(err, Error::EmptyDataset));
        let err = read_csv("a,b,Result\n1,0,NA\n".as_bytes(), "Result").unwrap_err();
        assert!(matches!(err, Error::NonBinaryValue { .. }));
        let err = read_csv("Result\n1\n".as_bytes(), "Result").unwrap_err();
        assert!(matches!(err, Error::EmptyCatalog));
    }

    #[test]
    fn csv_write_read_roundtrip() {
        let d = balanced(3, 4);
        let mut buf = Vec::new();
        write_csv(&d, "Result", &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), "Result").unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn catalog_text_roundtrip() {
        let c = cat(&["android.permission.INTERNET", "b"]);
        assert_eq!(FeatureCatalog::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(read_catalog(c.to_text().as_bytes()).unwrap(), c);
        assert!(matches!(
            FeatureCatalog::new(["a,b"]),
            Err(Error::InvalidFeatureName(_))
        ));
    }

    #[test]
    fn alignment_zero_fills_and_drops() {
        let d = BinaryDataset::new(cat(&["b", "d"]), vec![vec![1, 1]], vec![1]).unwrap();
        let target = cat(&["a", "b", "c"]);
        let out = align_to_catalog(&d, &target);
        assert_eq!(out.catalog(), &target);
        assert_eq!(out.row(0), [0, 1, 0]);
        assert_eq!(out.labels(), [1]);

        assert_eq!(align_to_catalog(&d, d.catalog()), d);

        let disjoint = align_to_catalog(&d, &cat(&["p", "q"]));
        assert_eq!(disjoint.row(0), [0, 0]);
        assert_eq!(disjoint.labels(), d.labels());
    }

    #[test]
    fn split_counts_follow_rounding_rule() {
        let d = balanced(5, 5);
        let s = stratified_split(&d, 0.2, 11).unwrap();
        assert_eq!(s.test.class_counts(), [1, 1]);
        assert_eq!(s.train.class_counts(), [4, 4]);
        let again = stratified_split(&d, 0.2, 11).unwrap();
        assert_eq!(s.test_indices, again.test_indices);

        let d = balanced(60, 40);
        let s = stratified_split(&d, 0.2, 3).unwrap();
        assert_eq!(s.test.class_counts(), [12, 8]);

        // 5 * 0.3 = 1.5 rounds half up to 2
        let s = stratified_split(&balanced(5, 5), 0.3, 1).unwrap();
        assert_eq!(s.test.class_counts(), [2, 2]);
    }

    #[test]
    fn split_rejects_thin_classes_and_bad_fractions() {
        assert!(matches!(
            stratified_split(&balanced(5, 1), 0.2, 0),
            Err(Error::InsufficientClassRows { class: 1, have: 1, need: 2 })
        ));
        assert!(stratified_split(&balanced(5, 5), 1.0, 0).is_err());
        assert!(stratified_split(&balanced(5, 5), 0.0, 0).is_err());
    }

    #[test]
    fn kfold_balances_classes() {
        let d = balanced(5, 5);
        let f = stratified_kfold(&d, 5, 2).unwrap();
        for fold in &f.folds {
            assert_eq!(d.subset(fold).class_counts(), [1, 1]);
        }
        let d = balanced(7, 3);
        let f = stratified_kfold(&d, 2, 2).unwrap();
        let c0 = d.subset(&f.folds[0]).class_counts();
        let c1 = d.subset(&f.folds[1]).class_counts();
        assert!(c0[0].abs_diff(c1[0]) <= 1 && c0[1].abs_diff(c1[1]) <= 1);
        assert!(stratified_kfold(&d, 4, 0).is_err());
        assert!(stratified_kfold(&d, 1, 0).is_err());
    }

    #[test]
    fn fold_split_partitions() {
        let d = balanced(9, 6);
        let f = stratified_kfold(&d, 3, 5).unwrap();
        let (train, test) = f.split(1);
        assert_eq!(train.len() + test.len(), 15);
        assert!(test.iter().all(|t| !train.contains(t)));
    }

    #[test]
    fn intersection_follows_first_operand() {
        let a = cat(&["a", "b", "c"]);
        let b = cat(&["c", "b", "x"]);
        assert_eq!(catalog_intersection(&a, &b).unwrap().names(), ["b", "c"]);
        assert_eq!(catalog_intersection(&a, &a).unwrap(), a);
        assert!(matches!(
            catalog_intersection(&a, &cat(&["z"])),
            Err(Error::EmptyIntersection)
        ));
    }

    #[test]
    fn merge_projects_tags_and_shuffles_deterministically() {
        let a = BinaryDataset::new(cat(&["a", "b", "c"]), vec![vec![1, 0, 1], vec![0, 1, 1]], vec![1, 0])
            .unwrap();
        let b = BinaryDataset::new(
            cat(&["c", "b"]),
            vec![vec![1, 1], vec![0, 0], vec![1, 0]],
            vec![1, 0, 1],
        )
        .unwrap();
        let m = merge_common(&a, &b, 9).unwrap();
        assert_eq!(m.n_rows(), 5);
        assert_eq!(m.catalog().names(), ["b", "c"]);
        let counts = m.tag_counts();
        assert_eq!(counts["a"], 2);
        assert_eq!(counts["b"], 3);
        let first_a = m.indices_with_tag("a");
        let projected: Vec<&[u8]> = first_a
            .iter()
            .filter(|&&i| m.row_ids()[i] == 0)
            .map(|&i| m.row(i))
            .collect();
        assert_eq!(projected, vec![&[0u8, 1][..]]);
        assert_eq!(merge_common(&a, &b, 9).unwrap(), m);
        let disjoint = BinaryDataset::new(cat(&["z"]), vec![vec![1]], vec![1]).unwrap();
        assert!(matches!(merge_common(&a, &disjoint, 0), Err(Error::EmptyIntersection)));
    }

    #[test]
    fn disjointness_audit() {
        let d = balanced(5, 5).with_domain("A");
        let s = stratified_split(&d, 0.2, 1).unwrap();
        assert!(assert_disjoint_rows(&s.train, &s.test).is_ok());
        assert!(assert_disjoint_rows(&d, &s.test).is_err());
    }
}
