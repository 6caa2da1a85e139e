//! Datasets, the synthetic toy problem, stratified folds and matrix files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::design::DesignMatrix;
use crate::ecoc::CodingMatrix;
use crate::error::{Error, Result};

/// `n` samples with `d` real features and class labels `0..k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: DMatrix<f64>,
    labels: Vec<usize>,
    k: usize,
    label_names: Vec<String>,
}

impl LabeledDataset {
    /// Every class in `0..k` must occur and all features must be finite.
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, k: usize) -> Result<Self> {
        let names = (1..=k).map(|c| c.to_string()).collect();
        Self::with_names(features, labels, k, names)
    }

    pub fn with_names(features: DMatrix<f64>, labels: Vec<usize>, k: usize, label_names: Vec<String>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::dim(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if label_names.len() != k {
            return Err(Error::dim("one label name per class is required"));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("features must be finite"));
        }
        let mut seen = vec![false; k];
        for &y in &labels {
            if y >= k {
                return Err(Error::arg(format!("label {y} outside 0..{k}")));
            }
            seen[y] = true;
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(Error::arg(format!("class {c} has no samples")));
        }
        Ok(Self {
            features,
            labels,
            k,
            label_names,
        })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Original label text of each class index.
    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Samples at `indices`, keeping the class numbering. Errors if a class
    /// ends up empty.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let features = DMatrix::from_fn(indices.len(), d, |r, c| self.features[(indices[r], c)]);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::with_names(features, labels, self.k, self.label_names.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    Last,
    Index(usize),
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        kind => parse_err(path, line, format!("{kind:?}")),
    }
}

fn read_records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(out.len() + 1, |p| p.line() as usize);
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn parse_feature(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("non-numeric feature {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite feature {field:?}")));
    }
    Ok(v)
}

/// Reads a CSV of features plus one label column. A first line whose feature
/// fields are not all numeric is taken as a header. Labels are remapped to
/// `0..k` in sorted order (numeric order when every label is a number);
/// [`LabeledDataset::label_names`] keeps the original text.
pub fn load_dataset_csv(path: &Path, label_column: LabelColumn) -> Result<LabeledDataset> {
    let mut records = read_records(path)?;
    if records.is_empty() {
        return Err(parse_err(path, 1, "empty file"));
    }
    let width = records[0].1.len();
    if width < 2 {
        return Err(parse_err(path, records[0].0, "need at least one feature and a label"));
    }
    let label_at = match label_column {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) if i < width => i,
        LabelColumn::Index(i) => {
            return Err(parse_err(path, records[0].0, format!("label column {i} out of range (width {width})")))
        }
    };
    let is_header = records[0]
        .1
        .iter()
        .enumerate()
        .any(|(c, f)| c != label_at && f.parse::<f64>().is_err());
    if is_header {
        records.remove(0);
    }
    if records.is_empty() {
        return Err(parse_err(path, 2, "no data rows after the header"));
    }

    let n = records.len();
    let d = width - 1;
    let mut features = DMatrix::zeros(n, d);
    let mut raw_labels = Vec::with_capacity(n);
    for (r, (line, fields)) in records.iter().enumerate() {
        if fields.len() != width {
            return Err(parse_err(
                path,
                *line,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let mut c = 0;
        for (i, f) in fields.iter().enumerate() {
            if i == label_at {
                if f.is_empty() {
                    return Err(parse_err(path, *line, "empty label"));
                }
                raw_labels.push(f.clone());
            } else {
                features[(r, c)] = parse_feature(path, *line, f)?;
                c += 1;
            }
        }
    }

    let all_numeric = raw_labels.iter().all(|s| s.parse::<f64>().is_ok());
    let mut names = raw_labels.clone();
    names.sort();
    names.dedup();
    if all_numeric {
        names.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let labels = raw_labels.iter().map(|s| index[s.as_str()]).collect();
    let k = names.len();
    LabeledDataset::with_names(features, labels, k, names)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyOptions {
    pub k: usize,
    pub per_class: usize,
    /// Common standard deviation of every class.
    pub spread: f64,
    pub seed: u64,
}

impl Default for ToyOptions {
    fn default() -> Self {
        Self {
            k: 14,
            per_class: 100,
            spread: 0.3,
            seed: 1,
        }
    }
}

/// Class means of the toy problem: a unit-spaced grid with `⌈√k⌉` columns,
/// each point jittered uniformly by up to `0.35` per coordinate.
pub fn toy_means(k: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = (k as f64).sqrt().ceil() as usize;
    (0..k)
        .map(|c| {
            let (gx, gy) = ((c % cols) as f64, (c / cols) as f64);
            [gx + rng.random_range(-0.35..0.35), gy + rng.random_range(-0.35..0.35)]
        })
        .collect()
}

/// Two-dimensional Gaussian classes sharing one standard deviation, with
/// means from [`toy_means`]. Samples are stored class by class.
pub fn generate_toy(opts: &ToyOptions) -> Result<LabeledDataset> {
    if opts.k < 2 || opts.per_class < 1 {
        return Err(Error::arg("toy data needs k ≥ 2 and per_class ≥ 1"));
    }
    if !(opts.spread >= 0.0 && opts.spread.is_finite()) {
        return Err(Error::arg("spread must be a finite nonnegative number"));
    }
    let means = toy_means(opts.k, opts.seed);
    // Separate stream so the means do not depend on the sample count.
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let noise = Normal::new(0.0, opts.spread).map_err(|e| Error::arg(e.to_string()))?;
    let n = opts.k * opts.per_class;
    let mut features = DMatrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for s in 0..opts.per_class {
            let r = c * opts.per_class + s;
            features[(r, 0)] = mean[0] + noise.sample(&mut rng);
            features[(r, 1)] = mean[1] + noise.sample(&mut rng);
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels, opts.k)
}

/// Fold index for every sample. Each class is shuffled and dealt round-robin;
/// the dealing position carries over from one class to the next so that
/// remainders spread across folds.
pub fn stratified_folds(labels: &[usize], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::arg("need at least 2 folds"));
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in labels.iter().enumerate() {
        members[y].push(i);
    }
    if let Some(c) = members.iter().position(|m| !m.is_empty() && m.len() < folds) {
        return Err(Error::arg(format!(
            "class {c} has {} samples, fewer than {folds} folds",
            members[c].len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for m in &mut members {
        m.shuffle(&mut rng);
        for &i in m.iter() {
            assignment[i] = next;
            next = (next + 1) % folds;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixRole {
    Design,
    Coding,
    Policy,
    Generic,
}

fn role_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Role {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// One row per line, comma separated, no header. Design and policy matrices
/// must be square; coding matrices may only hold `1` and `-1`.
pub fn read_matrix_csv(path: &Path, role: MatrixRole) -> Result<DMatrix<f64>> {
    let records = read_records(path)?;
    if records.is_empty() {
        return Err(parse_err(path, 1, "empty matrix file"));
    }
    let cols = records[0].1.len();
    let mut data = Vec::with_capacity(records.len() * cols);
    for (line, fields) in &records {
        if fields.len() != cols {
            return Err(parse_err(
                path,
                *line,
                format!("expected {cols} entries, found {}", fields.len()),
            ));
        }
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(path, *line, format!("not a number: {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, *line, format!("non-finite entry {f:?}")));
            }
            if role == MatrixRole::Coding && v != 1.0 && v != -1.0 {
                return Err(role_err(path, format!("line {line}: coding entries must be 1 or -1, found {f}")));
            }
            data.push(v);
        }
    }
    let m = DMatrix::from_row_slice(records.len(), cols, &data);
    if matches!(role, MatrixRole::Design | MatrixRole::Policy) && m.nrows() != m.ncols() {
        return Err(role_err(
            path,
            format!("{role:?} matrix must be square, found {}×{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m)
}

pub fn read_coding_csv(path: &Path) -> Result<CodingMatrix> {
    let m = read_matrix_csv(path, MatrixRole::Coding)?;
    let rows: Vec<Vec<i8>> = m.row_iter().map(|r| r.iter().map(|v| *v as i8).collect()).collect();
    CodingMatrix::from_rows(&rows)
}

/// Reads a design matrix. Its scale is the common diagonal value, which must
/// be a positive integer and, when `expected_l` is given, equal to it.
pub fn read_design_csv(path: &Path, expected_l: Option<usize>) -> Result<DesignMatrix> {
    let m = read_matrix_csv(path, MatrixRole::Design)?;
    let l = design_scale(&m).map_err(|msg| role_err(path, msg))?;
    if let Some(e) = expected_l {
        if e != l {
            return Err(role_err(path, format!("diagonal is {l}, expected {e}")));
        }
    }
    DesignMatrix::new(m, l).map_err(|e| role_err(path, e.to_string()))
}

/// The common diagonal value of a design matrix as a code length.
pub fn design_scale(m: &DMatrix<f64>) -> std::result::Result<usize, String> {
    let first = m[(0, 0)];
    if (0..m.nrows()).any(|i| m[(i, i)] != first) {
        return Err("design diagonal must be constant".into());
    }
    if !(first >= 1.0 && first.fract() == 0.0) {
        return Err(format!("design diagonal must be a positive integer, found {first}"));
    }
    Ok(first as usize)
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Real entries use 17 significant digits; coding entries are written as
/// integers.
pub fn format_matrix_csv(m: &DMatrix<f64>, role: MatrixRole) -> String {
    let mut out = String::new();
    for r in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols())
            .map(|c| match role {
                MatrixRole::Coding => format!("{}", m[(r, c)] as i64),
                _ => format!("{:.16e}", m[(r, c)]),
            })
            .collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>, role: MatrixRole) -> Result<()> {
    if role == MatrixRole::Coding && m.iter().any(|v| *v != 1.0 && *v != -1.0) {
        return Err(role_err(path, "coding entries must be 1 or -1"));
    }
    if matches!(role, MatrixRole::Design | MatrixRole::Policy) && m.nrows() != m.ncols() {
        return Err(role_err(path, format!("{role:?} matrix must be square")));
    }
    write_atomic(path, format_matrix_csv(m, role).as_bytes())
}

pub fn write_coding_csv(path: &Path, x: &CodingMatrix) -> Result<()> {
    write_matrix_csv(path, &x.to_f64(), MatrixRole::Coding)
}
