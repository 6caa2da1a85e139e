//! Coding matrices: distance analysis, validation, decoding and baseline designs.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ecf::CorrectionPolicy;
use crate::error::{Error, Result};

/// A `k × l` matrix over `{−1, +1}`. Row `i` is the codeword of class `i`,
/// column `j` is the `j`-th dichotomy.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CodingMatrix {
    k: usize,
    l: usize,
    values: Vec<i8>,
}

impl CodingMatrix {
    /// Row-major entries, each `−1` or `+1`.
    pub fn new(k: usize, l: usize, values: Vec<i8>) -> Result<Self> {
        if k == 0 || l == 0 {
            return Err(Error::arg("coding matrix needs at least one row and one column"));
        }
        if values.len() != k * l {
            return Err(Error::dim(format!("expected {} entries, got {}", k * l, values.len())));
        }
        if let Some(v) = values.iter().find(|v| **v != 1 && **v != -1) {
            return Err(Error::arg(format!("coding entries must be ±1, found {v}")));
        }
        Ok(Self { k, l, values })
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let k = rows.len();
        let l = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != l) {
            return Err(Error::dim("ragged coding rows"));
        }
        Self::new(k, l, rows.concat())
    }

    /// Sign pattern of a real matrix, with `x ≥ threshold ↦ +1`.
    pub fn from_threshold(m: &DMatrix<f64>, threshold: f64) -> Result<Self> {
        let (k, l) = m.shape();
        let values = (0..k)
            .flat_map(|i| (0..l).map(move |j| (i, j)))
            .map(|(i, j)| if m[(i, j)] >= threshold { 1 } else { -1 })
            .collect();
        Self::new(k, l, values)
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn length(&self) -> usize {
        self.l
    }

    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.values[i * self.l + j]
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.values[i * self.l..(i + 1) * self.l]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[i8]> {
        self.values.chunks(self.l)
    }

    pub fn column(&self, j: usize) -> Vec<i8> {
        (0..self.k).map(|i| self.get(i, j)).collect()
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.l, |i, j| f64::from(self.get(i, j)))
    }

    /// Keep only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        let values = (0..self.k)
            .flat_map(|i| cols.iter().map(move |&j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .collect();
        Self::new(self.k, cols.len(), values)
    }

    /// First pair of identical rows, if any.
    pub fn duplicate_row(&self) -> Option<(usize, usize)> {
        for i in 0..self.k {
            for j in (i + 1)..self.k {
                if self.row(i) == self.row(j) {
                    return Some((i, j));
                }
            }
        }
        None
    }

    pub fn row_dot(&self, i: usize, j: usize) -> i64 {
        self.row(i)
            .iter()
            .zip(self.row(j))
            .map(|(a, b)| i64::from(*a) * i64::from(*b))
            .sum()
    }
}

/// Pairwise Hamming distances between codewords.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DistanceProfile {
    k: usize,
    values: Vec<usize>,
}

impl DistanceProfile {
    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, i: usize, j: usize) -> usize {
        self.values[i * self.k + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<usize>> {
        self.values.chunks(self.k).map(<[usize]>::to_vec).collect()
    }

    /// Smallest off-diagonal distance; `None` for a single class.
    pub fn min_off_diagonal(&self) -> Option<usize> {
        (0..self.k)
            .flat_map(|i| (0..self.k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.get(i, j))
            .min()
    }
}

/// `H_ij = (l − xⁱ·xʲ) / 2`, the number of positions where rows `i` and `j` differ.
pub fn hamming_profile(x: &CodingMatrix) -> DistanceProfile {
    let k = x.classes();
    let l = x.length() as i64;
    let mut values = vec![0; k * k];
    for i in 0..k {
        for j in (i + 1)..k {
            let d = ((l - x.row_dot(i, j)) / 2) as usize;
            values[i * k + j] = d;
            values[j * k + i] = d;
        }
    }
    DistanceProfile { k, values }
}

fn correction_of(min_distance: usize) -> i64 {
    (min_distance as i64 - 1).div_euclid(2)
}

/// `⌊(min H − 1)/2⌋` over off-diagonal entries.
pub fn global_correction(h: &DistanceProfile) -> Result<i64> {
    h.min_off_diagonal()
        .map(correction_of)
        .ok_or_else(|| Error::arg("global correction needs at least two classes"))
}

/// `⌊(min(hⁱ ⊕ hʲ) − 1)/2⌋`: the minimum runs over the off-diagonal entries of
/// rows `i` and `j` of `H` together.
pub fn pairwise_correction(h: &DistanceProfile, i: usize, j: usize) -> Result<i64> {
    let k = h.classes();
    if i == j {
        return Err(Error::arg("pairwise correction needs two distinct classes"));
    }
    if i >= k || j >= k {
        return Err(Error::dim(format!("class index out of range for {k} classes")));
    }
    let m = (0..k)
        .filter(|&c| c != i)
        .map(|c| h.get(i, c))
        .chain((0..k).filter(|&c| c != j).map(|c| h.get(j, c)))
        .min()
        .expect("two classes give at least one entry");
    Ok(correction_of(m))
}

/// `⌊(H_ij − 1)/2⌋`: bit flips a codeword of class `i` can absorb while still
/// being strictly closer to `xⁱ` than to `xʲ`.
pub fn pair_distance_correction(h: &DistanceProfile, i: usize, j: usize) -> Result<i64> {
    if i == j {
        return Err(Error::arg("pairwise correction needs two distinct classes"));
    }
    Ok(correction_of(h.get(i, j)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyViolation {
    pub i: usize,
    pub j: usize,
    pub inner_product: i64,
    pub bound: f64,
}

/// Constraint check of a coding matrix against a correction policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub duplicate_rows: Vec<(usize, usize)>,
    pub policy_violations: Vec<PolicyViolation>,
    pub duplicate_columns: Vec<(usize, usize)>,
    pub complementary_columns: Vec<(usize, usize)>,
    /// Rows pairwise distinct.
    pub valid: bool,
    /// Valid, but with policy or column findings.
    pub has_warnings: bool,
}

pub fn validate_coding(x: &CodingMatrix, policy: &CorrectionPolicy) -> Result<ValidationReport> {
    let k = x.classes();
    if policy.classes() != k {
        return Err(Error::dim(format!(
            "policy is for {} classes, coding has {k}",
            policy.classes()
        )));
    }
    let mut duplicate_rows = Vec::new();
    let mut policy_violations = Vec::new();
    for i in 0..k {
        for j in (i + 1)..k {
            if x.row(i) == x.row(j) {
                duplicate_rows.push((i, j));
            }
            let ip = x.row_dot(i, j);
            let bound = policy.get(i, j);
            if ip as f64 > bound {
                policy_violations.push(PolicyViolation {
                    i,
                    j,
                    inner_product: ip,
                    bound,
                });
            }
        }
    }
    let mut duplicate_columns = Vec::new();
    let mut complementary_columns = Vec::new();
    let cols: Vec<Vec<i8>> = (0..x.length()).map(|j| x.column(j)).collect();
    for a in 0..cols.len() {
        for b in (a + 1)..cols.len() {
            if cols[a] == cols[b] {
                duplicate_columns.push((a, b));
            } else if cols[a].iter().zip(&cols[b]).all(|(p, q)| *p == -*q) {
                complementary_columns.push((a, b));
            }
        }
    }
    let valid = duplicate_rows.is_empty();
    let has_warnings =
        valid && !(policy_violations.is_empty() && duplicate_columns.is_empty() && complementary_columns.is_empty());
    Ok(ValidationReport {
        duplicate_rows,
        policy_violations,
        duplicate_columns,
        complementary_columns,
        valid,
        has_warnings,
    })
}

fn check_codeword(x: &CodingMatrix, y: &[i8]) -> Result<()> {
    if y.len() != x.length() {
        return Err(Error::dim(format!(
            "prediction has {} bits, coding length is {}",
            y.len(),
            x.length()
        )));
    }
    Ok(())
}

/// Class whose codeword disagrees with `y` in the fewest positions; ties go
/// to the smallest class index.
pub fn decode_hamming(x: &CodingMatrix, y: &[i8]) -> Result<usize> {
    check_codeword(x, y)?;
    let mut best = (usize::MAX, 0);
    for (i, row) in x.rows().enumerate() {
        let d = row.iter().zip(y).filter(|(a, b)| a != b).count();
        if d < best.0 {
            best = (d, i);
        }
    }
    Ok(best.1)
}

/// Per-class, per-dichotomy reliability weights; each row sums to one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightMatrix {
    k: usize,
    l: usize,
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn uniform(k: usize, l: usize) -> Self {
        Self {
            k,
            l,
            values: vec![1.0 / l as f64; k * l],
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.l + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.l..(i + 1) * self.l]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.k, self.l)
    }
}

/// Row-normalized accuracies; an all-zero row falls back to uniform weights.
pub fn weight_matrix(x: &CodingMatrix, per_class_accuracy: &DMatrix<f64>) -> Result<WeightMatrix> {
    let (k, l) = (x.classes(), x.length());
    if per_class_accuracy.shape() != (k, l) {
        return Err(Error::dim(format!(
            "accuracy matrix is {:?}, coding is {k}×{l}",
            per_class_accuracy.shape()
        )));
    }
    if per_class_accuracy.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::arg("accuracies must lie in [0, 1]"));
    }
    let mut values = Vec::with_capacity(k * l);
    for i in 0..k {
        let row = per_class_accuracy.row(i);
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            values.extend(row.iter().map(|a| a / total));
        } else {
            values.extend(std::iter::repeat_n(1.0 / l as f64, l));
        }
    }
    Ok(WeightMatrix { k, l, values })
}

/// Minimizes `Σⱼ wᵢⱼ (1 − xᵢⱼ yⱼ)/2`; ties go to the smallest class index.
pub fn decode_loss_weighted(x: &CodingMatrix, w: &WeightMatrix, y: &[i8]) -> Result<usize> {
    check_codeword(x, y)?;
    if w.shape() != (x.classes(), x.length()) {
        return Err(Error::dim("weight matrix shape differs from coding matrix"));
    }
    let mut best = (f64::INFINITY, 0);
    for (i, row) in x.rows().enumerate() {
        let loss: f64 = row
            .iter()
            .zip(y)
            .zip(w.row(i))
            .map(|((a, b), wt)| wt * f64::from(1 - a * b) / 2.0)
            .sum();
        if loss < best.0 {
            best = (loss, i);
        }
    }
    Ok(best.1)
}

/// One-vs-all: `+1` on the diagonal, `−1` elsewhere.
pub fn ova_coding(k: usize) -> Result<CodingMatrix> {
    if k < 2 {
        return Err(Error::arg("one-vs-all needs at least two classes"));
    }
    let values = (0..k * k).map(|e| if e / k == e % k { 1 } else { -1 }).collect();
    CodingMatrix::new(k, k, values)
}

/// `⌈10 · log₂ k⌉`.
pub fn dense_code_length(k: usize) -> usize {
    (10.0 * (k as f64).log2()).ceil().max(1.0) as usize
}

/// Uniform random rows, each redrawn until it differs from the earlier ones.
pub(crate) fn draw_distinct_rows<R: Rng>(rng: &mut R, k: usize, l: usize) -> Vec<Vec<i8>> {
    let mut rows: Vec<Vec<i8>> = Vec::with_capacity(k);
    while rows.len() < k {
        let row: Vec<i8> = (0..l).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        if !rows.contains(&row) {
            rows.push(row);
        }
    }
    rows
}

fn check_row_capacity(k: usize, l: usize) -> Result<()> {
    if l < usize::BITS as usize && (1usize << l) < k {
        return Err(Error::arg(format!("{k} distinct codewords need length ≥ log₂ {k}, got {l}")));
    }
    Ok(())
}

/// The `pool` candidate matrices that [`dense_random_coding`] chooses from.
pub fn dense_random_pool(k: usize, pool: usize, seed: u64) -> Result<Vec<CodingMatrix>> {
    if k < 2 || pool == 0 {
        return Err(Error::arg("dense random coding needs k ≥ 2 and pool ≥ 1"));
    }
    let l = dense_code_length(k);
    check_row_capacity(k, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pool)
        .map(|_| CodingMatrix::from_rows(&draw_distinct_rows(&mut rng, k, l)))
        .collect()
}

/// Dense random design: the candidate with the largest minimum row distance,
/// first one on ties.
pub fn dense_random_coding(k: usize, pool: usize, seed: u64) -> Result<CodingMatrix> {
    let mut best: Option<(usize, CodingMatrix)> = None;
    for cand in dense_random_pool(k, pool, seed)? {
        let d = hamming_profile(&cand).min_off_diagonal().unwrap_or(0);
        if best.as_ref().is_none_or(|(b, _)| d > *b) {
            best = Some((d, cand));
        }
    }
    Ok(best.expect("pool is non-empty").1)
}

/// Rejection-samples random codes until the minimum row distance reaches `c`.
pub fn fixed_correction_random_coding(
    k: usize,
    l: usize,
    c: usize,
    seed: u64,
    attempts: usize,
) -> Result<CodingMatrix> {
    if k < 2 || c < 1 || attempts == 0 {
        return Err(Error::arg("random coding needs k ≥ 2, c ≥ 1 and attempts ≥ 1"));
    }
    check_row_capacity(k, l)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, CodingMatrix)> = None;
    for _ in 0..attempts {
        let cand = CodingMatrix::from_rows(&draw_distinct_rows(&mut rng, k, l))?;
        let d = hamming_profile(&cand).min_off_diagonal().unwrap_or(0);
        if d >= c {
            return Ok(cand);
        }
        if best.as_ref().is_none_or(|(b, _)| d > *b) {
            best = Some((d, cand));
        }
    }
    let (best_distance, best) = best.expect("at least one attempt");
    Err(Error::CodingSearchFailed {
        target: c,
        attempts,
        best_distance,
        best: Box::new(best),
    })
}
