//! Design matrices: targets for codeword inner products.
//!
//! A design matrix `D` is `k × k`, symmetric, has every diagonal entry equal to
//! the code-length scale `l`, and all entries in `[−l, l]`. Data-driven designs
//! start from Mahalanobis distances between class means, are mapped onto
//! inner-product targets by an allocation policy, and are then repaired by
//! alternating projections onto the PSD cone and the box/diagonal set.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::LabeledDataset;
use crate::ecoc::{draw_distinct_rows, CodingMatrix};
use crate::error::{Error, Result};
use crate::linalg;

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    l: usize,
}

impl DesignMatrix {
    /// Checks symmetry, the diagonal, and the `[−l, l]` range. Positive
    /// semidefiniteness is only guaranteed after [`project_psd_scaled`].
    pub fn new(values: DMatrix<f64>, l: usize) -> Result<Self> {
        let (r, c) = values.shape();
        if r != c || r == 0 {
            return Err(Error::dim(format!("design matrix must be square, got {r}×{c}")));
        }
        if l == 0 {
            return Err(Error::arg("code length scale must be at least 1"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("design matrix has non-finite entries"));
        }
        let asym = linalg::asymmetry(&values);
        if asym > SYMMETRY_TOL {
            return Err(Error::arg(format!("design matrix is not symmetric (off by {asym:.3e})")));
        }
        let lf = l as f64;
        if let Some(i) = (0..r).find(|&i| values[(i, i)] != lf) {
            return Err(Error::arg(format!(
                "diagonal entry {i} is {}, expected {l}",
                values[(i, i)]
            )));
        }
        if values.iter().any(|v| v.abs() > lf) {
            return Err(Error::arg(format!("design entries must lie in [-{l}, {l}]")));
        }
        Ok(Self { values, l })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn classes(&self) -> usize {
        self.values.nrows()
    }

    pub fn scale(&self) -> usize {
        self.l
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.values)
    }

    /// Same design at scale `l`: every entry multiplied by `l / self.scale()`.
    /// Symmetry, range and semidefiniteness carry over.
    pub fn rescaled(&self, l: usize) -> Result<Self> {
        if l == 0 {
            return Err(Error::arg("code length scale must be at least 1"));
        }
        let f = l as f64 / self.l as f64;
        let k = self.classes();
        let mut values = &self.values * f;
        for i in 0..k {
            values[(i, i)] = l as f64;
            for j in 0..k {
                values[(i, j)] = values[(i, j)].clamp(-(l as f64), l as f64);
            }
        }
        Ok(Self { values, l })
    }
}

/// Distances between class means; symmetric with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistanceMatrix {
    values: DMatrix<f64>,
}

impl ClassDistanceMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let (r, c) = values.shape();
        if r != c {
            return Err(Error::dim("distance matrix must be square"));
        }
        for i in 0..r {
            if values[(i, i)] != 0.0 {
                return Err(Error::arg("distance matrix must have a zero diagonal"));
            }
            for j in 0..r {
                let v = values[(i, j)];
                if !(v.is_finite() && v >= 0.0) || v != values[(j, i)] {
                    return Err(Error::arg("distances must be finite, nonnegative and symmetric"));
                }
            }
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Which class pairs receive the larger code distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationPolicy {
    /// Confusable (close) classes get the most separated codewords.
    Hard,
    /// Well-separated classes get the most separated codewords.
    Easy,
}

/// Mahalanobis distance between every pair of class means under the pooled
/// within-class covariance, regularized by `1e-6 · trace(Σ)/d` on the diagonal.
pub fn pairwise_mahalanobis(data: &LabeledDataset) -> Result<ClassDistanceMatrix> {
    let k = data.classes();
    let (n, d) = data.features().shape();
    if k < 2 {
        return Err(Error::arg("need at least two classes"));
    }
    if d == 0 {
        return Err(Error::arg("need at least one feature"));
    }
    let counts = data.class_counts();
    if let Some(c) = counts.iter().position(|&c| c < 2) {
        return Err(Error::arg(format!("class {c} has fewer than 2 samples")));
    }

    let mut means = DMatrix::<f64>::zeros(k, d);
    for (row, &y) in data.features().row_iter().zip(data.labels()) {
        let mut m = means.row_mut(y);
        m += row;
    }
    for c in 0..k {
        let mut m = means.row_mut(c);
        m /= counts[c] as f64;
    }

    let mut cov = DMatrix::<f64>::zeros(d, d);
    for (row, &y) in data.features().row_iter().zip(data.labels()) {
        let centered = (row - means.row(y)).transpose();
        cov += &centered * centered.transpose();
    }
    cov /= (n - k).max(1) as f64;
    let mut ridge = 1e-6 * cov.trace() / d as f64;
    if ridge <= 0.0 {
        ridge = 1e-6;
    }
    for i in 0..d {
        cov[(i, i)] += ridge;
    }
    let chol = cov
        .cholesky()
        .ok_or_else(|| Error::arg("pooled covariance is not positive definite"))?;

    let mut values = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            let delta: DVector<f64> = (means.row(i) - means.row(j)).transpose();
            let solved = chol.solve(&delta);
            let dist = delta.dot(&solved).max(0.0).sqrt();
            values[(i, j)] = dist;
            values[(j, i)] = dist;
        }
    }
    ClassDistanceMatrix::new(values)
}

/// Affine map of min-max normalized distances `u` onto inner-product targets:
/// `l(2u − 1)` for [`AllocationPolicy::Hard`], `l(1 − 2u)` clipped above at
/// `l − 2` for [`AllocationPolicy::Easy`]. The diagonal is `l`.
pub fn distances_to_design(m: &ClassDistanceMatrix, l: usize, policy: AllocationPolicy) -> Result<DesignMatrix> {
    let k = m.values.nrows();
    if k < 2 {
        return Err(Error::arg("need at least two classes"));
    }
    if l < 1 {
        return Err(Error::arg("code length scale must be at least 1"));
    }
    let off: Vec<f64> = (0..k)
        .flat_map(|i| ((i + 1)..k).map(move |j| (i, j)))
        .map(|(i, j)| m.values[(i, j)])
        .collect();
    let lo = off.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = off.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Err(Error::ConstantDistances);
    }
    let lf = l as f64;
    let mut values = DMatrix::from_element(k, k, 0.0);
    for i in 0..k {
        values[(i, i)] = lf;
        for j in (i + 1)..k {
            let u = (m.values[(i, j)] - lo) / (hi - lo);
            let t = match policy {
                AllocationPolicy::Hard => lf * (2.0 * u - 1.0),
                AllocationPolicy::Easy => (lf * (1.0 - 2.0 * u)).min(lf - 2.0),
            };
            values[(i, j)] = t;
            values[(j, i)] = t;
        }
    }
    DesignMatrix::new(values, l)
}

#[derive(Debug, Clone, Copy)]
pub struct ProjectionOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProjectionOutcome {
    pub design: DesignMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// Frobenius change over the last cycle.
    pub final_change: f64,
    pub min_eigenvalue: f64,
    /// Weight of `l·I` blended in after the loop to lift a residual negative
    /// eigenvalue (0 when none was needed).
    pub repair_weight: f64,
}

/// Alternates (1) PSD projection `V diag(λ₊) Vᵀ`, (2) clipping to `[−l, l]` and
/// (3) resetting the diagonal to `l`, until the Frobenius change between
/// cycles drops below `tol` or `max_iter` cycles run.
///
/// If the last cycle still leaves an eigenvalue below `−1e-8` (slow
/// convergence), the result is blended with `l·I` just enough to lift it;
/// that convex combination keeps the diagonal and range constraints.
pub fn project_psd_scaled(raw: &DMatrix<f64>, l: usize, opts: &ProjectionOptions) -> Result<ProjectionOutcome> {
    let (r, c) = raw.shape();
    if r != c || r == 0 {
        return Err(Error::dim(format!("design matrix must be square, got {r}×{c}")));
    }
    if l == 0 {
        return Err(Error::arg("code length scale must be at least 1"));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("design matrix has non-finite entries"));
    }
    let k = r;
    let lf = l as f64;
    let mut d = raw.clone();
    linalg::symmetrize(&mut d);

    let mut iterations = 0;
    let mut converged = false;
    let mut final_change = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let prev = d.clone();

        let eig = SymmetricEigen::new(d.clone());
        let lambda_plus = eig.eigenvalues.map(|v| v.max(0.0));
        d = &eig.eigenvectors * DMatrix::from_diagonal(&lambda_plus) * eig.eigenvectors.transpose();
        linalg::symmetrize(&mut d);

        d.apply(|v| *v = v.clamp(-lf, lf));
        for i in 0..k {
            d[(i, i)] = lf;
        }

        final_change = (&d - &prev).norm();
        if final_change < opts.tol {
            converged = true;
            break;
        }
    }

    let floor = -1e-8;
    let mut min_eig = linalg::min_eigenvalue(&d);
    let mut repair_weight = 0.0;
    if min_eig < floor {
        // (1 − θ)λ + θl ≥ 0 for θ ≥ −λ/(l − λ); aim a little above zero.
        let target = -min_eig + 1e-10 * lf;
        repair_weight = (target / (lf - min_eig + 1e-10 * lf)).min(1.0);
        d *= 1.0 - repair_weight;
        for i in 0..k {
            for j in 0..k {
                d[(i, j)] += if i == j { repair_weight * lf } else { 0.0 };
            }
            d[(i, i)] = lf;
        }
        min_eig = linalg::min_eigenvalue(&d);
    }

    Ok(ProjectionOutcome {
        design: DesignMatrix::new(d, l)?,
        iterations,
        converged,
        final_change,
        min_eigenvalue: min_eig,
        repair_weight,
    })
}

/// `X₀X₀ᵀ` for a uniformly drawn `X₀ ∈ {−1,+1}^{k×l}` with pairwise distinct
/// rows and pairwise distinct columns.
pub fn binary_gramian(k: usize, l: usize, seed: u64) -> Result<(DesignMatrix, CodingMatrix)> {
    if k < 2 || l < 1 {
        return Err(Error::arg("binary gramian needs k ≥ 2 and l ≥ 1"));
    }
    if l < usize::BITS as usize && (1usize << l) < k {
        return Err(Error::arg(format!("{k} distinct rows need l ≥ log₂ {k}, got {l}")));
    }
    if k < usize::BITS as usize && (1usize << k) < l {
        return Err(Error::arg(format!("{l} distinct columns need k ≥ log₂ {l}, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..100_000 {
        let x0 = CodingMatrix::from_rows(&draw_distinct_rows(&mut rng, k, l))?;
        let cols: Vec<Vec<i8>> = (0..l).map(|j| x0.column(j)).collect();
        let distinct = (0..l).all(|a| ((a + 1)..l).all(|b| cols[a] != cols[b]));
        if distinct {
            let x = x0.to_f64();
            let mut gram = linalg::gram(&x);
            linalg::symmetrize(&mut gram);
            return Ok((DesignMatrix::new(gram, l)?, x0));
        }
    }
    Err(Error::arg(format!("could not draw distinct columns for k = {k}, l = {l}")))
}

pub fn default_rank_tol(k: usize) -> f64 {
    1e-8 * k as f64
}

/// Numerical rank: eigenvalues with `|λ| > rank_tol · max|λ|`.
pub fn code_length(d: &DesignMatrix, rank_tol: Option<f64>) -> Result<usize> {
    let tol = rank_tol.unwrap_or_else(|| default_rank_tol(d.classes()));
    let eig = linalg::sym_eigenvalues(d.values());
    let top = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if top == 0.0 {
        return Err(Error::arg("rank of the zero matrix is undefined for code length"));
    }
    Ok(eig.iter().filter(|v| v.abs() > tol * top).count())
}

/// Code length requested for a data-driven design.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthChoice {
    /// The numerical rank of the projected design, raised to `⌈log₂ k⌉` when
    /// smaller so that distinct codewords exist.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone)]
pub struct DataDesign {
    pub distances: ClassDistanceMatrix,
    pub design: DesignMatrix,
    pub projection: ProjectionOutcome,
    /// Numerical rank of the projected design at the provisional scale.
    pub rank: usize,
    pub l: usize,
}

/// Mahalanobis distances, policy mapping and projection. With
/// [`LengthChoice::Auto`] the design is built at scale `k`, projected, and
/// rescaled to its numerical rank; rescaling preserves every design invariant.
pub fn design_from_data(data: &LabeledDataset, policy: AllocationPolicy, length: LengthChoice) -> Result<DataDesign> {
    let k = data.classes();
    let distances = pairwise_mahalanobis(data)?;
    let l0 = match length {
        LengthChoice::Auto => k,
        LengthChoice::Fixed(l) => l,
    };
    let raw = distances_to_design(&distances, l0, policy)?;
    let projection = project_psd_scaled(raw.values(), l0, &ProjectionOptions::default())?;
    let rank = code_length(&projection.design, None)?;
    let (design, l) = match length {
        LengthChoice::Fixed(l) => (projection.design.clone(), l),
        LengthChoice::Auto => {
            let l = rank.max(min_code_length(k));
            (projection.design.rescaled(l)?, l)
        }
    };
    Ok(DataDesign {
        distances,
        design,
        projection,
        rank,
        l,
    })
}

/// `⌈log₂ k⌉`, the shortest length with `k` distinct codewords.
pub fn min_code_length(k: usize) -> usize {
    (usize::BITS - k.saturating_sub(1).leading_zeros()) as usize
}
