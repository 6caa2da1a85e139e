//! Error-correcting factorization: find `X ∈ {−1,+1}^{k×l}` with `XXᵀ ≈ D`
//! subject to row-correlation bounds `XXᵀ ≤ P` off the diagonal.
//!
//! The relaxation `X ∈ [−1,1]^{k×l}` is solved by block coordinate descent over
//! rows. Fixing every row but `xⁱ` leaves a constrained least-squares problem in
//! `xⁱ`, solved exactly by [`crate::solver`]. The relaxed factor is then
//! thresholded and redundant columns are dropped.
//!
//! Progress is measured by the off-diagonal objective
//! `Σ_{i≠j} (dᵢⱼ − xⁱ·xʲ)²`, which is what a row update minimizes. For a
//! discrete `X` and a design with diagonal `l` it coincides with `‖D − XXᵀ‖²`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::design::DesignMatrix;
use crate::ecoc::{validate_coding, CodingMatrix, ValidationReport};
use crate::error::{Error, Result};
use crate::linalg;
use crate::solver::{solve_box_lin_ls, ConstrainedLsProblem, SolveStatus, SolverOptions};

/// Upper bounds on codeword inner products. Off-diagonal entry `p` demands
/// Hamming distance at least `(l − p)/2` between the two codewords.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionPolicy {
    values: DMatrix<f64>,
    l: usize,
}

impl CorrectionPolicy {
    pub fn from_matrix(values: DMatrix<f64>, l: usize) -> Result<Self> {
        let (k, c) = values.shape();
        if k != c || k == 0 {
            return Err(Error::dim(format!("policy must be square, got {k}×{c}")));
        }
        if l == 0 {
            return Err(Error::arg("code length must be at least 1"));
        }
        let lf = l as f64;
        for i in 0..k {
            if values[(i, i)] != lf {
                return Err(Error::arg(format!("policy diagonal entry {i} must equal {l}")));
            }
            for j in 0..k {
                let v = values[(i, j)];
                if v != values[(j, i)] {
                    return Err(Error::arg("policy must be symmetric"));
                }
                if i != j && !(v >= -lf && v <= lf - 1.0) {
                    return Err(Error::arg(format!(
                        "policy entry ({i}, {j}) = {v} outside [-{l}, {}]",
                        l - 1
                    )));
                }
            }
        }
        Ok(Self { values, l })
    }

    pub fn classes(&self) -> usize {
        self.values.nrows()
    }

    pub fn scale(&self) -> usize {
        self.l
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }
}

/// Uniform policy asking every pair of codewords for Hamming distance `≥ c/2`
/// in the relaxation, i.e. inner product `≤ l − c`.
pub fn make_policy(k: usize, l: usize, c: usize) -> Result<CorrectionPolicy> {
    if k == 0 {
        return Err(Error::arg("policy needs at least one class"));
    }
    if c < 1 || c > l {
        return Err(Error::arg(format!("minimum distance must satisfy 1 ≤ c ≤ l, got c = {c}, l = {l}")));
    }
    let off = l as f64 - c as f64;
    let values = DMatrix::from_fn(k, k, |i, j| if i == j { l as f64 } else { off });
    CorrectionPolicy::from_matrix(values, l)
}

/// `‖D − XXᵀ‖²`.
pub fn objective(d: &DesignMatrix, x: &DMatrix<f64>) -> Result<f64> {
    check_shapes(d, x)?;
    Ok(linalg::frobenius_sq(&(d.values() - linalg::gram(x))))
}

/// `Σ_{i≠j} (dᵢⱼ − xⁱ·xʲ)²`.
pub fn off_diagonal_objective(d: &DesignMatrix, x: &DMatrix<f64>) -> Result<f64> {
    check_shapes(d, x)?;
    Ok(off_diagonal_residual(d.values(), &linalg::gram(x)))
}

fn off_diagonal_residual(d: &DMatrix<f64>, gram: &DMatrix<f64>) -> f64 {
    let k = d.nrows();
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let r = d[(i, j)] - gram[(i, j)];
                s += r * r;
            }
        }
    }
    s
}

fn check_shapes(d: &DesignMatrix, x: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != d.classes() {
        return Err(Error::dim(format!(
            "factor has {} rows, design has {} classes",
            x.nrows(),
            d.classes()
        )));
    }
    Ok(())
}

fn without_row(x: &DMatrix<f64>, i: usize) -> DMatrix<f64> {
    x.clone().remove_row(i)
}

fn row_subproblem(d: &DesignMatrix, p: &CorrectionPolicy, x: &DMatrix<f64>, i: usize) -> Result<ConstrainedLsProblem> {
    let k = d.classes();
    let l = x.ncols();
    let others = without_row(x, i);
    let b = DVector::from_iterator(k - 1, (0..k).filter(|&j| j != i).map(|j| d.values()[(j, i)]));
    let h = DVector::from_iterator(k - 1, (0..k).filter(|&j| j != i).map(|j| p.get(i, j)));
    ConstrainedLsProblem::new(
        others.clone(),
        b,
        others,
        h,
        DVector::from_element(l, -1.0),
        DVector::from_element(l, 1.0),
    )
}

fn check_inputs(d: &DesignMatrix, p: &CorrectionPolicy, x: &DMatrix<f64>, i: usize) -> Result<()> {
    check_shapes(d, x)?;
    if p.classes() != d.classes() {
        return Err(Error::dim(format!(
            "policy has {} classes, design has {}",
            p.classes(),
            d.classes()
        )));
    }
    if i >= d.classes() {
        return Err(Error::arg(format!("row {i} out of range")));
    }
    if d.classes() < 2 {
        return Err(Error::arg("factorization needs at least two classes"));
    }
    Ok(())
}

/// The exact minimizer of `‖X′x − d‖²` over `−1 ≤ x ≤ 1`, `X′x ≤ p`, where
/// `X′` is `X` without row `i` and `d`, `p` are column `i` of `D` and `P`
/// without entry `i`.
pub fn update_row(d: &DesignMatrix, p: &CorrectionPolicy, x: &DMatrix<f64>, i: usize) -> Result<DVector<f64>> {
    update_row_with(d, p, x, i, &SolverOptions::default()).map(|s| s.x)
}

fn update_row_with(
    d: &DesignMatrix,
    p: &CorrectionPolicy,
    x: &DMatrix<f64>,
    i: usize,
    opts: &SolverOptions,
) -> Result<crate::solver::LsSolution> {
    check_inputs(d, p, x, i)?;
    let problem = row_subproblem(d, p, x, i)?;
    let sol = solve_box_lin_ls(&problem, opts);
    match sol.status {
        SolveStatus::Optimal => Ok(sol),
        SolveStatus::Infeasible => Err(Error::InfeasibleRow { row: i }),
        SolveStatus::IterationLimit => Err(Error::SolverStalled {
            row: i,
            residual: sol.kkt_residual,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateOrder {
    /// Rows `0, 1, …, k−1` in every cycle.
    Cyclic,
    /// `k` rows drawn uniformly with replacement per pass.
    Random,
}

#[derive(Debug, Clone, Copy)]
pub struct EcfOptions {
    pub seed: u64,
    pub max_cycles: usize,
    /// Stop once a full cycle lowers the objective by less than this fraction.
    pub rel_tol: f64,
    pub order: UpdateOrder,
    pub solver: SolverOptions,
}

impl Default for EcfOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_cycles: 100,
            rel_tol: 1e-8,
            order: UpdateOrder::Cyclic,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FactorizationResult {
    pub coding: CodingMatrix,
    /// Relaxed factor, `k × l` with entries in `[−1, 1]`.
    pub relaxed: DMatrix<f64>,
    /// Off-diagonal objective at the feasible starting point.
    pub initial_objective: f64,
    /// Off-diagonal objective after each completed cycle.
    pub objective_trace: Vec<f64>,
    /// Off-diagonal objective after every row update, starting with the
    /// initial value.
    pub update_trace: Vec<f64>,
    pub relaxed_objective: f64,
    /// `‖D − XXᵀ‖²` of the final coding matrix.
    pub discrete_objective: f64,
    pub threshold: f64,
    /// Columns the discretized matrix had before deduplication.
    pub columns_before_dedup: usize,
    pub cycles: usize,
    pub converged: bool,
    pub validation: ValidationReport,
}

/// Rows drawn uniformly from `[−1,1]^l`, each made to satisfy the policy
/// against the earlier rows: first by negation, then by projection onto the
/// feasible set.
fn feasible_start<R: Rng>(p: &CorrectionPolicy, k: usize, l: usize, rng: &mut R, opts: &SolverOptions) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::<f64>::zeros(k, l);
    for i in 0..k {
        let mut row = DVector::from_fn(l, |_, _| rng.random_range(-1.0..=1.0));
        let fits = |r: &DVector<f64>, x: &DMatrix<f64>| {
            (0..i).all(|j| x.row(j).transpose().dot(r) <= p.get(i, j) + opts.feas_tol)
        };
        if !fits(&row, &x) {
            let neg = -&row;
            if fits(&neg, &x) {
                row = neg;
            } else {
                let earlier = x.rows(0, i).into_owned();
                let h = DVector::from_iterator(i, (0..i).map(|j| p.get(i, j)));
                let problem = ConstrainedLsProblem::new(
                    DMatrix::identity(l, l),
                    row.clone(),
                    earlier,
                    h,
                    DVector::from_element(l, -1.0),
                    DVector::from_element(l, 1.0),
                )?;
                let sol = solve_box_lin_ls(&problem, opts);
                match sol.status {
                    SolveStatus::Optimal => row = sol.x,
                    SolveStatus::Infeasible => return Err(Error::InfeasibleRow { row: i }),
                    SolveStatus::IterationLimit => {
                        return Err(Error::SolverStalled {
                            row: i,
                            residual: sol.kkt_residual,
                        })
                    }
                }
            }
        }
        x.set_row(i, &row.transpose());
    }
    Ok(x)
}

/// Block coordinate descent on the relaxation, followed by [`discretize`] and
/// [`dedup_columns`].
pub fn factorize(d: &DesignMatrix, p: &CorrectionPolicy, l: usize, opts: &EcfOptions) -> Result<FactorizationResult> {
    let k = d.classes();
    if k < 2 {
        return Err(Error::arg("factorization needs at least two classes"));
    }
    if l == 0 {
        return Err(Error::arg("code length must be at least 1"));
    }
    if l < usize::BITS as usize && (1usize << l) < k {
        return Err(Error::arg(format!("{k} distinct codewords need l ≥ log₂ {k}, got {l}")));
    }
    if p.classes() != k {
        return Err(Error::dim(format!("policy has {} classes, design has {k}", p.classes())));
    }
    if p.scale() != l {
        return Err(Error::arg(format!("policy is for length {}, factorizing with l = {l}", p.scale())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x = feasible_start(p, k, l, &mut rng, &opts.solver)?;
    let initial_objective = off_diagonal_objective(d, &x)?;

    let mut update_trace = vec![initial_objective];
    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut prev = initial_objective;
    let mut cycles = 0;
    while cycles < opts.max_cycles {
        for step in 0..k {
            let i = match opts.order {
                UpdateOrder::Cyclic => step,
                UpdateOrder::Random => rng.random_range(0..k),
            };
            let sol = update_row_with(d, p, &x, i, &opts.solver)?;
            x.set_row(i, &sol.x.transpose());
            update_trace.push(off_diagonal_objective(d, &x)?);
        }
        cycles += 1;
        let cur = *update_trace.last().expect("trace is non-empty");
        objective_trace.push(cur);
        if cur <= 0.0 || prev - cur <= opts.rel_tol * prev {
            converged = true;
            break;
        }
        prev = cur;
    }

    let relaxed_objective = off_diagonal_objective(d, &x)?;
    let (discrete, threshold) = discretize(&x, d, relaxed_objective)?;
    let columns_before_dedup = discrete.length();
    // Equal rows after thresholding are reported through `validation`.
    let coding = drop_redundant_columns(&discrete)?;
    let discrete_objective = objective(d, &coding.to_f64())?;
    let validation = validate_coding(&coding, p)?;

    Ok(FactorizationResult {
        coding,
        relaxed: x,
        initial_objective,
        objective_trace,
        update_trace,
        relaxed_objective,
        discrete_objective,
        threshold,
        columns_before_dedup,
        cycles,
        converged,
        validation,
    })
}

pub const THRESHOLD_COUNT: usize = 1000;

pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (0..THRESHOLD_COUNT).map(|m| -1.0 + 2.0 * m as f64 / (THRESHOLD_COUNT - 1) as f64)
}

/// Thresholds the relaxed factor at the grid point `t` whose discrete
/// objective is closest to `relaxed_objective`; entries `≥ t` become `+1`.
/// Ties go to the smallest `t`. Objectives are compared off the diagonal.
pub fn discretize(relaxed: &DMatrix<f64>, d: &DesignMatrix, relaxed_objective: f64) -> Result<(CodingMatrix, f64)> {
    check_shapes(d, relaxed)?;
    if relaxed.iter().any(|v| !(-1.0..=1.0).contains(v)) {
        return Err(Error::arg("relaxed factor entries must lie in [-1, 1]"));
    }
    let mut best: Option<(f64, f64, CodingMatrix)> = None;
    let mut last: Option<CodingMatrix> = None;
    let mut last_gap = f64::INFINITY;
    for t in threshold_grid() {
        let cand = CodingMatrix::from_threshold(relaxed, t)?;
        // Neighbouring thresholds often give the same matrix.
        let gap = if last.as_ref() == Some(&cand) {
            last_gap
        } else {
            let g = (relaxed_objective - off_diagonal_residual(d.values(), &linalg::gram(&cand.to_f64()))).abs();
            last = Some(cand.clone());
            last_gap = g;
            g
        };
        if best.as_ref().is_none_or(|(b, _, _)| gap < *b) {
            best = Some((gap, t, cand));
        }
    }
    let (_, t, x) = best.expect("grid is non-empty");
    Ok((x, t))
}

/// Drops every column equal to, or the negation of, an earlier kept column.
/// Errors if `x` has equal rows, which no column selection could fix.
pub fn dedup_columns(x: &CodingMatrix) -> Result<CodingMatrix> {
    if let Some((i, j)) = x.duplicate_row() {
        return Err(Error::DuplicateRows(i, j));
    }
    drop_redundant_columns(x)
}

fn drop_redundant_columns(x: &CodingMatrix) -> Result<CodingMatrix> {
    let mut seen: HashSet<Vec<i8>> = HashSet::new();
    let mut keep = Vec::new();
    for j in 0..x.length() {
        let col = x.column(j);
        // Canonical sign: first entry +1.
        let canon: Vec<i8> = if col[0] < 0 { col.iter().map(|v| -v).collect() } else { col };
        if seen.insert(canon) {
            keep.push(j);
        }
    }
    x.select_columns(&keep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorDecomposition {
    pub total: f64,
    pub optimization_error: f64,
    pub discretization_error: f64,
    pub cross_term: f64,
}

/// Splits `‖X*X*ᵀ − D‖²` around a known binary Gramian `D^B`:
/// `‖X*X*ᵀ − D^B‖² + ‖D − D^B‖² − 2 Tr((X*X*ᵀ − D^B)(D − D^B))`.
pub fn error_decomposition(result: &FactorizationResult, d: &DesignMatrix, d_b: &DesignMatrix) -> Result<ErrorDecomposition> {
    decompose(&result.relaxed, d, d_b)
}

pub(crate) fn decompose(relaxed: &DMatrix<f64>, d: &DesignMatrix, d_b: &DesignMatrix) -> Result<ErrorDecomposition> {
    check_shapes(d, relaxed)?;
    if d_b.classes() != d.classes() {
        return Err(Error::dim("binary gramian and design differ in size"));
    }
    let gram = linalg::gram(relaxed);
    let opt = &gram - d_b.values();
    let disc = d.values() - d_b.values();
    Ok(ErrorDecomposition {
        total: linalg::frobenius_sq(&(&gram - d.values())),
        optimization_error: linalg::frobenius_sq(&opt),
        discretization_error: linalg::frobenius_sq(&disc),
        cross_term: -2.0 * opt.component_mul(&disc).sum(),
    })
}
