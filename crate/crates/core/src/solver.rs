//! Least squares with box and linear inequality constraints.
//!
//! Solves
//!
//! ```text
//! minimize    ‖A x − b‖²
//! subject to  lower ≤ x ≤ upper
//!             G x ≤ h
//! ```
//!
//! with a primal active-set method on the (ridge-regularized) normal equations.
//! A feasible starting point comes from a phase-1 linear program that minimizes
//! the total violation of `G x ≤ h` over the box; the zero vector is used
//! directly whenever it is already feasible.
//!
//! Constraints are indexed as: upper bounds `0..n`, lower bounds `n..2n`, then
//! the rows of `G`. The working set starts empty. When the step is zero the
//! constraint with the most negative multiplier leaves the working set, and the
//! first blocking constraint along a step enters it; ties are always resolved by
//! the smallest constraint index.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `minimize ‖a x − b‖²` over `lower ≤ x ≤ upper`, `g x ≤ h`.
#[derive(Debug, Clone)]
pub struct ConstrainedLsProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ConstrainedLsProblem {
    pub fn new(
        a: DMatrix<f64>,
        b: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let n = a.ncols();
        if a.nrows() != b.len() {
            return Err(Error::dim(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        if g.ncols() != n {
            return Err(Error::dim(format!("G has {} columns, expected {n}", g.ncols())));
        }
        if g.nrows() != h.len() {
            return Err(Error::dim(format!(
                "G has {} rows but h has {} entries",
                g.nrows(),
                h.len()
            )));
        }
        if lower.len() != n || upper.len() != n {
            return Err(Error::dim(format!("bounds must have {n} entries")));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::arg("lower bound exceeds upper bound"));
        }
        let all_finite = a.iter().chain(b.iter()).chain(g.iter()).chain(h.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::arg("problem data must be finite"));
        }
        Ok(Self { a, b, g, h, lower, upper })
    }

    /// Problem with box constraints only.
    pub fn with_box(a: DMatrix<f64>, b: DVector<f64>, lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let n = a.ncols();
        Self::new(a, b, DMatrix::zeros(0, n), DVector::zeros(0), lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).norm_squared()
    }

    /// Largest violation over all constraints (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0_f64;
        for j in 0..x.len() {
            worst = worst.max(x[j] - self.upper[j]).max(self.lower[j] - x[j]);
        }
        if self.g.nrows() > 0 {
            let gx = &self.g * x;
            for r in 0..gx.len() {
                worst = worst.max(gx[r] - self.h[r]);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct LsSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub kkt_tol: f64,
    /// Defaults to `200 · n` when `None`.
    pub max_iter: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            kkt_tol: 1e-6,
            max_iter: None,
        }
    }
}

/// Stacked constraint rows `c_i · x ≤ rhs_i`.
struct ConstraintSet {
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
    n: usize,
}

impl ConstraintSet {
    fn from_problem(p: &ConstrainedLsProblem) -> Self {
        let n = p.dim();
        let q = p.g.nrows();
        let mut rows = DMatrix::zeros(2 * n + q, n);
        let mut rhs = DVector::zeros(2 * n + q);
        for j in 0..n {
            rows[(j, j)] = 1.0;
            rhs[j] = p.upper[j];
            rows[(n + j, j)] = -1.0;
            rhs[n + j] = -p.lower[j];
        }
        for r in 0..q {
            rows.row_mut(2 * n + r).copy_from(&p.g.row(r));
            rhs[2 * n + r] = p.h[r];
        }
        Self { rows, rhs, n }
    }

    fn len(&self) -> usize {
        self.rhs.len()
    }

    /// Whether row `i` lies (to 1e-9 relative) in the span of the rows in `set`.
    fn in_span(&self, i: usize, set: &[usize]) -> bool {
        if set.is_empty() {
            return false;
        }
        let c = self.rows.row(i).transpose();
        let norm = c.norm();
        if norm == 0.0 {
            return true;
        }
        let basis = DMatrix::from_fn(self.n, set.len(), |r, s| self.rows[(set[s], r)]);
        let q = basis.qr().q();
        let resid = &c - &q * (q.transpose() * &c);
        resid.norm() <= 1e-9 * norm
    }

    fn row_dot(&self, i: usize, v: &DVector<f64>) -> f64 {
        if i < self.n {
            v[i]
        } else if i < 2 * self.n {
            -v[i - self.n]
        } else {
            self.rows.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum()
        }
    }
}

/// Minimize `‖Ax − b‖²` subject to the box and `Gx ≤ h`.
///
/// Infeasibility and the iteration cap are reported through
/// [`LsSolution::status`] rather than as errors.
pub fn solve_box_lin_ls(problem: &ConstrainedLsProblem, opts: &SolverOptions) -> LsSolution {
    let n = problem.dim();
    let max_iter = opts.max_iter.unwrap_or(200 * n.max(1));

    let x0 = match initial_point(problem, opts.feas_tol) {
        Ok(x) => x,
        Err(violation) => {
            let x = problem.lower.zip_map(&problem.upper, |l, u| 0.0_f64.clamp(l, u));
            return LsSolution {
                objective: problem.objective(&x),
                x,
                kkt_residual: violation,
                status: SolveStatus::Infeasible,
                iterations: 0,
            };
        }
    };
    if n == 0 {
        return LsSolution {
            objective: problem.b.norm_squared(),
            x: x0,
            kkt_residual: 0.0,
            status: SolveStatus::Optimal,
            iterations: 0,
        };
    }

    let ata = problem.a.transpose() * &problem.a;
    let atb = problem.a.transpose() * &problem.b;
    let mut ridge = 1e-12 * ata.trace() / n as f64;
    if ridge <= 0.0 {
        ridge = 1e-12;
    }
    let mut q = ata.clone();
    for j in 0..n {
        q[(j, j)] += ridge;
    }
    let lin = -&atb;

    let cons = ConstraintSet::from_problem(problem);
    let fscale = 1.0 + problem.b.norm_squared();
    let gscale = 1.0 + lin.amax() + q.amax();
    let drop_tol = 1e-10 * gscale;

    let mut x = x0;
    let mut working: Vec<usize> = Vec::new();
    let mut multipliers: Vec<f64> = Vec::new();
    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0;

    while iterations < max_iter {
        iterations += 1;
        let grad = &q * &x + &lin;
        let Some((p, mu)) = solve_eqp(&q, &grad, &cons, &working) else {
            break;
        };
        multipliers = mu;

        let decrease = -(grad.dot(&p) + 0.5 * p.dot(&(&q * &p)));
        let negligible = p.amax() <= 1e-14 * (1.0 + x.amax()) || decrease <= 1e-15 * fscale;
        if negligible {
            let mut leave: Option<(usize, f64)> = None;
            for (slot, (&idx, &m)) in working.iter().zip(multipliers.iter()).enumerate() {
                if m < -drop_tol {
                    let better = match leave {
                        None => true,
                        Some((s, best)) => m < best || (m == best && idx < working[s]),
                    };
                    if better {
                        leave = Some((slot, m));
                    }
                }
            }
            match leave {
                None => {
                    status = SolveStatus::Optimal;
                    break;
                }
                Some((slot, _)) => {
                    working.remove(slot);
                    multipliers.remove(slot);
                }
            }
            continue;
        }

        let pscale = p.amax();
        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..cons.len() {
            if working.contains(&i) {
                continue;
            }
            let ap = cons.row_dot(i, &p);
            if ap > 1e-13 * pscale {
                let slack = (cons.rhs[i] - cons.row_dot(i, &x)).max(0.0);
                let t = slack / ap;
                // A row in the span of the working rows is orthogonal to `p` in
                // exact arithmetic; it only blocks through round-off and would
                // make the working set singular.
                if t < alpha && !cons.in_span(i, &working) {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        x += alpha * &p;
        if let Some(i) = blocking {
            if i < n {
                x[i] = problem.upper[i];
            } else if i < 2 * n {
                x[i - n] = problem.lower[i - n];
            }
            working.push(i);
        }
    }

    // Keep the iterate inside the box exactly; the active bounds are already exact.
    for j in 0..n {
        x[j] = x[j].clamp(problem.lower[j], problem.upper[j]);
    }

    let mut lambda = vec![0.0; cons.len()];
    if multipliers.len() == working.len() {
        for (&idx, &m) in working.iter().zip(multipliers.iter()) {
            lambda[idx] = m;
        }
    }
    let kkt_residual = kkt_residual(&ata, &atb, &cons, &x, &lambda);
    LsSolution {
        objective: problem.objective(&x),
        x,
        kkt_residual,
        status,
        iterations,
    }
}

/// Equality-constrained step: `min ½pᵀQp + gᵀp` with `c_i·p = 0` for `i ∈ W`.
/// Returns the step and the multipliers of the working constraints.
///
/// Null-space method: the step is built in an orthonormal basis of the
/// working rows' null space, so it satisfies the working constraints exactly
/// and only the reduced Hessian is factorized. Nearly dependent working rows
/// then affect the multipliers but not the step.
fn solve_eqp(
    q: &DMatrix<f64>,
    grad: &DVector<f64>,
    cons: &ConstraintSet,
    working: &[usize],
) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = q.nrows();
    let w = working.len();
    if w == 0 {
        let p = q.clone().cholesky()?.solve(&(-grad));
        return p.iter().all(|v| v.is_finite()).then_some((p, Vec::new()));
    }
    if w > n {
        return None;
    }
    let m = DMatrix::from_fn(n, w, |r, s| cons.rows[(working[s], r)]);
    let qr = m.qr();
    let q1 = qr.q();
    let r = qr.r();

    let null = if w == n {
        DMatrix::zeros(n, 0)
    } else {
        let proj = DMatrix::identity(n, n) - &q1 * q1.transpose();
        let eig = proj.symmetric_eigen();
        let keep: Vec<usize> = (0..n).filter(|&j| eig.eigenvalues[j] > 0.5).collect();
        DMatrix::from_fn(n, keep.len(), |i, c| eig.eigenvectors[(i, keep[c])])
    };
    let p = if null.ncols() == 0 {
        DVector::zeros(n)
    } else {
        let reduced = null.transpose() * q * &null;
        let pz = reduced.cholesky()?.solve(&(-(null.transpose() * grad)));
        &null * pz
    };

    // M μ = −(g + Qp), solved through the triangular factor.
    let resid = -(grad + q * &p);
    let mu = r.solve_upper_triangular(&(q1.transpose() * resid))?;
    if p.iter().chain(mu.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    Some((p, mu.iter().copied().collect()))
}

/// Max of stationarity, dual-feasibility and complementarity violations for
/// the un-halved objective `‖Ax − b‖²`.
fn kkt_residual(
    ata: &DMatrix<f64>,
    atb: &DVector<f64>,
    cons: &ConstraintSet,
    x: &DVector<f64>,
    lambda: &[f64],
) -> f64 {
    let mut stat = 2.0 * (ata * x - atb);
    let mut worst = 0.0_f64;
    for (i, &m) in lambda.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for j in 0..x.len() {
            stat[j] += 2.0 * m * cons.rows[(i, j)];
        }
        let slack = cons.rhs[i] - cons.row_dot(i, x);
        worst = worst.max((2.0 * m * slack).abs()).max(-2.0 * m);
    }
    worst.max(stat.amax())
}

/// Zero when it is feasible, otherwise the phase-1 LP solution. `Err` carries
/// the minimal total violation when the feasible set is empty.
fn initial_point(p: &ConstrainedLsProblem, feas_tol: f64) -> std::result::Result<DVector<f64>, f64> {
    let n = p.dim();
    let zero = DVector::zeros(n);
    if p.max_violation(&zero) <= 0.0 {
        return Ok(zero);
    }
    let (z, violation) = phase_one(p);
    let scale = 1.0 + p.h.amax().max(p.lower.amax()).max(p.upper.amax());
    if violation > feas_tol * scale {
        return Err(violation);
    }
    let mut x = &p.lower + z;
    for j in 0..n {
        x[j] = x[j].clamp(p.lower[j], p.upper[j]);
    }
    Ok(x)
}

/// Bounded phase-1 simplex (Bland's rule) in standard form.
///
/// With `x = lower + z`, `0 ≤ z ≤ upper − lower`:
///
/// ```text
/// minimize Σ s   s.t.  G z − s + w = h − G·lower,   z + v = upper − lower,   z, s, w, v ≥ 0
/// ```
///
/// Rows with a negative right-hand side are negated so that either `w_r` or
/// `s_r` forms an initial feasible basis. Returns `(z, Σ s)`.
fn phase_one(p: &ConstrainedLsProblem) -> (DVector<f64>, f64) {
    let n = p.dim();
    let q = p.g.nrows();
    let rows = q + n;
    let (z0, s0, w0, v0) = (0, n, n + q, n + 2 * q);
    let cols = n + 2 * q + n;
    let rhs_col = cols;

    let mut tab = vec![vec![0.0; cols + 1]; rows];
    let mut basis = vec![0usize; rows];
    let glow = &p.g * &p.lower;
    for r in 0..q {
        let res = p.h[r] - glow[r];
        let sign = if res >= 0.0 { 1.0 } else { -1.0 };
        for j in 0..n {
            tab[r][z0 + j] = sign * p.g[(r, j)];
        }
        tab[r][s0 + r] = -sign;
        tab[r][w0 + r] = sign;
        tab[r][rhs_col] = sign * res;
        basis[r] = if sign > 0.0 { w0 + r } else { s0 + r };
    }
    for j in 0..n {
        let r = q + j;
        tab[r][z0 + j] = 1.0;
        tab[r][v0 + j] = 1.0;
        tab[r][rhs_col] = p.upper[j] - p.lower[j];
        basis[r] = v0 + j;
    }

    let cost = |c: usize| if (s0..s0 + q).contains(&c) { 1.0 } else { 0.0 };
    let mut reduced = vec![0.0; cols + 1];
    for c in 0..=cols {
        reduced[c] = if c < cols { cost(c) } else { 0.0 };
    }
    for r in 0..rows {
        let cb = cost(basis[r]);
        if cb != 0.0 {
            for c in 0..=cols {
                reduced[c] -= cb * tab[r][c];
            }
        }
    }

    let eps = 1e-12;
    let cap = 50 * (rows + cols) + 100;
    for _ in 0..cap {
        let Some(enter) = (0..cols).find(|&c| reduced[c] < -eps) else {
            break;
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..rows {
            let a = tab[r][enter];
            if a > eps {
                let ratio = tab[r][rhs_col] / a;
                let better = match leave {
                    None => true,
                    Some((lr, best)) => ratio < best || (ratio == best && basis[r] < basis[lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        // Σ s is bounded below, so some row always limits the step.
        let Some((pr, _)) = leave else { break };
        let piv = tab[pr][enter];
        for c in 0..=cols {
            tab[pr][c] /= piv;
        }
        let pivot_row = tab[pr].clone();
        for (r, row) in tab.iter_mut().enumerate() {
            if r != pr {
                let f = row[enter];
                if f != 0.0 {
                    for c in 0..=cols {
                        row[c] -= f * pivot_row[c];
                    }
                }
            }
        }
        let f = reduced[enter];
        for c in 0..=cols {
            reduced[c] -= f * pivot_row[c];
        }
        basis[pr] = enter;
    }

    let mut z = DVector::zeros(n);
    let mut violation = 0.0;
    for r in 0..rows {
        let val = tab[r][rhs_col].max(0.0);
        let b = basis[r];
        if b < s0 {
            z[b - z0] = val;
        } else if b < w0 {
            violation += val;
        }
    }
    (z, violation)
}
