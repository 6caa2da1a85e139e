//! Independent reference computations used by the integration and acceptance
//! tests. Nothing in here calls into the library's numerical routines.
#![allow(dead_code)]

/// Dense row-major matrix for the oracles.
#[derive(Clone, Debug)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|r| dot(self.row(r), x)).collect()
    }

    pub fn t_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c] += self.at(r, c) * y[r];
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest eigenvalue of `AᵀA` by power iteration.
pub fn lipschitz(a: &Mat) -> f64 {
    let mut v = vec![1.0; a.cols];
    let mut lambda = 0.0;
    for _ in 0..2000 {
        let w = a.t_mul_vec(&a.mul_vec(&v));
        let norm = dot(&w, &w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm / dot(&v, &v).sqrt();
        v = w.iter().map(|x| x / norm).collect();
    }
    lambda
}

/// Euclidean projection onto `{lower ≤ x ≤ upper} ∩ {g x ≤ h}` by Dykstra's
/// alternating bound-clip / half-space projections.
pub fn project(x: &[f64], g: &Mat, h: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    let n = x.len();
    let sets = g.rows + 1;
    let mut incr = vec![vec![0.0; n]; sets];
    let mut cur = x.to_vec();
    for _ in 0..2000 {
        let prev = cur.clone();
        let mut incr_change = 0.0_f64;
        for s in 0..sets {
            let y: Vec<f64> = cur.iter().zip(&incr[s]).map(|(c, i)| c + i).collect();
            let next: Vec<f64> = if s == 0 {
                y.iter()
                    .enumerate()
                    .map(|(j, v)| v.clamp(lower[j], upper[j]))
                    .collect()
            } else {
                let row = g.row(s - 1);
                let nn = dot(row, row);
                let viol = dot(row, &y) - h[s - 1];
                if viol > 0.0 && nn > 0.0 {
                    y.iter().zip(row).map(|(v, r)| v - viol / nn * r).collect()
                } else {
                    y.clone()
                }
            };
            let fresh: Vec<f64> = y.iter().zip(&next).map(|(a, b)| a - b).collect();
            incr_change = fresh
                .iter()
                .zip(&incr[s])
                .map(|(a, b)| (a - b).abs())
                .fold(incr_change, f64::max);
            incr[s] = fresh;
            cur = next;
        }
        let change: f64 = cur.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // Dykstra's iterate can stall while the correction terms still move.
        if change < 1e-14 && incr_change < 1e-14 {
            break;
        }
    }
    cur
}

/// Projected gradient on `½‖Ax − b‖²` with step `1/L`. Returns `(x, ‖Ax − b‖²)`.
pub fn projected_gradient(
    a: &Mat,
    b: &[f64],
    g: &Mat,
    h: &[f64],
    lower: &[f64],
    upper: &[f64],
    iters: usize,
) -> (Vec<f64>, f64) {
    let l = lipschitz(a).max(1e-12);
    let mut x = project(&vec![0.0; a.cols], g, h, lower, upper);
    for _ in 0..iters {
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(p, q)| p - q).collect();
        let grad = a.t_mul_vec(&r);
        let step: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi - gi / l).collect();
        let next = project(&step, g, h, lower, upper);
        let moved: f64 = next.iter().zip(&x).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        x = next;
        if moved < 1e-15 {
            break;
        }
    }
    let r: Vec<f64> = a.mul_vec(&x).iter().zip(b).map(|(p, q)| p - q).collect();
    (x, dot(&r, &r))
}

/// Matrix rank by Gaussian elimination with partial pivoting.
pub fn gaussian_rank(m: &Mat, tol: f64) -> usize {
    let mut a = m.data.clone();
    let (rows, cols) = (m.rows, m.cols);
    let mut rank = 0;
    for c in 0..cols {
        if rank == rows {
            break;
        }
        let (piv, val) = (rank..rows)
            .map(|r| (r, a[r * cols + c].abs()))
            .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= tol {
            continue;
        }
        for k in 0..cols {
            a.swap(rank * cols + k, piv * cols + k);
        }
        for r in (rank + 1)..rows {
            let f = a[r * cols + c] / a[rank * cols + c];
            for k in c..cols {
                a[r * cols + k] -= f * a[rank * cols + k];
            }
        }
        rank += 1;
    }
    rank
}

/// Hamming distance between two ±1 rows, counted position by position.
pub fn disagreements(a: &[i8], b: &[i8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Nearest codeword by exhaustive scan; ties go to the lowest index.
pub fn nearest_row(rows: &[Vec<i8>], y: &[i8]) -> usize {
    let mut best = (usize::MAX, 0);
    for (i, r) in rows.iter().enumerate() {
        let d = disagreements(r, y);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Minimum weighted linear loss by exhaustive scan; ties go to the lowest index.
pub fn weighted_nearest_row(rows: &[Vec<i8>], weights: &[Vec<f64>], y: &[i8]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, r) in rows.iter().enumerate() {
        let loss: f64 = r
            .iter()
            .zip(y)
            .zip(&weights[i])
            .map(|((a, b), w)| if a != b { *w } else { 0.0 })
            .sum();
        if loss < best.0 {
            best = (loss, i);
        }
    }
    best.1
}

/// All ±1 vectors of length `l`, in binary counting order.
pub fn all_codewords(l: usize) -> Vec<Vec<i8>> {
    (0..(1usize << l))
        .map(|bits| (0..l).map(|j| if bits >> j & 1 == 1 { 1 } else { -1 }).collect())
        .collect()
}

/// All subsets of `0..n` with at most `max` elements.
pub fn subsets_up_to(n: usize, max: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max {
        let mut next = Vec::new();
        for s in &frontier {
            let start = s.last().map_or(0, |v: &usize| v + 1);
            for j in start..n {
                let mut t = s.clone();
                t.push(j);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}
