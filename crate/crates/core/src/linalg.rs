//! Dense Cholesky factorization A = L·Lᵀ for symmetric positive-definite
//! matrices.
//!
//! The factor is held as U = Lᵀ in column-major order, so row i of L is the
//! contiguous slice u[0..=i, i] and every inner product in the
//! factorization and in forward substitution runs over contiguous memory.
//! Entries of magnitude below `FLUSH · √max(diag A)` are stored as zero;
//! this keeps nearly-diagonal kernels out of subnormal arithmetic, and the
//! resulting leading zeros of each column are skipped.

use nalgebra::{DMatrix, DVector};

/// Relative magnitude below which factor entries are set to zero.
pub const FLUSH: f64 = 1e-150;

#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    /// Upper-triangular Lᵀ; the strict lower triangle is zero.
    u: DMatrix<f64>,
    /// Index of the first non-zero entry of each column of u.
    first: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[8 * c..8 * c + 8], &b[8 * c..8 * c + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for k in 8 * chunks..a.len() {
        tail += a[k] * b[k];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Dot products of `x` with the first x.len() entries of four consecutive
/// columns of stride `stride` in `cols`.
fn dot4(x: &[f64], cols: &[f64], stride: usize) -> [f64; 4] {
    let m = x.len();
    let (c0, rest) = cols.split_at(stride);
    let (c1, rest) = rest.split_at(stride);
    let (c2, c3) = rest.split_at(stride);
    let (c0, c1, c2, c3) = (&c0[..m], &c1[..m], &c2[..m], &c3[..m]);
    let mut acc = [[0.0f64; 4]; 4];
    let chunks = m / 4;
    for c in 0..chunks {
        let k = 4 * c;
        let xv = [x[k], x[k + 1], x[k + 2], x[k + 3]];
        for (t, col) in [c0, c1, c2, c3].iter().enumerate() {
            for l in 0..4 {
                acc[t][l] += xv[l] * col[k + l];
            }
        }
    }
    let mut out = [0.0; 4];
    for (t, col) in [c0, c1, c2, c3].iter().enumerate() {
        let mut tail = 0.0;
        for k in 4 * chunks..m {
            tail += x[k] * col[k];
        }
        out[t] = (acc[t][0] + acc[t][2]) + (acc[t][1] + acc[t][3]) + tail;
    }
    out
}

/// Columns factored together; rows above a panel are streamed once per panel.
const PANEL: usize = 48;
/// Right-hand sides sharing one pass over the factor.
const RHS_BLOCK: usize = 32;

impl CholeskyFactor {
    /// Factors `a`, reading only its upper triangle. `None` when a pivot is
    /// not positive and finite.
    pub fn new(a: &DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return None;
        }
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
        let tiny = FLUSH * max_diag.sqrt();
        let mut u = DMatrix::<f64>::zeros(n, n);
        for j0 in (0..n).step_by(PANEL) {
            let j1 = (j0 + PANEL).min(n);
            // Rows above the panel: each column i is streamed once per panel.
            let (done, panel) = u.as_mut_slice().split_at_mut(j0 * n);
            for i in 0..j0 {
                let ci = &done[i * n..i * n + i];
                let pivot = done[i * n + i];
                let mut j = j0;
                while j < j1 {
                    let w = (j1 - j).min(4);
                    let mut s = [0.0; 4];
                    if w == 4 {
                        let base = (j - j0) * n;
                        s = dot4(ci, &panel[base..base + 4 * n], n);
                    } else {
                        for t in 0..w {
                            let base = (j + t - j0) * n;
                            s[t] = dot(ci, &panel[base..base + i]);
                        }
                    }
                    for t in 0..w {
                        let v = (a[(i, j + t)] - s[t]) / pivot;
                        panel[(j + t - j0) * n + i] = if v.abs() >= tiny { v } else { 0.0 };
                    }
                    j += w;
                }
            }
            // Inside the panel.
            for j in j0..j1 {
                for i in j0..j {
                    let data = u.as_slice();
                    let s = a[(i, j)] - dot(&data[i * n..i * n + i], &data[j * n..j * n + i]);
                    let v = s / data[i * n + i];
                    u[(i, j)] = if v.abs() >= tiny { v } else { 0.0 };
                }
                let col = &u.as_slice()[j * n..j * n + j];
                let s = a[(j, j)] - dot(col, col);
                if !(s > 0.0) || !s.is_finite() {
                    return None;
                }
                u[(j, j)] = s.sqrt();
            }
        }
        let first = (0..n)
            .map(|j| (0..j).find(|&i| u[(i, j)] != 0.0).unwrap_or(j))
            .collect();
        Some(Self { u, first })
    }

    fn column(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.u.as_slice()[i * n..(i + 1) * n]
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }

    /// The lower-triangular factor L.
    pub fn l(&self) -> DMatrix<f64> {
        self.u.transpose()
    }

    pub fn diagonal(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.dim()).map(|i| self.u[(i, i)])
    }

    /// ln det A = 2 Σ ln L_ii.
    pub fn ln_det(&self) -> f64 {
        2.0 * self.diagonal().map(f64::ln).sum::<f64>()
    }

    /// Solves L x = b in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        for i in 0..self.dim() {
            let f = self.first[i];
            let s = b[i] - dot(&self.column(i)[f..i], &b[f..i]);
            b[i] = s / self.u[(i, i)];
        }
    }

    /// Solves Lᵀ x = b in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        for i in (0..self.dim()).rev() {
            let xi = b[i] / self.u[(i, i)];
            b[i] = xi;
            let f = self.first[i];
            let col = &self.column(i)[f..i];
            for (bk, uk) in b[f..i].iter_mut().zip(col) {
                *bk -= xi * uk;
            }
        }
    }

    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_lower_in_place(x.as_mut_slice());
        x
    }

    /// Solves A x = b.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_lower_in_place(x.as_mut_slice());
        self.solve_upper_in_place(x.as_mut_slice());
        x
    }

    /// Solves L X = B, four right-hand sides at a time.
    pub fn solve_lower_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.dim();
        assert_eq!(b.nrows(), n, "right-hand side has the wrong number of rows");
        let mut x = b.clone();
        let m = x.ncols();
        let full = m / 4 * 4;
        let data = x.as_mut_slice();
        for c0 in (0..full).step_by(RHS_BLOCK) {
            let c1 = (c0 + RHS_BLOCK).min(full);
            for i in 0..n {
                let ui = &self.column(i)[..i];
                let pivot = self.u[(i, i)];
                for c in (c0..c1).step_by(4) {
                    let s = dot4(ui, &data[c * n..(c + 4) * n], n);
                    for t in 0..4 {
                        let k = (c + t) * n + i;
                        data[k] = (data[k] - s[t]) / pivot;
                    }
                }
            }
        }
        for c in full..m {
            self.solve_lower_in_place(&mut data[c * n..(c + 1) * n]);
        }
        x
    }
}
