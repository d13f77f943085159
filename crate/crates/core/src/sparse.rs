//! Symmetric positive-definite systems in skyline (variable band) storage.
//!
//! The Newton systems come from structured meshes numbered row by row, so the
//! envelope is a narrow band and a profile Cholesky factorization is the
//! natural direct solver.

use crate::error::{Error, Result};

/// Lower triangle of a symmetric matrix, row `i` stored from its first
/// structurally nonzero column `first[i]` up to the diagonal.
#[derive(Clone, Debug)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// Allocates a zero matrix whose envelope covers every `(i, j)` pair
    /// produced by `pairs`.
    pub fn with_pattern<I: IntoIterator<Item = (usize, usize)>>(size: usize, pairs: I) -> Self {
        let mut first: Vec<usize> = (0..size).collect();
        for (a, b) in pairs {
            let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
            first[hi] = first[hi].min(lo);
        }
        let mut offsets = Vec::with_capacity(size + 1);
        offsets.push(0);
        for i in 0..size {
            offsets.push(offsets[i] + (i - first[i] + 1));
        }
        let values = vec![0.0; offsets[size]];
        Self { first, offsets, values }
    }

    pub fn size(&self) -> usize {
        self.first.len()
    }

    pub fn stored_entries(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i], "entry ({i}, {j}) outside the envelope");
        self.offsets[i] + (j - self.first[i])
    }

    /// Adds `v` to entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let k = self.index(hi, lo);
        self.values[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if lo < self.first[hi] {
            0.0
        } else {
            self.values[self.index(hi, lo)]
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.size();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let row = &self.values[self.offsets[i]..self.offsets[i + 1]];
            let f = self.first[i];
            for (k, &a) in row.iter().enumerate() {
                let j = f + k;
                y[i] += a * x[j];
                if j != i {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// In-place profile Cholesky factorization `A = L L^T`.
    pub fn cholesky(&self) -> Result<SkylineCholesky> {
        let n = self.size();
        let mut l = self.values.clone();
        let first = &self.first;
        let offsets = &self.offsets;
        for i in 0..n {
            let fi = first[i];
            let oi = offsets[i];
            for j in fi..i {
                let fj = first[j];
                let oj = offsets[j];
                let start = fi.max(fj);
                let mut s = l[oi + (j - fi)];
                let (ri, rj) = (&l[oi + (start - fi)..oi + (j - fi)], &l[oj + (start - fj)..oj + (j - fj)]);
                s -= ri.iter().zip(rj).map(|(a, b)| a * b).sum::<f64>();
                let djj = l[oj + (j - fj)];
                l[oi + (j - fi)] = s / djj;
            }
            let row = &l[oi..oi + (i - fi)];
            let d = l[oi + (i - fi)] - row.iter().map(|a| a * a).sum::<f64>();
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::SingularHessian { row: i, pivot: d });
            }
            l[oi + (i - fi)] = d.sqrt();
        }
        Ok(SkylineCholesky { first: self.first.clone(), offsets: self.offsets.clone(), values: l })
    }
}

#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    first: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineCholesky {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.first.len();
        let mut y = b.to_vec();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offsets[i];
            let row = &self.values[oi..oi + (i - fi)];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / self.values[oi + (i - fi)];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offsets[i];
            y[i] /= self.values[oi + (i - fi)];
            let yi = y[i];
            for (k, a) in self.values[oi..oi + (i - fi)].iter().enumerate() {
                y[fi + k] -= a * yi;
            }
        }
        y
    }
}

/// Solves `A x = b` by Cholesky with iterative refinement until the relative
/// residual drops below `tol` (or refinement stops helping).
///
/// Returns the solution and its achieved relative residual.
pub fn solve_spd(a: &SkylineMatrix, b: &[f64], tol: f64) -> Result<(Vec<f64>, f64)> {
    let factor = a.cholesky()?;
    let bnorm = norm(b).max(f64::MIN_POSITIVE);
    let mut x = factor.solve(b);
    let mut rel = residual_norm(a, &x, b) / bnorm;
    for _ in 0..3 {
        if rel <= tol {
            break;
        }
        let r: Vec<f64> = b.iter().zip(a.mul_vec(&x)).map(|(bi, ai)| bi - ai).collect();
        let dx = factor.solve(&r);
        let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let trial_rel = residual_norm(a, &trial, b) / bnorm;
        if trial_rel >= rel {
            break;
        }
        x = trial;
        rel = trial_rel;
    }
    Ok((x, rel))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual_norm(a: &SkylineMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.mul_vec(x);
    ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn laplacian_1d(n: usize) -> SkylineMatrix {
        let mut a = SkylineMatrix::with_pattern(n, (1..n).map(|i| (i, i - 1)));
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        a
    }

    #[test]
    fn tridiagonal_solve() {
        let a = laplacian_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let (x, rel) = solve_spd(&a, &b, 1e-14).unwrap();
        assert!(rel < 1e-13);
        let ax = a.mul_vec(&x);
        for (p, q) in ax.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let mut a = laplacian_1d(4);
        a.add(2, 2, -5.0);
        assert!(matches!(a.cholesky(), Err(Error::SingularHessian { row: 2, .. })));
    }

    proptest! {
        #[test]
        fn matches_dense_solver(seed in 0u64..1000, n in 2usize..25, band in 1usize..6) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut dense = DMatrix::<f64>::zeros(n, n);
            let mut pairs = Vec::new();
            for i in 0..n {
                for j in i.saturating_sub(band)..i {
                    if rng.gen_bool(0.6) {
                        let v: f64 = rng.gen_range(-1.0..1.0);
                        dense[(i, j)] = v;
                        dense[(j, i)] = v;
                        pairs.push((i, j));
                    }
                }
            }
            // Diagonal dominance makes the matrix SPD.
            for i in 0..n {
                let s: f64 = dense.row(i).iter().map(|v| v.abs()).sum();
                dense[(i, i)] = s + 1.0;
            }
            let mut a = SkylineMatrix::with_pattern(n, pairs.iter().copied());
            for i in 0..n {
                for j in 0..=i {
                    if dense[(i, j)] != 0.0 {
                        a.add(i, j, dense[(i, j)]);
                    }
                }
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (x, _) = solve_spd(&a, &b, 1e-14).unwrap();
            let reference = dense.cholesky().unwrap().solve(&DVector::from_column_slice(&b));
            for i in 0..n {
                prop_assert!((x[i] - reference[i]).abs() < 1e-10);
            }
        }
    }
}
