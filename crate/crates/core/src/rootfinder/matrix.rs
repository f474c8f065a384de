//! The reduced `(N+2) x (N+2)` matrix `A^k` of the first-order system
//! `u' = v`, `v' = -D w^2 u - sum b_i w_i`, `w_i' = -w^2 u - r_i w_i`
//! with `w = 2k - 1`.

use num_complex::Complex64;
use serde::Serialize;

use crate::charpoly::{ModeIndex, POLE_TOL};
use crate::error::{Error, Result};
use crate::model::PronyModel;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReducedMatrix {
    dim: usize,
    /// Row-major entries.
    entries: Vec<f64>,
}

impl ReducedMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[row * self.dim + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.entries[row * self.dim..(row + 1) * self.dim]
    }

    pub fn apply(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.dim)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .filter(|(a, _)| **a != 0.0)
                    .map(|(&a, &v)| v * a)
                    .sum()
            })
            .collect()
    }
}

pub fn reduced_matrix(model: &PronyModel, k: ModeIndex) -> ReducedMatrix {
    let n = model.n();
    let dim = n + 2;
    let w2 = k.wavenumber().powi(2);
    let mut entries = vec![0.0; dim * dim];
    entries[1] = 1.0;
    entries[dim] = -model.d() * w2;
    for (i, &b) in model.weights().iter().enumerate() {
        entries[dim + 2 + i] = -b;
    }
    for (i, &r) in model.rates().iter().enumerate() {
        let row = 2 + i;
        entries[row * dim] = -w2;
        entries[row * dim + row] = -r;
    }
    ReducedMatrix { dim, entries }
}

/// `(1, l, -w^2/(l + r_1), ..., -w^2/(l + r_N))`.
pub fn reduced_eigenvector(model: &PronyModel, k: ModeIndex, lambda: Complex64) -> Result<Vec<Complex64>> {
    let w2 = k.wavenumber().powi(2);
    let mut u = Vec::with_capacity(model.n() + 2);
    u.push(Complex64::new(1.0, 0.0));
    u.push(lambda);
    for (i, &r) in model.rates().iter().enumerate() {
        let shifted = lambda + r;
        if shifted.norm() < POLE_TOL * r {
            return Err(Error::Pole {
                index: i,
                lambda: lambda.re,
                distance: shifted.norm(),
            });
        }
        u.push(-w2 / shifted);
    }
    Ok(u)
}

/// `||A U - l U||_inf / ||U||_inf` for the reduced eigenvector at `l`.
pub fn eigen_residual(model: &PronyModel, k: ModeIndex, lambda: Complex64) -> Result<f64> {
    let u = reduced_eigenvector(model, k, lambda)?;
    let au = reduced_matrix(model, k).apply(&u);
    let num = au
        .iter()
        .zip(&u)
        .map(|(a, x)| (a - lambda * x).norm())
        .fold(0.0, f64::max);
    let den = u.iter().map(|x| x.norm()).fold(0.0, f64::max);
    Ok(num / den)
}
