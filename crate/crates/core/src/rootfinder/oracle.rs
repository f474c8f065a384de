//! Aberth-Ehrlich simultaneous iteration on the monomial form.
//!
//! Shares nothing with the bracketed solver beyond the coefficient vector, so
//! agreement between the two is a meaningful check.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::charpoly::PolynomialCoeffs;
use crate::error::{Error, Result};

pub const ORACLE_MAX_ITER: usize = 500;
/// Largest accepted backward error `|P(z)| / sum_i |c_i| |z|^i`.
pub const ORACLE_TOL: f64 = 1e-10;
const REFINE_STEPS: usize = 3;

fn backward_error(p: &PolynomialCoeffs, z: Complex64) -> f64 {
    let scale = p.magnitude_at(z.norm());
    if scale == 0.0 {
        0.0
    } else {
        p.eval_compensated(z).norm() / scale
    }
}

/// Newton steps with the compensated value, to get past the Horner noise floor.
fn refine(p: &PolynomialCoeffs, mut z: Complex64) -> Complex64 {
    for _ in 0..REFINE_STEPS {
        let value = p.eval_compensated(z);
        let (_, slope) = p.eval_with_derivative(z);
        let step = value / slope;
        if !step.is_finite() || step.norm() <= f64::EPSILON * z.norm() {
            break;
        }
        z -= step;
    }
    z
}

/// Initial guesses on a circle around the root centroid, radius from the
/// Fujiwara bound of the shifted polynomial.
fn initial_guesses(p: &PolynomialCoeffs) -> Vec<Complex64> {
    let c = p.coeffs();
    let n = p.degree();
    let lead = p.leading();
    let center = -c[n - 1] / (n as f64 * lead);
    let radius = (0..n)
        .map(|i| {
            let ratio = (c[i] / lead).abs();
            let ratio = if i == 0 { ratio / 2.0 } else { ratio };
            ratio.powf(1.0 / (n - i) as f64)
        })
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE.sqrt());
    (0..n)
        .map(|j| {
            let angle = TAU * j as f64 / n as f64 + 0.4 + 0.01 * j as f64;
            Complex64::new(center, 0.0) + Complex64::from_polar(radius, angle)
        })
        .collect()
}

/// All roots of `p`, conjugate-symmetric for real coefficients.
pub fn oracle_roots(p: &PolynomialCoeffs) -> Result<Vec<Complex64>> {
    let n = p.degree();
    if n < 1 {
        return Err(Error::DegreeTooLow { degree: n, min: 1 });
    }
    if n == 1 {
        return Ok(vec![Complex64::new(-p.coeffs()[0] / p.leading(), 0.0)]);
    }

    let mut z = initial_guesses(p);
    let mut done = vec![false; n];
    let noise = 4.0 * n as f64 * f64::EPSILON;
    let mut iterations = 0;
    while iterations < ORACLE_MAX_ITER && done.iter().any(|d| !d) {
        iterations += 1;
        for i in 0..n {
            if done[i] {
                continue;
            }
            let (value, slope) = p.eval_with_derivative(z[i]);
            if value.norm() <= noise * p.magnitude_at(z[i].norm()) {
                done[i] = true;
                continue;
            }
            let newton = value / slope;
            let repulsion: Complex64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| (z[i] - z[j]).inv())
                .sum();
            let step = newton / (Complex64::new(1.0, 0.0) - newton * repulsion);
            if !step.is_finite() {
                continue;
            }
            z[i] -= step;
            if step.norm() <= f64::EPSILON * z[i].norm() {
                done[i] = true;
            }
        }
    }

    let roots = conjugate_symmetrize(z.into_iter().map(|w| refine(p, w)).collect());
    let worst = roots
        .iter()
        .map(|&r| backward_error(p, r))
        .fold(0.0, f64::max);
    if done.iter().any(|d| !d) || worst >= ORACLE_TOL {
        return Err(Error::NonConvergence {
            iterations,
            residual: worst,
        });
    }
    Ok(roots)
}

/// Pairs each upper-half-plane root with the nearest lower-half-plane root,
/// replaces both by an exact conjugate pair, and snaps leftovers to the real axis.
fn conjugate_symmetrize(mut z: Vec<Complex64>) -> Vec<Complex64> {
    let near_real = |w: Complex64| w.im.abs() <= 1e-10 * w.norm().max(1.0);
    let mut used = vec![false; z.len()];
    let mut upper: Vec<usize> = (0..z.len())
        .filter(|&i| z[i].im > 0.0 && !near_real(z[i]))
        .collect();
    upper.sort_by(|&a, &b| z[b].im.total_cmp(&z[a].im));
    for i in upper {
        let partner = (0..z.len())
            .filter(|&j| j != i && !used[j] && z[j].im < 0.0 && !near_real(z[j]))
            .min_by(|&a, &b| (z[a].conj() - z[i]).norm().total_cmp(&(z[b].conj() - z[i]).norm()));
        if let Some(j) = partner {
            let mean = 0.5 * (z[i] + z[j].conj());
            z[i] = mean;
            z[j] = mean.conj();
            used[i] = true;
            used[j] = true;
        }
    }
    for (i, w) in z.iter_mut().enumerate() {
        if !used[i] {
            w.im = 0.0;
        }
    }
    z.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    z
}
