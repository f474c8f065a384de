//! Roots of `P_N` and `P_N^k`.
//!
//! The real roots are isolated between consecutive poles `-r_j` of the secular
//! function, bisected there, and polished with a few Newton steps on the
//! product form. The two extra roots of `P_N^k` come from deflating the
//! monomial form by the `N` real roots and solving the remaining quadratic.

mod matrix;
mod oracle;

pub use matrix::{eigen_residual, reduced_eigenvector, reduced_matrix, ReducedMatrix};
pub use oracle::{oracle_roots, ORACLE_MAX_ITER, ORACLE_TOL};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charpoly::{poly_scale, 
    eval_derivative, eval_poly, expand_coefficients, scaled_residual, secular_unchecked,
    ModeIndex, PolynomialCoeffs,
};
use crate::error::{Error, Result};
use crate::model::PronyModel;

/// Bracket endpoints sit `BRACKET_INSET * gap` away from the poles.
pub const BRACKET_INSET: f64 = 1e-10;
/// Bisection stops once the bracket is narrower than `BISECTION_WIDTH * r_N`.
pub const BISECTION_WIDTH: f64 = 1e-14;
pub const NEWTON_STEPS: usize = 5;
/// Largest scaled remainder accepted while deflating the real roots.
pub const DEFLATION_TOL: f64 = 1e-8;
/// Relative discriminant below which the extra pair is flagged as borderline.
pub const BORDERLINE_DISCRIMINANT: f64 = 1e-10;

/// The `N` simple real roots of `P_N`, strictly decreasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitSpectrum {
    pub roots: Vec<f64>,
}

impl LimitSpectrum {
    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

/// The two roots of `P_N^k` beyond the interlaced real ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExtraPair {
    /// `p +- i q` with `q > 0`.
    Complex { p: f64, q: f64, borderline: bool },
    /// Two extra real roots, `upper >= lower`.
    Real { upper: f64, lower: f64 },
}

impl ExtraPair {
    pub fn sum(&self) -> f64 {
        match *self {
            ExtraPair::Complex { p, .. } => 2.0 * p,
            ExtraPair::Real { upper, lower } => upper + lower,
        }
    }

    /// `p` for a complex pair, the midpoint for a real one.
    pub fn center(&self) -> f64 {
        0.5 * self.sum()
    }

    pub fn is_complex(&self) -> bool {
        matches!(self, ExtraPair::Complex { .. })
    }

    pub fn roots(&self) -> [Complex64; 2] {
        match *self {
            ExtraPair::Complex { p, q, .. } => [Complex64::new(p, q), Complex64::new(p, -q)],
            ExtraPair::Real { upper, lower } => {
                [Complex64::new(upper, 0.0), Complex64::new(lower, 0.0)]
            }
        }
    }
}

/// All `N + 2` roots of `P_N^k` for one mode index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCluster {
    pub k: ModeIndex,
    /// `a_1^k > a_2^k > ... > a_N^k`, one per pole gap.
    pub real_roots: Vec<f64>,
    pub extra: ExtraPair,
    /// Largest scaled remainder seen while deflating.
    pub deflation_residual: f64,
}

impl SpectralCluster {
    pub fn all_roots(&self) -> Vec<Complex64> {
        let mut out: Vec<Complex64> = self
            .real_roots
            .iter()
            .map(|&a| Complex64::new(a, 0.0))
            .collect();
        out.extend(self.extra.roots());
        out
    }

    /// Sum of all `N + 2` roots.
    pub fn trace(&self) -> f64 {
        self.real_roots.iter().sum::<f64>() + self.extra.sum()
    }
}

/// Lower and upper pole of bracket `j` (0-based) plus the inset used there.
struct Bracket {
    pole_below: f64,
    pole_above: Option<f64>,
    inset: f64,
}

fn bracket(model: &PronyModel, j: usize) -> Bracket {
    let r = model.rates();
    let gap = if j == 0 { r[0] } else { r[j] - r[j - 1] };
    Bracket {
        pole_below: -r[j],
        pole_above: (j > 0).then(|| -r[j - 1]),
        inset: BRACKET_INSET * gap,
    }
}

/// Upper search limit for `a_1`: `max(0, N B / D) + 1`.
pub fn limit_upper_bound(model: &PronyModel) -> f64 {
    let b_max = model.weights().iter().copied().fold(0.0, f64::max);
    f64::max(0.0, model.n() as f64 * b_max / model.d()) + 1.0
}

/// Bisection on an increasing sign pattern `f(lo) < 0 < f(hi)`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, width: f64) -> (f64, f64, f64) {
    for _ in 0..200 {
        if hi - lo <= width {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v < 0.0 {
            lo = mid;
        } else if v > 0.0 {
            hi = mid;
        } else {
            return (mid, mid, mid);
        }
    }
    (0.5 * (lo + hi), lo, hi)
}

/// Newton steps on the product form, kept inside `[lo, hi]` and only while `|P|` drops.
fn polish(model: &PronyModel, k: Option<ModeIndex>, mut x: f64, lo: f64, hi: f64) -> f64 {
    let mut value: f64 = eval_poly(model, k, x);
    for _ in 0..NEWTON_STEPS {
        if value == 0.0 {
            break;
        }
        let slope: f64 = eval_derivative(model, x, k);
        if slope == 0.0 || !slope.is_finite() {
            break;
        }
        let next = x - value / slope;
        if !(next >= lo && next <= hi) || next == x {
            break;
        }
        let next_value: f64 = eval_poly(model, k, next);
        if next_value.abs() >= value.abs() {
            break;
        }
        x = next;
        value = next_value;
    }
    x
}

/// Solves `f(l) = 0` on `(lo, hi)` where `f` is the secular function with
/// `quad = 1/(2k-1)^2` (or zero), then polishes on the polynomial.
fn solve_in(
    model: &PronyModel,
    k: Option<ModeIndex>,
    j: usize,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let quad = k.map_or(0.0, ModeIndex::inv_wavenumber_sq);
    let f = |x: f64| secular_unchecked(model, x, quad);
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(Error::BracketFailure {
            bracket: j + 1,
            lo,
            hi,
            f_lo,
            f_hi,
        });
    }
    let width = BISECTION_WIDTH * model.max_rate();
    let (x, a, b) = bisect(f, lo, hi, width);
    let pad = (b - a).max(width);
    Ok(polish(model, k, x, (a - pad).max(lo), (b + pad).min(hi)))
}

/// The `N` real roots of the limit polynomial `P_N`.
pub fn limit_roots(model: &PronyModel) -> Result<LimitSpectrum> {
    let upper = limit_upper_bound(model);
    let roots = (0..model.n())
        .map(|j| {
            let br = bracket(model, j);
            let lo = br.pole_below + br.inset;
            let hi = br.pole_above.map_or(upper, |p| p - br.inset);
            solve_in(model, None, j, lo, hi)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitSpectrum { roots })
}

pub fn cluster_roots(model: &PronyModel, k: ModeIndex) -> Result<SpectralCluster> {
    cluster_roots_with(model, &limit_roots(model)?, k)
}

/// Clusters for many `k`, computed in parallel and returned in input order.
pub fn clusters(model: &PronyModel, ks: &[ModeIndex]) -> Result<Vec<SpectralCluster>> {
    let limit = limit_roots(model)?;
    ks.par_iter()
        .map(|&k| cluster_roots_with(model, &limit, k))
        .collect()
}

/// Upper end for the search of `a_j^k`: just above `a_j`, since `a_j^k <= a_j`.
fn cluster_upper(model: &PronyModel, limit: &LimitSpectrum, j: usize) -> f64 {
    let br = bracket(model, j);
    let a = limit.roots[j];
    let lifted = a + 1e-8 * a.abs().max(1.0);
    match br.pole_above {
        Some(p) => lifted.min(p - br.inset),
        None => lifted,
    }
}

fn bracket_of(model: &PronyModel, limit: &LimitSpectrum, x: f64) -> Option<usize> {
    (0..model.n()).find(|&j| {
        let br = bracket(model, j);
        x > br.pole_below && x <= cluster_upper(model, limit, j)
    })
}

/// Roots of `P_N^k`, reusing a precomputed limit spectrum.
///
/// `a_j^k` is the largest root of `f_P^k` in the `j`-th pole gap. For small `k`
/// a gap may hold three roots; the other two are then reported as a real
/// extra pair.
pub fn cluster_roots_with(
    model: &PronyModel,
    limit: &LimitSpectrum,
    k: ModeIndex,
) -> Result<SpectralCluster> {
    let n = model.n();
    let mut real = Vec::with_capacity(n);
    for j in 0..n {
        let br = bracket(model, j);
        let lo = br.pole_below + br.inset;
        real.push(solve_in(model, Some(k), j, lo, cluster_upper(model, limit, j))?);
    }

    let coeffs = expand_coefficients(model, Some(k));
    let (mut extra, mut residual) = extra_pair(model, &coeffs, &real, k)?;

    // A real extra root above the designated one in the same gap takes its place.
    for _ in 0..2 {
        let ExtraPair::Real { upper, lower } = extra else { break };
        let mut changed = false;
        for e in [upper, lower] {
            let Some(j) = bracket_of(model, limit, e) else { continue };
            if e <= real[j] {
                continue;
            }
            let mut in_gap: Vec<f64> = [real[j], upper, lower]
                .into_iter()
                .filter(|&x| bracket_of(model, limit, x) == Some(j))
                .collect();
            in_gap.sort_by(|a, b| b.total_cmp(a));
            let lo = 0.5 * (in_gap[0] + in_gap[1]);
            let hi = cluster_upper(model, limit, j);
            real[j] = match solve_in(model, Some(k), j, lo, hi) {
                Ok(x) => x,
                Err(_) => polish(model, Some(k), in_gap[0], lo, hi),
            };
            changed = true;
            break;
        }
        if !changed {
            break;
        }
        (extra, residual) = extra_pair(model, &coeffs, &real, k)?;
    }

    Ok(SpectralCluster {
        k,
        real_roots: real,
        extra: polish_pair(model, k, extra),
        deflation_residual: residual,
    })
}

/// Deflates the real roots (smallest magnitude first) and solves the quadratic left over.
fn extra_pair(
    model: &PronyModel,
    coeffs: &PolynomialCoeffs,
    real: &[f64],
    k: ModeIndex,
) -> Result<(ExtraPair, f64)> {
    let mut order: Vec<f64> = real.to_vec();
    order.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
    let mut current = coeffs.clone();
    let mut worst: f64 = 0.0;
    for (step, &x) in order.iter().enumerate() {
        let (quotient, remainder) = current.deflate(x);
        // The deflated polynomial is P / prod (l - x_prev); its rounding scale
        // follows from the product form, which stays meaningful near l = 0.
        let removed: f64 = order[..step].iter().map(|&y| (x - y).abs()).product();
        let scale = (poly_scale(model, Some(k), Complex64::new(x, 0.0)) / removed)
            .max(current.magnitude_at(x.abs()));
        let residual = if scale > 0.0 && scale.is_finite() {
            remainder.abs() / scale
        } else {
            0.0
        };
        worst = worst.max(residual);
        if residual > DEFLATION_TOL {
            return Err(Error::DeflationResidual {
                k: k.get(),
                root: x,
                residual,
                tolerance: DEFLATION_TOL,
            });
        }
        current = PolynomialCoeffs::new(quotient)?;
    }
    let q = current.coeffs();
    let (c0, c1, c2) = (q[0], q[1], q[2]);
    let disc = c1 * c1 - 4.0 * c2 * c0;
    let scale = c1 * c1 + (4.0 * c2 * c0).abs();
    let p = -c1 / (2.0 * c2);
    let pair = if disc.abs() <= BORDERLINE_DISCRIMINANT * scale {
        let q = ((-disc).max(0.0).sqrt() / (2.0 * c2.abs())).max(f64::MIN_POSITIVE);
        ExtraPair::Complex {
            p,
            q,
            borderline: true,
        }
    } else if disc < 0.0 {
        ExtraPair::Complex {
            p,
            q: (-disc).sqrt() / (2.0 * c2.abs()),
            borderline: false,
        }
    } else {
        let t = -0.5 * (c1 + c1.signum() * disc.sqrt());
        let (x1, x2) = if t == 0.0 { (0.0, 0.0) } else { (t / c2, c0 / t) };
        ExtraPair::Real {
            upper: x1.max(x2),
            lower: x1.min(x2),
        }
    };
    Ok((pair, worst))
}

/// Newton steps on the product form for a root obtained by deflation. Steps
/// larger than `1e-6 |z|` are refused so the root cannot jump to a neighbour.
fn polish_complex(model: &PronyModel, k: ModeIndex, mut z: Complex64) -> Complex64 {
    let k = Some(k);
    let limit = 1e-6 * z.norm().max(1.0);
    let start = z;
    let mut value: Complex64 = eval_poly(model, k, z);
    for _ in 0..NEWTON_STEPS {
        let slope: Complex64 = eval_derivative(model, z, k);
        let next = z - value / slope;
        if !next.is_finite() || (next - start).norm() > limit || next == z {
            break;
        }
        let next_value: Complex64 = eval_poly(model, k, next);
        if next_value.norm() >= value.norm() {
            break;
        }
        z = next;
        value = next_value;
    }
    z
}

fn polish_pair(model: &PronyModel, k: ModeIndex, pair: ExtraPair) -> ExtraPair {
    match pair {
        ExtraPair::Complex { p, q, borderline } if !borderline => {
            let z = polish_complex(model, k, Complex64::new(p, q));
            ExtraPair::Complex {
                p: z.re,
                q: z.im.abs(),
                borderline,
            }
        }
        ExtraPair::Real { upper, lower } if upper != lower => {
            let upper = polish_complex(model, k, Complex64::new(upper, 0.0)).re;
            let lower = polish_complex(model, k, Complex64::new(lower, 0.0)).re;
            ExtraPair::Real {
                upper: upper.max(lower),
                lower: upper.min(lower),
            }
        }
        other => other,
    }
}

/// Scaled residual `|P(l)| / scale(l)` of every root in the cluster.
pub fn cluster_residuals(model: &PronyModel, cluster: &SpectralCluster) -> Vec<f64> {
    cluster
        .all_roots()
        .into_iter()
        .map(|z| scaled_residual(model, Some(cluster.k), z))
        .collect()
}

/// Bottleneck distance between two root multisets: the smallest `d` such that
/// a perfect matching exists using only pairs at distance `<= d`.
///
/// Returns `None` when the sizes differ.
pub fn matching_distance(a: &[Complex64], b: &[Complex64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    if a.is_empty() {
        return Some(0.0);
    }
    let n = a.len();
    let dist: Vec<Vec<f64>> = a
        .iter()
        .map(|x| b.iter().map(|y| (x - y).norm()).collect())
        .collect();
    let mut candidates: Vec<f64> = dist.iter().flatten().copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let perfect = |limit: f64| {
        let mut owner: Vec<Option<usize>> = vec![None; n];
        fn augment(
            i: usize,
            limit: f64,
            dist: &[Vec<f64>],
            seen: &mut [bool],
            owner: &mut [Option<usize>],
        ) -> bool {
            for j in 0..dist.len() {
                if dist[i][j] <= limit && !seen[j] {
                    seen[j] = true;
                    if owner[j].is_none_or(|o| augment(o, limit, dist, seen, owner)) {
                        owner[j] = Some(i);
                        return true;
                    }
                }
            }
            false
        }
        (0..n).all(|i| augment(i, limit, &dist, &mut vec![false; n], &mut owner))
    };

    let (mut lo, mut hi) = (0, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if perfect(candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(candidates[lo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy() -> PronyModel {
        PronyModel::new(vec![1.0], vec![1.0], 2.0).unwrap()
    }

    fn two_term() -> PronyModel {
        PronyModel::new(vec![5.0, 10.0], vec![2.5, 5.0], 1.0).unwrap()
    }

    fn k(k: u32) -> ModeIndex {
        ModeIndex::new(k).unwrap()
    }

    #[test]
    fn limit_roots_small_models() {
        let a = limit_roots(&two_term()).unwrap();
        assert_abs_diff_eq!(a.roots[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(a.roots[1], -7.5, epsilon = 1e-12);
        let a = limit_roots(&toy()).unwrap();
        assert_abs_diff_eq!(a.roots[0], -0.5, epsilon = 1e-15);
    }

    #[test]
    fn toy_cluster_matches_cubic() {
        // l^3 + l^2 + 2 l + 1: values from the high-precision cubic oracle in tests/
        let c = cluster_roots(&toy(), k(1)).unwrap();
        assert_abs_diff_eq!(c.real_roots[0], -0.569_840_290_998_053_3, epsilon = 1e-12);
        match c.extra {
            ExtraPair::Complex { p, q, borderline } => {
                assert!(!borderline);
                assert_abs_diff_eq!(p, -0.215_079_854_500_973_4, epsilon = 1e-12);
                assert_abs_diff_eq!(q, 1.307_141_278_682_045_5, epsilon = 1e-12);
            }
            other => panic!("expected complex pair, got {other:?}"),
        }
    }

    #[test]
    fn quasi_static_root_is_k_independent() {
        for kk in 1..30 {
            let c = cluster_roots(&two_term(), k(kk)).unwrap();
            assert_abs_diff_eq!(c.real_roots[0], 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn real_extra_pair_is_relabelled() {
        // N=1, D=0.5, r=5, b=5: at k=1 all three roots are real and lie above -5
        let m = PronyModel::new(vec![5.0], vec![5.0], 0.5).unwrap();
        let c = cluster_roots(&m, k(1)).unwrap();
        let ExtraPair::Real { upper, lower } = c.extra else {
            panic!("expected a real extra pair")
        };
        assert!(c.real_roots[0] > upper && upper > lower && lower > -5.0);
        assert_abs_diff_eq!(c.real_roots[0], 0.623_765_94, epsilon = 1e-7);
    }

    #[test]
    fn bisect_orientation() {
        let (x, _, _) = bisect(|x| x - 0.3, 0.0, 1.0, 1e-15);
        assert_abs_diff_eq!(x, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn matching_distance_basics() {
        let a = [Complex64::new(1.0, 0.0), Complex64::new(-2.0, 1.0)];
        let b = [Complex64::new(-2.0, 1.1), Complex64::new(1.05, 0.0)];
        assert_abs_diff_eq!(matching_distance(&a, &b).unwrap(), 0.1, epsilon = 1e-12);
        assert!(matching_distance(&a, &b[..1]).is_none());
        assert_eq!(matching_distance(&[], &[]), Some(0.0));
    }
}
