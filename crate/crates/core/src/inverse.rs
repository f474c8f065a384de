//! Recovery of `(D, r, b)` from two clusters of eigenvalues.
//!
//! For `k_1 != k_2` the difference of the two characteristic polynomials is
//! `(1/(2k_1-1)^2 - 1/(2k_2-1)^2) l^2 prod_j (l + r_j)`, which yields the
//! rates. The weights then follow from `P^k(-r_i) = -b_i prod_{j != i}(r_j - r_i)`
//! and `D` from the value at zero.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::charpoly::{ModeIndex, PolynomialCoeffs};
use crate::dd::{self, Dd};
use crate::error::{Error, Result};
use crate::model::PronyModel;
use crate::rootfinder::{cluster_roots, matching_distance, oracle_roots, SpectralCluster};

/// Conjugate partners must agree to `CLOSURE_TOL * max(1, |z|)`.
pub const CLOSURE_TOL: f64 = 1e-12;
/// Default bound on the two lowest coefficients of the scaled difference.
pub const DIVISION_TOL: f64 = 1e-9;
/// Recovered rates whose imaginary part stays below this (relative) are real.
const REAL_RATE_TOL: f64 = 1e-8;

fn is_real(z: Complex64) -> bool {
    z.im.abs() <= CLOSURE_TOL * z.norm().max(1.0)
}

/// The `N + 2` observed roots of one cluster, in any order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawObservation", into = "RawObservation")]
pub struct ClusterObservation {
    k: ModeIndex,
    roots: Vec<Complex64>,
}

#[derive(Serialize, Deserialize)]
struct RawObservation {
    k: u32,
    roots: Vec<[f64; 2]>,
}

impl TryFrom<RawObservation> for ClusterObservation {
    type Error = Error;
    fn try_from(raw: RawObservation) -> Result<Self> {
        let roots = raw
            .roots
            .into_iter()
            .map(|[re, im]| Complex64::new(re, im))
            .collect();
        ClusterObservation::new(ModeIndex::new(raw.k)?, roots)
    }
}

impl From<ClusterObservation> for RawObservation {
    fn from(obs: ClusterObservation) -> Self {
        RawObservation {
            k: obs.k.get(),
            roots: obs.roots.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl ClusterObservation {
    pub fn new(k: ModeIndex, roots: Vec<Complex64>) -> Result<Self> {
        real_factors(&roots)?;
        Ok(ClusterObservation { k, roots })
    }

    pub fn from_cluster(cluster: &SpectralCluster) -> Self {
        ClusterObservation {
            k: cluster.k,
            roots: cluster.all_roots(),
        }
    }

    pub fn k(&self) -> ModeIndex {
        self.k
    }

    pub fn roots(&self) -> &[Complex64] {
        &self.roots
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("observation serializes")
    }
}

/// A real linear or quadratic factor, monic.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Factor {
    Linear(f64),
    Quadratic(Complex64),
}

impl Factor {
    fn coeffs(self) -> Vec<Dd> {
        match self {
            Factor::Linear(x) => vec![Dd::from(-x), Dd::ONE],
            Factor::Quadratic(z) => {
                let norm = Dd::from(z.re) * Dd::from(z.re) + Dd::from(z.im) * Dd::from(z.im);
                vec![norm, Dd::from(-2.0 * z.re), Dd::ONE]
            }
        }
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            Factor::Linear(a) => x - a,
            Factor::Quadratic(z) => (x - z.re) * (x - z.re) + z.im * z.im,
        }
    }
}

/// Splits the roots into real factors in a canonical order, so the result
/// does not depend on the input order.
fn real_factors(roots: &[Complex64]) -> Result<Vec<Factor>> {
    let mut sorted = roots.to_vec();
    sorted.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let mut used = vec![false; sorted.len()];
    let mut factors = Vec::with_capacity(sorted.len());
    for i in 0..sorted.len() {
        if used[i] {
            continue;
        }
        let z = sorted[i];
        used[i] = true;
        if is_real(z) {
            factors.push(Factor::Linear(z.re));
            continue;
        }
        let tol = CLOSURE_TOL * z.norm().max(1.0);
        let partner = (0..sorted.len())
            .filter(|&j| !used[j] && (sorted[j] - z.conj()).norm() <= tol)
            .min_by(|&a, &b| {
                (sorted[a] - z.conj())
                    .norm()
                    .total_cmp(&(sorted[b] - z.conj()).norm())
            });
        let Some(j) = partner else {
            let index = roots.iter().position(|w| *w == z).unwrap_or(i);
            return Err(Error::ConjugateClosure { index });
        };
        used[j] = true;
        let (upper, lower) = if z.im > 0.0 { (z, sorted[j]) } else { (sorted[j], z) };
        factors.push(Factor::Quadratic(0.5 * (upper + lower.conj())));
    }
    Ok(factors)
}

fn expand(factors: &[Factor], leading: f64) -> Vec<Dd> {
    let lead = [Dd::from(leading)];
    factors
        .iter()
        .fold(lead.to_vec(), |acc, f| dd::poly_mul(&acc, &f.coeffs()))
}

/// `leading * prod (l - z_i)` as a real polynomial. Conjugate pairs are
/// combined into real quadratics before expansion.
pub fn poly_from_roots(roots: &[Complex64], leading: f64) -> Result<PolynomialCoeffs> {
    PolynomialCoeffs::from_dd(&expand(&real_factors(roots)?, leading))
}

/// `leading * prod (x - z_i)` evaluated factor by factor.
fn product_value(factors: &[Factor], leading: f64, x: f64) -> f64 {
    factors.iter().fold(leading, |acc, f| acc * f.eval(x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    /// Largest accepted `max(|d_0|, |d_1|) / max_i |d_i|` of the scaled difference.
    pub division_tol: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        RecoveryOptions {
            division_tol: DIVISION_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryDiagnostics {
    /// `max(|d_0|, |d_1|) / max_i |d_i|` of the scaled difference.
    pub division_residual: f64,
    /// `|d_{N+2} - 1|`: the scaled difference should be monic.
    pub leading_residual: f64,
    /// Backward error of each `-r_i` as a root of `prod (l + r_j)`.
    pub r_residuals: Vec<f64>,
    /// `|b_i(P^{k_1}) - b_i(P^{k_2})| / b_i`.
    pub b_residuals: Vec<f64>,
    /// `|D(P^{k_1}) - D(P^{k_2})| / D`.
    pub d_consistency: f64,
    /// Matching distance between each observed cluster and the forward
    /// clusters of the recovered model, relative to `max(1, r_N)`; `None`
    /// when the forward problem fails.
    pub reconstruction: [Option<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveredModel {
    pub model: PronyModel,
    #[serde(rename = "D")]
    pub d: f64,
    pub k: [ModeIndex; 2],
    pub diagnostics: RecoveryDiagnostics,
}

pub fn recover_model(obs1: &ClusterObservation, obs2: &ClusterObservation) -> Result<RecoveredModel> {
    recover_model_with(obs1, obs2, &RecoveryOptions::default())
}

pub fn recover_model_with(
    obs1: &ClusterObservation,
    obs2: &ClusterObservation,
    options: &RecoveryOptions,
) -> Result<RecoveredModel> {
    if obs1.k == obs2.k {
        return Err(Error::DegeneratePair(obs1.k.get()));
    }
    let (len1, len2) = (obs1.roots.len(), obs2.roots.len());
    if len1 != len2 || len1 < 3 {
        return Err(Error::ClusterShape {
            first: len1,
            second: len2,
        });
    }
    let n = len1 - 2;
    // b and D are evaluated on the larger k, the smaller one cross-checks.
    let (lo, hi) = if obs1.k < obs2.k { (obs1, obs2) } else { (obs2, obs1) };
    let lead_lo = lo.k.inv_wavenumber_sq();
    let lead_hi = hi.k.inv_wavenumber_sq();
    let f_lo = real_factors(&lo.roots)?;
    let f_hi = real_factors(&hi.roots)?;
    let p_lo = expand(&f_lo, lead_lo);
    let p_hi = expand(&f_hi, lead_hi);

    let scale = (Dd::recip(lo.k.wavenumber().powi(2)) - Dd::recip(hi.k.wavenumber().powi(2))).to_f64();
    let inv = Dd::recip(scale);
    let diff: Vec<Dd> = p_lo.iter().zip(&p_hi).map(|(&a, &b)| (a - b) * inv).collect();
    let largest = diff.iter().map(|d| d.to_f64().abs()).fold(0.0, f64::max);
    let division_residual = diff[0].to_f64().abs().max(diff[1].to_f64().abs()) / largest;
    if !(division_residual <= options.division_tol) {
        return Err(Error::InconsistentClusters {
            residual: division_residual,
            tolerance: options.division_tol,
        });
    }
    let leading_residual = (diff[n + 2].to_f64() - 1.0).abs();

    let monic = PolynomialCoeffs::from_dd(&diff[2..])?;
    let zeros = oracle_roots(&monic)?;
    let mut rates = Vec::with_capacity(n);
    for z in &zeros {
        if z.im.abs() > REAL_RATE_TOL * z.norm().max(1.0) {
            return Err(Error::InvalidRecovery(format!(
                "rate polynomial has a complex root {z}"
            )));
        }
        rates.push(-z.re);
    }
    rates.sort_by(f64::total_cmp);
    let r_residuals = rates
        .iter()
        .map(|&r| {
            let x = Complex64::new(-r, 0.0);
            monic.eval_compensated(x).norm() / monic.magnitude_at(r.abs())
        })
        .collect();

    let weights_from = |factors: &[Factor], lead: f64| -> Vec<f64> {
        rates
            .iter()
            .enumerate()
            .map(|(i, &ri)| {
                let others: f64 = rates
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, &rj)| rj - ri)
                    .product();
                -product_value(factors, lead, -ri) / others
            })
            .collect()
    };
    let weights = weights_from(&f_hi, lead_hi);
    let weights_lo = weights_from(&f_lo, lead_lo);
    let b_residuals = weights
        .iter()
        .zip(&weights_lo)
        .map(|(a, b)| (a - b).abs() / a.abs())
        .collect();

    let pull: f64 = weights.iter().zip(&rates).map(|(b, r)| b / r).sum();
    let rate_product: f64 = rates.iter().product();
    let d = product_value(&f_hi, lead_hi, 0.0) / rate_product + pull;
    let pull_lo: f64 = weights_lo.iter().zip(&rates).map(|(b, r)| b / r).sum();
    let d_lo = product_value(&f_lo, lead_lo, 0.0) / rate_product + pull_lo;

    let model = PronyModel::new(rates, weights, d)
        .map_err(|e| Error::InvalidRecovery(e.to_string()))?;

    let scale_r = model.max_rate().max(1.0);
    let reconstruction = [lo, hi].map(|obs| {
        cluster_roots(&model, obs.k)
            .ok()
            .and_then(|c| matching_distance(&c.all_roots(), &obs.roots))
            .map(|dist| dist / scale_r)
    });
    let reconstruction = if obs1.k < obs2.k {
        reconstruction
    } else {
        [reconstruction[1], reconstruction[0]]
    };

    Ok(RecoveredModel {
        d,
        k: [obs1.k, obs2.k],
        diagnostics: RecoveryDiagnostics {
            division_residual,
            leading_residual,
            r_residuals,
            b_residuals,
            d_consistency: (d - d_lo).abs() / d.abs(),
            reconstruction,
        },
        model,
    })
}

/// Largest relative parameter errors of one recovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParameterErrors {
    pub r: f64,
    pub b: f64,
    #[serde(rename = "D")]
    pub d: f64,
}

impl ParameterErrors {
    pub fn between(truth: &PronyModel, recovered: &PronyModel) -> Self {
        let rel = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs() / x.abs())
                .fold(0.0, f64::max)
        };
        ParameterErrors {
            r: rel(truth.rates(), recovered.rates()),
            b: rel(truth.weights(), recovered.weights()),
            d: (truth.d() - recovered.d()).abs() / truth.d(),
        }
    }

    pub fn max(&self) -> f64 {
        self.r.max(self.b).max(self.d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: u64,
    pub errors: Option<ParameterErrors>,
    /// Error kind when the recovery failed.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationStudy {
    pub noise: f64,
    pub seed: u64,
    pub k: [ModeIndex; 2],
    pub division_tol: f64,
    pub trials: Vec<TrialOutcome>,
    pub failures: usize,
    /// Worst errors over the successful trials.
    pub worst: Option<ParameterErrors>,
}

/// Multiplies each real root by `1 + noise u` and each conjugate pair by
/// `1 + noise (u + i v)` (and its conjugate), with `u, v` uniform on `[-1, 1]`.
fn perturb(roots: &[Complex64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let factors = real_factors(roots).expect("forward clusters are conjugate closed");
    let mut out = Vec::with_capacity(roots.len());
    for f in factors {
        match f {
            Factor::Linear(x) => {
                let u: f64 = rng.gen_range(-1.0..=1.0);
                out.push(Complex64::new(x * (1.0 + noise * u), 0.0));
            }
            Factor::Quadratic(z) => {
                let u: f64 = rng.gen_range(-1.0..=1.0);
                let v: f64 = rng.gen_range(-1.0..=1.0);
                let w = z * Complex64::new(1.0 + noise * u, noise * v);
                out.push(w);
                out.push(w.conj());
            }
        }
    }
    out
}

/// Recovers the model from `trials` independently perturbed copies of the
/// clusters at `k1`, `k2`. Trial `t` draws from stream `t` of a ChaCha8
/// generator seeded with `seed`, so results do not depend on scheduling.
pub fn perturbation_study(
    model: &PronyModel,
    k1: ModeIndex,
    k2: ModeIndex,
    noise: f64,
    trials: u64,
    seed: u64,
) -> Result<PerturbationStudy> {
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidTolerance(noise));
    }
    let c1 = cluster_roots(model, k1)?.all_roots();
    let c2 = cluster_roots(model, k2)?.all_roots();
    let options = RecoveryOptions {
        division_tol: DIVISION_TOL.max(100.0 * noise),
    };
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let o1 = ClusterObservation {
                k: k1,
                roots: perturb(&c1, noise, &mut rng),
            };
            let o2 = ClusterObservation {
                k: k2,
                roots: perturb(&c2, noise, &mut rng),
            };
            match recover_model_with(&o1, &o2, &options) {
                Ok(rec) => TrialOutcome {
                    trial,
                    errors: Some(ParameterErrors::between(model, &rec.model)),
                    failure: None,
                },
                Err(e) => TrialOutcome {
                    trial,
                    errors: None,
                    failure: Some(e.kind().to_string()),
                },
            }
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.errors.is_none()).count();
    let worst = outcomes
        .iter()
        .filter_map(|o| o.errors)
        .reduce(|a, b| ParameterErrors {
            r: a.r.max(b.r),
            b: a.b.max(b.b),
            d: a.d.max(b.d),
        });
    Ok(PerturbationStudy {
        noise,
        seed,
        k: [k1, k2],
        division_tol: options.division_tol,
        trials: outcomes,
        failures,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn k(k: u32) -> ModeIndex {
        ModeIndex::new(k).unwrap()
    }

    fn observe(model: &PronyModel, kk: u32) -> ClusterObservation {
        ClusterObservation::from_cluster(&cluster_roots(model, k(kk)).unwrap())
    }

    #[test]
    fn trivial_polynomials() {
        assert_eq!(poly_from_roots(&[c(-1.0, 0.0)], 1.0).unwrap().coeffs(), &[1.0, 1.0]);
        assert_eq!(
            poly_from_roots(&[c(0.0, 1.0), c(0.0, -1.0)], 1.0).unwrap().coeffs(),
            &[1.0, 0.0, 1.0]
        );
    }

    #[test]
    fn toy_cubic_from_roots() {
        let toy = PronyModel::new(vec![1.0], vec![1.0], 2.0).unwrap();
        let obs = observe(&toy, 1);
        let p = poly_from_roots(obs.roots(), 1.0).unwrap();
        for (got, want) in p.coeffs().iter().zip([1.0, 2.0, 1.0, 1.0]) {
            assert!((got - want).abs() < 1e-12, "{:?}", p.coeffs());
        }
    }

    #[test]
    fn open_conjugate_rejected() {
        let err = poly_from_roots(&[c(0.0, 1.0), c(0.0, -1.1)], 1.0).unwrap_err();
        assert!(matches!(err, Error::ConjugateClosure { .. }));
    }

    #[test]
    fn two_term_round_trip() {
        let m = PronyModel::new(vec![5.0, 10.0], vec![2.5, 5.0], 1.0).unwrap();
        let rec = recover_model(&observe(&m, 1), &observe(&m, 2)).unwrap();
        assert!(ParameterErrors::between(&m, &rec.model).max() < 1e-8);
        assert!(rec.diagnostics.division_residual < 1e-9);
        assert!(rec.diagnostics.reconstruction.iter().all(|d| d.unwrap() < 1e-9));
    }

    #[test]
    fn toy_round_trip() {
        let m = PronyModel::new(vec![1.0], vec![1.0], 2.0).unwrap();
        let rec = recover_model(&observe(&m, 1), &observe(&m, 3)).unwrap();
        assert_relative_eq!(rec.model.rates()[0], 1.0, max_relative = 1e-10);
        assert_relative_eq!(rec.model.weights()[0], 1.0, max_relative = 1e-10);
        assert_relative_eq!(rec.d, 2.0, max_relative = 1e-10);
    }

    #[test]
    fn same_k_is_degenerate() {
        let m = PronyModel::new(vec![1.0], vec![1.0], 2.0).unwrap();
        let o = observe(&m, 2);
        assert!(matches!(recover_model(&o, &o), Err(Error::DegeneratePair(2))));
    }

    #[test]
    fn observation_json_round_trip() {
        let m = PronyModel::new(vec![1.0], vec![1.0], 2.0).unwrap();
        let o = observe(&m, 1);
        let back = ClusterObservation::from_json(&o.to_json()).unwrap();
        assert_eq!(back, o);
        let bad = r#"{"k": 1, "roots": [[0.0, 1.0], [0.0, -1.5], [1.0, 0.0]]}"#;
        assert!(ClusterObservation::from_json(bad).is_err());
    }

    #[test]
    fn noiseless_study_is_exact() {
        let m = PronyModel::new(vec![5.0, 10.0], vec![2.5, 5.0], 1.0).unwrap();
        let s = perturbation_study(&m, k(1), k(2), 0.0, 4, 7).unwrap();
        assert_eq!(s.failures, 0);
        assert!(s.worst.unwrap().max() < 1e-8);
    }

    #[test]
    fn study_is_reproducible() {
        let m = PronyModel::new(vec![5.0, 10.0], vec![2.5, 5.0], 1.0).unwrap();
        let a = perturbation_study(&m, k(1), k(2), 1e-6, 8, 42).unwrap();
        let b = perturbation_study(&m, k(1), k(2), 1e-6, 8, 42).unwrap();
        assert_eq!(a, b);
    }
}
