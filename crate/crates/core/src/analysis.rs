//! Convergence of the clusters to the limit spectrum, measured checks of the
//! spectral bounds, and the explicit `k_0` certificate.

use std::io::Write;

use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::charpoly::{eval_limit_poly, eval_secular, ModeIndex};
use crate::error::{Error, Result};
use crate::model::PronyModel;
use crate::rootfinder::{clusters, limit_roots, ExtraPair, LimitSpectrum, SpectralCluster};

/// Sample count per pole neighbourhood for the `|P_N|` lower bound.
pub const POLE_SAMPLES: usize = 10_000;
/// Relative tolerance of the trace identity.
pub const TRACE_TOL: f64 = 1e-9;
/// Most negative `a_j - a_j^k` accepted as rounding.
pub const ONE_SIDED_TOL: f64 = 1e-12;

/// `-sum b_j / (2D)`, the limit of `p^k`.
pub fn pair_center_limit(model: &PronyModel) -> f64 {
    -model.weight_sum() / (2.0 * model.d())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RealRow {
    /// 1-based root index.
    pub j: usize,
    pub k: ModeIndex,
    pub value: f64,
    /// `a_j - a_j^k`
    pub error: f64,
    /// `k^2 (a_j - a_j^k)`
    pub scaled_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairRow {
    pub k: ModeIndex,
    pub complex: bool,
    /// Real part of the complex pair, or the midpoint of a real pair.
    pub p: f64,
    pub q: Option<f64>,
    /// `|p^k + sum b_j / (2D)|`
    pub p_error: f64,
    /// `k^2 |p^k + sum b_j / (2D)|`
    pub p_scaled: f64,
    /// `|q^k - (2k-1) sqrt(D)|`
    pub q_error: Option<f64>,
    /// `(2k-1) |q^k - (2k-1) sqrt(D)|`
    pub q_scaled: Option<f64>,
}

/// Convergence of the cluster roots over a range of `k`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub limit: Vec<f64>,
    pub pair_limit: f64,
    /// Sorted by `k`, then `j`.
    pub real: Vec<RealRow>,
    /// Sorted by `k`.
    pub pair: Vec<PairRow>,
    /// Empirical `sup_k k^2 (a_j - a_j^k)` per root.
    pub m1: Vec<f64>,
    /// Empirical `sup_k k^2 |p^k + sum b / 2D|`.
    pub m2: f64,
    /// Empirical `sup_k (2k-1) |q^k - (2k-1) sqrt(D)|` over complex pairs.
    pub m3: Option<f64>,
    /// `min_{j,k} (a_j - a_j^k)`.
    pub min_error: f64,
}

impl ConvergenceReport {
    /// `k^2 (a_j - a_j^k)` for root `j` (1-based), in `k` order.
    pub fn real_scaled(&self, j: usize) -> Vec<f64> {
        self.real
            .iter()
            .filter(|r| r.j == j)
            .map(|r| r.scaled_error)
            .collect()
    }

    pub fn p_scaled(&self) -> Vec<f64> {
        self.pair.iter().map(|r| r.p_scaled).collect()
    }

    pub fn q_scaled(&self) -> Vec<f64> {
        self.pair.iter().filter_map(|r| r.q_scaled).collect()
    }

    /// One row per series value: `k,series,index,value,error,scaled_error`.
    ///
    /// `series` is `real` (index `j`), `p` or `q` (index 0). A `q` row is
    /// only written for complex pairs.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "series", "index", "value", "error", "scaled_error"])?;
        let n = self.limit.len();
        for (i, pair) in self.pair.iter().enumerate() {
            let k = pair.k.get().to_string();
            for row in &self.real[i * n..(i + 1) * n] {
                w.write_record([
                    k.as_str(),
                    "real",
                    &row.j.to_string(),
                    &fmt(row.value),
                    &fmt(row.error),
                    &fmt(row.scaled_error),
                ])?;
            }
            w.write_record([
                k.as_str(),
                "p",
                "0",
                &fmt(pair.p),
                &fmt(pair.p_error),
                &fmt(pair.p_scaled),
            ])?;
            if let (Some(q), Some(e), Some(s)) = (pair.q, pair.q_error, pair.q_scaled) {
                w.write_record([k.as_str(), "q", "0", &fmt(q), &fmt(e), &fmt(s)])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest round-trip formatting, so output is byte-stable.
pub(crate) fn fmt(x: f64) -> String {
    format!("{x:e}")
}

pub fn convergence_table(model: &PronyModel, ks: &[ModeIndex]) -> Result<ConvergenceReport> {
    let limit = limit_roots(model)?;
    let cl = clusters(model, ks)?;
    Ok(convergence_from(model, &limit, &cl))
}

/// Builds the report from clusters that are already computed.
pub fn convergence_from(
    model: &PronyModel,
    limit: &LimitSpectrum,
    clusters: &[SpectralCluster],
) -> ConvergenceReport {
    let mut sorted: Vec<&SpectralCluster> = clusters.iter().collect();
    sorted.sort_by_key(|c| c.k);
    let n = model.n();
    let pair_limit = pair_center_limit(model);
    let sqrt_d = model.d().sqrt();

    let mut real = Vec::with_capacity(n * sorted.len());
    let mut pair = Vec::with_capacity(sorted.len());
    for c in sorted {
        let kk = f64::from(c.k.get());
        for (j, (&a, &ak)) in limit.roots.iter().zip(&c.real_roots).enumerate() {
            let error = a - ak;
            real.push(RealRow {
                j: j + 1,
                k: c.k,
                value: ak,
                error,
                scaled_error: kk * kk * error,
            });
        }
        let omega = c.k.wavenumber();
        let p_error = (c.extra.center() - pair_limit).abs();
        let (q, q_error) = match c.extra {
            ExtraPair::Complex { q, .. } => (Some(q), Some((q - omega * sqrt_d).abs())),
            ExtraPair::Real { .. } => (None, None),
        };
        pair.push(PairRow {
            k: c.k,
            complex: c.extra.is_complex(),
            p: c.extra.center(),
            q,
            p_error,
            p_scaled: kk * kk * p_error,
            q_error,
            q_scaled: q_error.map(|e| omega * e),
        });
    }

    let m1 = (1..=n)
        .map(|j| {
            real.iter()
                .filter(|r| r.j == j)
                .map(|r| r.scaled_error)
                .fold(0.0, f64::max)
        })
        .collect();
    let m2 = pair.iter().map(|r| r.p_scaled).fold(0.0, f64::max);
    let m3 = pair
        .iter()
        .filter_map(|r| r.q_scaled)
        .reduce(f64::max);
    let min_error = real.iter().map(|r| r.error).fold(f64::INFINITY, f64::min);
    ConvergenceReport {
        limit: limit.roots.clone(),
        pair_limit,
        real,
        pair,
        m1,
        m2,
        m3,
        min_error,
    }
}

/// Largest value in the first and last tenth of a series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Settling {
    pub first: f64,
    pub last: f64,
}

impl Settling {
    pub fn of(values: &[f64]) -> Option<Settling> {
        if values.is_empty() {
            return None;
        }
        let tenth = values.len().div_ceil(10);
        let max = |s: &[f64]| s.iter().copied().fold(0.0, f64::max);
        Some(Settling {
            first: max(&values[..tenth]),
            last: max(&values[values.len() - tenth..]),
        })
    }

    pub fn ratio(&self) -> f64 {
        self.last / self.first
    }

    /// `last <= factor * first + floor`; the floor absorbs series that are
    /// rounding noise throughout.
    pub fn within(&self, factor: f64, floor: f64) -> bool {
        self.last <= factor * self.first + floor
    }
}

fn rational_to_string<S: Serializer>(x: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("model parameters are finite")
}

/// Constants of the explicit `k_0` bound, evaluated exactly in rational
/// arithmetic from the (binary) model parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct K0Certificate {
    /// `max b_i`
    pub b_max: f64,
    /// `min b_i`
    pub b_min: f64,
    /// `min_i (r_{i+1} - r_i)`
    pub r_gap: f64,
    pub mu: f64,
    /// `2 r_N + N B / D + 1`
    pub r_big: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub m: f64,
    /// Unrounded `R^{(N+2)/2} / sqrt(m) + R^{(N+1)/2} / sqrt(eps) + 1`.
    pub k0_value: f64,
    pub k0: u64,
    #[serde(serialize_with = "rational_to_string")]
    pub mu_exact: BigRational,
    #[serde(serialize_with = "rational_to_string")]
    pub r_big_exact: BigRational,
}

impl K0Certificate {
    /// Invariant violations, empty when the certificate is consistent.
    pub fn violations(&self, model: &PronyModel) -> Vec<String> {
        let mut out = Vec::new();
        let quarter = BigRational::new(1.into(), 4.into());
        let gap_cap = exact(self.r_gap) * &quarter;
        let r1_cap = exact(model.rates()[0]) * &quarter;
        if self.mu_exact > gap_cap || self.mu_exact > r1_cap {
            out.push(format!("mu = {} exceeds min(r_gap/4, r_1/4)", self.mu));
        }
        for (name, v) in [("delta", self.delta), ("epsilon", self.epsilon), ("m", self.m)] {
            if !(v > 0.0) {
                out.push(format!("{name} = {v} is not positive"));
            }
        }
        if self.k0 < 1 {
            out.push(format!("k0 = {} is below 1", self.k0));
        }
        out
    }
}

fn pow(x: &BigRational, e: usize) -> BigRational {
    (0..e).fold(BigRational::one(), |acc, _| acc * x)
}

pub fn explicit_k0(model: &PronyModel) -> Result<K0Certificate> {
    let n = model.n();
    if n < 2 {
        return Err(Error::Unsupported(
            "the k0 certificate needs at least two relaxation terms".into(),
        ));
    }
    let rates = model.rates();
    let weights = model.weights();
    let b_max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b_min = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let r_gap = rates
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);

    let nn = BigRational::from_integer(n.into());
    let two = BigRational::from_integer(2.into());
    let four = BigRational::from_integer(4.into());
    let (bb, b, r, d) = (exact(b_max), exact(b_min), exact(r_gap), exact(model.d()));
    let r1 = exact(rates[0]);
    let two_rn = &two * exact(rates[n - 1]);

    let first = &b * pow(&r, n - 1)
        / (&four * &d * pow(&two_rn, n - 1) + &four * &nn * &bb * pow(&two_rn, n - 2) + BigRational::one());
    let mu = [first, &r / &four, &r1 / &four]
        .into_iter()
        .min()
        .expect("three candidates");
    let r_big = &two_rn + &nn * &bb / &d + BigRational::one();
    let delta = pow(&r, n - 2) / (&two * &nn * pow(&r_big, n - 2)) * &mu;
    let epsilon = &d * &mu * pow(&r, n - 2) / &four;
    let m = &d * &mu * &delta * pow(&r, n - 2) / &two;
    debug_assert!(m > BigRational::zero());

    let to_f = |x: &BigRational| x.to_f64().unwrap_or(f64::NAN);
    let rf = to_f(&r_big);
    let k0_value = rf.powf((n + 2) as f64 / 2.0) / to_f(&m).sqrt()
        + rf.powf((n + 1) as f64 / 2.0) / to_f(&epsilon).sqrt()
        + 1.0;
    if !k0_value.is_finite() {
        return Err(Error::Unsupported(format!(
            "k0 overflows double precision ({k0_value})"
        )));
    }
    Ok(K0Certificate {
        b_max,
        b_min,
        r_gap,
        mu: to_f(&mu),
        r_big: rf,
        delta: to_f(&delta),
        epsilon: to_f(&epsilon),
        m: to_f(&m),
        k0_value,
        k0: k0_value.ceil() as u64,
        mu_exact: mu,
        r_big_exact: r_big,
    })
}

/// Where a bound is tightest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Location {
    /// 1-based root or pole index, when the bound is per index.
    pub j: Option<usize>,
    pub k: Option<ModeIndex>,
}

/// One bound with its extremal slack; `holds` iff `slack >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub name: &'static str,
    pub holds: bool,
    pub slack: f64,
    pub at: Location,
}

impl BoundCheck {
    fn new(name: &'static str, slack: f64, at: Location) -> Self {
        BoundCheck {
            name,
            holds: slack >= 0.0,
            slack,
            at,
        }
    }
}

/// Tracks the smallest slack seen and where it occurred.
struct Tightest {
    slack: f64,
    at: Location,
}

impl Tightest {
    fn new() -> Self {
        Tightest {
            slack: f64::INFINITY,
            at: Location { j: None, k: None },
        }
    }

    fn see(&mut self, slack: f64, j: Option<usize>, k: Option<ModeIndex>) {
        if slack < self.slack || slack.is_nan() {
            self.slack = slack;
            self.at = Location { j, k };
        }
    }

    fn finish(self, name: &'static str) -> BoundCheck {
        BoundCheck::new(name, self.slack, self.at)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub k_min: ModeIndex,
    pub k_max: ModeIndex,
    pub checks: Vec<BoundCheck>,
    /// Smallest `k` from which every extra pair in the range is complex.
    pub first_complex_k: Option<ModeIndex>,
    pub certificate: Option<K0Certificate>,
}

impl BoundReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn get(&self, name: &str) -> Option<&BoundCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Relative residuals of the algebraic identities for one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    /// `|sum a_j^k + 2 p^k + sum r_j| / sum r_j`
    pub trace: f64,
    /// Elementary symmetric `e_2` of all roots against `e_2(r) + D (2k-1)^2`.
    pub lambda_n: f64,
    /// Largest relative secular residual over the real roots.
    pub secular: f64,
}

/// `e_2` of a multiset of complex numbers (real for conjugate-closed input).
fn e2(z: &[Complex64]) -> Complex64 {
    let mut e1 = Complex64::new(0.0, 0.0);
    let mut e2 = Complex64::new(0.0, 0.0);
    for &x in z {
        e2 += e1 * x;
        e1 += x;
    }
    e2
}

/// `|f(l)|` relative to the sum of magnitudes of its terms.
pub fn relative_secular(model: &PronyModel, lambda: f64, k: Option<ModeIndex>) -> Result<f64> {
    let f = eval_secular(model, lambda, k)?;
    let quad = k.map_or(0.0, |k| lambda * lambda * k.inv_wavenumber_sq());
    let scale: f64 = model.d()
        + quad
        + model
            .weights()
            .iter()
            .zip(model.rates())
            .map(|(b, r)| (b / (lambda + r)).abs())
            .sum::<f64>();
    Ok(f.abs() / scale)
}

pub fn identity_residuals(model: &PronyModel, cluster: &SpectralCluster) -> Result<IdentityResiduals> {
    let rate_sum: f64 = model.rates().iter().sum();
    let trace = (cluster.trace() + rate_sum).abs() / rate_sum;

    let r: Vec<Complex64> = model.rates().iter().map(|&r| Complex64::new(r, 0.0)).collect();
    let omega = cluster.k.wavenumber();
    let expected = e2(&r).re + model.d() * omega * omega;
    let lambda_n = (e2(&cluster.all_roots()).re - expected).abs() / expected.abs();

    let secular = cluster
        .real_roots
        .iter()
        .map(|&a| relative_secular(model, a, Some(cluster.k)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Ok(IdentityResiduals {
        trace,
        lambda_n,
        secular,
    })
}

/// `|D - sum b / sum (a_j + r_j)| / D`.
pub fn rep_d_residual(model: &PronyModel, limit: &LimitSpectrum) -> f64 {
    let den: f64 = limit.roots.iter().zip(model.rates()).map(|(a, r)| a + r).sum();
    (model.d() - model.weight_sum() / den).abs() / model.d()
}

/// Measures every spectral bound over `ks`; violations are report entries.
pub fn verify_bounds(model: &PronyModel, ks: &[ModeIndex]) -> Result<BoundReport> {
    let mut ks = ks.to_vec();
    ks.sort();
    ks.dedup();
    let (Some(&k_min), Some(&k_max)) = (ks.first(), ks.last()) else {
        return Err(Error::InvalidGrid("empty k range".into()));
    };
    let limit = limit_roots(model)?;
    let cl = clusters(model, &ks)?;
    let report = convergence_from(model, &limit, &cl);
    let certificate = explicit_k0(model).ok();
    let rates = model.rates();
    let n = model.n();
    let mut checks = Vec::new();

    let mut interlacing = Tightest::new();
    for (j, &a) in limit.roots.iter().enumerate() {
        let above = if j == 0 { f64::INFINITY } else { -rates[j - 1] - a };
        interlacing.see((a + rates[j]).min(above), Some(j + 1), None);
    }
    for c in &cl {
        for (j, &a) in c.real_roots.iter().enumerate() {
            let above = if j == 0 { f64::INFINITY } else { -rates[j - 1] - a };
            interlacing.see((a + rates[j]).min(above), Some(j + 1), Some(c.k));
        }
    }
    checks.push(interlacing.finish("interlacing"));

    let mut trace = Tightest::new();
    let mut lambda_n = Tightest::new();
    let mut secular = Tightest::new();
    for c in &cl {
        let id = identity_residuals(model, c)?;
        trace.see(TRACE_TOL - id.trace, None, Some(c.k));
        lambda_n.see(1e-8 - id.lambda_n, None, Some(c.k));
        secular.see(1e-10 - id.secular, None, Some(c.k));
    }
    for &a in &limit.roots {
        secular.see(1e-10 - relative_secular(model, a, None)?, None, None);
    }
    checks.push(trace.finish("trace_identity"));
    checks.push(lambda_n.finish("lambda_n_coefficient"));
    checks.push(secular.finish("secular_identity"));
    checks.push(BoundCheck::new(
        "rep_d",
        1e-10 - rep_d_residual(model, &limit),
        Location { j: None, k: None },
    ));

    // for N = 1 the strip collapses to a point, so allow rounding
    let strip_allowance = ONE_SIDED_TOL * rates[n - 1];
    let mut strip = Tightest::new();
    for c in &cl {
        let a1 = c.real_roots[0];
        match c.extra {
            ExtraPair::Complex { p, .. } => {
                let lo = (-rates[n - 1] - a1) / 2.0;
                let hi = (-rates[0] - a1) / 2.0;
                strip.see((p - lo).min(hi - p) + strip_allowance, None, Some(c.k));
            }
            ExtraPair::Real { upper, lower } => {
                let inside = |e: f64| (e + rates[n - 1]).min(a1 - e);
                strip.see(inside(upper).min(inside(lower)) + strip_allowance, None, Some(c.k));
            }
        }
    }
    checks.push(strip.finish("strip_membership"));

    let b_max = model.weights().iter().copied().fold(0.0, f64::max);
    checks.push(BoundCheck::new(
        "a1_upper_bound",
        n as f64 * b_max / model.d() - limit.roots[0],
        Location { j: Some(1), k: None },
    ));

    if let Some(cert) = &certificate {
        let bound = cert.b_min * cert.r_gap.powi(n as i32 - 1) / 2.0;
        let mut pole = Tightest::new();
        for (l, &r) in rates.iter().enumerate() {
            let worst = (0..POLE_SAMPLES)
                .into_par_iter()
                .map(|i| {
                    let t = i as f64 / (POLE_SAMPLES - 1) as f64;
                    let x = -r - cert.mu + 2.0 * cert.mu * t;
                    eval_limit_poly(model, Complex64::new(x, 0.0)).norm()
                })
                .reduce(|| f64::INFINITY, f64::min);
            pole.see(worst - bound, Some(l + 1), None);
        }
        checks.push(pole.finish("pole_neighbourhood"));

        let mut separation = Tightest::new();
        for (j, w) in limit.roots.windows(2).enumerate() {
            separation.see(w[0] - w[1] - 2.0 * cert.mu, Some(j + 1), None);
        }
        checks.push(separation.finish("limit_separation"));
    }

    let m1_hat = report.m1.iter().copied().fold(0.0, f64::max);
    let mut adjacent = Tightest::new();
    for j in 1..=n {
        let rows: Vec<&RealRow> = report.real.iter().filter(|r| r.j == j).collect();
        for w in rows.windows(2) {
            if w[1].k.get() != w[0].k.get() + 1 {
                continue;
            }
            let kk = f64::from(w[0].k.get());
            let gap = (w[1].value - w[0].value).abs();
            adjacent.see(2.0 * m1_hat / (kk * kk) - gap, Some(j), Some(w[0].k));
        }
    }
    checks.push(adjacent.finish("adjacent_cluster_gap"));

    let mut one_sided = Tightest::new();
    for row in &report.real {
        one_sided.see(row.error + ONE_SIDED_TOL, Some(row.j), Some(row.k));
    }
    checks.push(one_sided.finish("one_sided"));

    let first_complex_k = cl
        .iter()
        .rposition(|c| !c.extra.is_complex())
        .map_or(Some(k_min), |i| cl.get(i + 1).map(|c| c.k));

    Ok(BoundReport {
        k_min,
        k_max,
        checks,
        first_complex_k,
        certificate,
    })
}
