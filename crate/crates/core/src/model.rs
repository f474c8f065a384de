//! The extended Burgers relaxation model in Prony form.
//!
//! A model holds `N` strictly increasing rates `r_i`, positive weights
//! `b_i = s_i r_i` and the instantaneous modulus `D`. The relaxation function
//! is `G(t) = sum_i s_i exp(-r_i t)` and `h = sum_i b_i / r_i = G(0)`.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for deciding `D = h`.
pub const DEFAULT_REGIME_TOL: f64 = 1e-12;

/// Kohlrausch relaxation `exp(-(t/tau)^beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StretchedExponential {
    pub tau: f64,
    pub beta: f64,
}

impl StretchedExponential {
    pub fn new(tau: f64, beta: f64) -> Result<Self> {
        let valid = tau.is_finite() && tau > 0.0 && beta > 0.0 && beta < 1.0;
        if !valid {
            return Err(Error::InvalidStretched { tau, beta });
        }
        Ok(Self { tau, beta })
    }

    pub fn value(&self, t: f64) -> f64 {
        (-(t / self.tau).powf(self.beta)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct PronyModel {
    rates: Vec<f64>,
    weights: Vec<f64>,
    instantaneous: f64,
    stiffness: Vec<f64>,
    h: f64,
}

impl PronyModel {
    /// Validates and builds a model from rates `r`, weights `b` and modulus `D`.
    pub fn new(rates: Vec<f64>, weights: Vec<f64>, instantaneous: f64) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::EmptyModel);
        }
        if rates.len() != weights.len() {
            return Err(Error::LengthMismatch {
                rates: rates.len(),
                weights: weights.len(),
            });
        }
        for (i, &r) in rates.iter().enumerate() {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::NonPositive {
                    what: "rate",
                    index: Some(i),
                    value: r,
                });
            }
            if i > 0 && r <= rates[i - 1] {
                return Err(Error::NonIncreasingRates {
                    index: i,
                    previous: rates[i - 1],
                    value: r,
                });
            }
        }
        for (i, &b) in weights.iter().enumerate() {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::NonPositive {
                    what: "weight",
                    index: Some(i),
                    value: b,
                });
            }
        }
        if !(instantaneous.is_finite() && instantaneous > 0.0) {
            return Err(Error::NonPositive {
                what: "instantaneous modulus D",
                index: None,
                value: instantaneous,
            });
        }
        let stiffness: Vec<f64> = weights.iter().zip(&rates).map(|(b, r)| b / r).collect();
        let h = stiffness.iter().sum();
        Ok(Self {
            rates,
            weights,
            instantaneous,
            stiffness,
            h,
        })
    }

    /// Equal-contribution weights `b_i = h r_i / N`, so that `sum b_i / r_i = h`.
    pub fn equal_contribution(rates: Vec<f64>, h: f64, instantaneous: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::NonPositive {
                what: "h",
                index: None,
                value: h,
            });
        }
        let n = rates.len() as f64;
        let weights = rates.iter().map(|r| h * r / n).collect();
        Self::new(rates, weights, instantaneous)
    }

    pub fn n(&self) -> usize {
        self.rates.len()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Instantaneous modulus `D`.
    pub fn d(&self) -> f64 {
        self.instantaneous
    }

    /// `s_i = b_i / r_i`.
    pub fn stiffness(&self) -> &[f64] {
        &self.stiffness
    }

    /// `h = sum_i b_i / r_i`.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn max_rate(&self) -> f64 {
        self.rates[self.rates.len() - 1]
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `G(t) = sum_i s_i exp(-r_i t)`.
    pub fn relaxation_value(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::NegativeTime(t));
        }
        Ok(self
            .stiffness
            .iter()
            .zip(&self.rates)
            .map(|(s, r)| s * (-r * t).exp())
            .sum())
    }

    pub fn classify_regime(&self, tol: f64) -> Result<RegimeLabel> {
        if !(tol.is_finite() && tol >= 0.0) {
            return Err(Error::InvalidTolerance(tol));
        }
        let gap = self.instantaneous - self.h;
        let scale = self.instantaneous.max(self.h);
        let regime = if gap.abs() <= tol * scale {
            Regime::QuasiStaticCritical
        } else if gap > 0.0 {
            Regime::OverdampedSolid
        } else {
            Regime::SubCritical
        };
        Ok(RegimeLabel {
            regime,
            tolerance: tol,
            gap,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<ModelConfig> {
        ModelConfig::from_toml_str(text)
    }
}

/// Serialized form shared by JSON output and the TOML config reader.
#[derive(Serialize, Deserialize)]
struct RawModel {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "D")]
    d: f64,
    r: Vec<f64>,
    b: Vec<f64>,
}

impl TryFrom<RawModel> for PronyModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        if raw.n != raw.r.len() {
            return Err(Error::Config(format!(
                "N = {} but {} rates given",
                raw.n,
                raw.r.len()
            )));
        }
        PronyModel::new(raw.r, raw.b, raw.d)
    }
}

impl From<PronyModel> for RawModel {
    fn from(m: PronyModel) -> Self {
        RawModel {
            n: m.n(),
            d: m.instantaneous,
            r: m.rates,
            b: m.weights,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    /// `D > h`
    OverdampedSolid,
    /// `D = h` within tolerance
    QuasiStaticCritical,
    /// `D < h`
    SubCritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::OverdampedSolid => "OVERDAMPED_SOLID",
            Regime::QuasiStaticCritical => "QUASI_STATIC_CRITICAL",
            Regime::SubCritical => "SUB_CRITICAL",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub regime: Regime,
    pub tolerance: f64,
    /// `D - h`
    pub gap: f64,
}

/// Parsed model config file.
///
/// ```toml
/// N = 2
/// D = 1.0
/// r = [5.0, 10.0]
/// b = [2.5, 5.0]      # or: h = 1.0 for equal-contribution weights
///
/// [stretched]         # optional, only read by `fit`
/// tau = 1.0
/// beta = 0.5
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub model: PronyModel,
    pub stretched: Option<StretchedExponential>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "D")]
    d: f64,
    r: Vec<f64>,
    b: Option<Vec<f64>>,
    h: Option<f64>,
    stretched: Option<StretchedExponential>,
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if raw.n != raw.r.len() {
            return Err(Error::Config(format!(
                "N = {} but {} rates given",
                raw.n,
                raw.r.len()
            )));
        }
        let model = match (raw.b, raw.h) {
            (Some(b), None) => PronyModel::new(raw.r, b, raw.d)?,
            (None, Some(h)) => PronyModel::equal_contribution(raw.r, h, raw.d)?,
            _ => {
                return Err(Error::Config(
                    "exactly one of `b` or `h` must be given".into(),
                ))
            }
        };
        let stretched = raw
            .stretched
            .map(|s| StretchedExponential::new(s.tau, s.beta))
            .transpose()?;
        Ok(Self { model, stretched })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Renders the config with explicit weights.
    pub fn to_toml_string(&self) -> String {
        let list = |v: &[f64]| {
            let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            format!("[{}]", items.join(", "))
        };
        let m = &self.model;
        let mut out = format!(
            "N = {}\nD = {:?}\nr = {}\nb = {}\n",
            m.n(),
            m.d(),
            list(m.rates()),
            list(m.weights())
        );
        if let Some(s) = self.stretched {
            out.push_str(&format!("\n[stretched]\ntau = {:?}\nbeta = {:?}\n", s.tau, s.beta));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    /// `b_i = h r_i / N` with `h = G(0) = 1`.
    EqualContribution,
    /// Non-negative least squares for `s_i` on the time grid.
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PronyFit {
    /// Model built from the strictly positive terms.
    pub model: PronyModel,
    /// `s_i` for every rate of the ladder, zeros included.
    pub ladder_stiffness: Vec<f64>,
    /// Ladder indices whose weight came out zero and were dropped from `model`.
    pub pruned: Vec<usize>,
    /// Sum of squared residuals of `G(t)` on the grid.
    pub residual_ss: f64,
}

/// Approximates a stretched exponential by a Prony series on a fixed rate ladder.
///
/// `instantaneous` defaults to `h = sum s_i`, i.e. no extra parallel spring.
pub fn fit_prony(
    target: &StretchedExponential,
    rates: &[f64],
    grid: &[f64],
    mode: FitMode,
    instantaneous: Option<f64>,
) -> Result<PronyFit> {
    if rates.is_empty() {
        return Err(Error::EmptyModel);
    }
    check_grid(grid)?;

    let stiffness = match mode {
        FitMode::EqualContribution => {
            let h = target.value(0.0);
            vec![h / rates.len() as f64; rates.len()]
        }
        FitMode::LeastSquares => {
            let design = DMatrix::from_fn(grid.len(), rates.len(), |i, j| (-rates[j] * grid[i]).exp());
            let y = DVector::from_iterator(grid.len(), grid.iter().map(|&t| target.value(t)));
            nnls(&design, &y).iter().copied().collect()
        }
    };

    let mut kept_rates = Vec::new();
    let mut kept_weights = Vec::new();
    let mut pruned = Vec::new();
    for (i, (&s, &r)) in stiffness.iter().zip(rates).enumerate() {
        if s > 0.0 {
            kept_rates.push(r);
            kept_weights.push(s * r);
        } else {
            pruned.push(i);
        }
    }
    if kept_rates.is_empty() {
        return Err(Error::InfeasibleNonNegativity);
    }
    let h: f64 = kept_weights.iter().zip(&kept_rates).map(|(b, r)| b / r).sum();
    let model = PronyModel::new(kept_rates, kept_weights, instantaneous.unwrap_or(h))?;

    let residual_ss = grid
        .iter()
        .map(|&t| {
            let fit: f64 = stiffness.iter().zip(rates).map(|(s, r)| s * (-r * t).exp()).sum();
            (fit - target.value(t)).powi(2)
        })
        .sum();

    Ok(PronyFit {
        model,
        ladder_stiffness: stiffness,
        pruned,
        residual_ss,
    })
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if let Some(t) = grid.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
        return Err(Error::InvalidGrid(format!("time {t} is not positive")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("times must be strictly increasing".into()));
    }
    Ok(())
}

/// Lawson-Hanson active-set NNLS: `min ||A x - y||` subject to `x >= 0`.
fn nnls(a: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = a.ncols();
    let tol = 10.0 * f64::EPSILON * a.norm() * a.nrows().max(n) as f64;
    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];

    let solve_passive = |passive: &[bool]| -> DVector<f64> {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let sub = a.select_columns(&idx);
        let sol = sub
            .svd(true, true)
            .solve(y, f64::EPSILON * 1e3)
            .expect("svd computed with both factors");
        let mut full = DVector::zeros(n);
        for (pos, &j) in idx.iter().enumerate() {
            full[j] = sol[pos];
        }
        full
    };

    for _ in 0..3 * n.max(1) {
        let w = a.transpose() * (y - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = candidate else { break };
        passive[j] = true;

        loop {
            let s = solve_passive(&passive);
            if (0..n).filter(|&i| passive[i]).all(|i| s[i] > 0.0) {
                x = s;
                break;
            }
            let alpha = (0..n)
                .filter(|&i| passive[i] && s[i] <= 0.0)
                .map(|i| x[i] / (x[i] - s[i]))
                .fold(f64::INFINITY, f64::min);
            x += (s - &x) * alpha;
            for i in 0..n {
                if passive[i] && x[i] <= tol {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_term() -> PronyModel {
        PronyModel::new(vec![5.0, 10.0], vec![2.5, 5.0], 1.0).unwrap()
    }

    #[test]
    fn validate_two_term_model() {
        let m = two_term();
        assert_eq!(m.n(), 2);
        assert_relative_eq!(m.h(), 1.0, max_relative = 1e-15);
        assert_eq!(m.stiffness(), &[0.5, 0.5]);
    }

    #[test]
    fn single_term_identity() {
        let m = PronyModel::new(vec![1.0], vec![1.0], 1.0).unwrap();
        assert_eq!(m.h(), 1.0);
        assert_eq!(m.stiffness(), &[1.0]);
    }

    #[test]
    fn rejects_bad_models() {
        assert!(matches!(
            PronyModel::new(vec![10.0, 5.0], vec![1.0, 1.0], 1.0),
            Err(Error::NonIncreasingRates { index: 1, .. })
        ));
        assert!(matches!(
            PronyModel::new(vec![5.0, 5.0], vec![1.0, 1.0], 1.0),
            Err(Error::NonIncreasingRates { .. })
        ));
        assert!(matches!(PronyModel::new(vec![], vec![], 1.0), Err(Error::EmptyModel)));
        assert!(matches!(
            PronyModel::new(vec![-1.0], vec![1.0], 1.0),
            Err(Error::NonPositive { what: "rate", .. })
        ));
        assert!(matches!(
            PronyModel::new(vec![1.0], vec![0.0], 1.0),
            Err(Error::NonPositive { what: "weight", .. })
        ));
        assert!(matches!(
            PronyModel::new(vec![1.0], vec![1.0], 0.0),
            Err(Error::NonPositive { .. })
        ));
        assert!(matches!(
            PronyModel::new(vec![1.0, 2.0], vec![1.0], 1.0),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn relaxation_value_cases() {
        let m = PronyModel::new(vec![1.0], vec![1.0], 1.0).unwrap();
        assert_eq!(m.relaxation_value(0.0).unwrap(), 1.0);
        let far = m.relaxation_value(800.0).unwrap();
        assert!((0.0..1e-300).contains(&far));
        assert!(matches!(m.relaxation_value(-1.0), Err(Error::NegativeTime(_))));

        // term-by-term oracle: 0.5 e^{-0.5} + 0.5 e^{-1}
        let v = two_term().relaxation_value(0.1).unwrap();
        let oracle = 0.5 * 0.606_530_659_712_633_4 + 0.5 * 0.367_879_441_171_442_3;
        assert_relative_eq!(v, oracle, max_relative = 1e-15);
    }

    #[test]
    fn regimes() {
        let at = |d: f64| {
            PronyModel::new(vec![5.0, 10.0], vec![2.5, 5.0], d)
                .unwrap()
                .classify_regime(DEFAULT_REGIME_TOL)
                .unwrap()
                .regime
        };
        assert_eq!(at(1.0), Regime::QuasiStaticCritical);
        assert_eq!(at(5.0), Regime::OverdampedSolid);
        assert_eq!(at(0.5), Regime::SubCritical);
        assert!(two_term().classify_regime(-1.0).is_err());
    }

    #[test]
    fn equal_contribution_ladder() {
        let rates: Vec<f64> = (1..=5).map(|i| 5.0 * i as f64).collect();
        let m = PronyModel::equal_contribution(rates, 1.0, 1.0).unwrap();
        for (i, b) in m.weights().iter().enumerate() {
            assert_relative_eq!(*b, (i + 1) as f64, max_relative = 1e-15);
        }
    }

    #[test]
    fn config_roundtrip_and_errors() {
        let cfg = ModelConfig::from_toml_str(
            "N = 2\nD = 1.0\nr = [5.0, 10.0]\nh = 1.0\n[stretched]\ntau = 1.0\nbeta = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.model.weights(), &[2.5, 5.0]);
        assert_eq!(cfg.stretched, Some(StretchedExponential { tau: 1.0, beta: 0.5 }));
        let again = ModelConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);

        let both = "N = 1\nD = 1.0\nr = [1.0]\nb = [1.0]\nh = 1.0\n";
        assert!(matches!(ModelConfig::from_toml_str(both), Err(Error::Config(_))));
        let neither = "N = 1\nD = 1.0\nr = [1.0]\n";
        assert!(matches!(ModelConfig::from_toml_str(neither), Err(Error::Config(_))));
        let wrong_n = "N = 3\nD = 1.0\nr = [1.0]\nh = 1.0\n";
        assert!(matches!(ModelConfig::from_toml_str(wrong_n), Err(Error::Config(_))));
    }

    #[test]
    fn model_json_shape() {
        let json = serde_json::to_value(two_term()).unwrap();
        assert_eq!(json["N"], 2);
        assert_eq!(json["D"], 1.0);
        let back: PronyModel = serde_json::from_value(json).unwrap();
        assert_eq!(back, two_term());
    }

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn equal_contribution_fit() {
        let target = StretchedExponential::new(1.0, 0.3).unwrap();
        let fit = fit_prony(&target, &[1.0], &grid(0.1, 10.0, 50), FitMode::EqualContribution, None)
            .unwrap();
        assert_eq!(fit.model.weights(), &[1.0]);

        let rates: Vec<f64> = (1..=5).map(|i| 5.0 * i as f64).collect();
        let fit = fit_prony(&target, &rates, &grid(0.1, 10.0, 50), FitMode::EqualContribution, None)
            .unwrap();
        for (i, b) in fit.model.weights().iter().enumerate() {
            assert_relative_eq!(*b, (i + 1) as f64, max_relative = 1e-15);
        }
        assert_relative_eq!(fit.model.h(), 1.0, max_relative = 1e-15);
    }

    #[test]
    fn grid_errors() {
        let target = StretchedExponential::new(1.0, 0.5).unwrap();
        assert!(matches!(
            fit_prony(&target, &[1.0], &[], FitMode::LeastSquares, None),
            Err(Error::EmptyGrid)
        ));
        assert!(matches!(
            fit_prony(&target, &[1.0], &[0.0, 1.0], FitMode::LeastSquares, None),
            Err(Error::InvalidGrid(_))
        ));
        assert!(matches!(
            fit_prony(&target, &[1.0], &[2.0, 1.0], FitMode::LeastSquares, None),
            Err(Error::InvalidGrid(_))
        ));
        assert!(StretchedExponential::new(1.0, 1.0).is_err());
        assert!(StretchedExponential::new(0.0, 0.5).is_err());
    }

    #[test]
    fn nnls_matches_unconstrained_when_interior() {
        // y = 2 e^{-t} + 3 e^{-4t} exactly: NNLS must recover it.
        let ts = grid(0.05, 3.0, 40);
        let a = DMatrix::from_fn(ts.len(), 2, |i, j| (-[1.0, 4.0][j] * ts[i]).exp());
        let y = DVector::from_iterator(ts.len(), ts.iter().map(|t| 2.0 * (-t).exp() + 3.0 * (-4.0 * t).exp()));
        let x = nnls(&a, &y);
        assert_relative_eq!(x[0], 2.0, max_relative = 1e-9);
        assert_relative_eq!(x[1], 3.0, max_relative = 1e-9);
    }

    #[test]
    fn nnls_clamps_negative_component() {
        // the unconstrained optimum has a negative second coefficient
        let ts = grid(0.05, 3.0, 40);
        let a = DMatrix::from_fn(ts.len(), 2, |i, j| (-[1.0, 4.0][j] * ts[i]).exp());
        let y = DVector::from_iterator(ts.len(), ts.iter().map(|t| 2.0 * (-t).exp() - 1.0 * (-4.0 * t).exp()));
        let x = nnls(&a, &y);
        assert!(x[0] > 0.0);
        assert_eq!(x[1], 0.0);
    }
}
