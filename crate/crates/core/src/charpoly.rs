//! Characteristic polynomial `P_N^k`, its limit `P_N`, and the secular
//! functions `f_P`, `f_P^k`.
//!
//! ```text
//! P_N^k(l) = (D + l^2/(2k-1)^2) prod_j (l + r_j) - sum_i b_i prod_{j != i} (l + r_j)
//! P_N(l)   =  D                 prod_j (l + r_j) - sum_i b_i prod_{j != i} (l + r_j)
//! f_P(l)   =  D - sum_i b_i / (l + r_i),      f_P^k(l) = f_P(l) + l^2/(2k-1)^2
//! ```
//!
//! Every evaluation uses the factored form. The expanded monomial form is only
//! built on request (root oracle, inverse problem).

use num_complex::Complex64;
use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::dd::{self, CDd, Dd};
use crate::error::{Error, Result};
use crate::model::PronyModel;

/// Relative distance to a pole below which the secular function refuses to evaluate.
pub const POLE_TOL: f64 = 1e-13;

/// Spatial mode index `k >= 1`; the wavenumber is `2k - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ModeIndex(u32);

impl ModeIndex {
    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            Err(Error::InvalidModeIndex)
        } else {
            Ok(Self(k))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// `2k - 1`
    pub fn wavenumber(self) -> f64 {
        (2 * self.0 - 1) as f64
    }

    /// `1 / (2k - 1)^2`, the coefficient of the `l^2` term.
    pub fn inv_wavenumber_sq(self) -> f64 {
        let w = self.wavenumber();
        1.0 / (w * w)
    }

    /// `k_min..=k_max` as mode indices.
    pub fn range(k_min: u32, k_max: u32) -> Result<Vec<ModeIndex>> {
        if k_min == 0 {
            return Err(Error::InvalidModeIndex);
        }
        Ok((k_min..=k_max).map(ModeIndex).collect())
    }
}

impl TryFrom<u32> for ModeIndex {
    type Error = Error;
    fn try_from(k: u32) -> Result<Self> {
        ModeIndex::new(k)
    }
}

impl From<ModeIndex> for u32 {
    fn from(k: ModeIndex) -> u32 {
        k.0
    }
}

impl std::fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

fn quad_coeff(k: Option<ModeIndex>) -> f64 {
    k.map_or(0.0, ModeIndex::inv_wavenumber_sq)
}

/// Dense real polynomial, ascending powers, nonzero leading coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PolynomialCoeffs {
    coeffs: Vec<f64>,
    /// Low-order parts of double-double coefficients; zeros when unknown.
    tail: Vec<f64>,
}

impl TryFrom<Vec<f64>> for PolynomialCoeffs {
    type Error = Error;
    fn try_from(coeffs: Vec<f64>) -> Result<Self> {
        PolynomialCoeffs::new(coeffs)
    }
}

impl From<PolynomialCoeffs> for Vec<f64> {
    fn from(p: PolynomialCoeffs) -> Vec<f64> {
        p.coeffs
    }
}

impl PolynomialCoeffs {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        match coeffs.last() {
            Some(&c) if c != 0.0 && c.is_finite() => Ok(Self {
                tail: vec![0.0; coeffs.len()],
                coeffs,
            }),
            _ => Err(Error::ZeroLeadingCoefficient),
        }
    }

    /// Keeps the low-order parts for [`PolynomialCoeffs::eval_compensated`].
    pub fn from_dd(coeffs: &[Dd]) -> Result<Self> {
        let mut p = Self::new(coeffs.iter().map(|c| c.hi).collect())?;
        p.tail = coeffs.iter().map(|c| c.lo).collect();
        Ok(p)
    }

    pub fn as_dd(&self) -> Vec<Dd> {
        self.coeffs
            .iter()
            .zip(&self.tail)
            .map(|(&hi, &lo)| Dd { hi, lo })
            .collect()
    }

    /// Horner's scheme in double-double, including the coefficient tails.
    pub fn eval_compensated(&self, z: Complex64) -> Complex64 {
        let z = CDd::from(z);
        self.coeffs
            .iter()
            .zip(&self.tail)
            .rev()
            .fold(CDd::default(), |acc, (&hi, &lo)| {
                let c = CDd {
                    re: Dd { hi, lo },
                    im: Dd::ZERO,
                };
                acc * z + c
            })
            .to_complex()
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn leading(&self) -> f64 {
        self.coeffs[self.coeffs.len() - 1]
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs
            .iter()
            .rev()
            .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Value and first derivative by Horner's scheme.
    pub fn eval_with_derivative(&self, z: Complex64) -> (Complex64, Complex64) {
        let zero = Complex64::new(0.0, 0.0);
        let mut p = zero;
        let mut dp = zero;
        for &c in self.coeffs.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    }

    /// `sum_i |c_i| |z|^i`; the rounding scale of a Horner evaluation at `z`.
    pub fn magnitude_at(&self, abs_z: f64) -> f64 {
        self.coeffs
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * abs_z + c.abs())
    }

    /// Synthetic division by `(l - root)`: returns the quotient and remainder.
    pub fn deflate(&self, root: f64) -> (Vec<f64>, f64) {
        let n = self.degree();
        let mut quotient = vec![0.0; n];
        let mut carry = 0.0;
        for i in (1..=n).rev() {
            carry = carry * root + self.coeffs[i];
            quotient[i - 1] = carry;
        }
        let remainder = carry * root + self.coeffs[0];
        (quotient, remainder)
    }
}

/// Product-form evaluation shared by every public evaluator.
fn product_form<T>(model: &PronyModel, lambda: T, quad: f64) -> T
where
    T: Num + Copy + From<f64>,
{
    let shifted: Vec<T> = model.rates().iter().map(|&r| lambda + T::from(r)).collect();
    let full = shifted.iter().fold(T::one(), |acc, &x| acc * x);
    let mut coupling = T::zero();
    for (i, &b) in model.weights().iter().enumerate() {
        let partial = shifted
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .fold(T::one(), |acc, (_, &x)| acc * x);
        coupling = coupling + T::from(b) * partial;
    }
    (T::from(model.d()) + T::from(quad) * lambda * lambda) * full - coupling
}

/// `P_N^k(l)` when `k` is given, `P_N(l)` otherwise. Works for `f64` and `Complex64`.
pub fn eval_poly<T>(model: &PronyModel, k: Option<ModeIndex>, lambda: T) -> T
where
    T: Num + Copy + From<f64>,
{
    product_form(model, lambda, quad_coeff(k))
}

pub fn eval_limit_poly(model: &PronyModel, lambda: Complex64) -> Complex64 {
    product_form(model, lambda, 0.0)
}

pub fn eval_char_poly(model: &PronyModel, k: ModeIndex, lambda: Complex64) -> Complex64 {
    product_form(model, lambda, k.inv_wavenumber_sq())
}

/// Sum of the absolute values of the product-form terms at `l`.
///
/// Dividing `|P(l)|` by this gives a scale-free residual.
pub fn poly_scale(model: &PronyModel, k: Option<ModeIndex>, lambda: Complex64) -> f64 {
    let quad = quad_coeff(k);
    let dist: Vec<f64> = model.rates().iter().map(|&r| (lambda + r).norm()).collect();
    let full: f64 = dist.iter().product();
    let coupling: f64 = model
        .weights()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            b * dist
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, d)| d)
                .product::<f64>()
        })
        .sum();
    (model.d() + quad * lambda.norm_sqr()) * full + coupling
}

/// `|P(l)| / poly_scale(l)`.
pub fn scaled_residual(model: &PronyModel, k: Option<ModeIndex>, lambda: Complex64) -> f64 {
    let scale = poly_scale(model, k, lambda);
    let value = eval_poly(model, k, lambda).norm();
    if scale == 0.0 {
        value
    } else {
        value / scale
    }
}

/// `f_P(l)` without `k`, `f_P^k(l)` with it. Errors when `l` sits on a pole `-r_i`.
pub fn eval_secular(model: &PronyModel, lambda: f64, k: Option<ModeIndex>) -> Result<f64> {
    for (i, &r) in model.rates().iter().enumerate() {
        let distance = (lambda + r).abs();
        if distance < POLE_TOL * r {
            return Err(Error::Pole {
                index: i,
                lambda,
                distance,
            });
        }
    }
    Ok(secular_unchecked(model, lambda, quad_coeff(k)))
}

pub(crate) fn secular_unchecked(model: &PronyModel, lambda: f64, quad: f64) -> f64 {
    let pull: f64 = model
        .weights()
        .iter()
        .zip(model.rates())
        .map(|(b, r)| b / (lambda + r))
        .sum();
    model.d() + quad * lambda * lambda - pull
}

/// Analytic derivative of the product form.
pub fn eval_derivative<T>(model: &PronyModel, lambda: T, k: Option<ModeIndex>) -> T
where
    T: Num + Copy + From<f64>,
{
    let quad = T::from(quad_coeff(k));
    let n = model.n();
    let shifted: Vec<T> = model.rates().iter().map(|&r| lambda + T::from(r)).collect();
    let prod_except = |skip: &[usize]| {
        (0..n)
            .filter(|j| !skip.contains(j))
            .fold(T::one(), |acc, j| acc * shifted[j])
    };
    let full = prod_except(&[]);
    let mut d_full = T::zero();
    for l in 0..n {
        d_full = d_full + prod_except(&[l]);
    }
    let mut d_coupling = T::zero();
    for (i, &b) in model.weights().iter().enumerate() {
        let mut acc = T::zero();
        for l in (0..n).filter(|&l| l != i) {
            acc = acc + prod_except(&[i, l]);
        }
        d_coupling = d_coupling + T::from(b) * acc;
    }
    let two = T::from(2.0);
    two * quad * lambda * full + (T::from(model.d()) + quad * lambda * lambda) * d_full - d_coupling
}

/// Monomial coefficients (ascending) of `P_N^k` or `P_N`, expanded in
/// double-double so the tails are available to compensated evaluation.
pub fn expand_coefficients(model: &PronyModel, k: Option<ModeIndex>) -> PolynomialCoeffs {
    let rates = model.rates();
    let linear = |r: f64| [Dd::from(r), Dd::ONE];
    let full = rates
        .iter()
        .fold(vec![Dd::ONE], |acc, &r| dd::poly_mul(&acc, &linear(r)));

    let mut coupling = vec![Dd::ZERO; rates.len()];
    for (i, &b) in model.weights().iter().enumerate() {
        let partial = rates
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .fold(vec![Dd::ONE], |acc, (_, &r)| dd::poly_mul(&acc, &linear(r)));
        for (c, p) in coupling.iter_mut().zip(partial) {
            *c = *c + Dd::from(b) * p;
        }
    }

    let degree = if k.is_some() { rates.len() + 2 } else { rates.len() };
    let mut coeffs = vec![Dd::ZERO; degree + 1];
    let d = Dd::from(model.d());
    for (i, &c) in full.iter().enumerate() {
        coeffs[i] = coeffs[i] + d * c;
    }
    if let Some(k) = k {
        let quad = Dd::recip(k.wavenumber() * k.wavenumber());
        for (i, &c) in full.iter().enumerate() {
            coeffs[i + 2] = coeffs[i + 2] + quad * c;
        }
    }
    for (i, &c) in coupling.iter().enumerate() {
        coeffs[i] = coeffs[i] - c;
    }
    PolynomialCoeffs::from_dd(&coeffs)
        .expect("leading coefficient is D or 1/(2k-1)^2, both positive")
}
