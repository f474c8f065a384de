//! Double-double arithmetic for compensated coefficient expansion and
//! polynomial evaluation.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        Dd { hi, lo }
    }

    /// `1 / x` to double-double accuracy.
    pub fn recip(x: f64) -> Self {
        let q = 1.0 / x;
        let r = (-q).mul_add(x, 1.0);
        Dd::new(q, r / x)
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

/// Complex number with double-double parts.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CDd {
    pub re: Dd,
    pub im: Dd,
}

impl CDd {
    pub fn to_complex(self) -> Complex64 {
        Complex64::new(self.re.to_f64(), self.im.to_f64())
    }
}

impl From<Complex64> for CDd {
    fn from(z: Complex64) -> Self {
        CDd {
            re: z.re.into(),
            im: z.im.into(),
        }
    }
}

impl Add for CDd {
    type Output = CDd;
    fn add(self, o: CDd) -> CDd {
        CDd {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }
}

impl Mul for CDd {
    type Output = CDd;
    fn mul(self, o: CDd) -> CDd {
        CDd {
            re: self.re * o.re - self.im * o.im,
            im: self.re * o.im + self.im * o.re,
        }
    }
}

/// Product of two polynomials with double-double coefficients.
pub fn poly_mul(a: &[Dd], b: &[Dd]) -> Vec<Dd> {
    let mut out = vec![Dd::ZERO; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] = out[i + j] + x * y;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_lost_bits() {
        // 0.1 * 3 - 0.3 is not zero in f64 but the exact product error is kept
        let p = Dd::from(0.1) * Dd::from(3.0);
        let d = p - Dd::from(0.3);
        assert_eq!(d.to_f64(), 0.1f64.mul_add(3.0, -0.3));
    }

    #[test]
    fn reciprocal() {
        let r = Dd::recip(3.0) * Dd::from(3.0);
        assert!((r - Dd::ONE).to_f64().abs() < 1e-31);
    }
}
