//! Real univariate polynomials: evaluation, differentiation, probabilist's
//! Hermite family, and real root extraction via companion-matrix eigenvalues.

use crate::error::{Error, Result};
use nalgebra::linalg::Schur;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Dense real polynomial, coefficients in ascending degree order.
///
/// Canonical form: no trailing zero coefficients (the zero polynomial is an
/// empty coefficient list). Serializes as a plain JSON array, so drift
/// x - x^3 reads as `[0, 1, 0, -1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    coefficients: Vec<f64>,
}

impl Polynomial {
    /// Build from ascending coefficients, trimming exact-zero trailing terms.
    pub fn new(coefficients: Vec<f64>) -> Self {
        let mut c = coefficients;
        while c.last() == Some(&0.0) {
            c.pop();
        }
        Polynomial { coefficients: c }
    }

    pub fn zero() -> Self {
        Polynomial {
            coefficients: Vec::new(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![c])
    }

    pub fn is_zero(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Degree; the zero polynomial reports None.
    pub fn degree(&self) -> Option<usize> {
        self.coefficients.len().checked_sub(1)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Horner evaluation.
    pub fn eval(&self, x: f64) -> f64 {
        self.coefficients
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * x + c)
    }

    /// Coefficientwise derivative, canonical form.
    pub fn derivative(&self) -> Polynomial {
        if self.coefficients.len() <= 1 {
            return Polynomial::zero();
        }
        let d: Vec<f64> = self
            .coefficients
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &c)| k as f64 * c)
            .collect();
        Polynomial::new(d)
    }

    /// Antiderivative with value 0 at x = 0.
    pub fn antiderivative(&self) -> Polynomial {
        let mut c = Vec::with_capacity(self.coefficients.len() + 1);
        c.push(0.0);
        for (k, &a) in self.coefficients.iter().enumerate() {
            c.push(a / (k + 1) as f64);
        }
        Polynomial::new(c)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::new(self.coefficients.iter().map(|&c| s * c).collect())
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let n = self.coefficients.len().max(other.coefficients.len());
        let mut c = vec![0.0; n];
        for (i, &a) in self.coefficients.iter().enumerate() {
            c[i] += a;
        }
        for (i, &b) in other.coefficients.iter().enumerate() {
            c[i] += b;
        }
        Polynomial::new(c)
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        if self.is_zero() || other.is_zero() {
            return Polynomial::zero();
        }
        let mut c = vec![0.0; self.coefficients.len() + other.coefficients.len() - 1];
        for (i, &a) in self.coefficients.iter().enumerate() {
            for (j, &b) in other.coefficients.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Polynomial::new(c)
    }

    /// Real roots via companion-matrix eigenvalues: real parts of eigenvalues
    /// with imaginary magnitude below `imag_tol`, ascending, with multiplicity.
    pub fn real_roots(&self, imag_tol: f64) -> Result<Vec<f64>> {
        let deg = self.degree().unwrap_or(0);
        if deg == 0 {
            return Err(Error::ConstantPolynomialRoots);
        }
        // Exact zero roots are deflated first: the companion matrix of a pure
        // power is a Jordan block on which the QR iteration never terminates.
        let mut roots = Vec::new();
        let mut lo = 0usize;
        while lo < deg && self.coefficients[lo] == 0.0 {
            roots.push(0.0);
            lo += 1;
        }
        let c = &self.coefficients[lo..=deg];
        let n = c.len() - 1;
        if n > 0 {
            let lead = c[n];
            let mut m = DMatrix::<f64>::zeros(n, n);
            for i in 1..n {
                m[(i, i - 1)] = 1.0;
            }
            for i in 0..n {
                m[(i, n - 1)] = -c[i] / lead;
            }
            match Schur::try_new(m, f64::EPSILON, 50_000) {
                Some(schur) => {
                    for z in schur.complex_eigenvalues().iter() {
                        if z.im.abs() < imag_tol {
                            roots.push(z.re);
                        }
                    }
                }
                None => {
                    let p = Polynomial::new(c.to_vec());
                    roots.extend(bisect_real_roots(&p));
                }
            }
        }
        roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(roots)
    }
}

/// Default imaginary-part tolerance for `real_roots`.
pub const IMAG_TOL_DEFAULT: f64 = 1e-8;

/// Last-resort root scan for when the eigenvalue iteration gives up: bisection
/// between consecutive critical points inside the Cauchy bound. Returns
/// distinct roots only (even-multiplicity touches are kept via a residual
/// test at the critical points).
fn bisect_real_roots(p: &Polynomial) -> Vec<f64> {
    let deg = match p.degree() {
        Some(d) if d > 0 => d,
        _ => return vec![],
    };
    let c = p.coefficients();
    if deg == 1 {
        return vec![-c[0] / c[1]];
    }
    let lead = c[deg];
    let bound = 1.0
        + c[..deg]
            .iter()
            .map(|v| (v / lead).abs())
            .fold(0.0f64, f64::max);
    let mut cuts = vec![-bound, bound];
    for r in bisect_real_roots(&p.derivative()) {
        if r.abs() < bound {
            cuts.push(r);
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    let scale: f64 = c.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut roots = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (flo, fhi) = (p.eval(lo), p.eval(hi));
        let touch_tol = 1e-11 * scale * (1.0 + hi.abs().powi(deg as i32));
        if fhi.abs() <= touch_tol {
            roots.push(hi);
        } else if flo.signum() != fhi.signum() && flo.abs() > touch_tol {
            let (mut a, mut b, mut fa) = (lo, hi, flo);
            for _ in 0..120 {
                let mid = 0.5 * (a + b);
                let fm = p.eval(mid);
                if fm == 0.0 {
                    a = mid;
                    b = mid;
                    break;
                }
                if fa.signum() != fm.signum() {
                    b = mid;
                } else {
                    a = mid;
                    fa = fm;
                }
            }
            roots.push(0.5 * (a + b));
        }
    }
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
    roots
}

/// Probabilist's Hermite polynomial He_k via the three-term recurrence
/// He_0 = 1, He_1 = x, He_{k+1} = x He_k - k He_{k-1}.
pub fn hermite(k: usize) -> Polynomial {
    let x = Polynomial::new(vec![0.0, 1.0]);
    let mut prev = Polynomial::constant(1.0);
    if k == 0 {
        return prev;
    }
    let mut cur = x.clone();
    for m in 1..k {
        let next = x.mul(&cur).sub(&prev.scale(m as f64));
        prev = cur;
        cur = next;
    }
    cur
}
