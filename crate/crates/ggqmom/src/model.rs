//! SDE and McKean-Vlasov model descriptions with polynomial coefficients,
//! effective-drift closure, generator application, and assumption validation.

use crate::polynomial::Polynomial;
use crate::quadrature::QuadratureMeasure;
use serde::{Deserialize, Serialize};

/// dX = a(X) dt + sigma b(X) dW with polynomial a, b.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdeModel {
    pub drift: Polynomial,
    #[serde(rename = "diffusion")]
    pub diffusion_poly: Polynomial,
    #[serde(rename = "sigma")]
    pub noise_amplitude: f64,
}

/// dX = (-Vbar'(X) + theta E[P'(X)]) dt + sigma b(X) dW.
///
/// The interaction enters only through the scalar E[P'(X)], so the
/// mean-field drift is an ordinary polynomial once a measure is supplied.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MvsdeModel {
    #[serde(rename = "effective_potential_deriv")]
    pub effective_potential_deriv: Polynomial,
    #[serde(rename = "interaction_deriv")]
    pub interaction_deriv: Polynomial,
    pub theta: f64,
    #[serde(rename = "diffusion")]
    pub diffusion_poly: Polynomial,
    #[serde(rename = "sigma")]
    pub noise_amplitude: f64,
}

/// Union of the two model kinds for operations that accept either.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Model {
    Sde(SdeModel),
    Mvsde(MvsdeModel),
}

impl Model {
    pub fn sigma(&self) -> f64 {
        match self {
            Model::Sde(m) => m.noise_amplitude,
            Model::Mvsde(m) => m.noise_amplitude,
        }
    }

    pub fn diffusion_poly(&self) -> &Polynomial {
        match self {
            Model::Sde(m) => &m.diffusion_poly,
            Model::Mvsde(m) => &m.diffusion_poly,
        }
    }

    /// The drift polynomial with any measure dependence frozen at `mu`.
    pub fn frozen_drift(&self, mu: &QuadratureMeasure) -> Polynomial {
        match self {
            Model::Sde(m) => m.drift.clone(),
            Model::Mvsde(m) => effective_drift(m, mu),
        }
    }

    /// Replace the noise amplitude, keeping everything else.
    pub fn with_sigma(&self, sigma: f64) -> Model {
        let mut m = self.clone();
        match &mut m {
            Model::Sde(s) => s.noise_amplitude = sigma,
            Model::Mvsde(s) => s.noise_amplitude = sigma,
        }
        m
    }
}

/// -Vbar'(x) + theta * sum_j beta_j P'(x_j); the interaction term is a scalar.
pub fn effective_drift(m: &MvsdeModel, mu: &QuadratureMeasure) -> Polynomial {
    let interaction: f64 = mu
        .nodes()
        .iter()
        .zip(mu.weights())
        .map(|(&x, &b)| b * m.interaction_deriv.eval(x))
        .sum();
    m.effective_potential_deriv
        .scale(-1.0)
        .add(&Polynomial::constant(m.theta * interaction))
}

/// L x^k = k a(x) x^{k-1} + (sigma^2/2) k(k-1) b(x)^2 x^{k-2}, as a polynomial
/// in x. For MV models pass the frozen drift. k = 0 gives the zero polynomial.
pub fn generator_apply_monomial(
    drift: &Polynomial,
    diffusion: &Polynomial,
    sigma: f64,
    k: usize,
) -> Polynomial {
    if k == 0 {
        return Polynomial::zero();
    }
    let mut x_pow = vec![0.0; k];
    x_pow[k - 1] = k as f64;
    let first = drift.mul(&Polynomial::new(x_pow));
    if k == 1 {
        return first;
    }
    let mut x_pow2 = vec![0.0; k - 1];
    x_pow2[k - 2] = 0.5 * sigma * sigma * (k * (k - 1)) as f64;
    first.add(&diffusion.mul(diffusion).mul(&Polynomial::new(x_pow2)))
}

/// Per-assumption grid check results. Failures are data, not errors; solver
/// entry points consult `all_passed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks_passed: Vec<(String, bool)>,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_n: usize,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks_passed.iter().all(|(_, ok)| *ok)
    }
}

pub const VALIDATION_GRID_LO: f64 = -10.0;
pub const VALIDATION_GRID_HI: f64 = 10.0;
pub const VALIDATION_GRID_N: usize = 401;

fn grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |i| lo + step * i as f64)
}

/// Trapezoid integral of -a/b^2 (potential of the normalized process) from 0,
/// then check it increases at both grid ends (confining well).
fn confinement_grid_check(a: &Polynomial, b: &Polynomial, lo: f64, hi: f64, n: usize) -> bool {
    let xs: Vec<f64> = grid(lo, hi, n).collect();
    let f: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let bx = b.eval(x);
            -a.eval(x) / (bx * bx)
        })
        .collect();
    let mut pot = vec![0.0; n];
    for i in 1..n {
        pot[i] = pot[i - 1] + 0.5 * (f[i] + f[i - 1]) * (xs[i] - xs[i - 1]);
    }
    // increasing toward +inf at the right end, toward -inf means decreasing at the left
    pot[n - 1] > pot[n - 2] && pot[0] > pot[1]
}

pub fn validate(model: &Model, grid_lo: f64, grid_hi: f64, grid_n: usize) -> ValidationReport {
    let mut checks = Vec::new();
    let b = model.diffusion_poly();
    let diffusion_positive = grid(grid_lo, grid_hi, grid_n).all(|x| b.eval(x) > 0.0);
    checks.push(("diffusion_positive".to_string(), diffusion_positive));
    match model {
        Model::Sde(m) => {
            let leading_ok = m
                .drift
                .degree()
                .map(|d| d % 2 == 1 && *m.drift.coefficients().last().unwrap() < 0.0)
                .unwrap_or(false);
            let confining = leading_ok
                || confinement_grid_check(&m.drift, &m.diffusion_poly, grid_lo, grid_hi, grid_n);
            checks.push(("confinement".to_string(), confining));
        }
        Model::Mvsde(m) => {
            // Vbar'' >= 0 everywhere, zero only at isolated grid points
            let vbar_dd = m.effective_potential_deriv.derivative();
            let vals: Vec<f64> = grid(grid_lo, grid_hi, grid_n)
                .map(|x| vbar_dd.eval(x))
                .collect();
            let nonneg = vals.iter().all(|&v| v >= 0.0);
            let no_flat_run = vals.windows(2).all(|w| !(w[0] == 0.0 && w[1] == 0.0));
            checks.push((
                "effective_potential_convex".to_string(),
                nonneg && no_flat_run,
            ));
        }
    }
    ValidationReport {
        checks_passed: checks,
        grid_lo,
        grid_hi,
        grid_n,
    }
}

/// `validate` on the default grid.
pub fn validate_default(model: &Model) -> ValidationReport {
    validate(
        model,
        VALIDATION_GRID_LO,
        VALIDATION_GRID_HI,
        VALIDATION_GRID_N,
    )
}
