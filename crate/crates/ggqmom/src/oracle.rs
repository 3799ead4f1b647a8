//! Independent verification machinery: exact Ornstein-Uhlenbeck moment
//! evolution, moment-equation descriptors, Euler-Maruyama particle
//! simulation with a counter-based RNG, the quadratic-interaction
//! self-consistency map, and a-priori moment bounds with summability
//! diagnostics.

use crate::error::{Error, Result};
use crate::model::{generator_apply_monomial, Model};
use crate::quadrature::MomentVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

// ---------------------------------------------------------------------------
// moment evolution descriptors

/// Linear-in-moments expansion of one moment derivative:
/// d/dt m_order = sum_j coefficients[j] * m_j.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeeDescriptor {
    pub order: usize,
    pub coefficients: Vec<f64>,
    /// Highest moment index with a nonzero coefficient; witnesses that each
    /// row of the system references finitely many moments.
    pub highest_moment: usize,
}

impl MeeDescriptor {
    /// Evaluate the right-hand side against a moment vector. Errors when the
    /// vector is too short to close this row.
    pub fn eval(&self, moments: &MomentVector) -> Result<f64> {
        if self.highest_moment >= moments.0.len() {
            return Err(Error::InvalidConfig(format!(
                "moment derivative of order {} references m_{} but only {} moments are available",
                self.order,
                self.highest_moment,
                moments.0.len()
            )));
        }
        Ok(self
            .coefficients
            .iter()
            .zip(&moments.0)
            .map(|(c, m)| c * m)
            .sum())
    }
}

/// Descriptors for the moment derivatives of orders 1..=k_max under the
/// model's generator. Order 0 is constant (the generator annihilates
/// constants) and is omitted.
pub fn mee_rhs(model: &Model, k_max: usize) -> Result<Vec<MeeDescriptor>> {
    if k_max == 0 {
        return Err(Error::InvalidConfig(
            "moment order must be at least 1".into(),
        ));
    }
    let (drift, diffusion, sigma) = match model {
        Model::Sde(m) => (m.drift.clone(), m.diffusion_poly.clone(), m.noise_amplitude),
        Model::Mvsde(_) => {
            return Err(Error::InvalidConfig(
                "moment descriptors are defined for plain SDE models; freeze the mean-field drift first".into(),
            ))
        }
    };
    let mut out = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let p = generator_apply_monomial(&drift, &diffusion, sigma, k);
        let coefficients = p.coefficients().to_vec();
        let highest_moment = coefficients.iter().rposition(|&c| c != 0.0).unwrap_or(0);
        out.push(MeeDescriptor {
            order: k,
            coefficients,
            highest_moment,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// exact OU moments

/// Moments of the Ornstein-Uhlenbeck process dX = -alpha X dt + sigma dW at
/// time `t`, from the closed-form recursion: each moment is a finite sum of
/// exponentials in t, integrated termwise without discretization error.
pub fn ou_moments(
    alpha: f64,
    sigma: f64,
    init_moments: &MomentVector,
    t: f64,
) -> Result<MomentVector> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig("alpha must be positive".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidConfig("time must be nonnegative".into()));
    }
    let k_max = init_moments.0.len();
    // reps[n]: map from exponent index j to coefficient, m_n(s) = sum c_j e^{-alpha j s}
    let mut reps: Vec<BTreeMap<usize, f64>> = Vec::with_capacity(k_max);
    for n in 0..k_max {
        let mut map = BTreeMap::new();
        let mut self_coeff = init_moments.0[n];
        if n >= 2 {
            let gain = 0.5 * sigma * sigma * (n * (n - 1)) as f64;
            let source = reps[n - 2].clone();
            for (&j, &c) in &source {
                // j <= n-2 < n, so the denominator never vanishes
                let w = gain * c / (alpha * (n - j) as f64);
                *map.entry(j).or_insert(0.0) += w;
                self_coeff -= w;
            }
        }
        *map.entry(n).or_insert(0.0) += self_coeff;
        reps.push(map);
    }
    let values: Vec<f64> = reps
        .iter()
        .map(|map| {
            map.iter()
                .map(|(&j, &c)| c * (-alpha * j as f64 * t).exp())
                .sum()
        })
        .collect();
    Ok(MomentVector(values))
}

// ---------------------------------------------------------------------------
// counter-based RNG and particle simulation

/// splitmix64 finalizer; a high-quality 64-bit mixing function.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[inline]
fn unit_open(x: u64) -> f64 {
    // (0, 1) strictly: the offset keeps both endpoints out
    ((x >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Standard normal draw keyed by (seed, particle, step). Pure function of
/// its arguments, so particle updates parallelize without a shared stream.
pub fn counter_gaussian(seed: u64, particle: u64, step: u64) -> f64 {
    let k =
        mix64(mix64(mix64(seed ^ 0x9E3779B97F4A7C15).wrapping_add(particle)).wrapping_add(step));
    let u1 = unit_open(mix64(k ^ 0xD1B54A32D192ED03));
    let u2 = unit_open(mix64(k ^ 0x8CB92BA72F3D8DD7));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitSampler {
    Normal { mean: f64, std_dev: f64 },
    PointMass { value: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub time: f64,
    pub rng_seed: u64,
    pub step_size: f64,
}

impl ParticleEnsemble {
    /// Sample moment of order k.
    pub fn moment(&self, k: usize) -> f64 {
        let m = self.positions.len() as f64;
        self.positions.iter().map(|x| x.powi(k as i32)).sum::<f64>() / m
    }

    /// Summary record: first, second, and fourth sample moments plus the
    /// run parameters.
    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "m1": self.moment(1),
            "m2": self.moment(2),
            "m4": self.moment(4),
            "M": self.positions.len(),
            "dt": self.step_size,
            "T": self.time,
            "seed": self.rng_seed,
        })
        .to_string()
    }
}

pub const DEFAULT_GUARD_RADIUS: f64 = 1e6;

/// Euler-Maruyama simulation with the default escape guard.
pub fn euler_maruyama(
    model: &Model,
    n_particles: usize,
    dt: f64,
    t_end: f64,
    seed: u64,
    init: InitSampler,
) -> Result<ParticleEnsemble> {
    euler_maruyama_guarded(
        model,
        n_particles,
        dt,
        t_end,
        seed,
        init,
        DEFAULT_GUARD_RADIUS,
    )
}

/// Euler-Maruyama with an explicit guard radius. For mean-field models the
/// empirical interaction moment is recomputed every step by a sequential
/// reduction, so results are bit-identical for any worker count.
pub fn euler_maruyama_guarded(
    model: &Model,
    n_particles: usize,
    dt: f64,
    t_end: f64,
    seed: u64,
    init: InitSampler,
    guard_radius: f64,
) -> Result<ParticleEnsemble> {
    if n_particles == 0 {
        return Err(Error::InvalidConfig(
            "particle count must be at least 1".into(),
        ));
    }
    if !(dt > 0.0) || !(t_end >= dt) {
        return Err(Error::InvalidConfig("need dt > 0 and T >= dt".into()));
    }
    let n_steps = (t_end / dt).round() as u64;
    let mut positions: Vec<f64> = match init {
        InitSampler::PointMass { value } => vec![value; n_particles],
        InitSampler::Normal { mean, std_dev } => (0..n_particles)
            .map(|p| mean + std_dev * counter_gaussian(seed, p as u64, u64::MAX))
            .collect(),
    };
    check_guard(&positions, guard_radius)?;
    let sqrt_dt = dt.sqrt();
    let (drift_poly, theta, interaction) = match model {
        Model::Sde(m) => (m.drift.clone(), 0.0, None),
        Model::Mvsde(m) => (
            m.effective_potential_deriv.scale(-1.0),
            m.theta,
            Some(m.interaction_deriv.clone()),
        ),
    };
    let bpoly = model.diffusion_poly().clone();
    let sigma = model.sigma();
    for step in 0..n_steps {
        let coupling = match &interaction {
            Some(p) => theta * mean_poly(&positions, p),
            None => 0.0,
        };
        positions.par_iter_mut().enumerate().for_each(|(p, x)| {
            let xi = counter_gaussian(seed, p as u64, step);
            let a = drift_poly.eval(*x) + coupling;
            let b = bpoly.eval(*x);
            *x += a * dt + sigma * b * sqrt_dt * xi;
        });
        check_guard(&positions, guard_radius)?;
    }
    Ok(ParticleEnsemble {
        positions,
        time: n_steps as f64 * dt,
        rng_seed: seed,
        step_size: dt,
    })
}

/// Sequential mean of p over positions in fixed chunks; the summation order
/// is independent of thread count.
fn mean_poly(positions: &[f64], p: &crate::polynomial::Polynomial) -> f64 {
    let mut total = 0.0;
    for chunk in positions.chunks(4096) {
        let mut acc = 0.0;
        for &x in chunk {
            acc += p.eval(x);
        }
        total += acc;
    }
    total / positions.len() as f64
}

fn check_guard(positions: &[f64], guard: f64) -> Result<()> {
    if positions.iter().any(|x| !x.is_finite() || x.abs() > guard) {
        Err(Error::BlowUp)
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// self-consistency map

/// F(mu) = E_{rho_mu}[x] - mu for the quadratic-interaction mean-field
/// model, where rho_mu is the tilted single-particle stationary density.
/// Roots of F are the stationary means of the full model.
pub fn self_consistency(m: &crate::model::MvsdeModel, mean_candidate: f64) -> Result<f64> {
    let quadratic = m.interaction_deriv.coefficients() == [0.0, 1.0];
    if !quadratic {
        return Err(Error::InvalidConfig(
            "self-consistency map requires interaction derivative x".into(),
        ));
    }
    if m.diffusion_poly.degree() != Some(0) {
        return Err(Error::InvalidConfig(
            "self-consistency map requires constant diffusion".into(),
        ));
    }
    let sigma = m.noise_amplitude;
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(
            "noise amplitude must be positive".into(),
        ));
    }
    let vbar = m.effective_potential_deriv.antiderivative();
    let b = m.diffusion_poly.eval(0.0);
    let scale2 = 2.0 / (sigma * sigma * b * b);
    // tilted potential in the exponent
    let w = |x: f64| scale2 * (vbar.eval(x) - m.theta * mean_candidate * x);
    // mode and curvature scale from the tilted potential
    let wprime = m
        .effective_potential_deriv
        .sub(&crate::polynomial::Polynomial::constant(
            m.theta * mean_candidate,
        ));
    let mut mode = 0.0;
    let mut best = f64::INFINITY;
    if let Ok(roots) = wprime.real_roots(crate::polynomial::IMAG_TOL_DEFAULT) {
        for r in roots {
            let v = w(r);
            if v < best {
                best = v;
                mode = r;
            }
        }
    }
    let wdd = wprime.derivative().eval(mode) * scale2;
    let s = if wdd > 0.0 { (1.0 / wdd).sqrt() } else { 1.0 };
    let w_mode = w(mode);
    let mut half = 8.0 * s;
    let mut ok = false;
    for _ in 0..60 {
        let tail = (-(w(mode - half) - w_mode))
            .exp()
            .max((-(w(mode + half) - w_mode)).exp());
        if tail < 1e-12 {
            ok = true;
            break;
        }
        half *= 2.0;
    }
    if !ok {
        return Err(Error::InvalidConfig(
            "self-consistency support search did not terminate".into(),
        ));
    }
    let dens = |x: f64| (-(w(x) - w_mode)).exp();
    let (i0, ok0) = adaptive_simpson(&dens, mode - half, mode + half, 1e-12, 40);
    let numer = |x: f64| x * dens(x);
    let (i1, ok1) = adaptive_simpson(&numer, mode - half, mode + half, 1e-12, 40);
    if !ok0 || !ok1 || !(i0 > 0.0) || !i0.is_finite() || !i1.is_finite() {
        return Err(Error::NonConvergence {
            final_residual: f64::NAN,
            residual_history: vec![],
        });
    }
    Ok(i1 / i0 - mean_candidate)
}

/// All roots of the self-consistency map in [lo, hi], located by a sign-change
/// scan over `n_scan` intervals followed by bisection.
pub fn self_consistency_roots(
    m: &crate::model::MvsdeModel,
    lo: f64,
    hi: f64,
    n_scan: usize,
) -> Result<Vec<f64>> {
    if !(hi > lo) || n_scan < 2 {
        return Err(Error::InvalidConfig(
            "scan interval must be nonempty with at least 2 subdivisions".into(),
        ));
    }
    let h = (hi - lo) / n_scan as f64;
    let mut prev_x = lo;
    let mut prev_f = self_consistency(m, prev_x)?;
    let mut roots = Vec::new();
    for i in 1..=n_scan {
        let x = lo + i as f64 * h;
        let fx = self_consistency(m, x)?;
        if prev_f == 0.0 {
            roots.push(prev_x);
        } else if prev_f * fx < 0.0 {
            let (mut a, mut fa, mut b) = (prev_x, prev_f, x);
            for _ in 0..80 {
                let c = 0.5 * (a + b);
                let fc = self_consistency(m, c)?;
                if fc == 0.0 {
                    a = c;
                    b = c;
                    break;
                }
                if fa * fc < 0.0 {
                    b = c;
                } else {
                    a = c;
                    fa = fc;
                }
                if (b - a).abs() < 1e-13 * (1.0 + c.abs()) {
                    break;
                }
            }
            roots.push(0.5 * (a + b));
        }
        prev_x = x;
        prev_f = fx;
    }
    if prev_f == 0.0 {
        roots.push(prev_x);
    }
    Ok(roots)
}

/// Adaptive Simpson quadrature; returns (value, converged).
fn adaptive_simpson(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    rel_tol: f64,
    max_depth: usize,
) -> (f64, bool) {
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let eps = rel_tol * whole.abs().max(1e-300);
    simpson_rec(f, a, b, fa, fm, fb, whole, eps, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: usize,
) -> (f64, bool) {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * eps {
        return (left + right + delta / 15.0, true);
    }
    if depth == 0 {
        return (left + right, false);
    }
    let (lv, lok) = simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1);
    let (rv, rok) = simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1);
    (lv + rv, lok && rok)
}

// ---------------------------------------------------------------------------
// a-priori bounds and summability

/// (y*)^k where y* is the positive root of y^2 - (1-theta) y - sigma^2/2:
/// the even-moment ceiling of order 2k for admissible initial data.
pub fn appendix_bound(theta: f64, sigma: f64, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig(
            "bound order must be at least 1".into(),
        ));
    }
    let c = 1.0 - theta;
    let y_star = 0.5 * (c + (c * c + 2.0 * sigma * sigma).sqrt());
    Ok(y_star.powi(k as i32))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummabilityReport {
    /// Cumulative sums of theta0^n |m_n| / n! for n = 1..=2K.
    pub partial_sums: Vec<f64>,
    /// Set when the last two even-order terms are non-decreasing: the tail
    /// shows no sign of factorial decay on the available range.
    pub tail_ratio_flag: bool,
    /// Odd-moment domination: sum |m_{2k-1}|/(2k-1)! <= 2 sum m_{2k}/(2k)!
    /// with the even sum taken from order 0. Holds for every probability
    /// measure; a violation means the moment vector is not one.
    pub odd_dominated: bool,
    /// Input had an odd highest order; the top moment was dropped.
    pub truncated: bool,
}

/// Factorial-summability diagnostic. A heuristic witness on finitely many
/// moments, not a proof of summability.
pub fn summability_check(moments: &MomentVector, theta0: f64) -> Result<SummabilityReport> {
    if moments.0.is_empty() {
        return Err(Error::InvalidConfig("moment vector is empty".into()));
    }
    let mut max_order = moments.0.len() - 1;
    let truncated = max_order % 2 == 1;
    if truncated {
        max_order -= 1;
    }
    let m = &moments.0[..=max_order];
    let mut partial_sums = Vec::with_capacity(max_order);
    let mut acc = 0.0;
    let mut term = 1.0f64; // theta0^n / n!
    let mut terms = vec![0.0; max_order + 1];
    for (n, &mn) in m.iter().enumerate().skip(1) {
        term *= theta0 / n as f64;
        terms[n] = term.abs() * mn.abs();
        acc += terms[n];
        partial_sums.push(acc);
    }
    let tail_ratio_flag = if max_order >= 4 {
        terms[max_order] >= terms[max_order - 2]
    } else {
        false
    };
    let mut odd_sum = 0.0;
    let mut even_sum = 0.0;
    let mut inv_fact = 1.0f64;
    for (n, &mn) in m.iter().enumerate() {
        if n > 0 {
            inv_fact /= n as f64;
        }
        if n % 2 == 1 {
            odd_sum += mn.abs() * inv_fact;
        } else {
            even_sum += mn * inv_fact;
        }
    }
    let rhs = 2.0 * even_sum;
    let odd_dominated = odd_sum <= rhs * (1.0 + 1e-12) + 1e-300;
    Ok(SummabilityReport {
        partial_sums,
        tail_ratio_flag,
        odd_dominated,
        truncated,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrderBound {
    pub order: usize,
    pub observed: f64,
    pub bound: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundReport {
    pub per_order: Vec<OrderBound>,
    pub summability: SummabilityReport,
}

/// Check observed even moments against max(initial, a-priori ceiling) and
/// attach the summability diagnostic at `theta0`.
pub fn bound_report(
    theta: f64,
    sigma: f64,
    initial_moments: &MomentVector,
    observed_moments: &MomentVector,
    theta0: f64,
) -> Result<BoundReport> {
    let summability = summability_check(observed_moments, theta0)?;
    let mut per_order = Vec::new();
    let avail = observed_moments.0.len();
    let mut k = 1;
    while 2 * k < avail {
        let order = 2 * k;
        let observed = observed_moments.0[order];
        let ceiling = appendix_bound(theta, sigma, k)?;
        let initial = initial_moments.0.get(order).copied().unwrap_or(0.0);
        let bound = ceiling.max(initial);
        per_order.push(OrderBound {
            order,
            observed,
            bound,
            satisfied: observed <= bound * (1.0 + 1e-9),
        });
        k += 1;
    }
    Ok(BoundReport {
        per_order,
        summability,
    })
}
