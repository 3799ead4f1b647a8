//! Stationary solutions of the node/weight system: direct solves, small-noise
//! cluster seeding, exact noise rescaling, a mean-shift stability probe, and
//! the bifurcation sweep over the noise amplitude.

use crate::dynamics::packed_raw_rates;
use crate::error::{Error, Result};
use crate::model::{Model, MvsdeModel, SdeModel};
use crate::polynomial::{Polynomial, IMAG_TOL_DEFAULT};
use crate::quadrature::{gauss_christoffel, gauss_hermite_init, MomentVector, QuadratureMeasure};
use crate::solver::{inf_norm, newton_damped, SolveReport};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Default residual tolerance (infinity norm) for stationary solves.
pub const DEFAULT_STATIONARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StationarySolution {
    pub measure: QuadratureMeasure,
    pub sigma: f64,
    /// Infinity norm of the stationary residual at the returned measure.
    pub residual_norm: f64,
    pub converged: bool,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeVerdict {
    #[serde(rename = "unstable")]
    Unstable,
    /// The probe is sufficient for instability only; a negative reading is
    /// indicative, not a proof of stability.
    #[serde(rename = "indicativeStable")]
    IndicativeStable,
}

impl std::fmt::Display for ProbeVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProbeVerdict::Unstable => write!(f, "unstable"),
            ProbeVerdict::IndicativeStable => write!(f, "indicativeStable"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityProbe {
    /// Per-node displacement dx_i/dh; all entries share one strict sign.
    pub direction: Vec<f64>,
    /// d m1 / dh of the perturbed mean under the probe direction.
    pub derivative: f64,
    pub verdict: ProbeVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Symmetric,
    Upper,
    Lower,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::Symmetric => write!(f, "symmetric"),
            Branch::Upper => write!(f, "upper"),
            Branch::Lower => write!(f, "lower"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BifurcationEntry {
    pub sigma: f64,
    pub branch: Branch,
    pub m1: f64,
    pub m2: f64,
    pub residual_norm: f64,
    pub verdict: ProbeVerdict,
    pub measure: QuadratureMeasure,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub sigma: f64,
    pub branch: Branch,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BifurcationDiagram {
    pub entries: Vec<BifurcationEntry>,
    pub critical_sigma: Option<f64>,
    /// Grid points where a branch solve failed; recorded, not fatal.
    pub skipped: Vec<SkippedPoint>,
}

/// Both readings of the necessary-instability threshold for the symmetric
/// branch. The inequality behind it contains a sigma-scaling step whose
/// exponent admits two readings; neither is selected silently.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    /// (3 m2)^(-1/2) at sigma = 1: the inequality read with m2 fixed.
    pub primary: f64,
    /// (3 m2)^(-1) at sigma = 1: the reading implied by the m2 ~ sigma
    /// scaling of the symmetric branch.
    pub alternate: f64,
    pub m2_at_unit_sigma: f64,
}

// ---------------------------------------------------------------------------
// residuals

fn packed_from_measure(mu: &QuadratureMeasure) -> Vec<f64> {
    mu.nodes().iter().chain(mu.weights()).copied().collect()
}

/// Full-system stationary residual: the N node equations multiplied through
/// by their weights, the first N-1 weight equations, and the mass constraint
/// replacing the last one.
fn pinned_residual(model: &Model, z: &[f64]) -> Vec<f64> {
    let n = z.len() / 2;
    let rates = packed_raw_rates(model, z);
    let mut r = rates.beta_xdot;
    r.extend_from_slice(&rates.bdot[..n - 1]);
    r.push(z[n..].iter().sum::<f64>() - 1.0);
    r
}

/// Continuation-path residual: plain node equations, weight equations with
/// the `drop`-th row replaced by the mass constraint. Dropping the row of the
/// heaviest node keeps the retained equations well conditioned on both
/// mirror branches.
fn interior_residual(model: &Model, z: &[f64], drop: usize) -> Vec<f64> {
    let n = z.len() / 2;
    let rates = packed_raw_rates(model, z);
    let mut r = rates.xdot;
    for (i, b) in rates.bdot.iter().enumerate() {
        if i != drop {
            r.push(*b);
        }
    }
    r.push(z[n..].iter().sum::<f64>() - 1.0);
    r
}

/// Residual of the mirror-constrained subsystem. Unknowns are the positive
/// half nodes and weights; for odd N the center node sits at 0 and its weight
/// carries the leftover mass.
fn sym_residual(model: &Model, zh: &[f64], n: usize) -> Vec<f64> {
    let h = zh.len() / 2;
    let xs = &zh[..h];
    let bs = &zh[h..];
    let mut y = vec![0.0; 2 * n];
    if n % 2 == 0 {
        for i in 0..h {
            y[h - 1 - i] = -xs[i];
            y[h + i] = xs[i];
            y[n + h - 1 - i] = bs[i];
            y[n + h + i] = bs[i];
        }
        let rates = packed_raw_rates(model, &y);
        let mut r = Vec::with_capacity(2 * h);
        r.extend_from_slice(&rates.xdot[h..]);
        // drop the outermost weight equation; conservation and mirror
        // symmetry imply it
        r.extend_from_slice(&rates.bdot[h..2 * h - 1]);
        r.push(2.0 * bs.iter().sum::<f64>() - 1.0);
        r
    } else {
        let b0 = 1.0 - 2.0 * bs.iter().sum::<f64>();
        for i in 0..h {
            y[h - 1 - i] = -xs[i];
            y[h + 1 + i] = xs[i];
            y[n + h - 1 - i] = bs[i];
            y[n + h + 1 + i] = bs[i];
        }
        y[h] = 0.0;
        y[n + h] = b0;
        let rates = packed_raw_rates(model, &y);
        let mut r = Vec::with_capacity(2 * h);
        r.extend_from_slice(&rates.xdot[h + 1..]);
        r.extend_from_slice(&rates.bdot[h + 1..]);
        r
    }
}

/// Mirror a half-state into a full measure. Fails when the half is not an
/// admissible positive ascending configuration.
fn measure_from_half(zh: &[f64], n: usize) -> Result<QuadratureMeasure> {
    let h = zh.len() / 2;
    let xs = &zh[..h];
    let bs = &zh[h..];
    for i in 0..h {
        if !(xs[i] > 0.0) || !xs[i].is_finite() || !(bs[i] > 0.0) {
            return Err(Error::NonConvergence {
                final_residual: f64::NAN,
                residual_history: vec![],
            });
        }
        if i > 0 && xs[i] <= xs[i - 1] {
            return Err(Error::NodesNotOrdered);
        }
    }
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in (0..h).rev() {
        nodes.push(-xs[i]);
        weights.push(bs[i]);
    }
    if n % 2 == 1 {
        let b0 = 1.0 - 2.0 * bs.iter().sum::<f64>();
        if !(b0 > 0.0) {
            return Err(Error::WeightUnderflow);
        }
        nodes.push(0.0);
        weights.push(b0);
    }
    for i in 0..h {
        nodes.push(xs[i]);
        weights.push(bs[i]);
    }
    let mass: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= mass;
    }
    QuadratureMeasure::new(nodes, weights)
}

fn measure_from_packed(z: &[f64]) -> Result<QuadratureMeasure> {
    let n = z.len() / 2;
    let mut pairs: Vec<(f64, f64)> = z[..n].iter().copied().zip(z[n..].iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mass: f64 = pairs.iter().map(|p| p.1).sum();
    if !(mass > 0.0) {
        return Err(Error::WeightUnderflow);
    }
    let nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let weights: Vec<f64> = pairs.iter().map(|p| p.1 / mass).collect();
    QuadratureMeasure::new(nodes, weights)
}

fn residual_at_measure(model: &Model, mu: &QuadratureMeasure) -> f64 {
    inf_norm(&pinned_residual(model, &packed_from_measure(mu)))
}

// ---------------------------------------------------------------------------
// direct solve

/// Solve the full stationary system by damped Newton from the given seed.
/// Non-convergence is reported through the `converged` flag, not an error;
/// only a structural failure (node collision, weight collapse) errors.
pub fn solve_stationary(
    model: &Model,
    seed: &QuadratureMeasure,
    tol: f64,
) -> Result<StationarySolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(
            "stationary tolerance must be positive".into(),
        ));
    }
    if !(model.sigma() > 0.0) {
        return Err(Error::InvalidConfig(
            "noise amplitude must be positive".into(),
        ));
    }
    let n = seed.len();
    let z0 = packed_from_measure(seed);
    let guard = move |z: &[f64]| -> Result<()> {
        let nodes = &z[..n];
        let range = nodes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        let span = (range.1 - range.0).abs();
        for i in 0..n {
            for j in i + 1..n {
                if (nodes[i] - nodes[j]).abs() <= 1e-12 * (1.0 + span) {
                    return Err(Error::NodeCollision);
                }
            }
        }
        Ok(())
    };
    let f = |z: &[f64]| pinned_residual(model, z);
    let mut rep = newton_damped(&f, Some(&guard), &z0, tol, 100, true)?;
    let endpoint_ok = |z: &[f64]| guard(z).is_ok() && measure_from_packed(z).is_ok();
    if !(rep.converged && endpoint_ok(&rep.z)) {
        // Newton left the admissible cone or stalled; retry with the
        // trust-region fallback and keep the best admissible endpoint.
        for start in [rep.z.clone(), z0] {
            let cand = crate::solver::dogleg(&f, &start, tol, 200);
            if endpoint_ok(&cand.z) && (cand.converged || cand.residual_norm < rep.residual_norm) {
                let done = cand.converged;
                rep = cand;
                if done {
                    break;
                }
            }
        }
    }
    let measure = match measure_from_packed(&rep.z) {
        Ok(m) => m,
        Err(_) => {
            return Err(Error::NonConvergence {
                final_residual: rep.residual_norm,
                residual_history: rep.history,
            })
        }
    };
    let residual_norm = residual_at_measure(model, &measure);
    Ok(StationarySolution {
        sigma: model.sigma(),
        converged: residual_norm < tol,
        measure,
        residual_norm,
        newton_iterations: rep.iterations,
    })
}

// ---------------------------------------------------------------------------
// parity helpers

fn is_odd_poly(p: &Polynomial) -> bool {
    p.coefficients().iter().step_by(2).all(|&c| c == 0.0)
}

fn is_even_poly(p: &Polynomial) -> bool {
    p.coefficients()
        .iter()
        .skip(1)
        .step_by(2)
        .all(|&c| c == 0.0)
}

fn model_symmetric(model: &Model) -> bool {
    match model {
        Model::Sde(m) => is_odd_poly(&m.drift) && is_even_poly(&m.diffusion_poly),
        Model::Mvsde(m) => {
            is_odd_poly(&m.effective_potential_deriv)
                && is_odd_poly(&m.interaction_deriv)
                && is_even_poly(&m.diffusion_poly)
        }
    }
}

/// `Some(c)` iff p = c x^deg exactly (all other coefficients zero, c != 0).
fn pure_monomial(p: &Polynomial, deg: usize) -> Option<f64> {
    let c = p.coefficients();
    if c.len() != deg + 1 {
        return None;
    }
    if c[..deg].iter().any(|&v| v != 0.0) {
        return None;
    }
    Some(c[deg])
}

// ---------------------------------------------------------------------------
// cluster sites and seeding

struct ClusterSite {
    x: f64,
    /// Index of the lowest non-vanishing derivative of the drift-like
    /// polynomial at the site.
    order: usize,
    /// Value of that derivative.
    leading: f64,
}

/// Drift-like polynomial whose decreasing roots mark stable cluster sites.
fn pseudo_drift(model: &Model) -> Polynomial {
    match model {
        Model::Sde(m) => m.drift.clone(),
        Model::Mvsde(m) => m
            .interaction_deriv
            .scale(m.theta)
            .sub(&m.effective_potential_deriv),
    }
}

fn cluster_sites(model: &Model) -> Result<Vec<ClusterSite>> {
    let p = pseudo_drift(model);
    let roots = p.real_roots(IMAG_TOL_DEFAULT)?;
    let mut sites = Vec::new();
    let mut i = 0;
    while i < roots.len() {
        let mut j = i + 1;
        while j < roots.len() && roots[j] - roots[j - 1] <= 1e-6 * (1.0 + roots[j].abs()) {
            j += 1;
        }
        let x = roots[i..j].iter().sum::<f64>() / (j - i) as f64;
        if let Some((order, leading)) = lowest_derivative(&p, x) {
            sites.push(ClusterSite { x, order, leading });
        }
        i = j;
    }
    Ok(sites)
}

fn lowest_derivative(p: &Polynomial, x: f64) -> Option<(usize, f64)> {
    let mut q = p.clone();
    let mut m = 0usize;
    loop {
        q = q.derivative();
        m += 1;
        if q.is_zero() {
            return None;
        }
        let v = q.eval(x);
        let scale: f64 = q
            .coefficients()
            .iter()
            .enumerate()
            .map(|(i, c)| c.abs() * x.abs().max(1.0).powi(i as i32))
            .sum();
        if v.abs() > 1e-6 * scale.max(1e-300) {
            return Some((m, v));
        }
        if m > 64 {
            return None;
        }
    }
}

fn site_qualifies(s: &ClusterSite) -> bool {
    s.order % 2 == 1 && s.leading < 0.0
}

static DEGENERATE_REFERENCE: OnceLock<Mutex<HashMap<(usize, usize), (Vec<f64>, Vec<f64>)>>> =
    OnceLock::new();

/// Node offsets and weights of the unit-noise stationary solution for the
/// reference drift -x^(2n-1), solved once per (n, k) and cached.
fn degenerate_reference(n_order: usize, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let cache = DEGENERATE_REFERENCE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&(n_order, k)) {
        return Ok(v.clone());
    }
    let deg = 2 * n_order - 1;
    let mut c = vec![0.0; deg + 1];
    c[deg] = -1.0;
    let model = Model::Sde(SdeModel {
        drift: Polynomial::new(c),
        diffusion_poly: Polynomial::constant(1.0),
        noise_amplitude: 1.0,
    });
    let sym = symmetric_stationary(&model, k, 1.0, DEFAULT_STATIONARY_TOL)?;
    let sol = solve_stationary(&model, &sym.measure, DEFAULT_STATIONARY_TOL)?;
    let sol = if sol.converged { sol } else { sym };
    if !sol.converged {
        return Err(Error::NonConvergence {
            final_residual: sol.residual_norm,
            residual_history: vec![],
        });
    }
    let out = (sol.measure.nodes().to_vec(), sol.measure.weights().to_vec());
    cache.lock().unwrap().insert((n_order, k), out.clone());
    Ok(out)
}

/// Small-noise seed: one cluster per stable drift root, spread by the local
/// linearization scale (or the cached reference profile at a degenerate
/// root), Gauss-Hermite weights within a cluster, equal mass across clusters.
pub fn hermite_seed(
    model: &Model,
    sigma: f64,
    points_per_cluster: usize,
) -> Result<QuadratureMeasure> {
    if points_per_cluster == 0 {
        return Err(Error::InvalidConfig(
            "points per cluster must be at least 1".into(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(
            "noise amplitude must be positive".into(),
        ));
    }
    let sites: Vec<ClusterSite> = cluster_sites(model)?
        .into_iter()
        .filter(site_qualifies)
        .collect();
    if sites.is_empty() {
        return Err(Error::NoStableClusterSites);
    }
    let gh = gauss_hermite_init(points_per_cluster, 0.0, 1.0)?;
    let n_clusters = sites.len() as f64;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for site in &sites {
        if site.order == 1 {
            let b = model.diffusion_poly().eval(site.x);
            let scale = sigma * (b * b / site.leading.abs()).sqrt();
            for (x, w) in gh.nodes().iter().zip(gh.weights()) {
                nodes.push(site.x + scale * x);
                weights.push(w / n_clusters);
            }
        } else {
            let n_order = (site.order + 1) / 2;
            let (ref_nodes, ref_weights) = degenerate_reference(n_order, points_per_cluster)?;
            let scale = sigma.powf(1.0 / n_order as f64);
            for (x, w) in ref_nodes.iter().zip(&ref_weights) {
                nodes.push(site.x + scale * x);
                weights.push(w / n_clusters);
            }
        }
    }
    QuadratureMeasure::new(nodes, weights)
}

// ---------------------------------------------------------------------------
// scaling

fn site_filter_sorted(sites: &[ClusterSite]) -> Vec<f64> {
    let mut xs: Vec<f64> = sites
        .iter()
        .filter(|s| site_qualifies(s))
        .map(|s| s.x)
        .collect();
    xs.sort_by(f64::total_cmp);
    xs
}

fn measure_is_symmetric(mu: &QuadratureMeasure) -> bool {
    let n = mu.len();
    let x = mu.nodes();
    let w = mu.weights();
    let span = x[n - 1] - x[0];
    for i in 0..n {
        let j = n - 1 - i;
        if (x[i] + x[j]).abs() > 1e-9 * (1.0 + span) || (w[i] - w[j]).abs() > 1e-9 {
            return false;
        }
    }
    true
}

/// Rescale a stationary solution for drift -k x^(2n-1) (plus, for mean-field
/// models, an odd interaction acting on a symmetric solution) from its noise
/// amplitude to `sigma_to`: nodes scale by (sigma_to/sigma)^(1/n), weights
/// are untouched. No re-solve happens; the residual is re-evaluated.
pub fn scale_solution(
    model: &Model,
    sol: &StationarySolution,
    sigma_to: f64,
    n_exponent: usize,
) -> Result<StationarySolution> {
    if !sol.converged {
        return Err(Error::InvalidConfig(
            "scaling requires a converged solution".into(),
        ));
    }
    if n_exponent == 0 || !(sigma_to > 0.0) {
        return Err(Error::InvalidConfig(
            "scaling exponent and target noise must be positive".into(),
        ));
    }
    let deg = 2 * n_exponent - 1;
    let admissible = match model {
        Model::Sde(m) => {
            m.diffusion_poly.degree() == Some(0)
                && pure_monomial(&m.drift, deg).map_or(false, |c| c < 0.0)
        }
        Model::Mvsde(m) => {
            m.diffusion_poly.degree() == Some(0)
                && pure_monomial(&m.effective_potential_deriv, deg).map_or(false, |c| c > 0.0)
                && is_odd_poly(&m.interaction_deriv)
                && measure_is_symmetric(&sol.measure)
        }
    };
    if !admissible {
        return Err(Error::ScalingLawInapplicable);
    }
    let factor = (sigma_to / sol.sigma).powf(1.0 / n_exponent as f64);
    let nodes: Vec<f64> = sol.measure.nodes().iter().map(|x| x * factor).collect();
    let measure = QuadratureMeasure::new(nodes, sol.measure.weights().to_vec())?;
    let scaled_model = model.with_sigma(sigma_to);
    let residual_norm = residual_at_measure(&scaled_model, &measure);
    Ok(StationarySolution {
        measure,
        sigma: sigma_to,
        residual_norm,
        converged: residual_norm < DEFAULT_STATIONARY_TOL,
        newton_iterations: 0,
    })
}

// ---------------------------------------------------------------------------
// stability probe

/// Rate of change of the approximant mean under a unidirectional node
/// displacement: sum_i beta_i (-V''(x_i)) dx_i/dh with V the full potential
/// (single-particle part minus theta times the interaction).
pub fn stability_probe(
    m: &MvsdeModel,
    sol: &StationarySolution,
    direction: &[f64],
) -> Result<StabilityProbe> {
    if !sol.converged {
        return Err(Error::InvalidConfig(
            "stability probe requires a converged solution".into(),
        ));
    }
    if direction.len() != sol.measure.len() {
        return Err(Error::InvalidConfig(
            "probe direction length must match the node count".into(),
        ));
    }
    let positive = direction.iter().all(|&d| d > 0.0);
    let negative = direction.iter().all(|&d| d < 0.0);
    if !(positive || negative) || direction.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidConfig(
            "probe direction must be unidirectional (one strict sign)".into(),
        ));
    }
    let vbar_dd = m.effective_potential_deriv.derivative();
    let p_dd = m.interaction_deriv.derivative();
    let derivative: f64 = sol
        .measure
        .nodes()
        .iter()
        .zip(sol.measure.weights())
        .zip(direction)
        .map(|((&x, &b), &d)| b * -(vbar_dd.eval(x) - m.theta * p_dd.eval(x)) * d)
        .sum();
    let sign = if positive { 1.0 } else { -1.0 };
    let verdict = if derivative * sign > 0.0 {
        ProbeVerdict::Unstable
    } else {
        ProbeVerdict::IndicativeStable
    };
    Ok(StabilityProbe {
        direction: direction.to_vec(),
        derivative,
        verdict,
    })
}

/// Noise level below which the symmetric branch is necessarily unstable,
/// from the unit-noise second moment of the symmetric branch. Requires the
/// bistable quartic form: pure cubic confining derivative, linear
/// interaction, constant diffusion.
pub fn instability_threshold(m: &MvsdeModel, n: usize) -> Result<ThresholdEstimate> {
    let ds_form = pure_monomial(&m.effective_potential_deriv, 3).map_or(false, |c| c > 0.0)
        && pure_monomial(&m.interaction_deriv, 1) == Some(1.0)
        && m.diffusion_poly.degree() == Some(0);
    if !ds_form {
        return Err(Error::InvalidConfig(
            "instability threshold requires a pure cubic potential derivative, interaction derivative x, and constant diffusion".into(),
        ));
    }
    if n < 2 {
        return Err(Error::InvalidConfig(
            "instability threshold needs at least 2 nodes (the 1-node symmetric solution is a point mass)".into(),
        ));
    }
    let model = Model::Mvsde(m.clone());
    let sym = symmetric_stationary(&model, n, 1.0, DEFAULT_STATIONARY_TOL)?;
    if !sym.converged {
        return Err(Error::NonConvergence {
            final_residual: sym.residual_norm,
            residual_history: vec![],
        });
    }
    let m2 = sym.measure.moment(2);
    Ok(ThresholdEstimate {
        primary: (3.0 * m2).powf(-0.5),
        alternate: 1.0 / (3.0 * m2),
        m2_at_unit_sigma: m2,
    })
}

// ---------------------------------------------------------------------------
// symmetric solve

/// Stationary solve restricted to the mirror-symmetric subspace. The model
/// must have odd drift parts and even diffusion; the returned measure is
/// exactly symmetric by construction.
pub fn symmetric_stationary(
    model: &Model,
    n: usize,
    sigma: f64,
    tol: f64,
) -> Result<StationarySolution> {
    sym_solve(model, n, sigma, tol, None).map(|(sol, _)| sol)
}

/// `warm` carries a previous half-state for continuation; on any failure the
/// fresh seeding pipeline runs instead.
fn sym_solve(
    model: &Model,
    n: usize,
    sigma: f64,
    tol: f64,
    warm: Option<&[f64]>,
) -> Result<(StationarySolution, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidConfig("node count must be positive".into()));
    }
    if !(sigma > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidConfig(
            "noise amplitude and tolerance must be positive".into(),
        ));
    }
    if !model_symmetric(model) {
        return Err(Error::ParityViolated);
    }
    let model_s = model.with_sigma(sigma);
    if n == 1 {
        let measure = QuadratureMeasure::point_mass(0.0);
        let residual_norm = residual_at_measure(&model_s, &measure);
        return Ok((
            StationarySolution {
                measure,
                sigma,
                converged: residual_norm < tol,
                residual_norm,
                newton_iterations: 0,
            },
            vec![],
        ));
    }
    let inner_tol = (tol * 1e-2).max(1e-13);
    let f = |zh: &[f64]| sym_residual(&model_s, zh, n);
    let mut attempt: Option<SolveReport> = None;
    if let Some(zh) = warm {
        let rep = crate::solver::solve_robust(&f, zh, inner_tol);
        if rep.converged && measure_from_half(&rep.z, n).is_ok() {
            attempt = Some(rep);
        }
    }
    let rep = match attempt {
        Some(r) => r,
        None => {
            let seed = sym_seed_half(&model_s, n)?;
            crate::solver::solve_robust(&f, &seed, inner_tol)
        }
    };
    let measure = measure_from_half(&rep.z, n)?;
    let residual_norm = residual_at_measure(&model_s, &measure);
    Ok((
        StationarySolution {
            measure,
            sigma,
            converged: residual_norm < tol,
            residual_norm,
            newton_iterations: rep.iterations,
        },
        rep.z,
    ))
}

/// Seed for the symmetric subspace: Gauss-Christoffel rule of the continuum
/// stationary density on an auto-sized support, reduced to its positive half.
fn sym_seed_half(model_s: &Model, n: usize) -> Result<Vec<f64>> {
    let sigma = model_s.sigma();
    let a = match model_s {
        Model::Sde(m) => m.drift.clone(),
        Model::Mvsde(m) => m.effective_potential_deriv.scale(-1.0),
    };
    let bpoly = model_s.diffusion_poly().clone();
    let mut reach = 1.0 + sigma;
    if let Ok(roots) = a.real_roots(IMAG_TOL_DEFAULT) {
        for r in roots {
            reach = reach.max(r.abs() + 1.0);
        }
    }
    let mut half_width = reach;
    let grid_len = 4001usize;
    let mut moments: Option<Vec<f64>> = None;
    for _ in 0..50 {
        let dx = 2.0 * half_width / (grid_len - 1) as f64;
        let xs: Vec<f64> = (0..grid_len).map(|i| -half_width + i as f64 * dx).collect();
        let fvals: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let b = bpoly.eval(x);
                let b2 = (b * b).max(1e-300);
                a.eval(x) / b2
            })
            .collect();
        let lnb2: Vec<f64> = xs
            .iter()
            .map(|&x| {
                let b = bpoly.eval(x);
                ((b * b).max(1e-300)).ln()
            })
            .collect();
        let center = (grid_len - 1) / 2;
        let mut integral = vec![0.0; grid_len];
        for i in center + 1..grid_len {
            integral[i] = integral[i - 1] + 0.5 * (fvals[i - 1] + fvals[i]) * dx;
        }
        for i in (0..center).rev() {
            integral[i] = integral[i + 1] - 0.5 * (fvals[i] + fvals[i + 1]) * dx;
        }
        let w: Vec<f64> = integral
            .iter()
            .zip(&lnb2)
            .map(|(iv, l)| -2.0 / (sigma * sigma) * iv + l)
            .collect();
        let w_min = w.iter().cloned().fold(f64::INFINITY, f64::min);
        let rho: Vec<f64> = w.iter().map(|v| (-(v - w_min)).exp()).collect();
        let rho_max = rho.iter().cloned().fold(0.0f64, f64::max);
        if rho[0] > 1e-12 * rho_max || rho[grid_len - 1] > 1e-12 * rho_max {
            half_width *= 2.0;
            continue;
        }
        let mut m = vec![0.0f64; 2 * n + 1];
        let mut pow = vec![1.0f64; grid_len];
        for mk in m.iter_mut() {
            let mut acc = 0.0;
            for i in 0..grid_len {
                let trap = if i == 0 || i == grid_len - 1 {
                    0.5
                } else {
                    1.0
                };
                acc += trap * rho[i] * pow[i];
            }
            *mk = acc * dx;
            for (p, &x) in pow.iter_mut().zip(&xs) {
                *p *= x;
            }
        }
        let m0 = m[0];
        for mk in m.iter_mut() {
            *mk /= m0;
        }
        moments = Some(m);
        break;
    }
    let m = moments.ok_or_else(|| {
        Error::InvalidConfig("stationary density support search did not terminate".into())
    })?;
    let seed = match gauss_christoffel(&MomentVector(m.clone()), n) {
        Ok(mu) => mu,
        Err(_) => {
            let m2 = m[2].max(1e-8);
            gauss_hermite_init(n, 0.0, m2)?
        }
    };
    half_from_measure(&seed, n).map_or_else(
        || {
            let m2 = m[2].max(1e-8);
            let gh = gauss_hermite_init(n, 0.0, m2)?;
            half_from_measure(&gh, n)
                .ok_or_else(|| Error::InvalidConfig("symmetric seed construction failed".into()))
        },
        Ok,
    )
}

/// Positive half of a near-symmetric measure, symmetrized; `None` when the
/// result is not strictly positive ascending.
fn half_from_measure(mu: &QuadratureMeasure, n: usize) -> Option<Vec<f64>> {
    if mu.len() != n {
        return None;
    }
    let x = mu.nodes();
    let w = mu.weights();
    let h = n / 2;
    let off = if n % 2 == 0 { h } else { h + 1 };
    let mut xs = Vec::with_capacity(h);
    let mut bs = Vec::with_capacity(h);
    for i in 0..h {
        let xp = x[off + i];
        let xm = x[h - 1 - i];
        xs.push(0.5 * (xp - xm));
        bs.push(0.5 * (w[off + i] + w[h - 1 - i]));
    }
    for i in 0..h {
        if !(xs[i] > 0.0) || !(bs[i] > 0.0) {
            return None;
        }
        if i > 0 && xs[i] <= xs[i - 1] {
            return None;
        }
    }
    let mut zh = xs;
    zh.extend(bs);
    Some(zh)
}

// ---------------------------------------------------------------------------
// asymmetric continuation

fn admissible_full(z: &[f64]) -> bool {
    let n = z.len() / 2;
    let nodes = &z[..n];
    let weights = &z[n..];
    if z.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let span = nodes[n - 1] - nodes[0];
    for win in nodes.windows(2) {
        if win[1] - win[0] <= 1e-10 * (1.0 + span.abs()) {
            return false;
        }
    }
    if weights.iter().any(|&w| w <= 1e-10) {
        return false;
    }
    let mass: f64 = weights.iter().sum();
    (mass - 1.0).abs() < 1e-6
}

fn mean_of_packed(z: &[f64]) -> f64 {
    let n = z.len() / 2;
    let mass: f64 = z[n..].iter().sum();
    z[..n].iter().zip(&z[n..]).map(|(x, b)| x * b).sum::<f64>() / mass
}

struct BranchWalker<'a> {
    model: &'a Model,
    tol: f64,
}

impl BranchWalker<'_> {
    fn solve_at(&self, sigma: f64, warm: &[f64]) -> Option<Vec<f64>> {
        let n = warm.len() / 2;
        let drop = warm[n..]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(n - 1);
        let model_s = self.model.with_sigma(sigma);
        let f = |z: &[f64]| interior_residual(&model_s, z, drop);
        let rep = crate::solver::solve_robust(&f, warm, self.tol);
        if rep.converged && admissible_full(&rep.z) {
            Some(rep.z)
        } else {
            None
        }
    }

    /// Reach `s_to` from a converged state at `s_from`, inserting geometric
    /// midpoints on failure, up to `depth` levels.
    fn step_to(&self, s_from: f64, z_from: &[f64], s_to: f64, depth: usize) -> Option<Vec<f64>> {
        if let Some(z) = self.solve_at(s_to, z_from) {
            return Some(z);
        }
        if depth == 0 {
            return None;
        }
        let s_mid = (s_from * s_to).sqrt();
        if (s_mid - s_from).abs() < 1e-6 * s_from || (s_to - s_mid).abs() < 1e-9 * s_to {
            return None;
        }
        let z_mid = self.step_to(s_from, z_from, s_mid, depth - 1)?;
        self.step_to(s_mid, &z_mid, s_to, depth - 1)
    }

    /// Continuation with geometric substeps capped at ratio ~1.12.
    fn advance(&self, s_from: f64, z_from: &[f64], s_to: f64) -> Option<Vec<f64>> {
        let ratio = s_to / s_from;
        if !(ratio > 0.0) {
            return None;
        }
        let k = ((ratio.ln().abs() / 1.12f64.ln()).ceil()).max(1.0) as usize;
        let mut s_cur = s_from;
        let mut z_cur = z_from.to_vec();
        for i in 1..=k {
            let s_next = s_from * ratio.powf(i as f64 / k as f64);
            z_cur = self.step_to(s_cur, &z_cur, s_next, 5)?;
            s_cur = s_next;
        }
        Some(z_cur)
    }
}

/// Continue the cluster solution rooted at `site` from the small-noise limit
/// up to `sigma`. The seed starts at sigma/4 with the local asymptotic
/// spread and is continued geometrically.
pub fn asymmetric_stationary(
    model: &Model,
    n: usize,
    sigma: f64,
    site: f64,
    tol: f64,
) -> Result<StationarySolution> {
    if n == 0 || !(sigma > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidConfig(
            "node count, noise amplitude, and tolerance must be positive".into(),
        ));
    }
    let curvature = cluster_curvature(model, site)?;
    let walker = BranchWalker { model, tol };
    let sigma_pre = sigma / 4.0;
    let z0 = cluster_seed(model, n, sigma_pre, site, curvature)?;
    let z_pre = walker
        .solve_at(sigma_pre, &z0)
        .ok_or(Error::NoStableClusterSites)?;
    let z = walker
        .advance(sigma_pre, &z_pre, sigma)
        .ok_or_else(|| Error::NonConvergence {
            final_residual: f64::NAN,
            residual_history: vec![],
        })?;
    let model_s = model.with_sigma(sigma);
    let measure = measure_from_packed(&z)?;
    let residual_norm = residual_at_measure(&model_s, &measure);
    Ok(StationarySolution {
        measure,
        sigma,
        converged: residual_norm < tol.max(DEFAULT_STATIONARY_TOL),
        residual_norm,
        newton_iterations: 0,
    })
}

/// Curvature of the frozen single-particle well at a cluster site.
fn cluster_curvature(model: &Model, site: f64) -> Result<f64> {
    let curv = match model {
        Model::Sde(m) => -m.drift.derivative().eval(site),
        Model::Mvsde(m) => m.effective_potential_deriv.derivative().eval(site),
    };
    if curv > 0.0 {
        Ok(curv)
    } else {
        Err(Error::NoStableClusterSites)
    }
}

fn cluster_seed(
    model: &Model,
    n: usize,
    sigma: f64,
    site: f64,
    curvature: f64,
) -> Result<Vec<f64>> {
    let gh = gauss_hermite_init(n, 0.0, 1.0)?;
    let b = model.diffusion_poly().eval(site);
    let scale = sigma * (b * b / (2.0 * curvature)).sqrt();
    let mut z: Vec<f64> = gh.nodes().iter().map(|x| site + scale * x).collect();
    z.extend_from_slice(gh.weights());
    Ok(z)
}

// ---------------------------------------------------------------------------
// bifurcation sweep

/// Trace the symmetric branch and the two outer cluster branches over a
/// decreasing noise grid; detect where the asymmetric branches merge into
/// the symmetric one and refine the merge point by bisection on branch
/// survival.
pub fn bifurcation_sweep(
    m: &MvsdeModel,
    sigma_grid: &[f64],
    n: usize,
    tol: f64,
) -> Result<BifurcationDiagram> {
    if sigma_grid.is_empty() {
        return Err(Error::InvalidConfig("sigma grid is empty".into()));
    }
    if sigma_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidConfig(
            "sigma grid must be strictly decreasing".into(),
        ));
    }
    if sigma_grid.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidConfig("sigma grid must be positive".into()));
    }
    if n == 0 || !(tol > 0.0) {
        return Err(Error::InvalidConfig(
            "node count and tolerance must be positive".into(),
        ));
    }
    let model = Model::Mvsde(m.clone());
    if !model_symmetric(&model) {
        return Err(Error::ParityViolated);
    }
    let mut grid = sigma_grid.to_vec();
    grid.reverse(); // ascending from here on

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    let ones = vec![1.0; n];

    // symmetric branch, warm-started downward, recorded ascending
    let mut sym_entries = Vec::new();
    let mut warm: Option<Vec<f64>> = None;
    for &s in grid.iter().rev() {
        match sym_solve(&model, n, s, tol, warm.as_deref()) {
            Ok((sol, half)) if sol.converged => {
                warm = Some(half);
                match stability_probe(m, &sol, &ones) {
                    Ok(probe) => sym_entries.push(entry_from(&sol, Branch::Symmetric, probe)),
                    Err(e) => skipped.push(SkippedPoint {
                        sigma: s,
                        branch: Branch::Symmetric,
                        reason: e.to_string(),
                    }),
                }
            }
            Ok((sol, _)) => skipped.push(SkippedPoint {
                sigma: s,
                branch: Branch::Symmetric,
                reason: format!("residual {:.3e} above tolerance", sol.residual_norm),
            }),
            Err(e) => skipped.push(SkippedPoint {
                sigma: s,
                branch: Branch::Symmetric,
                reason: e.to_string(),
            }),
        }
    }
    sym_entries.reverse();
    entries.extend(sym_entries);

    // outer cluster sites
    let sites = cluster_sites(&model)?;
    let xs = site_filter_sorted(&sites);
    let upper_site = xs.last().copied().filter(|&x| x > 1e-9);
    let lower_site = xs.first().copied().filter(|&x| x < -1e-9);

    let mut brackets: Vec<(f64, Vec<f64>, f64)> = Vec::new(); // (last good, state, first failed)
    for (branch, site) in [(Branch::Upper, upper_site), (Branch::Lower, lower_site)] {
        let site = match site {
            Some(s) => s,
            None => continue,
        };
        match walk_cluster_branch(&model, m, n, &grid, site, tol, branch, &ones) {
            Ok((branch_entries, branch_skips, bracket)) => {
                entries.extend(branch_entries);
                skipped.extend(branch_skips);
                if let Some(b) = bracket {
                    brackets.push(b);
                }
            }
            Err(e) => skipped.push(SkippedPoint {
                sigma: grid[0],
                branch,
                reason: e.to_string(),
            }),
        }
    }

    // merge-point refinement: bisection on branch survival
    let critical_sigma = brackets.into_iter().max_by(|a, b| a.0.total_cmp(&b.0)).map(
        |(mut lo, mut z_lo, mut hi)| {
            let walker = BranchWalker { model: &model, tol };
            for _ in 0..6 {
                let mid = 0.5 * (lo + hi);
                match walker.step_to(lo, &z_lo, mid, 3) {
                    Some(z) if mean_of_packed(&z).abs() >= 10.0 * tol => {
                        lo = mid;
                        z_lo = z;
                    }
                    _ => hi = mid,
                }
            }
            0.5 * (lo + hi)
        },
    );

    Ok(BifurcationDiagram {
        entries,
        critical_sigma,
        skipped,
    })
}

fn entry_from(sol: &StationarySolution, branch: Branch, probe: StabilityProbe) -> BifurcationEntry {
    BifurcationEntry {
        sigma: sol.sigma,
        branch,
        m1: sol.measure.moment(1),
        m2: sol.measure.moment(2),
        residual_norm: sol.residual_norm,
        verdict: probe.verdict,
        measure: sol.measure.clone(),
    }
}

type BranchWalk = (
    Vec<BifurcationEntry>,
    Vec<SkippedPoint>,
    Option<(f64, Vec<f64>, f64)>,
);

#[allow(clippy::too_many_arguments)]
fn walk_cluster_branch(
    model: &Model,
    m: &MvsdeModel,
    n: usize,
    grid: &[f64],
    site: f64,
    tol: f64,
    branch: Branch,
    probe_dir: &[f64],
) -> Result<BranchWalk> {
    let mut entries = Vec::new();
    let mut skips = Vec::new();
    let curvature = cluster_curvature(model, site)?;
    let walker = BranchWalker { model, tol };
    let sigma_pre = grid[0] / 4.0;
    let z0 = cluster_seed(model, n, sigma_pre, site, curvature)?;
    let z_pre = match walker.solve_at(sigma_pre, &z0) {
        Some(z) => z,
        None => {
            skips.push(SkippedPoint {
                sigma: grid[0],
                branch,
                reason: format!("cluster solve failed at sigma={sigma_pre}"),
            });
            return Ok((entries, skips, None));
        }
    };
    let mut z_cur = match walker.advance(sigma_pre, &z_pre, grid[0]) {
        Some(z) => z,
        None => {
            // merged with the symmetric branch before reaching the grid
            skips.push(SkippedPoint {
                sigma: grid[0],
                branch,
                reason: "branch did not survive to the grid start".into(),
            });
            return Ok((entries, skips, None));
        }
    };
    let sign = site.signum();
    let mut s_cur = grid[0];
    let mut bracket = None;
    let mut idx = 0usize;
    // last surviving state, for the bracket: the refinement must restart
    // from a live cluster configuration, not the collapsed one
    let mut last_live: Option<Vec<f64>> = None;
    loop {
        let m1 = mean_of_packed(&z_cur);
        if m1.abs() < 10.0 * tol || m1.signum() != sign {
            // collapsed onto the symmetric branch
            if let (true, Some(z_live)) = (idx > 0, last_live.take()) {
                bracket = Some((grid[idx - 1], z_live, s_cur));
            } else {
                skips.push(SkippedPoint {
                    sigma: s_cur,
                    branch,
                    reason: "branch did not survive to the grid start".into(),
                });
            }
            break;
        }
        last_live = Some(z_cur.clone());
        let model_s = model.with_sigma(s_cur);
        match measure_from_packed(&z_cur) {
            Ok(measure) => {
                let residual_norm = residual_at_measure(&model_s, &measure);
                let sol = StationarySolution {
                    measure,
                    sigma: s_cur,
                    residual_norm,
                    converged: true,
                    newton_iterations: 0,
                };
                match stability_probe(m, &sol, probe_dir) {
                    Ok(probe) => entries.push(entry_from(&sol, branch, probe)),
                    Err(e) => skips.push(SkippedPoint {
                        sigma: s_cur,
                        branch,
                        reason: e.to_string(),
                    }),
                }
            }
            Err(e) => skips.push(SkippedPoint {
                sigma: s_cur,
                branch,
                reason: e.to_string(),
            }),
        }
        idx += 1;
        if idx >= grid.len() {
            break;
        }
        match walker.advance(s_cur, &z_cur, grid[idx]) {
            Some(z) => {
                z_cur = z;
                s_cur = grid[idx];
            }
            None => {
                bracket = Some((s_cur, z_cur.clone(), grid[idx]));
                break;
            }
        }
    }
    Ok((entries, skips, bracket))
}

/// CSV rendering of a diagram: sigma, branch, m1, m2, verdict, residual.
pub fn bifurcation_csv(d: &BifurcationDiagram) -> String {
    let mut out = String::from("sigma,branch,m1,m2,verdict,residual\n");
    for e in &d.entries {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.sigma, e.branch, e.m1, e.m2, e.verdict, e.residual_norm
        ));
    }
    out
}
