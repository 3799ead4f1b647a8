//! Right-hand side of the node/weight evolution equations and an adaptive
//! Dormand-Prince 5(4) integrator with structural-invariant enforcement.

use crate::error::{Error, Result};
use crate::lagrange::{build_tableau, LagrangeTableau};
use crate::model::Model;
use crate::quadrature::{moments_of, MomentVector, QuadratureMeasure};
use serde::{Deserialize, Serialize};

/// Measure plus a time stamp.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GGState {
    pub measure: QuadratureMeasure,
    pub time: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// 0 = choose automatically from the initial rates.
    pub initial_step: f64,
    pub max_step: f64,
    /// Minimum admissible node gap; <= 0 = auto: 1e-7 * (initial node range + 1).
    pub collision_threshold: f64,
    pub weight_floor: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            initial_step: 0.0,
            max_step: f64::INFINITY,
            collision_threshold: 0.0,
            weight_floor: 1e-12,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub accepted: usize,
    pub rejected: usize,
    pub final_step: f64,
    /// Largest |sum(beta) - 1| seen before per-step renormalization.
    pub max_weight_drift: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<GGState>,
    pub diagnostics: StepDiagnostics,
}

/// Integration failure carrying the part of the trajectory computed so far.
#[derive(Debug, Clone)]
pub struct IntegrationAbort {
    pub error: Error,
    pub partial: Trajectory,
}

/// Default collision threshold for a node set.
pub fn default_collision_threshold(nodes: &[f64]) -> f64 {
    let range = nodes.last().unwrap_or(&0.0) - nodes.first().unwrap_or(&0.0);
    1e-7 * (range + 1.0)
}

/// Node and weight rates, both in the plain form and with the node equation
/// multiplied through by its weight (the form free of the 1/beta_i factor,
/// used by the stationary residuals).
pub(crate) struct RawRates {
    pub xdot: Vec<f64>,
    pub beta_xdot: Vec<f64>,
    pub bdot: Vec<f64>,
}

/// Tableau-level rates: drift values and squared diffusion values are supplied
/// per node. This is the shared core of the time stepper and the stationary
/// residuals.
pub(crate) fn raw_rates(
    nodes: &[f64],
    weights: &[f64],
    a: &[f64],
    b2: &[f64],
    sigma: f64,
    tab: &LagrangeTableau,
) -> RawRates {
    let n = nodes.len();
    let s2 = sigma * sigma;
    let mut xdot = vec![0.0; n];
    let mut beta_xdot = vec![0.0; n];
    let mut bdot = vec![0.0; n];
    for i in 0..n {
        let lii = tab.first_deriv[i][i];
        let mut xs = 2.0 * weights[i] * b2[i] * lii;
        let mut bs = 0.0;
        for j in 0..n {
            if j != i {
                let lij = tab.first_deriv[i][j];
                let gap = nodes[j] - nodes[i];
                xs += weights[j] * b2[j] * gap * lij * lij;
                bs += weights[j] * b2[j] * lij * lij * (1.0 - 2.0 * lii * gap);
            }
        }
        xdot[i] = a[i] + s2 / weights[i] * xs;
        beta_xdot[i] = weights[i] * a[i] + s2 * xs;
        // drift cancels out of the weight rates: the Hermite basis function
        // attached to beta_i has zero derivative at every node
        bdot[i] = s2 * (weights[i] * b2[i] * (tab.second_deriv_diag[i] - 3.0 * lii * lii) + bs);
    }
    RawRates {
        xdot,
        beta_xdot,
        bdot,
    }
}

/// Drift values under the frozen mean-field closure and squared diffusion
/// values for a packed state (x_1..x_N, b_1..b_N).
pub(crate) fn drift_and_diffusion_sq(
    model: &Model,
    nodes: &[f64],
    weights: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let a: Vec<f64> = match model {
        Model::Sde(m) => nodes.iter().map(|&x| m.drift.eval(x)).collect(),
        Model::Mvsde(m) => {
            let c: f64 = nodes
                .iter()
                .zip(weights)
                .map(|(&x, &b)| b * m.interaction_deriv.eval(x))
                .sum();
            nodes
                .iter()
                .map(|&x| -m.effective_potential_deriv.eval(x) + m.theta * c)
                .collect()
        }
    };
    let bpoly = model.diffusion_poly();
    let b2: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let b = bpoly.eval(x);
            b * b
        })
        .collect();
    (a, b2)
}

/// Unvalidated rates for a packed state; shared by the integrator stages and
/// the stationary residuals. Transient disorder in the nodes is tolerated
/// (an exact tie yields non-finite rates, which callers reject).
pub(crate) fn packed_raw_rates(model: &Model, y: &[f64]) -> RawRates {
    let n = y.len() / 2;
    let nodes = &y[..n];
    let weights = &y[n..];
    let tab = unchecked_tableau(nodes);
    let (a, b2) = drift_and_diffusion_sq(model, nodes, weights);
    raw_rates(nodes, weights, &a, &b2, model.sigma(), &tab)
}

/// Node and weight rates for a validated state. Errors on node collision or
/// weight underflow at the supplied thresholds.
pub fn gg_rhs_with(
    model: &Model,
    s: &GGState,
    collision_threshold: f64,
    weight_floor: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let nodes = s.measure.nodes();
    let weights = s.measure.weights();
    for w in nodes.windows(2) {
        if w[1] - w[0] <= collision_threshold {
            return Err(Error::NodeCollision);
        }
    }
    if weights.iter().any(|&b| b < weight_floor) {
        return Err(Error::WeightUnderflow);
    }
    let tab = build_tableau(nodes, collision_threshold)?;
    let (a, b2) = drift_and_diffusion_sq(model, nodes, weights);
    let rates = raw_rates(nodes, weights, &a, &b2, model.sigma(), &tab);
    Ok((rates.xdot, rates.bdot))
}

/// `gg_rhs_with` at the default thresholds.
pub fn gg_rhs(model: &Model, s: &GGState) -> Result<(Vec<f64>, Vec<f64>)> {
    let thr = default_collision_threshold(s.measure.nodes());
    gg_rhs_with(model, s, thr, 1e-12)
}

// Dormand-Prince 5(4) coefficients. The system is autonomous, so the stage
// abscissae are never needed.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct RhsCtx<'a> {
    model: &'a Model,
}

impl RhsCtx<'_> {
    /// Unvalidated rates for a packed state (x_1..x_N, b_1..b_N). Transiently
    /// invalid stage states are allowed; non-finite output rejects the step.
    /// The mean-field term is re-evaluated from the stage state itself.
    fn eval(&self, y: &[f64]) -> Vec<f64> {
        let rates = packed_raw_rates(self.model, y);
        let mut out = rates.xdot;
        out.extend_from_slice(&rates.bdot);
        out
    }
}

/// Tableau construction with no ordering/gap validation (stage estimates may
/// transiently disorder nodes; the step controller cleans up).
pub(crate) fn unchecked_tableau(nodes: &[f64]) -> LagrangeTableau {
    let n = nodes.len();
    let mut base = vec![1.0; n];
    for j in 0..n {
        for k in 0..n {
            if k != j {
                base[j] *= nodes[j] - nodes[k];
            }
        }
    }
    let mut first = vec![vec![0.0; n]; n];
    let mut second = vec![0.0; n];
    for i in 0..n {
        let mut inv = 0.0;
        let mut inv2 = 0.0;
        for k in 0..n {
            if k != i {
                let d = nodes[i] - nodes[k];
                inv += 1.0 / d;
                inv2 += 1.0 / (d * d);
            }
        }
        first[i][i] = inv;
        second[i] = inv * inv - inv2;
        for j in 0..n {
            if j != i {
                first[i][j] = (base[j] / base[i]) / (nodes[j] - nodes[i]);
            }
        }
    }
    LagrangeTableau {
        first_deriv: first,
        second_deriv_diag: second,
        base_poly_deriv: base,
    }
}

fn error_norm(e: &[f64], y0: &[f64], y1: &[f64], rel: f64, abs: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..e.len() {
        let sc = abs + rel * y0[i].abs().max(y1[i].abs());
        let q = e[i] / sc;
        acc += q * q;
    }
    (acc / e.len() as f64).sqrt()
}

/// Integrate to `t_end`. With `sample_times`, the trajectory holds exactly
/// those states (steps are capped to land on them); otherwise every accepted
/// step is recorded. `sample_times` should be increasing; duplicates and
/// times at or before `init.time` are skipped. `t_end` itself is always
/// recorded last.
pub fn integrate(
    model: &Model,
    init: &GGState,
    t_end: f64,
    cfg: &IntegratorConfig,
    sample_times: Option<&[f64]>,
) -> std::result::Result<Trajectory, IntegrationAbort> {
    let n = init.measure.len();
    let ctx = RhsCtx { model };
    let collision = if cfg.collision_threshold > 0.0 {
        cfg.collision_threshold
    } else {
        default_collision_threshold(init.measure.nodes())
    };
    let mut diagnostics = StepDiagnostics::default();
    let mut samples = Vec::new();
    let record_all = sample_times.is_none();
    let mut pending: Vec<f64> = sample_times
        .map(|ts| ts.iter().rev().copied().collect())
        .unwrap_or_default();
    samples.push(init.clone());
    // consume sample times at or before the start so they cannot wedge the
    // clamp-and-record logic below
    while let Some(&ts) = pending.last() {
        if ts <= init.time + 1e-12 * (1.0 + ts.abs()) {
            pending.pop();
        } else {
            break;
        }
    }

    let mut t = init.time;
    let mut y: Vec<f64> = init
        .measure
        .nodes()
        .iter()
        .chain(init.measure.weights())
        .copied()
        .collect();
    let mut k1 = ctx.eval(&y);
    let mut h = if cfg.initial_step > 0.0 {
        cfg.initial_step
    } else {
        initial_step_guess(&y, &k1, cfg)
    };
    let mut err_prev: f64 = 1.0;
    let abort = |error: Error, samples: Vec<GGState>, diagnostics: StepDiagnostics| {
        Err(IntegrationAbort {
            error,
            partial: Trajectory {
                samples,
                diagnostics,
            },
        })
    };

    let mut attempts = 0usize;
    while t < t_end {
        attempts += 1;
        if attempts > cfg.max_steps {
            return abort(Error::StepBudgetExhausted, samples, diagnostics);
        }
        h = h.min(cfg.max_step).min(t_end - t);
        if let Some(&ts) = pending.last() {
            if ts > t {
                h = h.min(ts - t);
            }
        }
        // stages
        let mut k = vec![k1.clone()];
        for s in 0..6 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[s][j];
                if a != 0.0 {
                    for i in 0..ys.len() {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            k.push(ctx.eval(&ys));
        }
        // 5th-order solution is stage state 6 (FSAL); k[6] = f at it
        let mut y5 = y.clone();
        for (j, kj) in k.iter().enumerate().take(7) {
            if B5[j] != 0.0 {
                for i in 0..y5.len() {
                    y5[i] += h * B5[j] * kj[i];
                }
            }
        }
        let mut e = vec![0.0; y.len()];
        for (j, kj) in k.iter().enumerate() {
            let d = B5[j] - B4[j];
            if d != 0.0 {
                for i in 0..e.len() {
                    e[i] += h * d * kj[i];
                }
            }
        }
        let mut err = error_norm(&e, &y, &y5, cfg.rel_tol, cfg.abs_tol);
        if !err.is_finite() {
            err = 1e10;
        }
        if err <= 1.0 {
            // accept
            t += h;
            diagnostics.accepted += 1;
            diagnostics.final_step = h;
            // weight renormalization; drift must be roundoff-level
            let mass: f64 = y5[n..].iter().sum();
            let drift = (mass - 1.0).abs();
            if drift > diagnostics.max_weight_drift {
                diagnostics.max_weight_drift = drift;
            }
            for b in y5[n..].iter_mut() {
                *b /= mass;
            }
            // structural checks on the accepted state
            let nodes = &y5[..n];
            if nodes.windows(2).any(|w| w[1] - w[0] <= collision) {
                return abort(Error::NodeCollision, samples, diagnostics);
            }
            if y5[n..].iter().any(|&b| b < cfg.weight_floor) {
                return abort(Error::WeightUnderflow, samples, diagnostics);
            }
            if nodes.iter().any(|x| x.abs() > 1e9) {
                return abort(Error::BlowUp, samples, diagnostics);
            }
            y = y5;
            k1 = k.pop().unwrap(); // FSAL
            let state = GGState {
                measure: QuadratureMeasure::new(y[..n].to_vec(), y[n..].to_vec())
                    .expect("accepted state passed structural checks"),
                time: t,
            };
            let mut record = record_all;
            while let Some(&ts) = pending.last() {
                // drain duplicates and anything at or behind the current time
                if ts <= t + 1e-12 * (1.0 + ts.abs()) {
                    pending.pop();
                    record = record || (t - ts).abs() <= 1e-12 * (1.0 + ts.abs());
                } else {
                    break;
                }
            }
            if record {
                samples.push(state);
            }
            // PI step-size controller, safety 0.9, growth clamp [0.2, 5]
            let fac = 0.9 * err.max(1e-12).powf(-0.7 / 5.0) * err_prev.max(1e-12).powf(0.4 / 5.0);
            h *= fac.clamp(0.2, 5.0);
            err_prev = err.max(1e-12);
        } else {
            diagnostics.rejected += 1;
            let fac = 0.9 * err.powf(-0.2);
            h *= fac.clamp(0.1, 0.9);
        }
        if !h.is_finite() || h <= 1e-15 * (1.0 + t.abs()) {
            return abort(Error::StepBudgetExhausted, samples, diagnostics);
        }
    }
    // ensure the final state is recorded
    let last_recorded = samples
        .last()
        .map(|s| (s.time - t).abs() <= 1e-12 * (1.0 + t.abs()))
        .unwrap_or(false);
    if !last_recorded {
        samples.push(GGState {
            measure: QuadratureMeasure::new(y[..n].to_vec(), y[n..].to_vec())
                .expect("final state passed structural checks"),
            time: t,
        });
    }
    Ok(Trajectory {
        samples,
        diagnostics,
    })
}

fn initial_step_guess(y: &[f64], f: &[f64], cfg: &IntegratorConfig) -> f64 {
    let sc: Vec<f64> = y
        .iter()
        .map(|v| cfg.abs_tol + cfg.rel_tol * v.abs())
        .collect();
    let d0: f64 =
        (y.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    let d1: f64 =
        (f.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / f.len() as f64).sqrt();
    if d0 < 1e-5 || d1 < 1e-5 || !d1.is_finite() {
        1e-6
    } else {
        0.01 * d0 / d1
    }
}

/// Moments m_0..m_K at every sample, paired with the sample time.
pub fn moment_trajectory(traj: &Trajectory, k_max: usize) -> Vec<(f64, MomentVector)> {
    traj.samples
        .iter()
        .map(|s| (s.time, moments_of(&s.measure, k_max)))
        .collect()
}

/// CSV rendering of a sampled moment trajectory: a t column followed by
/// m0..m{k_max}.
pub fn trajectory_csv(traj: &Trajectory, k_max: usize) -> String {
    let mut out = String::from("t");
    for k in 0..=k_max {
        out.push_str(&format!(",m{k}"));
    }
    out.push('\n');
    for (t, m) in moment_trajectory(traj, k_max) {
        out.push_str(&format!("{t}"));
        for v in &m.0 {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
