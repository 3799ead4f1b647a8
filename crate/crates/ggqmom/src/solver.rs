//! Internal nonlinear-system machinery: finite-difference Jacobians, a damped
//! Newton iteration with backtracking, and a scaled dogleg trust-region
//! fallback for the continuation paths where line searches stall.

use crate::error::Result;
use nalgebra::{DMatrix, DVector};

pub const FD_STEP: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub z: Vec<f64>,
    /// Infinity norm of the residual at `z`.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
}

/// Infinity norm; any non-finite entry maps to +inf so a NaN residual can
/// never masquerade as convergence.
pub fn inf_norm(v: &[f64]) -> f64 {
    let mut m = 0.0f64;
    for &x in v {
        if !x.is_finite() {
            return f64::INFINITY;
        }
        m = m.max(x.abs());
    }
    m
}

/// Finite-difference Jacobian with per-component step 1e-7 * (1 + |z_i|).
pub fn fd_jacobian(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    z: &[f64],
    f0: &[f64],
    central: bool,
) -> DMatrix<f64> {
    let n = z.len();
    let m = f0.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut zp = z.to_vec();
    for col in 0..n {
        let h = FD_STEP * (1.0 + z[col].abs());
        if central {
            zp[col] = z[col] + h;
            let fp = f(&zp);
            zp[col] = z[col] - h;
            let fm = f(&zp);
            for r in 0..m {
                jac[(r, col)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        } else {
            zp[col] = z[col] + h;
            let fp = f(&zp);
            for r in 0..m {
                jac[(r, col)] = (fp[r] - f0[r]) / h;
            }
        }
        zp[col] = z[col];
    }
    jac
}

fn linear_step(jac: &DMatrix<f64>, fz: &[f64]) -> Option<DVector<f64>> {
    let rhs = DVector::from_iterator(fz.len(), fz.iter().map(|v| -v));
    if let Some(s) = jac.clone().lu().solve(&rhs) {
        if s.iter().all(|v| v.is_finite()) {
            return Some(s);
        }
    }
    jac.clone()
        .svd(true, true)
        .solve(&rhs, 1e-300)
        .ok()
        .filter(|s| s.iter().all(|v| v.is_finite()))
}

/// Damped Newton: full step, backtracked by halving at most 8 times, first
/// candidate that reduces the residual norm accepted. When no candidate
/// reduces it, the best finite candidate is taken anyway and counted as a
/// growth; 5 successive growths end the iteration as non-converged. `guard`
/// runs on every accepted iterate and may abort with a hard error.
pub fn newton_damped(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    guard: Option<&dyn Fn(&[f64]) -> Result<()>>,
    z0: &[f64],
    tol: f64,
    max_iter: usize,
    central: bool,
) -> Result<SolveReport> {
    let mut z = z0.to_vec();
    let mut fz = f(&z);
    let mut norm = inf_norm(&fz);
    let mut history = vec![norm];
    let mut growths = 0usize;
    let mut iters = 0usize;
    while norm >= tol && norm.is_finite() && iters < max_iter && growths < 5 {
        if let Some(g) = guard {
            g(&z)?;
        }
        let jac = fd_jacobian(f, &z, &fz, central);
        let step = match linear_step(&jac, &fz) {
            Some(s) => s,
            None => {
                growths += 1;
                iters += 1;
                history.push(norm);
                continue;
            }
        };
        let mut lambda = 1.0f64;
        let mut accepted = false;
        let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        for _ in 0..9 {
            let zc: Vec<f64> = z
                .iter()
                .zip(step.iter())
                .map(|(a, s)| a + lambda * s)
                .collect();
            let fc = f(&zc);
            let nc = inf_norm(&fc);
            if nc < norm {
                z = zc;
                fz = fc;
                norm = nc;
                accepted = true;
                break;
            }
            if nc.is_finite() && best.as_ref().map_or(true, |b| nc < b.2) {
                best = Some((zc, fc, nc));
            }
            lambda *= 0.5;
        }
        if accepted {
            growths = 0;
        } else {
            if let Some((zb, fb, nb)) = best {
                z = zb;
                fz = fb;
                norm = nb;
            }
            growths += 1;
        }
        iters += 1;
        history.push(norm);
    }
    if let Some(g) = guard {
        g(&z)?;
    }
    Ok(SolveReport {
        converged: norm < tol,
        z,
        residual_norm: norm,
        iterations: iters,
        history,
    })
}

fn scaled_norm(v: &[f64], d: &[f64]) -> f64 {
    v.iter()
        .zip(d)
        .map(|(x, s)| (x * s) * (x * s))
        .sum::<f64>()
        .sqrt()
}

fn update_scales(jac: &DMatrix<f64>, d: &mut [f64]) {
    for (col, s) in d.iter_mut().enumerate() {
        let norm = jac.column(col).norm();
        // scales only ever grow: standard guard against oscillating conditioning
        *s = s.max(norm).max(1e-8);
    }
}

fn sq_norm_checked(v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for &x in v {
        if !x.is_finite() {
            return f64::INFINITY;
        }
        acc += x * x;
    }
    acc
}

/// Dogleg step for the scaled trust region ||D p|| <= delta.
fn dogleg_step(
    jac: &DMatrix<f64>,
    g: &DVector<f64>,
    gn: Option<&DVector<f64>>,
    d: &[f64],
    delta: f64,
) -> DVector<f64> {
    if let Some(gn) = gn {
        if scaled_norm(gn.as_slice(), d) <= delta {
            return gn.clone();
        }
    }
    // Cauchy point along the scaled steepest-descent direction
    let dig = DVector::from_iterator(d.len(), g.iter().zip(d).map(|(gi, di)| gi / (di * di)));
    let jd = jac * &dig;
    let gd2: f64 = g.iter().zip(d).map(|(gi, di)| (gi / di) * (gi / di)).sum();
    let denom = jd.norm_squared();
    let t = if denom > 0.0 { gd2 / denom } else { 0.0 };
    let pc = -t * &dig;
    let pc_ok = pc.iter().all(|v| v.is_finite());
    let pc_n = if pc_ok {
        scaled_norm(pc.as_slice(), d)
    } else {
        0.0
    };
    match gn {
        None => {
            if pc_n > delta {
                pc * (delta / pc_n)
            } else if pc_n > 0.0 {
                pc
            } else {
                DVector::zeros(d.len())
            }
        }
        Some(gn) => {
            if !pc_ok || pc_n == 0.0 {
                let gn_n = scaled_norm(gn.as_slice(), d);
                return gn * (delta / gn_n);
            }
            if pc_n >= delta {
                return pc * (delta / pc_n);
            }
            // boundary intersection of the segment Cauchy -> Gauss-Newton
            let diff = gn - &pc;
            let a: f64 = diff.iter().zip(d).map(|(x, s)| (x * s) * (x * s)).sum();
            let b: f64 = 2.0
                * pc.iter()
                    .zip(diff.iter())
                    .zip(d)
                    .map(|((p, q), s)| p * q * s * s)
                    .sum::<f64>();
            let c = pc_n * pc_n - delta * delta;
            let disc = (b * b - 4.0 * a * c).max(0.0);
            let tau = if a > 0.0 {
                ((-b + disc.sqrt()) / (2.0 * a)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            &pc + tau * diff
        }
    }
}

/// Powell-style dogleg on 0.5 ||F||^2 with monotone column scaling. Used as a
/// fallback when the damped Newton iteration stalls short of the tolerance.
pub fn dogleg(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    z0: &[f64],
    tol: f64,
    max_iter: usize,
) -> SolveReport {
    let n = z0.len();
    let mut z = z0.to_vec();
    let mut fz = f(&z);
    let mut norm = inf_norm(&fz);
    let mut history = vec![norm];
    if !norm.is_finite() {
        return SolveReport {
            z,
            residual_norm: norm,
            iterations: 0,
            converged: false,
            history,
        };
    }
    let mut d = vec![0.0f64; n];
    let mut jac = fd_jacobian(f, &z, &fz, true);
    update_scales(&jac, &mut d);
    let mut delta = scaled_norm(&z, &d).max(1.0);
    let mut iters = 0usize;
    let mut rejects = 0usize;
    while iters < max_iter && norm >= tol {
        iters += 1;
        let fv = DVector::from_column_slice(&fz);
        let g = jac.transpose() * &fv;
        let gn = linear_step(&jac, &fz);
        let p = dogleg_step(&jac, &g, gn.as_ref(), &d, delta);
        let p_norm = scaled_norm(p.as_slice(), &d);
        if !p.iter().all(|v| v.is_finite()) || p_norm == 0.0 {
            break;
        }
        let zc: Vec<f64> = z.iter().zip(p.iter()).map(|(a, b)| a + b).collect();
        let fc = f(&zc);
        let fc2 = sq_norm_checked(&fc);
        let jp = &jac * &p;
        let pred = 0.5 * (fv.norm_squared() - (&fv + jp).norm_squared());
        let act = 0.5 * (fv.norm_squared() - fc2);
        let rho = if pred > 0.0 && act.is_finite() {
            act / pred
        } else {
            -1.0
        };
        if rho > 1e-4 {
            z = zc;
            fz = fc;
            norm = inf_norm(&fz);
            jac = fd_jacobian(f, &z, &fz, true);
            update_scales(&jac, &mut d);
            rejects = 0;
        } else {
            rejects += 1;
            if rejects > 25 {
                break;
            }
        }
        if rho < 0.25 {
            delta = 0.5 * p_norm.min(delta);
        } else if rho > 0.75 && p_norm >= 0.9 * delta {
            delta = (2.0 * delta).min(1e8);
        }
        if delta < 1e-14 * (1.0 + scaled_norm(&z, &d)) {
            break;
        }
        history.push(norm);
    }
    SolveReport {
        converged: norm < tol,
        z,
        residual_norm: norm,
        iterations: iters,
        history,
    }
}

/// Damped Newton first; on failure, dogleg from the Newton endpoint, then
/// from the original start. Returns the best of the attempts.
pub fn solve_robust(f: &dyn Fn(&[f64]) -> Vec<f64>, z0: &[f64], tol: f64) -> SolveReport {
    let newton = newton_damped(f, None, z0, tol, 60, true).expect("no guard supplied");
    if newton.converged {
        return newton;
    }
    let from_stall = dogleg(f, &newton.z, tol, 200);
    if from_stall.converged {
        return from_stall;
    }
    let from_start = dogleg(f, z0, tol, 200);
    if from_start.converged {
        return from_start;
    }
    let mut best = newton;
    for cand in [from_stall, from_start] {
        if cand.residual_norm < best.residual_norm {
            best = cand;
        }
    }
    best
}
