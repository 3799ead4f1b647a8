//! The check command: a self-contained invariant suite run against the
//! configured model, reported as machine-readable pass/fail JSON.

use ggqmom::dynamics::{gg_rhs, integrate, GGState, IntegratorConfig};
use ggqmom::model::{generator_apply_monomial, validate_default, Model};
use ggqmom::oracle::{bound_report, counter_gaussian, euler_maruyama, ou_moments, InitSampler};
use ggqmom::polynomial::Polynomial;
use ggqmom::quadrature::{gauss_hermite_init, moments_of, QuadratureMeasure};
use ggqmom::stationary::{
    hermite_seed, solve_stationary, stability_probe, symmetric_stationary, ProbeVerdict,
    StationarySolution, DEFAULT_STATIONARY_TOL,
};
use serde::Serialize;
use std::path::Path;

use crate::config::LoadedConfig;
use crate::CliError;

#[derive(Serialize)]
struct CheckEntry {
    name: &'static str,
    passed: bool,
    skipped: bool,
    detail: String,
}

impl CheckEntry {
    fn pass(name: &'static str, detail: String) -> Self {
        CheckEntry {
            name,
            passed: true,
            skipped: false,
            detail,
        }
    }
    fn fail(name: &'static str, detail: String) -> Self {
        CheckEntry {
            name,
            passed: false,
            skipped: false,
            detail,
        }
    }
    fn skip(name: &'static str, detail: String) -> Self {
        CheckEntry {
            name,
            passed: true,
            skipped: true,
            detail,
        }
    }
}

#[derive(Serialize)]
struct CheckReport<'a> {
    command: &'static str,
    #[serde(rename = "configSha256")]
    config_sha256: &'a str,
    #[serde(rename = "allPassed")]
    all_passed: bool,
    checks: Vec<CheckEntry>,
}

struct Stream {
    seed: u64,
    ctr: u64,
}

impl Stream {
    fn gauss(&mut self) -> f64 {
        self.ctr += 1;
        counter_gaussian(self.seed, self.ctr, 0)
    }
}

fn is_odd(p: &Polynomial) -> bool {
    p.coefficients().iter().step_by(2).all(|&c| c == 0.0)
}

fn is_even(p: &Polynomial) -> bool {
    p.coefficients()
        .iter()
        .skip(1)
        .step_by(2)
        .all(|&c| c == 0.0)
}

/// Parity-symmetric models keep a symmetric law symmetric.
fn parity_symmetric(model: &Model) -> bool {
    let b_even = is_even(model.diffusion_poly());
    match model {
        Model::Sde(m) => b_even && is_odd(&m.drift),
        Model::Mvsde(m) => {
            b_even && is_odd(&m.effective_potential_deriv) && is_odd(&m.interaction_deriv)
        }
    }
}

fn galerkin_check(model: &Model, n_max: usize, seed: u64) -> CheckEntry {
    let mut s = Stream { seed, ctr: 0 };
    let mut worst = 0.0f64;
    for case in 0..20 {
        let n = 1 + (case % n_max.min(6));
        let mu = loop {
            let mut nodes: Vec<f64> = (0..n).map(|_| 1.5 * s.gauss()).collect();
            nodes.sort_by(|a, b| a.total_cmp(b));
            if nodes.windows(2).any(|w| w[1] - w[0] < 2e-2) {
                continue;
            }
            let raw: Vec<f64> = (0..n).map(|_| 0.05 + s.gauss().abs()).collect();
            let mass: f64 = raw.iter().sum();
            if let Ok(mu) = QuadratureMeasure::new(nodes, raw.iter().map(|w| w / mass).collect()) {
                break mu;
            }
        };
        let state = GGState {
            measure: mu.clone(),
            time: 0.0,
        };
        let (xdot, bdot) = match gg_rhs(model, &state) {
            Ok(r) => r,
            Err(e) => return CheckEntry::fail("galerkin_consistency", e.to_string()),
        };
        let drift = model.frozen_drift(&mu);
        for k in 0..2 * n {
            let mut lhs = 0.0;
            let mut scale = 1.0f64;
            for i in 0..n {
                let x = mu.nodes()[i];
                let t1 = bdot[i] * x.powi(k as i32);
                lhs += t1;
                scale = scale.max(t1.abs());
                if k > 0 {
                    let t2 = k as f64 * mu.weights()[i] * x.powi(k as i32 - 1) * xdot[i];
                    lhs += t2;
                    scale = scale.max(t2.abs());
                }
            }
            let p = generator_apply_monomial(&drift, model.diffusion_poly(), model.sigma(), k);
            let mut rhs = 0.0;
            for (&x, &w) in mu.nodes().iter().zip(mu.weights()) {
                let t = w * p.eval(x);
                rhs += t;
                scale = scale.max(t.abs());
            }
            let rel = (lhs - rhs).abs() / scale.max(lhs.abs()).max(rhs.abs());
            worst = worst.max(rel);
        }
    }
    if worst < 1e-9 {
        CheckEntry::pass(
            "galerkin_consistency",
            format!("20 random states, worst relative defect {worst:.2e}"),
        )
    } else {
        CheckEntry::fail(
            "galerkin_consistency",
            format!("moment identity defect {worst:.2e} exceeds 1e-9"),
        )
    }
}

pub fn check(lc: &LoadedConfig, out: &Path, seed_flag: Option<u64>) -> Result<(), CliError> {
    let cfg = &lc.run;
    cfg.validate_shape()?;
    let model = cfg.effective_model()?;
    let seed = cfg.seed(seed_flag);
    let n = cfg.n;
    let mut checks = Vec::new();

    let report = validate_default(&model);
    let model_ok = report.all_passed();
    let detail: Vec<String> = report
        .checks_passed
        .iter()
        .map(|(name, ok)| format!("{name}: {}", if *ok { "ok" } else { "FAILED" }))
        .collect();
    checks.push(if model_ok {
        CheckEntry::pass("model_validation", detail.join("; "))
    } else {
        CheckEntry::fail("model_validation", detail.join("; "))
    });

    checks.push(galerkin_check(&model, n, seed));

    let symmetric_model = parity_symmetric(&model);
    if model_ok {
        let init = GGState {
            measure: gauss_hermite_init(n, 0.0, 1.0)
                .map_err(|e| CliError::Config(e.to_string()))?,
            time: 0.0,
        };
        let times = [0.0, 0.25, 0.5, 0.75, 1.0];
        match integrate(
            &model,
            &init,
            1.0,
            &IntegratorConfig::default(),
            Some(&times),
        ) {
            Ok(traj) => {
                let drift = traj.diagnostics.max_weight_drift;
                checks.push(if drift < 1e-9 {
                    CheckEntry::pass(
                        "mass_conservation",
                        format!("pre-projection weight drift {drift:.2e}"),
                    )
                } else {
                    CheckEntry::fail(
                        "mass_conservation",
                        format!("weight drift {drift:.2e} exceeds 1e-9"),
                    )
                });
                let ordered = traj
                    .samples
                    .iter()
                    .all(|s| s.measure.nodes().windows(2).all(|w| w[0] < w[1]));
                checks.push(if ordered {
                    CheckEntry::pass("node_ordering", "nodes stayed strictly increasing".into())
                } else {
                    CheckEntry::fail("node_ordering", "node crossing along trajectory".into())
                });
                if symmetric_model {
                    let m1 = traj
                        .samples
                        .iter()
                        .map(|s| s.measure.moment(1).abs())
                        .fold(0.0, f64::max);
                    checks.push(if m1 < 1e-9 {
                        CheckEntry::pass("parity", format!("max |m1| = {m1:.2e} from even start"))
                    } else {
                        CheckEntry::fail("parity", format!("|m1| grew to {m1:.2e}"))
                    });
                } else {
                    checks.push(CheckEntry::skip(
                        "parity",
                        "model is not parity-symmetric".into(),
                    ));
                }
            }
            Err(a) => {
                checks.push(CheckEntry::fail(
                    "mass_conservation",
                    format!("integration aborted: {}", a.error),
                ));
                checks.push(CheckEntry::skip(
                    "node_ordering",
                    "integration aborted".into(),
                ));
                checks.push(CheckEntry::skip("parity", "integration aborted".into()));
            }
        }
    } else {
        for name in ["mass_conservation", "node_ordering", "parity"] {
            checks.push(CheckEntry::skip(name, "model validation failed".into()));
        }
    }

    // stationary solve, kept for the oracle comparisons below
    let mut stationary_sol: Option<StationarySolution> = None;
    if model_ok {
        let solved = if symmetric_model {
            symmetric_stationary(&model, n, model.sigma(), DEFAULT_STATIONARY_TOL)
        } else {
            hermite_seed(&model, model.sigma(), n).and_then(|seed_mu| {
                if seed_mu.len() == n {
                    solve_stationary(&model, &seed_mu, DEFAULT_STATIONARY_TOL)
                } else {
                    Err(ggqmom::error::Error::InvalidConfig(format!(
                        "seeding gives {} nodes for N = {n}",
                        seed_mu.len()
                    )))
                }
            })
        };
        match solved {
            Ok(sol) if sol.converged && sol.residual_norm < 1e-8 => {
                checks.push(CheckEntry::pass(
                    "stationary_residual",
                    format!("residual {:.2e}", sol.residual_norm),
                ));
                stationary_sol = Some(sol);
            }
            Ok(sol) => checks.push(CheckEntry::fail(
                "stationary_residual",
                format!(
                    "converged = {}, residual {:.2e}",
                    sol.converged, sol.residual_norm
                ),
            )),
            Err(e) => checks.push(CheckEntry::skip(
                "stationary_residual",
                format!("not solvable with automatic seeding: {e}"),
            )),
        }
    } else {
        checks.push(CheckEntry::skip(
            "stationary_residual",
            "model validation failed".into(),
        ));
    }

    if let (Model::Mvsde(m), Some(sol)) = (&model, &stationary_sol) {
        let observed = moments_of(&sol.measure, 2 * n);
        let initial = moments_of(
            &gauss_hermite_init(n, 0.0, 1.0).map_err(|e| CliError::Config(e.to_string()))?,
            2 * n,
        );
        match bound_report(m.theta, model.sigma(), &initial, &observed, 1.0) {
            Ok(rep) => {
                let even_ok = rep.per_order.iter().all(|b| b.satisfied);
                let odd_ok = rep.summability.odd_dominated;
                checks.push(if even_ok && odd_ok {
                    CheckEntry::pass(
                        "moment_bounds",
                        format!("{} even orders within ceiling", rep.per_order.len()),
                    )
                } else {
                    CheckEntry::fail(
                        "moment_bounds",
                        format!("even ceiling ok = {even_ok}, odd domination ok = {odd_ok}"),
                    )
                });
            }
            Err(e) => checks.push(CheckEntry::fail("moment_bounds", e.to_string())),
        }
    } else {
        checks.push(CheckEntry::skip(
            "moment_bounds",
            "needs a mean-field model with a converged stationary solution".into(),
        ));
    }

    // closed-form oracle applies to linear-drift, flat-noise plain SDEs
    let ou_alpha = match &model {
        Model::Sde(m)
            if m.drift.coefficients().len() == 2
                && m.drift.coefficients()[0] == 0.0
                && m.drift.coefficients()[1] < 0.0
                && m.diffusion_poly.coefficients() == [1.0] =>
        {
            Some(-m.drift.coefficients()[1])
        }
        _ => None,
    };
    if let Some(alpha) = ou_alpha {
        let init = GGState {
            measure: gauss_hermite_init(n.max(2), 0.5, 0.7)
                .map_err(|e| CliError::Config(e.to_string()))?,
            time: 0.0,
        };
        let cfg_int = IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            ..IntegratorConfig::default()
        };
        let times = [0.0, 0.5, 1.0];
        match integrate(&model, &init, 1.0, &cfg_int, Some(&times)) {
            Ok(traj) => {
                let k_max = (2 * n.max(2) - 1).min(4);
                let init_m = moments_of(&init.measure, k_max);
                let mut worst = 0.0f64;
                for st in &traj.samples {
                    let exact = ou_moments(alpha, model.sigma(), &init_m, st.time)
                        .map_err(|e| CliError::Config(e.to_string()))?;
                    for k in 1..=k_max {
                        let rel =
                            (st.measure.moment(k) - exact.0[k]).abs() / exact.0[k].abs().max(1e-9);
                        worst = worst.max(rel);
                    }
                }
                checks.push(if worst < 1e-6 {
                    CheckEntry::pass(
                        "oracle_closed_form",
                        format!("moments m1..m{k_max} match to {worst:.2e}"),
                    )
                } else {
                    CheckEntry::fail(
                        "oracle_closed_form",
                        format!("moment error {worst:.2e} exceeds 1e-6"),
                    )
                });
            }
            Err(a) => checks.push(CheckEntry::fail(
                "oracle_closed_form",
                format!("integration aborted: {}", a.error),
            )),
        }
    } else {
        checks.push(CheckEntry::skip(
            "oracle_closed_form",
            "closed-form moments need linear drift through the origin and unit flat noise".into(),
        ));
    }

    // particle oracle: skip when the solved branch is dynamically unstable,
    // since an ensemble will not stay on it
    let particle_target = match (&model, &stationary_sol) {
        (_, None) => None,
        (Model::Mvsde(m), Some(sol)) => {
            match stability_probe(m, sol, &vec![1.0; sol.measure.len()]) {
                Ok(p) if p.verdict == ProbeVerdict::IndicativeStable => Some(sol),
                _ => None,
            }
        }
        (Model::Sde(_), Some(sol)) => Some(sol),
    };
    if let Some(sol) = particle_target {
        if model.diffusion_poly().coefficients() == [1.0] {
            match euler_maruyama(
                &model,
                2000,
                1e-3,
                10.0,
                seed,
                InitSampler::Normal {
                    mean: 0.0,
                    std_dev: 1.0,
                },
            ) {
                Ok(ens) => {
                    let m2_gg = sol.measure.moment(2);
                    let m2_em = ens.moment(2);
                    let err = (m2_gg - m2_em).abs();
                    let tol = 0.1f64.max(0.25 * m2_gg.abs());
                    checks.push(if err < tol {
                        CheckEntry::pass(
                            "oracle_particles",
                            format!("m2: quadrature {m2_gg:.4} vs ensemble {m2_em:.4}"),
                        )
                    } else {
                        CheckEntry::fail(
                            "oracle_particles",
                            format!("m2 mismatch: quadrature {m2_gg:.4}, ensemble {m2_em:.4}"),
                        )
                    });
                }
                Err(e) => checks.push(CheckEntry::fail("oracle_particles", e.to_string())),
            }
        } else {
            checks.push(CheckEntry::skip(
                "oracle_particles",
                "particle comparison is calibrated for flat noise".into(),
            ));
        }
    } else {
        checks.push(CheckEntry::skip(
            "oracle_particles",
            "no dynamically stable stationary solution to compare against".into(),
        ));
    }

    let all_passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        let status = if c.skipped {
            "skip"
        } else if c.passed {
            "pass"
        } else {
            "FAIL"
        };
        println!("{status:<5} {:<22} {}", c.name, c.detail);
    }
    let report = CheckReport {
        command: "check",
        config_sha256: &lc.hash,
        all_passed,
        checks,
    };
    let body = serde_json::to_string_pretty(&report).expect("serializable report");
    let path = out.join(format!("{}_check.json", cfg.prefix()));
    std::fs::create_dir_all(out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", out.display())))?;
    std::fs::write(&path, body + "\n")
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    if all_passed {
        Ok(())
    } else {
        Err(CliError::Config("one or more checks failed".into()))
    }
}
