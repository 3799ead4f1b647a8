//! The simulate, stationary, and bifurcate commands.

use ggqmom::dynamics::{integrate, trajectory_csv, GGState, StepDiagnostics, Trajectory};
use ggqmom::error::Error;
use ggqmom::model::Model;
use ggqmom::stationary::{
    bifurcation_csv, bifurcation_sweep, hermite_seed, solve_stationary, stability_probe,
    symmetric_stationary, BifurcationDiagram, Branch, StabilityProbe, StationarySolution,
};
use serde::Serialize;
use std::path::Path;

use crate::config::{LoadedConfig, OutputFormat};
use crate::CliError;

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn csv_with_hash(hash: &str, body: &str) -> String {
    format!("# config_sha256={hash}\n{body}")
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Serialize)]
struct SimulateManifest<'a> {
    command: &'static str,
    #[serde(rename = "configSha256")]
    config_sha256: &'a str,
    config: &'a serde_json::Value,
    status: &'static str,
    #[serde(rename = "abortReason", skip_serializing_if = "Option::is_none")]
    abort_reason: Option<String>,
    #[serde(rename = "samplesWritten")]
    samples_written: usize,
    diagnostics: &'a StepDiagnostics,
    #[serde(rename = "finalState")]
    final_state: Option<&'a GGState>,
}

pub fn simulate(
    lc: &LoadedConfig,
    out: &Path,
    format: Option<OutputFormat>,
    force: bool,
) -> Result<(), CliError> {
    let cfg = &lc.run;
    cfg.validate_shape()?;
    let model = cfg.effective_model()?;
    cfg.validate_model(&model, force)?;
    let init = GGState {
        measure: cfg.initial_measure()?,
        time: 0.0,
    };
    let t_end = cfg
        .t_end
        .ok_or_else(|| CliError::Config("simulate needs a tEnd field".into()))?;
    if !(t_end > 0.0) {
        return Err(CliError::Config(format!(
            "tEnd must be positive, got {t_end}"
        )));
    }
    let samples = cfg.samples.unwrap_or(101).max(2);
    let times: Vec<f64> = (0..samples)
        .map(|i| t_end * i as f64 / (samples - 1) as f64)
        .collect();
    let k_max = cfg.moment_order.unwrap_or(4);
    let int_cfg = cfg.integrator_config();

    let (traj, abort): (Trajectory, Option<Error>) =
        match integrate(&model, &init, t_end, &int_cfg, Some(&times)) {
            Ok(t) => (t, None),
            Err(a) => (a.partial, Some(a.error)),
        };

    let format = cfg.format(format);
    let prefix = cfg.prefix();
    if format.wants_csv() {
        write_file(
            out,
            &format!("{prefix}_trajectory.csv"),
            &csv_with_hash(&lc.hash, &trajectory_csv(&traj, k_max)),
        )?;
    }
    let manifest = SimulateManifest {
        command: "simulate",
        config_sha256: &lc.hash,
        config: &lc.echo,
        status: if abort.is_none() { "ok" } else { "aborted" },
        abort_reason: abort.as_ref().map(|e| e.to_string()),
        samples_written: traj.samples.len(),
        diagnostics: &traj.diagnostics,
        final_state: traj.samples.last(),
    };
    write_file(
        out,
        &format!("{prefix}_manifest.json"),
        &json_line(&manifest),
    )?;
    match abort {
        None => Ok(()),
        Some(e) => Err(CliError::Abort(e.to_string())),
    }
}

// ---------------------------------------------------------------------------
// stationary

#[derive(Serialize)]
struct StationaryOutput<'a> {
    command: &'static str,
    #[serde(rename = "configSha256")]
    config_sha256: &'a str,
    status: &'static str,
    solution: &'a StationarySolution,
    #[serde(skip_serializing_if = "Option::is_none")]
    probe: Option<&'a StabilityProbe>,
}

#[derive(Serialize)]
struct StationaryFailure<'a> {
    command: &'static str,
    #[serde(rename = "configSha256")]
    config_sha256: &'a str,
    status: &'static str,
    #[serde(rename = "finalResidual")]
    final_residual: f64,
    #[serde(rename = "residualHistory")]
    residual_history: &'a [f64],
}

pub fn stationary(
    lc: &LoadedConfig,
    out: &Path,
    format: Option<OutputFormat>,
    force: bool,
) -> Result<(), CliError> {
    let cfg = &lc.run;
    cfg.validate_shape()?;
    let model = cfg.effective_model()?;
    cfg.validate_model(&model, force)?;
    let tol = cfg.stationary_tol();
    let prefix = cfg.prefix();
    let name = format!("{prefix}_solution.json");

    let solved = if cfg.symmetric {
        symmetric_stationary(&model, cfg.n, model.sigma(), tol)
    } else if cfg.initializer.is_some() {
        solve_stationary(&model, &cfg.initial_measure()?, tol)
    } else {
        let seed = hermite_seed(&model, model.sigma(), cfg.n)
            .map_err(|e| CliError::Config(format!("automatic seeding failed: {e}")))?;
        if seed.len() != cfg.n {
            return Err(CliError::Config(format!(
                "automatic seeding gives {} nodes (one cluster per stable well); \
                 for this model provide an initializer or set \"symmetric\": true",
                seed.len()
            )));
        }
        solve_stationary(&model, &seed, tol)
    };

    let sol = match solved {
        Ok(s) => s,
        Err(Error::NonConvergence {
            final_residual,
            residual_history,
        }) => {
            let failure = StationaryFailure {
                command: "stationary",
                config_sha256: &lc.hash,
                status: "nonConvergence",
                final_residual,
                residual_history: &residual_history,
            };
            write_file(out, &name, &json_line(&failure))?;
            return Err(CliError::NonConvergence(format!(
                "stationary solve did not converge (final residual {final_residual:.3e})"
            )));
        }
        Err(e) => return Err(CliError::Config(e.to_string())),
    };

    let probe = match (&model, sol.converged) {
        (Model::Mvsde(m), true) => {
            // unidirectional displacement of every node
            Some(
                stability_probe(m, &sol, &vec![1.0; sol.measure.len()])
                    .map_err(|e| CliError::Config(e.to_string()))?,
            )
        }
        _ => None,
    };

    let output = StationaryOutput {
        command: "stationary",
        config_sha256: &lc.hash,
        status: if sol.converged {
            "ok"
        } else {
            "nonConvergence"
        },
        solution: &sol,
        probe: probe.as_ref(),
    };
    write_file(out, &name, &json_line(&output))?;
    if cfg.format(format).wants_csv() {
        let mut body = String::from("node,weight\n");
        for (x, w) in sol.measure.nodes().iter().zip(sol.measure.weights()) {
            body.push_str(&format!("{x},{w}\n"));
        }
        write_file(
            out,
            &format!("{prefix}_solution.csv"),
            &csv_with_hash(&lc.hash, &body),
        )?;
    }
    if sol.converged {
        Ok(())
    } else {
        Err(CliError::NonConvergence(format!(
            "stationary solve stalled at residual {:.3e} after {} iterations",
            sol.residual_norm, sol.newton_iterations
        )))
    }
}

// ---------------------------------------------------------------------------
// bifurcate

#[derive(Serialize)]
struct BifurcateOutput<'a> {
    command: &'static str,
    #[serde(rename = "configSha256")]
    config_sha256: &'a str,
    #[serde(rename = "criticalSigma")]
    critical_sigma: Option<f64>,
    /// [last sigma carrying cluster branches, first sigma without them].
    #[serde(rename = "criticalBracket", skip_serializing_if = "Option::is_none")]
    critical_bracket: Option<[f64; 2]>,
    diagram: &'a BifurcationDiagram,
}

pub fn bifurcate(
    lc: &LoadedConfig,
    out: &Path,
    format: Option<OutputFormat>,
    force: bool,
) -> Result<(), CliError> {
    let cfg = &lc.run;
    cfg.validate_shape()?;
    let model = cfg.effective_model()?;
    cfg.validate_model(&model, force)?;
    let m = match &model {
        Model::Mvsde(m) => m,
        Model::Sde(_) => {
            return Err(CliError::Config(
                "bifurcate needs a mean-field model (kind \"mvsde\")".into(),
            ))
        }
    };
    let mut grid = cfg
        .sigma_grid
        .clone()
        .ok_or_else(|| CliError::Config("bifurcate needs a sigmaGrid field".into()))?;
    if grid.iter().any(|s| !(s > &0.0) || !s.is_finite()) {
        return Err(CliError::Config(
            "sigmaGrid entries must be positive and finite".into(),
        ));
    }
    // the sweep walks from large noise downward
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();

    let tol = cfg.stationary_tol();
    let diagram =
        bifurcation_sweep(m, &grid, cfg.n, tol).map_err(|e| CliError::Config(e.to_string()))?;

    let bracket = diagram.critical_sigma.map(|_| {
        let last_cluster = diagram
            .entries
            .iter()
            .filter(|e| e.branch != Branch::Symmetric)
            .map(|e| e.sigma)
            .fold(f64::NEG_INFINITY, f64::max);
        let first_without = grid
            .iter()
            .copied()
            .filter(|&s| s > last_cluster)
            .fold(f64::INFINITY, f64::min);
        [last_cluster, first_without]
    });

    let format = cfg.format(format);
    let prefix = cfg.prefix();
    if format.wants_csv() {
        write_file(
            out,
            &format!("{prefix}_diagram.csv"),
            &csv_with_hash(&lc.hash, &bifurcation_csv(&diagram)),
        )?;
    }
    if format.wants_json() {
        let output = BifurcateOutput {
            command: "bifurcate",
            config_sha256: &lc.hash,
            critical_sigma: diagram.critical_sigma,
            critical_bracket: bracket,
            diagram: &diagram,
        };
        write_file(out, &format!("{prefix}_diagram.json"), &json_line(&output))?;
    }
    Ok(())
}
