//! Run configuration: JSON schema, validation, and the derived pieces the
//! commands share (effective model, initial measure, config hash).

use ggqmom::dynamics::IntegratorConfig;
use ggqmom::model::{validate_default, Model};
use ggqmom::quadrature::{gauss_christoffel, gauss_hermite_init, MomentVector, QuadratureMeasure};
use ggqmom::stationary::DEFAULT_STATIONARY_TOL;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Model,
    #[serde(rename = "N")]
    pub n: usize,
    /// Overrides the model's own noise amplitude when present.
    pub sigma: Option<f64>,
    #[serde(rename = "sigmaGrid")]
    pub sigma_grid: Option<Vec<f64>>,
    pub initializer: Option<Initializer>,
    #[serde(default)]
    pub integrator: IntegratorOverrides,
    #[serde(rename = "tEnd")]
    pub t_end: Option<f64>,
    /// Number of equally spaced trajectory samples, endpoints included.
    pub samples: Option<usize>,
    #[serde(rename = "momentOrder")]
    pub moment_order: Option<usize>,
    /// Restrict the stationary solve to the symmetric subspace.
    #[serde(default)]
    pub symmetric: bool,
    pub tol: Option<f64>,
    #[serde(default)]
    pub outputs: Outputs,
    #[serde(rename = "rngSeed")]
    pub rng_seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum Initializer {
    GaussHermite { mean: f64, variance: f64 },
    Moments(Vec<f64>),
    Explicit { nodes: Vec<f64>, weights: Vec<f64> },
}

/// Optional per-field overrides of the integrator defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorOverrides {
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub initial_step: Option<f64>,
    pub max_step: Option<f64>,
    pub collision_threshold: Option<f64>,
    pub weight_floor: Option<f64>,
    pub max_steps: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    pub prefix: Option<String>,
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    pub fn wants_csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }
    pub fn wants_json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

/// A parsed config plus everything derived from the raw bytes.
pub struct LoadedConfig {
    pub run: RunConfig,
    /// Hex SHA-256 of the config file bytes, embedded in every output.
    pub hash: String,
    /// The parsed JSON itself, echoed into manifests.
    pub echo: serde_json::Value,
}

pub fn load(path: &std::path::Path) -> Result<LoadedConfig, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let run: RunConfig = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let echo: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    let mut h = Sha256::new();
    h.update(&bytes);
    let hash = h
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<String>();
    Ok(LoadedConfig { run, hash, echo })
}

impl RunConfig {
    /// Model with any top-level sigma override applied.
    pub fn effective_model(&self) -> Result<Model, CliError> {
        let model = match self.sigma {
            Some(s) if s > 0.0 => self.model.with_sigma(s),
            Some(s) => return Err(CliError::Config(format!("sigma must be positive, got {s}"))),
            None => self.model.clone(),
        };
        if !(self.model.sigma() > 0.0) && self.sigma.is_none() {
            return Err(CliError::Config(
                "model sigma must be positive (or set the top-level sigma field)".into(),
            ));
        }
        Ok(model)
    }

    /// Structural checks that do not depend on the command.
    pub fn validate_shape(&self) -> Result<(), CliError> {
        if self.n == 0 {
            return Err(CliError::Config("N must be at least 1".into()));
        }
        match &self.initializer {
            Some(Initializer::Explicit { nodes, weights }) => {
                if nodes.len() != self.n || weights.len() != self.n {
                    return Err(CliError::Config(format!(
                        "explicit initializer has {} nodes / {} weights but N = {}",
                        nodes.len(),
                        weights.len(),
                        self.n
                    )));
                }
            }
            Some(Initializer::Moments(m)) => {
                if m.len() != 2 * self.n {
                    return Err(CliError::Config(format!(
                        "moments initializer needs m0..m{} ({} values) for N = {}, got {}",
                        2 * self.n - 1,
                        2 * self.n,
                        self.n,
                        m.len()
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Model-assumption validation; skipped under --force.
    pub fn validate_model(&self, model: &Model, force: bool) -> Result<(), CliError> {
        if force {
            return Ok(());
        }
        let report = validate_default(model);
        if !report.all_passed() {
            let failed: Vec<&str> = report
                .checks_passed
                .iter()
                .filter(|(_, ok)| !ok)
                .map(|(name, _)| name.as_str())
                .collect();
            return Err(CliError::Config(format!(
                "model validation failed: {} (rerun with --force to override)",
                failed.join(", ")
            )));
        }
        Ok(())
    }

    /// Build the initial measure from the initializer, which must be present.
    pub fn initial_measure(&self) -> Result<QuadratureMeasure, CliError> {
        let init = self
            .initializer
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs an initializer field".into()))?;
        let mu = match init {
            Initializer::GaussHermite { mean, variance } => {
                gauss_hermite_init(self.n, *mean, *variance)
            }
            Initializer::Moments(m) => gauss_christoffel(&MomentVector(m.clone()), self.n),
            Initializer::Explicit { nodes, weights } => {
                QuadratureMeasure::new(nodes.clone(), weights.clone())
            }
        };
        mu.map_err(|e| CliError::Config(format!("initializer: {e}")))
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        let d = IntegratorConfig::default();
        let o = &self.integrator;
        IntegratorConfig {
            rel_tol: o.rel_tol.unwrap_or(d.rel_tol),
            abs_tol: o.abs_tol.unwrap_or(d.abs_tol),
            initial_step: o.initial_step.unwrap_or(d.initial_step),
            max_step: o.max_step.unwrap_or(d.max_step),
            collision_threshold: o.collision_threshold.unwrap_or(d.collision_threshold),
            weight_floor: o.weight_floor.unwrap_or(d.weight_floor),
            max_steps: o.max_steps.unwrap_or(d.max_steps),
        }
    }

    pub fn stationary_tol(&self) -> f64 {
        self.tol.unwrap_or(DEFAULT_STATIONARY_TOL)
    }

    pub fn prefix(&self) -> &str {
        self.outputs.prefix.as_deref().unwrap_or("run")
    }

    /// Flag wins over config; default emits both formats.
    pub fn format(&self, flag: Option<OutputFormat>) -> OutputFormat {
        flag.or(self.outputs.format).unwrap_or(OutputFormat::Both)
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.rng_seed).unwrap_or(0)
    }
}
