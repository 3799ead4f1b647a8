use thiserror::Error;

/// Failure modes surfaced by the solver library.
///
/// Message strings are load-bearing: downstream tooling matches on them.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("nodes not strictly ordered")]
    NodesNotOrdered,

    #[error("node collision")]
    NodeCollision,

    #[error("no roots of constant polynomial")]
    ConstantPolynomialRoots,

    #[error("moments not in the interior of the moment cone")]
    MomentsOutsideCone,

    #[error("ill-conditioned moment inversion")]
    IllConditionedMoments,

    #[error("no stable cluster sites")]
    NoStableClusterSites,

    #[error("scaling law inapplicable")]
    ScalingLawInapplicable,

    #[error("parity assumptions violated")]
    ParityViolated,

    #[error("blow-up: check dt or model")]
    BlowUp,

    #[error("weight underflow")]
    WeightUnderflow,

    #[error("step budget exhausted")]
    StepBudgetExhausted,

    /// Newton iteration failed; carries the residual norms seen along the way.
    #[error("solver did not converge (final residual {final_residual:.3e})")]
    NonConvergence {
        final_residual: f64,
        residual_history: Vec<f64>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
