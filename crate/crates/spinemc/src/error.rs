use thiserror::Error;

/// Errors raised across the simulators, oracles and the experiment driver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid offspring distribution: {0}")]
    InvalidDistribution(String),

    #[error("domain violation: {0}")]
    Domain(String),

    #[error("fixed-point iteration did not converge within {max_iters} iterations (residual {residual:.3e})")]
    NonConvergence { max_iters: u32, residual: f64 },

    #[error("population cap {cap} exceeded at generation {generation}")]
    PopulationOverflow { cap: u64, generation: u32 },

    #[error("particle cap {cap} exceeded at t = {time:.6}")]
    ParticleOverflow { cap: usize, time: f64 },

    #[error("exact law at n = {n} would exceed the {limit}-atom support limit; refusing")]
    SupportExplosion { n: u32, limit: u64 },

    #[error("pruned probability mass {pruned:.3e} exceeds the {budget:.3e} budget; exact law aborted")]
    PrunedMass { pruned: f64, budget: f64 },

    #[error("need at least {need} samples, got {got}")]
    NotEnoughSamples { need: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialize(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
