use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {what}: argument {value} outside [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("{what}: argument {value} lies below the monotone branch starting at {vertex}")]
    Monotonicity {
        what: &'static str,
        value: f64,
        vertex: f64,
    },

    #[error("{what}: target {target} is below the attainable minimum {minimum}")]
    NoSolution {
        what: &'static str,
        target: f64,
        minimum: f64,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("infeasible climb at step {step}: |dh/(v*delta)| = {ratio} > 1")]
    InfeasibleClimb { step: usize, ratio: f64 },

    #[error("shaft speed {omega} rad/s at step {step} outside loss table range [{lo}, {hi}]")]
    Coverage {
        step: usize,
        omega: f64,
        lo: f64,
        hi: f64,
    },

    #[error("infeasible bounds at step {step}: {which} lower {lo} > upper {hi}")]
    InfeasibleBounds {
        step: usize,
        which: &'static str,
        lo: f64,
        hi: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("problem infeasible: {0}")]
    Infeasible(String),

    #[error("enumeration budget exceeded: {points}^{steps} sequences > {budget}")]
    Budget {
        points: usize,
        steps: usize,
        budget: u64,
    },

    #[error("solver failure at step {step}: {message}")]
    Solver { step: usize, message: String },

    #[error("drive power demand {demand} MW at step {step} exceeds combined capability {capability} MW")]
    DemandInfeasible {
        step: usize,
        demand: f64,
        capability: f64,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("configuration error: {0}")]
    Config(String),
}
