use thiserror::Error;

use crate::texture::Texture;

/// Errors produced by the texture / spectrum toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("Matsubara sum Z_{j} not converged after {terms} terms (partial sum {partial:e})")]
    MatsubaraNonConvergence { j: u32, terms: usize, partial: f64 },

    #[error("gap equation did not converge at T/Tc={t}: residual {residual:e}")]
    GapNonConvergence { t: f64, residual: f64 },

    #[error("negative radicand {value:e} in Leggett frequency at T/Tc={t}")]
    NegativeRadicand { t: f64, value: f64 },

    #[error("parameter table: {0}")]
    Table(String),

    #[error("parameter table: missing key `{0}`")]
    MissingKey(String),

    #[error("pressure {pressure} bar outside table range [{min}, {max}] bar")]
    PressureOutOfRange { pressure: f64, min: f64, max: f64 },

    #[error(
        "texture minimization not converged after {iterations} iterations (grad {grad_norm:e})"
    )]
    Unconverged { iterations: usize, grad_norm: f64 },

    #[error("spectrum: {0}")]
    Spectrum(String),

    #[error("spectrum must be normalized")]
    Unnormalized,

    #[error("spectrum has non-positive integral {0:e}")]
    NonPositiveArea(f64),

    #[error("axis mismatch: {0} vs {1}")]
    AxisMismatch(String, String),

    #[error("no descending edge found")]
    NoEdge,

    #[error("lambda_HV sensitivity map is not invertible: {dump}")]
    NonMonotoneMap { dump: String },

    #[error("degenerate objective: parameters ({first}, {second}) are not separately resolved (dA <= {tolerance} along {first} from bound to bound)")]
    Degenerate {
        first: String,
        second: String,
        tolerance: f64,
    },

    #[error("no transition found for control in [{from}, {to}]")]
    NotFound { from: f64, to: f64 },

    #[error("ambiguous branch identity at control value {at}")]
    AmbiguousBranch {
        at: f64,
        candidates: Box<[Texture; 2]>,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
