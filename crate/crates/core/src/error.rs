use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed or out-of-range input (bad index, non-unit vector, bad config).
    #[error("invalid input: {0}")]
    Input(String),

    /// Parameters outside the admissible (d, p, q, R) range.
    #[error("inadmissible parameters: {0}")]
    Params(String),

    /// Evaluation point outside the domain of a closed form.
    #[error("domain error: {0}")]
    Domain(String),

    /// Spectrum violates a structural precondition of a second-variation formula.
    #[error("mode k={k} violates {constraint}")]
    Precondition { k: usize, constraint: &'static str },

    /// A quadrature integrand produced a non-finite value.
    #[error("non-finite integrand value {value} at node {node} ({xi:?})")]
    NonFinite { node: usize, xi: [f64; 3], value: f64 },

    /// Star-shapedness lost: boundary radius not positive at a node.
    #[error("boundary radius {radius} <= 0 at node {node}")]
    NotStarShaped { node: usize, radius: f64 },

    /// Spectral solver could not meet its tolerance.
    #[error("solver failure: {message} (boundary residual {residual:e})")]
    Solver { message: String, residual: f64 },
}
