use thiserror::Error;

use crate::chain::Channel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("matrix exponential overflowed (1-norm {norm:.3e}, {squarings} squarings)")]
    ExpmOverflow { norm: f64, squarings: u32 },

    #[error("matrix is exactly singular (zero pivot at column {pivot})")]
    Singular { pivot: usize },

    #[error("eigenvalue iteration failed to converge for a {dim}x{dim} matrix")]
    EigenFailure { dim: usize },

    #[error("Lyapunov equation has no unique solution: eigenvalues {a} and {b} give lambda_a + conj(lambda_b) = {sum:.3e}")]
    LyapunovSingular { a: usize, b: usize, sum: f64 },

    #[error("invalid chain parameter `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },

    #[error("covariance matrix is not a valid state: {0}")]
    InvalidState(String),

    #[error("occupation eigenvalue {value:.3e} sits on the boundary of [0, 1]; use the vacuum path or raise eps_occ")]
    BoundaryOccupation { value: f64 },

    #[error("jump {channel} cannot occur from this state (tr J_q rho = {weight:.3e})")]
    InadmissibleCondition { channel: Channel, weight: f64 },

    #[error("singular T system at t = {t} for ({to}|{from})")]
    SingularPropagation { t: f64, to: Channel, from: Channel },

    #[error("conditional law undefined: p({to}|{from}) = {p:.3e}")]
    VanishingProbability { to: Channel, from: Channel, p: f64 },

    #[error("integrand has no dissipative decay scale; the tail cannot be bounded")]
    NoDecayScale,

    #[error("quadrature did not converge within {subdivisions} subdivisions (error estimate {error:.3e})")]
    QuadratureNoConvergence { subdivisions: usize, error: f64 },

    #[error("operation requires a steady state")]
    NotSteadyState,

    #[error("oracle supports 1 <= L <= {max}, got L = {size}")]
    OracleSize { size: usize, max: usize },

    #[error("oracle steady state is not unique (second smallest singular value {sigma:.3e})")]
    DegenerateSteadyState { sigma: f64 },

    #[error("jump {channel} has vanishing weight {weight:.3e} from the given state")]
    VanishingDenominator { channel: Channel, weight: f64 },
}
