use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state space has {count} states, above the cap of {cap}")]
    StateSpaceTooLarge { count: u128, cap: usize },

    #[error("coefficients are not uniformly elliptic: min a_i = {min}")]
    NotElliptic { min: f64 },

    #[error("mesh too coarse: h * b_max = {product} must stay below a_min = {a_min}")]
    MeshTooCoarse { product: f64, a_min: f64 },

    #[error("measure weight {weight} at state {state} is below the floor {floor}")]
    DegenerateMeasure {
        state: usize,
        weight: f64,
        floor: f64,
    },

    #[error("generator kernel has dimension {dimension}, expected 1")]
    NonUniqueKernel { dimension: usize },

    #[error("stationary solve produced weight {weight} at state {state}")]
    NegativeWeight { state: usize, weight: f64 },

    #[error("{method} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        method: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("solvability violated at order {order}: <A* f_k>_nu = {mean:e}")]
    SolvabilityViolated { order: usize, mean: f64 },

    #[error("constant {name} must be positive, got {value}")]
    NonPositiveConstant { name: &'static str, value: f64 },

    #[error("all series coefficients vanish; the radius is infinite")]
    DegenerateSeries,

    #[error("contour of radius {radius} hits the spectrum (nearest nonzero eigenvalue modulus {nearest})")]
    ContourHitsSpectrum { radius: f64, nearest: f64 },

    #[error("projector quadrature did not settle: change {change:e} at {nodes} nodes")]
    QuadratureNotConverged { nodes: usize, change: f64 },

    #[error("spec carries no Hamiltonian; Holley-Stroock estimate unavailable")]
    NoHamiltonian,

    #[error("observable reads site {site:?} outside the box of half-width {half_width}")]
    UnsupportedObservable { site: Vec<i64>, half_width: usize },

    #[error("time step {dt} too large: dt * b_max = {product} exceeds {limit}")]
    StepTooLarge { dt: f64, product: f64, limit: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
