use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

/// Coarse classification, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Precondition,
    Validation,
    Size,
    Solver,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("point {point:?} lies outside the domain")]
    Domain { point: Vec<f64> },
    #[error("mass mismatch: {left} vs {right} (relative {relative:e})")]
    MassMismatch { left: f64, right: f64, relative: f64 },
    #[error("f - g is nonzero at {point:?}, inside the collar of width {collar}")]
    SupportViolation { point: Vec<f64>, collar: f64 },
    #[error("{count} atoms exceed the cap of {cap}; coarsen the measures first")]
    TooManyAtoms { count: usize, cap: usize },
    #[error("cutoff target eps0 = {target} unreachable; the plateau limit is {limit}")]
    CutoffInfeasible { target: f64, limit: f64 },
    #[error("cutoff ramp of width {ramp} is narrower than two grid spacings ({spacing})")]
    UnresolvedCutoff { ramp: f64, spacing: f64 },
    #[error("layer {layer}: eps0 * max g = {lhs} is not below {rhs}")]
    EpsilonConstraint { layer: usize, lhs: f64, rhs: f64 },
    #[error("layer 1 fiber masses differ by {relative:e} at fiber {fiber:?}")]
    FiberMassMismatch { fiber: Vec<usize>, relative: f64 },
    #[error("layer {layer}: no bracket for the root at height index {height}")]
    NotBracketed { layer: usize, height: usize },
    #[error("layer {layer}: step is not monotone (min slope factor {factor})")]
    StepRejected { layer: usize, factor: f64 },
    #[error("layer {layer}: intermediate density is not positive (min {min})")]
    NonPositiveIntermediate { layer: usize, min: f64 },
    #[error("linearized operator has a non-positive diagonal kernel (min {min})")]
    SingularKernel { min: f64 },
    #[error("component {component} is too rough to invert (subgrid mismatch {mismatch:e})")]
    RoughField { component: usize, mismatch: f64 },
    #[error("partial sum f_{index} is not positive (min {min})")]
    Positivity { index: usize, min: f64 },
    #[error("edge {edge} failed: {source}")]
    EdgeSolve { edge: usize, source: Box<Error> },
    #[error("parameter step [{from}, {to}] stays above the metric bound after refinement")]
    Refinement { from: f64, to: f64 },
    #[error("mollified map is not a diffeomorphism at any tried scale (last {scale})")]
    NotDiffeomorphic { scale: f64 },
    #[error("sampled map is not bijective (inverse residual {residual:e})")]
    NotBijective { residual: f64 },
    #[error("sampled map is not area preserving (discrepancy {discrepancy:e} > {tolerance:e})")]
    NotAreaPreserving { discrepancy: f64, tolerance: f64 },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::TooManyAtoms { .. } => ErrorKind::Size,
            Error::NotBijective { .. } | Error::NotAreaPreserving { .. } => ErrorKind::Validation,
            Error::InvalidGrid(_)
            | Error::InvalidDensity(_)
            | Error::InvalidParameter(_)
            | Error::ShapeMismatch(_)
            | Error::Domain { .. }
            | Error::MassMismatch { .. }
            | Error::SupportViolation { .. }
            | Error::CutoffInfeasible { .. }
            | Error::UnresolvedCutoff { .. }
            | Error::EpsilonConstraint { .. }
            | Error::Positivity { .. } => ErrorKind::Precondition,
            Error::EdgeSolve { source, .. } => source.kind(),
            _ => ErrorKind::Solver,
        }
    }

    /// Short stable identifier used in machine-readable reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidDensity(_) => "invalid_density",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Domain { .. } => "domain",
            Error::MassMismatch { .. } => "mass_mismatch",
            Error::SupportViolation { .. } => "support_violation",
            Error::TooManyAtoms { .. } => "too_many_atoms",
            Error::CutoffInfeasible { .. } => "cutoff_infeasible",
            Error::UnresolvedCutoff { .. } => "cutoff_unresolved",
            Error::EpsilonConstraint { .. } => "epsilon_constraint",
            Error::FiberMassMismatch { .. } => "fiber_mass_mismatch",
            Error::NotBracketed { .. } => "not_bracketed",
            Error::StepRejected { .. } => "step_rejected",
            Error::NonPositiveIntermediate { .. } => "non_positive_intermediate",
            Error::SingularKernel { .. } => "singular_kernel",
            Error::RoughField { .. } => "rough_field",
            Error::Positivity { .. } => "positivity",
            Error::EdgeSolve { .. } => "edge_solve",
            Error::Refinement { .. } => "refinement",
            Error::NotDiffeomorphic { .. } => "not_diffeomorphic",
            Error::NotBijective { .. } => "not_bijective",
            Error::NotAreaPreserving { .. } => "not_area_preserving",
        }
    }
}
