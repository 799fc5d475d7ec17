//! The layered triangular solver on `Q^n(K)`: given positive `f`, `g` of
//! equal mass with `f = g` near the boundary, build
//! `ψ = φ_n ∘ … ∘ φ_1` with `g(ψ(x)) det ∇ψ(x) = f(x)` and `ψ = id` near `∂Q`.

mod cutoff;
mod diagnostics;
mod solution;
mod solve;

pub use cutoff::CutoffFamily;
pub(crate) use cutoff::gauss_legendre;
pub use diagnostics::{
    c4, choose_subdivision, coerciveness_check, estimate_dm, lipschitz_constant, nonlinear_term, subdivision_for,
    CoercivenessReport, NonlinearReport,
};
pub use solution::{BoxDefect, DbarReport, Diagnostics, ResidualReport, TriangularSolution};
pub use solve::{dm_solve, solve_first_layer, solve_layer, DmOptions, LayerStats};
