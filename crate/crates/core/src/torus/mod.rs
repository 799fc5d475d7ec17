//! Flat tori `T^n`: a cube atlas, the zero-mean decomposition of a density
//! over it, and global maps assembled from one cube solve per chart.

mod atlas;
mod decompose;
mod global;
mod map;

pub use atlas::TorusAtlas;
pub use decompose::{decompose, decompose_pair, Decomposition};
pub use global::{global_solve, parametric_solve, parametric_solve_pairs, EdgeReport, GlobalReport, ParametricOptions, ParametricReport, TorusOptions};
pub use map::{dbar_between, jacobian_determinants, min_image, pullback_defect, torus_distance, ChartMap, TorusMap};
