//! Numerical laboratory for Nikodym-type maximal functions on curved
//! Riemannian patches.

pub mod combinatorics;
pub mod curvature;
pub mod distance;
pub mod error;
pub mod fit;
pub mod geodesic;
pub mod harness;
pub mod metric;
pub mod nikodym;
pub mod oscillatory;
pub mod quadrature;
pub mod rng;
pub mod tube;

pub use error::{LabError, Result};
