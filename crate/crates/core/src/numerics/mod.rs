//! Shared numeric kernels: orthonormal Legendre bases, Gauss-Legendre
//! quadrature, Gaussian smoothing kernels and annealing schedules.
//!
//! Everything here is a pure function of its inputs and safe to call
//! concurrently.

mod basis;
mod kernel;
mod quadrature;
mod schedule;
pub(crate) mod solve;

pub use basis::BasisConfig;
pub use kernel::smoothing_kernel;
pub use quadrature::{gram_matrix, quadrature_grid, QuadratureRule};
pub use schedule::{Lambdas, Schedule};
