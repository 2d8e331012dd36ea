//! Explicit solutions of Riemann–Hilbert problems with quasi-permutation
//! monodromy built from Szegő kernels on hyperelliptic curves and cyclic covers.

pub mod config;
pub mod curve;
pub mod error;
pub mod isomon;
pub mod kernels;
pub mod periods;
pub mod quadrature;
pub mod report;
pub mod rh;
pub mod theta;

pub use error::{Error, Result};

pub type C64 = num_complex::Complex64;

/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<C64>;
/// Dense complex column vector.
pub type CVector = nalgebra::DVector<C64>;
