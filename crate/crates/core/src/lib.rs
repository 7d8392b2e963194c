//! Numerical laboratory for one-dimensional discrete Schrödinger operators
//! `(Hψ)(n) = ψ(n+1) + ψ(n−1) + V(n)ψ(n)`.
//!
//! The crate covers potential families ([`potentials`]), transfer matrices at
//! complex energies ([`transfer`]), the Fibonacci trace map ([`tracemap`]),
//! time-averaged wavepacket spreading ([`dynamics`]), upper/lower bound
//! functionals built from transfer-matrix growth ([`bounds`]) and the
//! number-theoretic side of quasi-periodic potentials ([`quasiperiodic`]).

pub mod bounds;
pub mod dynamics;
mod error;
pub mod fit;
mod hp;
pub mod potentials;
pub mod quasiperiodic;
pub mod tracemap;
pub mod transfer;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Version of this library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
