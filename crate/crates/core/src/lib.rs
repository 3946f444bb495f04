//! Desk-scale renormalization-group toolkit for the 2D Coulomb gas /
//! sine-Gordon model: finite-range covariance decomposition, multi-scale
//! Gaussian sampling, polymer combinatorics with exact circle-product
//! identities, the bound-level RG flow with stable-manifold tuning, and
//! Monte Carlo measurement of dipole-dipole correlation decay.

pub mod activities;
pub mod covariance;
pub mod gaussian;
pub mod polymers;
pub mod error;
pub mod fft;
pub mod grid;
pub mod io;
pub mod mc;
pub mod quad;
pub mod rg_flow;
pub mod rng;

pub use error::{Error, Result};
pub use grid::{Field, TorusGrid};
pub use rng::SeedSplitter;
