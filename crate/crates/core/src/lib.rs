//! Numerical laboratory for singular radial solutions of the semilinear heat
//! equation `∂ₜu = Δu + |u|^α u`.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod ode;
pub mod params;
pub mod radial_pde;
pub mod selfsimilar;
pub mod stationary;
pub mod verify;

pub use error::{Error, Result};
pub use params::{Params, Regime};
