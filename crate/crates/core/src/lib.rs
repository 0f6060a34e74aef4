//! Two-mode dynamics of a boson condensate in a time-dependent double well.

pub mod amplitudes;
pub mod densities;
pub mod error;
pub mod evolve;
pub mod gpe;
pub mod grid;
pub mod linalg;
pub mod observables;
pub mod spin_basis;
pub mod trap;
pub mod units;

pub use error::{Error, Result};
