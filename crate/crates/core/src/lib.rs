//! Models and fits for surface-acoustic-wave cavities coupled to
//! single-photon emitters.

pub mod config;
pub mod emitter;
pub mod error;
pub mod io;
pub mod lm;
pub mod photonstats;
pub mod report;
pub mod resonator;
pub mod rng;
pub mod strobe;
pub mod sweep;
pub mod units;

pub use error::{Error, Result};
