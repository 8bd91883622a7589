//! Amplitude-quanta simulation of quantum dynamics.

pub mod compiler;
pub mod error;
pub mod harness;
pub mod kinetics;
pub mod linalg;
pub mod measurement;
pub mod membrane;
pub mod model;
pub mod multiparticle;
pub mod oracle;
pub mod rng;

pub use error::{AqError, Result};
