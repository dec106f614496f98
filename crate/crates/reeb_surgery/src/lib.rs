//! Reeb dynamics after Legendrian surgery on a model Weinstein handle: exact
//! handle flows, a chord-atlas model of the ambient manifold, word
//! enumeration, chord/orbit solvers, asymptotic spectra and model strips.

pub mod ambient;
pub mod asymptotics;
pub mod cli;
pub mod error;
pub mod flows;
pub mod geometry;
pub mod handle;
pub mod strips;
pub mod surgery;
pub mod words;

pub use error::{Error, Result};
