//! Nematic liquid-crystal-elastomer rods.
//!
//! Two halves: [`cross_section`] turns a 2D cross-section and an isotropic
//! law into effective rod coefficients by solving corrector problems, and
//! [`flow`] runs a constraint-preserving semi-implicit gradient flow for the
//! resulting bending/twisting/director energy ([`rod`]). [`scenario`] wires
//! both into presets, config files and output writers.

pub mod cross_section;
pub mod error;
pub mod fem1d;
pub mod flow;
pub mod rod;
pub mod scenario;
pub mod sparse;
pub mod tensor;

pub use error::{Error, Result};
