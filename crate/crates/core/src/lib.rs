//! Special Lagrangian torus fibres near the large complex structure limit of
//! a degenerating family of Calabi–Yau hypersurfaces.

pub mod ambient;
pub mod config;
pub mod darboux;
pub mod error;
pub mod fibration;
pub mod flows;
pub mod jet;
pub mod local_model;
pub mod spectral;
pub mod solver;
pub mod tbound;

pub use error::{Error, Result};
