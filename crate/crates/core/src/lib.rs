// SPDX-License-Identifier: MIT OR Apache-2.0

//! Authorship attribution of hidden-state vectors by subspace projection
//! energy, with vocabulary-direction editing and representation diagnostics.
//!
//! Representations are stored as 32-bit floats and promoted to `f64` for all
//! arithmetic.

pub mod cli;
pub mod diagnostics;
pub mod discriminator;
pub mod editor;
pub mod error;
pub mod pipeline;
pub mod repstore;
pub mod rng;
pub mod synthgen;
pub mod territory;

pub use discriminator::{decide, decide_multi, projection_energy, EnergyDecision};
pub use editor::{apply_edit, make_edit_spec, EditOutcome, EditSpec};
pub use error::{Error, Result};
pub use repstore::{Manifest, RepresentationSet, VocabHead};
pub use territory::{build_territory, Decomposition, Method, TerritoryBasis};
