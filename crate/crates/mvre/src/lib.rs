//! Multi-view regression engine.
//!
//! Combines structured (tabular) property attributes with raster satellite
//! tiles for price prediction. The crate provides a small deterministic
//! tensor engine with reverse-mode differentiation ([`numkit`]), a
//! schema-driven tabular pipeline ([`tabular`]), web-mercator tile math and
//! tile acquisition ([`geotile`]), a from-scratch regression forest
//! ([`forest`]), the catalog of fusion strategies ([`strategies`]), a
//! synthetic data oracle ([`synthbench`]), currency-scale evaluation
//! ([`evalreport`]), and the CLI plumbing behind the `mvre` binary.
//!
//! See the `book/` guide for a narrative walkthrough of the concepts.

pub mod error;
pub mod evalreport;
pub mod forest;
pub mod geotile;
pub mod numkit;
pub mod strategies;
pub mod synthbench;
pub mod tabular;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
