//! Reconstructs collective movement dynamics around a large-scale event
//! from multi-scale georeferenced social records: filters event records,
//! fuses coordinate- and place-scale georeferences into per-user activity
//! surfaces via variable-bandwidth kernel density estimation, infers home
//! regions, detects population-adjusted hotspots, and produces
//! population-calibrated origin-destination flow shares.

pub mod error;
pub mod flows;
pub mod geo;
pub mod inference;
pub mod ingest;
pub mod pipeline;
pub mod stats;
pub mod synth;
pub mod vbkde;

pub use error::{Error, Result};
