//! Exemplar-based video anomaly detection from object-level activity
//! descriptions.
//!
//! The pipeline pairs nearby objects using a pseudo-depth distance, cuts a
//! time-aligned crop window for every pair and single object, asks a
//! multimodal description backend what the objects are doing, and models the
//! nominal descriptions of a scene as a greedily selected exemplar set.
//! Test descriptions are scored by their distance to the nearest exemplar and
//! evaluated with region-based, track-based and frame-level criteria.

pub mod backend;
pub mod cropper;
pub mod describe;
pub mod digest;
pub mod eval;
pub mod exec;
pub mod exemplar;
pub mod fuse;
pub mod geom;
pub mod ingest;
pub mod pairing;
pub mod score;
pub mod synth;
pub mod textdist;

pub use exec::Exec;
pub use geom::{Point, Rect};

/// Version of this library, recorded in models and stage manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
