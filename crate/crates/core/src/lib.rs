//! Class-balanced capsule endoscopy classification pipeline.
//!
//! The crate is organised the way data flows through a run:
//!
//! * [`manifest`] scans a class-foldered image tree into a [`manifest::DatasetManifest`].
//! * [`balance`] plans and executes per-class downsampling and augmentation.
//! * [`preprocess`] turns stored images into normalized channel-first tensors.
//! * [`model`] builds a backbone plus classifier head and runs inference.
//! * [`train`] holds the losses, the optimizer and the training loop.
//! * [`eval`] computes confusion matrices, per-class scores and aggregates.
//! * [`plot`] renders training curves and confusion heat-maps to PNG.

pub mod balance;
pub mod error;
pub mod eval;
pub mod labels;
pub mod manifest;
pub mod model;
pub mod plot;
pub mod preprocess;
pub mod raster;
pub mod seed;
pub mod train;

pub use error::{Error, ErrorKind, Result};
pub use labels::{ClassLabel, NUM_CLASSES};
