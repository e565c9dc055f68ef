//! Detection of fresh block falls in co-registered before/after grayscale
//! image pairs.
//!
//! The chain mirrors the processing flow: tile-wise sub-pixel
//! co-registration ([`coregister`]), the offset difference image
//! ([`raster`]), HOG/ε-SVR sliding-window detection ([`hog`], [`svm`]),
//! threshold/MSER/blob shape extraction with block–shadow pairing
//! ([`blob`]), the acceptance rules combining both ([`fusion`]), scoring
//! against ground truth ([`eval`]) and a synthetic scene generator
//! ([`synthgen`]) that supplies exact truth. [`pipeline`] ties the stages
//! together behind a manifest file.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blob;
pub mod coregister;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod hog;
pub mod io;
pub mod pipeline;
pub mod raster;
pub mod region;
pub mod svm;
pub mod synthgen;

pub use error::{Error, Result};
pub use raster::{Raster, SunGeometry, Translation};
pub use region::{BoundingBox, Mask, Point, Polarity, Region};
