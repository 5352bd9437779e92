//! Disk-backed similarity search for images stored as bags of high-dimensional
//! descriptors.
//!
//! An image is a set of feature vectors (e.g. SIFT descriptors). Similarity
//! between two images is the fraction of descriptor pairs within a radius of
//! each other. The [`engine`] module answers top-k image queries over a
//! disk-resident LSH index, using per-image collision-index scores, two
//! stopping conditions, and compressed-bitmap pruning of bucket files to cut
//! index IO. The [`baseline`] module runs the conventional alternative
//! (independent per-descriptor point queries fused with a Borda count), and
//! [`model`] holds the exact quadratic-scan oracle both are measured against.

pub mod baseline;
pub mod bitmap;
pub mod data;
pub mod engine;
mod error;
pub mod hashing;
pub mod index;
pub mod model;

pub use error::{Error, Result};
