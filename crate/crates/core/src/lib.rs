//! Geometrically mappable feature learning.
//!
//! Features are trained so that, between nearby images, squared feature
//! distances are proportional to squared geometric distances. The crate
//! covers the losses and their gradients, a small embedding model with tuple
//! mining, synthetic scenes, landmark selection, retrieval evaluation and
//! trajectory recovery from masked feature-distance matrices.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod eval;
pub mod geometry;
pub mod io;
pub mod landmarks;
pub mod losses;
pub mod pipeline;
pub mod recovery;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::Location;
