//! Align-Deform-Subtract: explain how two object images differ.
//!
//! The source object is first brought into the target's pose with an affine
//! transform (Align), then into the target's shape with a thin-plate spline
//! (Deform), and what remains under the source mask is an appearance error
//! (Subtract). Each stage yields one or more scalar measures; together they
//! form a [`pipeline::DifferenceReport`].
//!
//! [`synthscene`] generates image pairs with exactly known property
//! differences and [`evaluation`] correlates the measures against them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod imaging;
pub mod pipeline;
pub mod synthscene;

pub use error::{Error, Result};

/// A point in normalized grid coordinates, `[-1, 1]` on both axes.
pub type Point = [f64; 2];
