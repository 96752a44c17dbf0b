//! Core library: exact word arithmetic on three group families, finite
//! signed measures and their convolutions, projection/alignment geometry,
//! Schottky sets, random-walk estimators, escape-rate derivatives, and the
//! pivotal-time construction.

pub mod derivative;
pub mod error;
pub mod geometry;
pub mod measure;
pub mod pivotal;
pub mod schottky;
pub mod walk;
pub mod group;
pub mod stats;

pub use error::{Error, Result};
