//! Table detection and table structure recognition.

pub mod annotation;
pub mod datagen;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod grid_assembler;
pub mod merger;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod recognizer;
pub mod splitter;
pub mod trainer;

pub use error::{Error, Result};
