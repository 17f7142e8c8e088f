//! Light-field compression by coding only the center view as JPEG and
//! rebuilding every other view from learned disparities.
//!
//! The crate holds a small reverse-mode autodiff engine, a baseline JPEG
//! codec, the enhancement and disparity networks, view synthesis, the
//! training objectives, the compression pipeline and a desk-scale trainer.

pub mod autodiff;
pub mod error;
pub mod gradsuite;
pub mod jpeg;
pub mod lightfield;
pub mod nets;
pub mod objectives;
pub mod par;
pub mod pipeline;
pub mod synthesis;
pub mod trainer;

pub use error::{Error, Result};
