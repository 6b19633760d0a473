//! Radar-camera pixel depth association (RC-PDA).
//!
//! The crate covers label generation and loss for the association volume,
//! multi-channel enhanced radar (MER) images, LiDAR ground-truth accumulation
//! with occlusion filtering, evaluation, and a synthetic scene simulator that
//! supplies exact ground truth for all of it.

pub mod accumulation;
pub mod association;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod image;
pub mod io;
pub mod mer;
pub mod pipeline;
pub mod plot;
pub mod radar;
pub mod sim;

pub use error::{Error, Result};
