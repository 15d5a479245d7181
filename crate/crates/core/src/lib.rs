//! Semantic- and boundary-perturbed conditional categorical diffusion for
//! segmentation, at desk scale.

pub mod config;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod grid;
pub mod harness;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod perturb;
pub mod schedule;
pub mod seed;
pub mod types;

pub use error::{Result, SpadError};
