//! Evidential semi-supervised segmentation.
//!
//! A small patch MLP produces class probabilities, a prototype-based evidential
//! head produces mass functions from the MLP's last hidden layer, and the two are
//! combined with Dempster's rule. The per-pixel conflict of that combination is
//! the uncertainty map.

pub mod backbone;
pub mod bench;
pub mod belief;
pub mod data_io;
pub mod enn;
pub mod error;
pub mod fusion;
pub mod kmeans;
pub mod maps;
pub mod metrics;
pub mod model;
pub mod model_file;
pub mod ssl;

pub use error::{Error, Result};
