//! Wavelet-assisted selective-scan super-resolution for gridded
//! sea-surface-temperature fields.

pub mod data;
pub mod error;
pub mod kv;
pub mod network;
pub mod numerics;
pub mod objective;
pub mod pdconv;
pub mod render;
pub mod sscan;
pub mod trainer;
pub mod wavelet;

pub use error::{Error, Result};
