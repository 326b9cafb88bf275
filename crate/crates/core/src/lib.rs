//! Attention-gated U-Net for calving-front segmentation in SAR imagery.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`tensor`]), the
//! network itself ([`attnet`]), distance-weighted losses and segmentation
//! metrics ([`losses`]), non-differentiable image operations
//! ([`imageproc`]), dataset handling with a synthetic front generator
//! ([`data`]) and the optimization loop ([`training`]).

pub mod attnet;
pub mod data;
pub mod error;
pub mod imageproc;
pub mod losses;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
