//! MIMO-OFDM baseband link simulator for semantic (analog) image
//! transmission.
//!
//! The pipeline maps codec symbols onto a pilot-bearing resource grid,
//! optionally shuffles them across cells, modulates OFDM frames with a
//! Zadoff-Chu preamble, passes them through fading channels and a
//! power-amplifier model, and recovers the symbols with preamble timing,
//! least-squares channel estimation and zero-forcing.

pub mod channel;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod interleave;
pub mod link;
pub mod metrics;
pub mod parallel;
pub mod rng;
pub mod rx;
pub mod tx;

pub use error::{Error, Result};

pub type Cplx = num_complex::Complex64;
