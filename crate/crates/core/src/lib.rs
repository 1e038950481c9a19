//! Capacity maximization for MIMO links assisted by a passive reflecting surface.
//!
//! The crate covers channel synthesis ([`channel`]), capacity and water-filling
//! ([`mimo`]), the alternating optimizer for frequency-flat channels
//! ([`opt_flat`]), its low/high-SNR and single-antenna specializations
//! ([`asymptotic`]), the OFDM extension ([`ofdm`]) and the Monte-Carlo
//! experiment driver ([`harness`]).

pub mod asymptotic;
pub mod channel;
pub mod error;
pub mod harness;
pub mod mimo;
pub mod numerics;
pub mod ofdm;
pub mod opt_flat;
pub mod seed;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
