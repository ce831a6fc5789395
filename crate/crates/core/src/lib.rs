//! Link-level simulator and training toolkit for THz radios with IQ imbalance.
//!
//! The crate models a single-carrier link whose transmitter and receiver both
//! suffer from IQ mismatch, computes the resulting signal-to-distortion-and-noise
//! ratio, and co-trains a neural symbol mapper (constellation designer) against a
//! neural demapper so that the pair learns modulation formats that tolerate the
//! mismatch. A square-QAM chain with an impairment-unaware detector serves as the
//! baseline, and a seeded Monte Carlo harness measures bit error rates over
//! SNR/IRR sweeps.
//!
//! ## Modules
//!
//! - [`impairments`]: IQ mismatch coefficients, image rejection ratio, SDNR
//! - [`channel`]: free-space and molecular-absorption link budget, noisy channel
//! - [`neural`]: dense networks, backprop, SGD/Adam, text checkpoints
//! - [`mapper`]: message encoding and the learned constellation generator
//! - [`demapper`]: learned posterior demapper
//! - [`baseline`]: Gray-labeled square QAM and its impairment floor oracle
//! - [`training`]: alternating co-training (backprop and reinforcement variants)
//! - [`sim`]: Monte Carlo BER measurement and sweep orchestration
//! - [`config`]: flat key=value run configuration
//!
//! All randomness is drawn from counter-seeded ChaCha streams, so every run is
//! reproducible bit for bit, with or without the `parallel` feature.

pub mod baseline;
pub mod channel;
pub mod config;
pub mod demapper;
pub mod exec;
pub mod impairments;
pub mod mapper;
pub mod neural;
pub mod sim;
pub mod training;

mod error;

pub use error::{Error, Result};
