//! Learned soft demapper.
//!
//! The receive side feeds the real and imaginary parts of a received sample,
//! plus the same standardized SDNR feature the mapper is conditioned on, into
//! a dense network with two hidden ReLU layers and a softmax head over the
//! 2^m message labels. The softmax output is a posterior over messages;
//! hard decisions take the argmax, with ties resolved toward the lower
//! index so decisions are deterministic.

use num_complex::Complex64;
use rand::Rng;

use crate::mapper::{sdnr_feature, MessageBits};
use crate::neural::{Activation, DenseNet, LayerSpec};
use crate::{Error, Result};

/// Hidden width used when nothing else is configured.
pub const DEFAULT_HIDDEN_UNITS: usize = 128;

/// One received sample together with the SDNR it was observed at.
#[derive(Debug, Clone, Copy)]
pub struct DemapperInput {
    pub r: Complex64,
    pub sdnr_db: f64,
}

impl DemapperInput {
    /// The network's three input features.
    pub fn features(&self) -> [f64; 3] {
        [self.r.re, self.r.im, sdnr_feature(self.sdnr_db)]
    }
}

/// Posterior over the 2^m message labels.
#[derive(Debug, Clone)]
pub struct MessagePosterior {
    probs: Vec<f64>,
}

impl MessagePosterior {
    pub fn new(probs: Vec<f64>) -> Result<MessagePosterior> {
        if probs.len() < 2 || !probs.len().is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "posterior length must be a power of two >= 2, got {}",
                probs.len()
            )));
        }
        Ok(MessagePosterior { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn m(&self) -> usize {
        self.probs.len().trailing_zeros() as usize
    }

    /// Index of the largest probability; ties go to the lower index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.probs.iter().enumerate().skip(1) {
            if *p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// Builds the demapper network for m bits: 3 inputs, two hidden ReLU layers
/// of `hidden` units, softmax over 2^m labels.
pub fn demapper_net<R: Rng + ?Sized>(m: usize, hidden: usize, rng: &mut R) -> Result<DenseNet> {
    if m == 0 || m > 16 {
        return Err(Error::InvalidParameter(format!(
            "bits per symbol must be in 1..=16, got {m}"
        )));
    }
    DenseNet::glorot_init(
        3,
        &[
            LayerSpec::new(hidden, Activation::Relu),
            LayerSpec::new(hidden, Activation::Relu),
            LayerSpec::new(1 << m, Activation::Softmax),
        ],
        rng,
    )
}

/// Runs the network and returns the message posterior.
pub fn demap_soft(net: &DenseNet, input: &DemapperInput) -> Result<MessagePosterior> {
    MessagePosterior::new(net.forward(&input.features()))
}

/// Hard decision: the message whose posterior probability is largest.
pub fn demap_hard(posterior: &MessagePosterior) -> MessageBits {
    MessageBits::from_index(posterior.argmax(), posterior.m())
}
