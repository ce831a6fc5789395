//! Message encoding and the learned constellation generator.
//!
//! The transmit side turns an m-bit message into a one-hot label and picks
//! the matching point from a constellation emitted by a small dense network.
//! The network sees a single input, the link SDNR standardized as
//! `(sdnr_db - 10) / 10`, runs one hidden ReLU layer of 2^(m+1) units into a
//! linear layer of 2^(m+1) outputs, and the outputs are read as 2^m
//! interleaved (re, im) pairs. Dividing by the root mean power makes the
//! constellation satisfy the unit average power constraint exactly, whatever
//! the raw network output was.
//!
//! Bit order is big-endian throughout: the first bit of a message is the
//! most significant bit of its label index.

use num_complex::Complex64;
use rand::Rng;

use crate::neural::{Activation, DenseNet, LayerSpec};
use crate::{Error, Result};

/// An m-bit message, bits valued 0/1, first bit most significant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageBits {
    bits: Vec<u8>,
}

impl MessageBits {
    pub fn new(bits: Vec<u8>) -> Result<MessageBits> {
        if bits.is_empty() {
            return Err(Error::InvalidParameter("empty message".into()));
        }
        if bits.iter().any(|b| *b > 1) {
            return Err(Error::InvalidParameter("message bits must be 0 or 1".into()));
        }
        Ok(MessageBits { bits })
    }

    /// The m-bit big-endian representation of `index`.
    pub fn from_index(index: usize, m: usize) -> MessageBits {
        assert!(m > 0 && m < usize::BITS as usize && index < (1 << m));
        let bits = (0..m).rev().map(|pos| ((index >> pos) & 1) as u8).collect();
        MessageBits { bits }
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn m(&self) -> usize {
        self.bits.len()
    }

    /// Big-endian value of the bit string.
    pub fn to_index(&self) -> usize {
        self.bits.iter().fold(0usize, |acc, b| (acc << 1) | *b as usize)
    }
}

/// One-hot label over 2^m messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    pub index: usize,
    pub dim: usize,
}

impl OneHot {
    /// Dense f64 representation, mostly for feeding loss functions.
    pub fn dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        v[self.index] = 1.0;
        v
    }
}

/// Encodes a message as a one-hot label, first bit most significant.
pub fn bits_to_onehot(msg: &MessageBits) -> OneHot {
    OneHot {
        index: msg.to_index(),
        dim: 1 << msg.m(),
    }
}

/// Number of bit positions where two equal-length messages differ.
pub fn bit_errors(sent: &MessageBits, decided: &MessageBits) -> Result<u32> {
    if sent.m() != decided.m() {
        return Err(Error::DimensionMismatch(format!(
            "comparing a {}-bit message against a {}-bit decision",
            sent.m(),
            decided.m()
        )));
    }
    Ok(((sent.to_index() ^ decided.to_index()) as u64).count_ones())
}

/// Unit-mean-power set of 2^m complex points, indexed by message label.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
}

impl Constellation {
    /// Wraps a point set that is already normalized; enforces a power-of-two
    /// size.
    pub fn new(points: Vec<Complex64>) -> Result<Constellation> {
        if points.len() < 2 || !points.len().is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "constellation size must be a power of two >= 2, got {}",
                points.len()
            )));
        }
        Ok(Constellation { points })
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn m(&self) -> usize {
        self.points.len().trailing_zeros() as usize
    }

    pub fn mean_power(&self) -> f64 {
        self.points.iter().map(|p| p.norm_sqr()).sum::<f64>() / self.points.len() as f64
    }

    /// Smallest pairwise Euclidean distance.
    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.points.len() {
            for j in (i + 1)..self.points.len() {
                best = best.min((self.points[i] - self.points[j]).norm());
            }
        }
        best
    }
}

/// Standardized SDNR conditioning feature shared by mapper and demapper.
pub fn sdnr_feature(sdnr_db: f64) -> f64 {
    (sdnr_db - 10.0) / 10.0
}

/// Builds the constellation network for m bits: 1 input, one hidden ReLU
/// layer of 2^(m+1) units, 2^(m+1) linear outputs.
pub fn mapper_net<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<DenseNet> {
    if m == 0 || m > 16 {
        return Err(Error::InvalidParameter(format!(
            "bits per symbol must be in 1..=16, got {m}"
        )));
    }
    let width = 1 << (m + 1);
    DenseNet::glorot_init(
        1,
        &[
            LayerSpec::new(width, Activation::Relu),
            LayerSpec::new(width, Activation::Linear),
        ],
        rng,
    )
}

/// Interprets a raw network output as interleaved (re, im) pairs and
/// normalizes to unit mean power. Returns the points and the raw mean power
/// (which the training backward pass needs).
pub fn points_from_raw(raw: &[f64]) -> Result<(Vec<Complex64>, f64)> {
    if raw.len() < 4 || raw.len() % 2 != 0 {
        return Err(Error::DimensionMismatch(format!(
            "raw constellation output must hold >= 2 (re, im) pairs, got {} values",
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("constellation network output".into()));
    }
    let points: Vec<Complex64> = raw
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect();
    let mean_power = points.iter().map(|p| p.norm_sqr()).sum::<f64>() / points.len() as f64;
    if mean_power <= 0.0 {
        return Err(Error::NonFinite(
            "constellation collapsed to the origin; cannot normalize".into(),
        ));
    }
    let scale = mean_power.sqrt().recip();
    Ok((points.iter().map(|p| p * scale).collect(), mean_power))
}

/// Runs the constellation network at the given SDNR and normalizes.
pub fn generate_constellation(net: &DenseNet, sdnr_db: f64) -> Result<Constellation> {
    let raw = net.forward(&[sdnr_feature(sdnr_db)]);
    let (points, _) = points_from_raw(&raw)?;
    Constellation::new(points)
}

/// Pulls a loss gradient on the normalized points back to the raw network
/// outputs, through the shared root-mean-power normalization.
///
/// With q the raw points, P their mean power, a = P^(-1/2) and c = a*q, the
/// chain rule gives
///
/// dL/dq_j = a * g_j - (S / M) * P^(-3/2) * q_j,  S = sum_i <g_i, q_i>
///
/// where g_i = dL/dc_i as real pairs and <,> is the real dot product. The
/// projection term removes the radial component, so uniform scaling of the
/// raw points never changes the loss.
pub fn normalization_backward(raw: &[f64], mean_power: f64, point_grad: &[(f64, f64)]) -> Vec<f64> {
    assert_eq!(raw.len(), 2 * point_grad.len(), "gradient shape mismatch");
    let m = point_grad.len() as f64;
    let a = mean_power.sqrt().recip();
    let s: f64 = point_grad
        .iter()
        .zip(raw.chunks_exact(2))
        .map(|((gr, gi), q)| gr * q[0] + gi * q[1])
        .sum();
    let radial = s / m * mean_power.powf(-1.5);
    let mut out = Vec::with_capacity(raw.len());
    for ((gr, gi), q) in point_grad.iter().zip(raw.chunks_exact(2)) {
        out.push(a * gr - radial * q[0]);
        out.push(a * gi - radial * q[1]);
    }
    out
}

/// Looks up the transmit symbol for a one-hot label.
pub fn select_symbol(c: &Constellation, label: &OneHot) -> Result<Complex64> {
    if label.dim != c.points.len() {
        return Err(Error::DimensionMismatch(format!(
            "label over {} messages against a {}-point constellation",
            label.dim,
            c.points.len()
        )));
    }
    Ok(c.points[label.index])
}

// ---------------------------------------------------------------------------
// Text record
// ---------------------------------------------------------------------------

/// Renders a constellation to the text exchange record: m, the SDNR it was
/// generated for, then one `index re im` line per point. Floats use
/// shortest round-trip formatting, so export / import / re-export is
/// byte-identical.
pub fn constellation_to_string(c: &Constellation, sdnr_db: f64) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "constellation v1").unwrap();
    writeln!(out, "m {}", c.m()).unwrap();
    writeln!(out, "sdnr_db {sdnr_db}").unwrap();
    for (i, p) in c.points.iter().enumerate() {
        writeln!(out, "{i} {} {}", p.re, p.im).unwrap();
    }
    out
}

pub fn constellation_from_str(text: &str) -> Result<(Constellation, f64)> {
    let malformed = |reason: &str| Error::MalformedFile {
        path: "<string>".into(),
        reason: reason.into(),
    };
    let mut lines = text.lines();
    if lines.next() != Some("constellation v1") {
        return Err(malformed("missing constellation v1 header"));
    }
    let m: usize = lines
        .next()
        .and_then(|l| l.strip_prefix("m "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed("bad m line"))?;
    let sdnr_db: f64 = lines
        .next()
        .and_then(|l| l.strip_prefix("sdnr_db "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| malformed("bad sdnr_db line"))?;
    let mut points = Vec::with_capacity(1 << m);
    for i in 0..(1usize << m) {
        let line = lines.next().ok_or_else(|| malformed("truncated point list"))?;
        let mut it = line.split_whitespace();
        let idx: usize = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed("bad point index"))?;
        if idx != i {
            return Err(malformed(&format!("point {i} out of order")));
        }
        let re: f64 = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed("bad point re"))?;
        let im: f64 = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed("bad point im"))?;
        if it.next().is_some() {
            return Err(malformed("trailing values on point line"));
        }
        points.push(Complex64::new(re, im));
    }
    if lines.next().is_some() {
        return Err(malformed("trailing lines after point list"));
    }
    Ok((Constellation::new(points)?, sdnr_db))
}
