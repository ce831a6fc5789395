//! IQ mismatch models for direct-conversion transceivers.
//!
//! A mismatched modulator maps the ideal baseband symbol `s` to
//! `c1*s + c2*conj(s)`: the conjugate term is the image leakage. The
//! coefficient pair is fully determined by an amplitude ratio `epsilon`
//! and a phase offset `phi` between the I and Q branches, with the
//! orientation of the phase differing between the up- and downconversion
//! sides:
//!
//! - transmit:  c1 = (1 + epsilon*e^{+j phi}) / 2,  c2 = (1 - epsilon*e^{-j phi}) / 2
//! - receive:   c1 = (1 + epsilon*e^{-j phi}) / 2,  c2 = (1 - epsilon*e^{+j phi}) / 2
//!
//! Either way `c1 + conj(c2) = 1`, so the ideal radio (epsilon = 1, phi = 0)
//! has `c1 = 1`, `c2 = 0`. Hardware quality is usually quoted as the image
//! rejection ratio IRR = |c1|^2 / |c2|^2 in dB; [`Mismatch::from_irr_db`]
//! inverts that figure into a concrete (epsilon, phi) pair.
//!
//! When TX and RX mismatch act on either end of a real channel gain `h`, the
//! cascade is again a widely linear map with coefficients [`EffectiveLeakage`],
//! and the post-combining signal-to-distortion-and-noise ratio follows from
//! those coefficients via [`sdnr`].

use num_complex::Complex64;

use crate::{Error, Result};

/// Which side of the link a coefficient pair describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Tx,
    Rx,
}

/// Amplitude and phase mismatch between the I and Q branches of one radio.
///
/// `epsilon` is the Q/I amplitude ratio (1.0 = balanced), `phi` the phase
/// skew in radians. `epsilon > 0` and `phi` in (-pi, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mismatch {
    pub epsilon: f64,
    pub phi: f64,
}

/// How to split a scalar IRR figure into amplitude and phase mismatch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IrrSplit {
    /// All of the imbalance in the amplitude ratio, `phi = 0`.
    #[default]
    AmplitudeOnly,
    /// All of the imbalance in the phase skew, `epsilon = 1`.
    PhaseOnly,
}

impl Mismatch {
    /// Perfectly balanced branches.
    pub const IDEAL: Mismatch = Mismatch {
        epsilon: 1.0,
        phi: 0.0,
    };

    pub fn new(epsilon: f64, phi: f64) -> Result<Mismatch> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mismatch epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !phi.is_finite() || phi <= -std::f64::consts::PI || phi > std::f64::consts::PI {
            return Err(Error::InvalidParameter(format!(
                "mismatch phi must lie in (-pi, pi], got {phi}"
            )));
        }
        Ok(Mismatch { epsilon, phi })
    }

    /// Inverts an IRR figure in dB into a mismatch with the given split.
    ///
    /// Closed forms: with R = 10^(irr_db/10),
    /// amplitude-only gives epsilon = (sqrt(R) - 1) / (sqrt(R) + 1) and
    /// phase-only gives phi = arccos((R - 1) / (R + 1)). An infinite IRR
    /// returns the ideal mismatch.
    pub fn from_irr_db(irr_db: f64, split: IrrSplit) -> Result<Mismatch> {
        if irr_db.is_nan() {
            return Err(Error::InvalidParameter("IRR is NaN".into()));
        }
        if irr_db.is_infinite() && irr_db > 0.0 {
            return Ok(Mismatch::IDEAL);
        }
        if irr_db <= 0.0 {
            // IRR <= 0 dB means the image is as strong as the signal; the
            // closed forms below degenerate there.
            return Err(Error::InvalidParameter(format!(
                "IRR must be positive dB, got {irr_db}"
            )));
        }
        let r = 10f64.powf(irr_db / 10.0);
        match split {
            IrrSplit::AmplitudeOnly => {
                let sqrt_r = r.sqrt();
                Mismatch::new((sqrt_r - 1.0) / (sqrt_r + 1.0), 0.0)
            }
            IrrSplit::PhaseOnly => Mismatch::new(1.0, ((r - 1.0) / (r + 1.0)).acos()),
        }
    }

    /// IRR in dB of either side built from this mismatch. Both sides share the
    /// closed form (1 + e^2 + 2e cos phi) / (1 + e^2 - 2e cos phi).
    pub fn irr_db(&self) -> f64 {
        let e = self.epsilon;
        let c = 2.0 * e * self.phi.cos();
        let num = 1.0 + e * e + c;
        let den = 1.0 + e * e - c;
        10.0 * (num / den).log10()
    }
}

/// Widely linear coefficient pair of one mismatched radio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqiCoefficients {
    pub c1: Complex64,
    pub c2: Complex64,
    pub side: Side,
}

/// Coefficients of a mismatched upconverter.
pub fn tx_coeffs(mm: Mismatch) -> IqiCoefficients {
    let rot = Complex64::from_polar(mm.epsilon, mm.phi);
    IqiCoefficients {
        c1: (Complex64::new(1.0, 0.0) + rot) * 0.5,
        c2: (Complex64::new(1.0, 0.0) - rot.conj()) * 0.5,
        side: Side::Tx,
    }
}

/// Coefficients of a mismatched downconverter. The phase enters with the
/// opposite sign relative to [`tx_coeffs`].
pub fn rx_coeffs(mm: Mismatch) -> IqiCoefficients {
    let rot = Complex64::from_polar(mm.epsilon, -mm.phi);
    IqiCoefficients {
        c1: (Complex64::new(1.0, 0.0) + rot) * 0.5,
        c2: (Complex64::new(1.0, 0.0) - rot.conj()) * 0.5,
        side: Side::Rx,
    }
}

/// Image rejection ratio |c1|^2 / |c2|^2 in dB. Ideal coefficients give
/// positive infinity.
pub fn irr_db(c: &IqiCoefficients) -> f64 {
    10.0 * (c.c1.norm_sqr() / c.c2.norm_sqr()).log10()
}

/// Applies TX mismatch to one symbol: `c1*s + c2*conj(s)`.
pub fn apply_tx_iqi(s: Complex64, g: &IqiCoefficients) -> Complex64 {
    debug_assert_eq!(g.side, Side::Tx);
    g.c1 * s + g.c2 * s.conj()
}

/// Combined signal and image coefficients of the TX-channel-RX cascade.
///
/// With TX pair (g1, g2) and RX pair (k1, k2) around a real channel gain,
/// the received sample is `xi1*h*s + xi2*h*conj(s)` plus filtered noise,
/// where xi1 = k1*g1 + k2*conj(g2) and xi2 = k1*g2 + k2*conj(g1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveLeakage {
    pub xi1: Complex64,
    pub xi2: Complex64,
}

pub fn effective_leakage(g: &IqiCoefficients, k: &IqiCoefficients) -> EffectiveLeakage {
    debug_assert_eq!(g.side, Side::Tx);
    debug_assert_eq!(k.side, Side::Rx);
    EffectiveLeakage {
        xi1: k.c1 * g.c1 + k.c2 * g.c2.conj(),
        xi2: k.c1 * g.c2 + k.c2 * g.c1.conj(),
    }
}

/// Signal-to-distortion-and-noise ratio (linear) after the full cascade.
///
/// gamma = |xi1|^2 h^2 Ps / (|xi2|^2 h^2 Ps + (|k1|^2 + |k2|^2) No).
/// Treating the conjugate image as noise-like, this is the SNR an unaware
/// receiver experiences; it saturates at |xi1|^2/|xi2|^2 as Ps/No grows and
/// collapses to h^2 Ps / No for ideal hardware.
pub fn sdnr(leak: &EffectiveLeakage, k: &IqiCoefficients, h: f64, ps: f64, no: f64) -> Result<f64> {
    if !(h > 0.0 && ps > 0.0 && no > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sdnr needs positive h, ps, no; got h={h}, ps={ps}, no={no}"
        )));
    }
    let signal = leak.xi1.norm_sqr() * h * h * ps;
    let distortion = leak.xi2.norm_sqr() * h * h * ps;
    let noise = (k.c1.norm_sqr() + k.c2.norm_sqr()) * no;
    Ok(signal / (distortion + noise))
}
